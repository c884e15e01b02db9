"""Ready-made datasets: seeded Gaussian blobs, ODDS-style tabular sets, MNIST location."""

from __future__ import annotations

import os
from importlib import resources
from pathlib import Path

import numpy as np

from aesad.data import Dataset, load_csv, load_idx
from aesad.rng import SplitMix64

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

# (sklearn loader, anomalous target value, anomalies kept) mirroring the
# ODDS construction of "wine" and "wbc": one class downsampled to outliers
_ODDS_STYLE = {
    "wine": ("load_wine", 0, 10),
    "wbc": ("load_breast_cancer", 0, 21),
}
BUILTIN_TABULAR = tuple(_ODDS_STYLE)


def gaussian_blobs(
    n_normal: int,
    n_anomalous: int,
    dim: int,
    seed: int,
    normal_center: float = 0.5,
    anomaly_center: float = 0.6,
    scale: float = 0.08,
    stream: str = "blobs",
) -> Dataset:
    """Two isotropic Gaussian blobs clipped to [0,1]^dim; normals first, then anomalies.

    Class ids are 0 (normal blob) and 1 (anomalous blob).  ``stream`` names
    the random stream so that train and test draws can be independent.
    """
    rng = SplitMix64(seed, stream)
    norm = normal_center + scale * rng.normal(n_normal * dim).reshape(n_normal, dim)
    anom = anomaly_center + scale * rng.normal(n_anomalous * dim).reshape(n_anomalous, dim)
    feats = np.clip(np.vstack([norm, anom]), 0.0, 1.0)
    labels = np.r_[np.zeros(n_normal), np.ones(n_anomalous)]
    return Dataset(feats, labels, labels.astype(np.int64), name=f"blobs{dim}-{stream}")


def odds_style(name: str, seed: int = 0) -> Dataset:
    """ODDS-like outlier set built from a scikit-learn bundled table.

    One target class becomes the anomalies and is downsampled (seeded) to
    the outlier count ODDS uses; the other classes are normal.  Features
    are left unnormalized.
    """
    if name not in _ODDS_STYLE:
        raise ValueError(f"unknown builtin dataset {name!r}; choose from {sorted(_ODDS_STYLE)}")
    try:
        import sklearn.datasets as skd
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise ImportError("builtin tabular datasets need scikit-learn (pip install scikit-learn)") from exc
    loader, anomalous_target, keep = _ODDS_STYLE[name]
    bunch = getattr(skd, loader)()
    x = np.asarray(bunch.data, dtype=np.float64)
    target = np.asarray(bunch.target)
    anom = np.flatnonzero(target == anomalous_target)
    keep_anom = np.sort(anom[SplitMix64(seed, "odds-style", name).choice(anom.size, keep)])
    idx = np.sort(np.concatenate([np.flatnonzero(target != anomalous_target), keep_anom]))
    labels = (target[idx] == anomalous_target).astype(np.int64)
    return Dataset(x[idx], labels, target[idx], name=name, row_ids=idx)


def toy_csv_path() -> Path:
    """Small bundled tabular set (``label`` column, 4 features) for smoke runs."""
    return Path(str(resources.files("aesad") / "resources" / "toy.csv"))


def load_toy() -> Dataset:
    return load_csv(toy_csv_path(), label_column="label")


def mnist_dir(path: str | Path | None = None) -> Path | None:
    """First directory holding the four raw MNIST IDX files.

    Looks at ``path``, then ``$AESAD_MNIST_DIR``, then ``~/data/mnist``.
    """
    candidates = [path, os.environ.get("AESAD_MNIST_DIR"), Path.home() / "data" / "mnist"]
    for cand in candidates:
        if cand is None:
            continue
        cand = Path(cand)
        names = [f for pair in MNIST_FILES.values() for f in pair]
        if all((cand / f).exists() or (cand / (f + ".gz")).exists() for f in names):
            return cand
    return None


def _resolve(directory: Path, fname: str) -> Path:
    p = directory / fname
    return p if p.exists() else directory / (fname + ".gz")


def load_mnist(path: str | Path | None = None) -> tuple[Dataset, Dataset]:
    """Original MNIST train and test partitions."""
    directory = mnist_dir(path)
    if directory is None:
        raise FileNotFoundError("MNIST IDX files not found; set AESAD_MNIST_DIR")
    out = []
    for part, (img, lab) in MNIST_FILES.items():
        out.append(load_idx(_resolve(directory, img), _resolve(directory, lab), name=f"mnist-{part}"))
    return out[0], out[1]
