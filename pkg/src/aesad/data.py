"""Datasets, loaders, normalization, split protocols and pollution.

Labels are always 0 = normal, 1 = anomaly.  Original class identifiers,
when the source has them, are kept in ``class_ids`` so that splits can be
built from class-level protocols and results broken down per class.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import io
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from aesad.rng import SplitMix64

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

PROTOCOLS = ("one-vs-one", "one-vs-many", "one-vs-all", "many-vs-many", "odds")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_ids: np.ndarray | None = None
    name: str = ""
    row_ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        n = self.features.shape[0]
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.shape != (n,):
            raise ValueError(f"{n} feature rows but {self.labels.size} labels")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if self.class_ids is not None:
            self.class_ids = np.asarray(self.class_ids, dtype=np.int64).reshape(-1)
            if self.class_ids.shape != (n,):
                raise ValueError(f"{n} feature rows but {self.class_ids.size} class ids")
        if self.row_ids is None:
            self.row_ids = np.arange(n, dtype=np.int64)
        else:
            self.row_ids = np.asarray(self.row_ids, dtype=np.int64).reshape(-1)
            if self.row_ids.shape != (n,):
                raise ValueError(f"{n} feature rows but {self.row_ids.size} row ids")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_normal(self) -> int:
        return int((self.labels == 0).sum())

    @property
    def n_anomalous(self) -> int:
        return int((self.labels == 1).sum())

    def subset(self, idx: np.ndarray | Sequence[int], name: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            None if self.class_ids is None else self.class_ids[idx],
            self.name if name is None else name,
            self.row_ids[idx],
        )

    def with_labels(self, labels: np.ndarray) -> "Dataset":
        return replace(self, labels=np.asarray(labels))

    def in_unit_cube(self) -> bool:
        return bool(len(self) == 0 or (self.features.min() >= 0.0 and self.features.max() <= 1.0))


def concat(parts: Iterable[Dataset], name: str | None = None) -> Dataset:
    parts = list(parts)
    if not parts:
        raise ValueError("nothing to concatenate")
    has_classes = all(p.class_ids is not None for p in parts)
    return Dataset(
        np.vstack([p.features for p in parts]),
        np.concatenate([p.labels for p in parts]),
        np.concatenate([p.class_ids for p in parts]) if has_classes else None,
        parts[0].name if name is None else name,
        np.concatenate([p.row_ids for p in parts]),
    )


# -- loaders ---------------------------------------------------------------


def _coerce_label(cell: str, line: int) -> int:
    try:
        value = float(cell)
    except ValueError:
        raise ValueError(f"line {line}: label {cell!r} is not numeric") from None
    if value not in (0.0, 1.0):
        raise ValueError(f"line {line}: label {cell!r} is not 0 or 1")
    return int(value)


def load_csv(
    path: str | Path,
    label_column: str = "label",
    class_column: str | None = None,
) -> Dataset:
    """Read a headed CSV; every column except label/class is a numeric feature."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise ValueError(f"{path}: missing label column {label_column!r}")
        if class_column is not None and class_column not in header:
            raise ValueError(f"{path}: missing class column {class_column!r}")
        li = header.index(label_column)
        ci = header.index(class_column) if class_column is not None else None
        feat_cols = [i for i in range(len(header)) if i not in (li, ci)]
        feats, labels, classes = [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: line {line} has {len(row)} cells, expected {len(header)}")
            try:
                feats.append([float(row[i]) for i in feat_cols])
            except ValueError:
                raise ValueError(f"{path}: line {line} has a non-numeric feature cell") from None
            labels.append(_coerce_label(row[li], line))
            if ci is not None:
                try:
                    classes.append(int(float(row[ci])))
                except ValueError:
                    raise ValueError(f"{path}: line {line}: class {row[ci]!r} is not an integer") from None
    if not feats:
        raise ValueError(f"{path}: no data rows")
    return Dataset(
        np.array(feats, dtype=np.float64).reshape(len(feats), len(feat_cols)),
        np.array(labels),
        np.array(classes) if ci is not None else None,
        path.stem,
    )


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx_images(path: str | Path) -> np.ndarray:
    """``(count, rows, cols)`` uint8 array from an IDX3 file (optionally gzipped)."""
    raw = _read_bytes(Path(path))
    if len(raw) < 16:
        raise ValueError(f"{path}: truncated IDX header")
    magic, count, rows, cols = struct.unpack_from(">IIII", raw)
    if magic != IDX_IMAGES_MAGIC:
        raise ValueError(f"{path}: bad image magic 0x{magic:08x}")
    expected = count * rows * cols
    if len(raw) - 16 != expected:
        raise ValueError(f"{path}: expected {expected} pixel bytes, found {len(raw) - 16}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def read_idx_labels(path: str | Path) -> np.ndarray:
    raw = _read_bytes(Path(path))
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated IDX header")
    magic, count = struct.unpack_from(">II", raw)
    if magic != IDX_LABELS_MAGIC:
        raise ValueError(f"{path}: bad label magic 0x{magic:08x}")
    if len(raw) - 8 != count:
        raise ValueError(f"{path}: expected {count} labels, found {len(raw) - 8}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8)


def load_idx(images_path: str | Path, labels_path: str | Path, name: str | None = None) -> Dataset:
    """MNIST-layout pair of IDX files; pixels scaled to [0,1], all labels 0.

    Labels are assigned later by the split protocol; the digit is kept as
    the class id.
    """
    images = read_idx_images(images_path)
    classes = read_idx_labels(labels_path)
    if images.shape[0] != classes.shape[0]:
        raise ValueError(f"{images.shape[0]} images but {classes.shape[0]} labels")
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(
        feats,
        np.zeros(len(classes), dtype=np.int64),
        classes.astype(np.int64),
        name or Path(images_path).name.split("-")[0],
    )


def write_idx(images: np.ndarray, classes: np.ndarray, images_path: str | Path, labels_path: str | Path) -> None:
    """Write uint8 images ``(n, rows, cols)`` and labels in IDX layout."""
    images = np.asarray(images, dtype=np.uint8)
    classes = np.asarray(classes, dtype=np.uint8)
    n, r, c = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, r, c))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(classes)))
        fh.write(classes.tobytes())


# -- normalization ---------------------------------------------------------


@dataclass(frozen=True)
class MinMax:
    mins: np.ndarray
    maxs: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "MinMax":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] == 0:
            raise ValueError("need a non-empty 2-D array to fit min-max statistics")
        return cls(features.min(axis=0), features.max(axis=0))

    def transform(self, features: np.ndarray) -> np.ndarray:
        """Scale into [0,1]; out-of-range values clamp, constant features map to 0.5."""
        features = np.asarray(features, dtype=np.float64)
        span = self.maxs - self.mins
        const = span == 0
        scaled = (features - self.mins) / np.where(const, 1.0, span)
        scaled[:, const] = 0.5
        return np.clip(scaled, 0.0, 1.0)


def normalize_minmax(dataset: Dataset, fit_rows: np.ndarray | Sequence[int]) -> tuple[Dataset, MinMax]:
    fit_rows = np.asarray(fit_rows)
    if fit_rows.size == 0:
        raise ValueError("fit_rows must be non-empty")
    scaler = MinMax.fit(dataset.features[fit_rows])
    return replace(dataset, features=scaler.transform(dataset.features)), scaler


# -- split protocols -------------------------------------------------------


@dataclass
class SplitSpec:
    """Which classes are normal, which are seen anomalies, and how many are labeled.

    ``per_class_quota`` draws that many labeled anomalies from every seen
    class instead of ``s`` from the pooled rows.  ``test_classes``
    restricts the anomalous part of the test set (``None`` keeps every class).
    """

    protocol: str
    normal_classes: tuple[int, ...] = ()
    seen_anomaly_classes: tuple[int, ...] = ()
    s: int = 0
    seed: int = 0
    per_class_quota: int | None = None
    test_classes: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}; expected one of {PROTOCOLS}")
        self.normal_classes = tuple(int(c) for c in self.normal_classes)
        self.seen_anomaly_classes = tuple(int(c) for c in self.seen_anomaly_classes)
        if self.test_classes is not None:
            self.test_classes = tuple(int(c) for c in self.test_classes)
        if self.s < 0:
            raise ValueError(f"s must be >= 0, got {self.s}")
        if set(self.normal_classes) & set(self.seen_anomaly_classes):
            raise ValueError("normal and seen anomaly classes overlap")
        if self.per_class_quota is not None:
            if self.per_class_quota < 0:
                raise ValueError("per_class_quota must be >= 0")
            expected = self.per_class_quota * len(self.seen_anomaly_classes)
            if self.s not in (0, expected):
                raise ValueError(f"s={self.s} disagrees with per_class_quota giving {expected}")
            self.s = expected
        if self.protocol == "odds":
            return
        n_norm, n_seen = len(self.normal_classes), len(self.seen_anomaly_classes)
        if n_norm == 0:
            raise ValueError("no normal classes given")
        if self.protocol == "one-vs-one" and (n_norm != 1 or n_seen > 1):
            raise ValueError("one-vs-one needs one normal and at most one seen anomaly class")
        if self.protocol in ("one-vs-many", "one-vs-all") and n_norm != 1:
            raise ValueError(f"{self.protocol} needs exactly one normal class")
        if self.protocol == "many-vs-many" and n_norm < 2:
            raise ValueError("many-vs-many needs at least two normal classes")
        if self.s > 0 and n_seen == 0:
            raise ValueError("s > 0 but no seen anomaly classes")


def _require_classes(ds: Dataset, classes: Iterable[int], what: str) -> None:
    if ds.class_ids is None:
        raise ValueError(f"{ds.name or 'dataset'} has no class ids; class protocols need them")
    present = set(np.unique(ds.class_ids).tolist())
    missing = [c for c in classes if c not in present]
    if missing:
        raise ValueError(f"{what} classes {missing} not present in {ds.name or 'dataset'}")


def select_labeled(source: Dataset, spec: SplitSpec) -> np.ndarray:
    """Row positions in ``source`` of the labeled anomalies, ascending."""
    if spec.s == 0:
        return np.zeros(0, dtype=np.int64)
    if spec.per_class_quota is not None:
        picked = []
        for c in sorted(spec.seen_anomaly_classes):
            pool = np.flatnonzero(source.class_ids == c)
            if spec.per_class_quota > pool.size:
                raise ValueError(f"class {c} has {pool.size} rows, quota is {spec.per_class_quota}")
            picked.append(pool[SplitMix64(spec.seed, "labeled", c).choice(pool.size, spec.per_class_quota)])
        return np.sort(np.concatenate(picked))
    pool = np.flatnonzero(np.isin(source.class_ids, spec.seen_anomaly_classes))
    if spec.s > pool.size:
        raise ValueError(f"s={spec.s} exceeds the {pool.size} available seen-anomaly rows")
    return np.sort(pool[SplitMix64(spec.seed, "labeled").choice(pool.size, spec.s)])


def build_split(train_source: Dataset, test_source: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Semi-supervised train set from ``train_source``; test set from ``test_source``.

    Train: every normal-class row (label 0) plus the labeled seen anomalies
    (label 1).  Test: the untouched test source relabelled by class,
    optionally restricted to normal classes plus ``spec.test_classes``.
    """
    if spec.protocol == "odds":
        raise ValueError("odds splits come from build_odds_split")
    _require_classes(train_source, spec.normal_classes, "normal")
    _require_classes(train_source, spec.seen_anomaly_classes, "seen anomaly")
    if spec.protocol == "one-vs-all":
        others = set(np.unique(train_source.class_ids).tolist()) - set(spec.normal_classes)
        if set(spec.seen_anomaly_classes) != others:
            raise ValueError("one-vs-all uses every non-normal class as a seen anomaly class")

    normal_idx = np.flatnonzero(np.isin(train_source.class_ids, spec.normal_classes))
    labeled_idx = select_labeled(train_source, spec)
    idx = np.concatenate([normal_idx, labeled_idx])
    labels = np.concatenate([np.zeros(normal_idx.size), np.ones(labeled_idx.size)])
    train = train_source.subset(idx).with_labels(labels)

    _require_classes(test_source, spec.normal_classes, "normal")
    test_mask = np.ones(len(test_source), dtype=bool)
    if spec.test_classes is not None:
        _require_classes(test_source, spec.test_classes, "test")
        test_mask = np.isin(test_source.class_ids, spec.normal_classes + spec.test_classes)
    test = test_source.subset(np.flatnonzero(test_mask))
    test = test.with_labels((~np.isin(test.class_ids, spec.normal_classes)).astype(np.int64))
    return train, test


def anomaly_pool(train_source: Dataset, spec: SplitSpec, train: Dataset) -> Dataset:
    """Seen-anomaly rows of ``train_source`` not already in ``train``; candidates for pollution."""
    mask = np.isin(train_source.class_ids, spec.seen_anomaly_classes)
    mask &= ~np.isin(train_source.row_ids, train.row_ids)
    pool = train_source.subset(np.flatnonzero(mask))
    return pool.with_labels(np.ones(len(pool), dtype=np.int64))


def build_odds_split(
    dataset: Dataset,
    seed: int,
    train_fraction: float = 0.6,
    anomaly_fraction: float = 0.05,
) -> tuple[Dataset, Dataset]:
    """Random train/test split for a labeled tabular set.

    ``round(train_fraction * n_normals)`` normals go to train, plus enough
    anomalies to make up ``anomaly_fraction`` of the train set (capped at
    what exists).  Everything else is test.
    """
    normals = np.flatnonzero(dataset.labels == 0)
    anomalies = np.flatnonzero(dataset.labels == 1)
    if anomalies.size == 0:
        raise ValueError("dataset has no anomalies")
    if normals.size == 0:
        raise ValueError("dataset has no normal rows")
    n_train_norm = round_half_up(train_fraction * normals.size)
    n_train_anom = min(round_half_up(anomaly_fraction / (1.0 - anomaly_fraction) * n_train_norm), anomalies.size)
    tn = normals[SplitMix64(seed, "odds-normals").choice(normals.size, n_train_norm)]
    ta = anomalies[SplitMix64(seed, "odds-anomalies").choice(anomalies.size, n_train_anom)]
    train_idx = np.sort(np.concatenate([tn, ta]))
    test_mask = np.ones(len(dataset), dtype=bool)
    test_mask[train_idx] = False
    return dataset.subset(train_idx), dataset.subset(np.flatnonzero(test_mask))


# -- pollution -------------------------------------------------------------


@dataclass(frozen=True)
class PollutionSpec:
    """Mislabeled anomalies added to train with label 0.

    ``rate`` is relative to the number of true inliers (label-0 rows before
    injection).  ``per_class`` instead adds that many rows from every class
    present in the pool.
    """

    rate: float = 0.0
    seed: int = 0
    per_class: int | None = None

    def __post_init__(self) -> None:
        if self.rate < 0:
            raise ValueError(f"pollution rate must be >= 0, got {self.rate}")
        if self.per_class is not None and self.per_class < 0:
            raise ValueError("per_class must be >= 0")


def pollution_count(n_inliers: int, rate: float) -> int:
    return round_half_up(rate * n_inliers)


def inject_pollution(train: Dataset, pool: Dataset, spec: PollutionSpec) -> Dataset:
    if np.isin(pool.row_ids, train.row_ids).any():
        raise ValueError("pollution pool overlaps the training set")
    if spec.per_class is not None:
        if pool.class_ids is None:
            raise ValueError("per-class pollution needs class ids on the pool")
        picked = []
        for c in np.unique(pool.class_ids):
            rows = np.flatnonzero(pool.class_ids == c)
            if spec.per_class > rows.size:
                raise ValueError(f"pollution pool exhausted for class {c}: {rows.size} < {spec.per_class}")
            picked.append(rows[SplitMix64(spec.seed, "pollution", int(c)).choice(rows.size, spec.per_class)])
        idx = np.sort(np.concatenate(picked)) if picked else np.zeros(0, dtype=np.int64)
    else:
        k = pollution_count(train.n_normal, spec.rate)
        if k > len(pool):
            raise ValueError(f"pollution pool exhausted: need {k}, have {len(pool)}")
        idx = np.sort(SplitMix64(spec.seed, "pollution").choice(len(pool), k))
    if idx.size == 0:
        return train
    added = pool.subset(idx).with_labels(np.zeros(idx.size, dtype=np.int64))
    return concat([train, added], name=train.name)


# -- audit manifests -------------------------------------------------------


def split_manifest(splits: dict[str, Dataset]) -> str:
    """CSV text ``split,source,row_id,label,class_id`` for every row of every split."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["split", "source", "row_id", "label", "class_id"])
    for split_name, ds in splits.items():
        classes = ds.class_ids if ds.class_ids is not None else [""] * len(ds)
        for rid, lab, cls in zip(ds.row_ids.tolist(), ds.labels.tolist(), list(classes)):
            w.writerow([split_name, ds.name, rid, lab, cls])
    return buf.getvalue()


def split_hash(splits: dict[str, Dataset]) -> str:
    return hashlib.sha256(split_manifest(splits).encode()).hexdigest()
