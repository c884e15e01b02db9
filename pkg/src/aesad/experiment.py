"""Experiment configs and single runs: dataset resolution, splits, pollution, training, scoring.

A config is a YAML tree with the blocks ``dataset``, ``split``, ``pollution``
(optional), ``train``, ``architecture`` (optional), ``runs``, ``seed`` and,
for the sweep verbs, ``grid`` or ``compare``.  Run ``i`` uses seed
``seed + i`` for everything random in it (split, pollution, init, shuffles).
"""

from __future__ import annotations

import copy
import functools
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from aesad import datasets, nn
from aesad.data import (
    Dataset,
    MinMax,
    PollutionSpec,
    SplitSpec,
    anomaly_pool,
    build_odds_split,
    build_split,
    inject_pollution,
    load_csv,
    load_idx,
    split_hash,
)
from aesad.metrics import auc, per_class_auc
from aesad.trainer import TrainConfig, TrainReport, fit, score

DEFAULT_RUNS = 10
DEFAULT_S = 8
DATASET_KINDS = ("csv", "toy", "builtin", "mnist", "idx", "blobs")
# image-scale dense nets converge in far fewer epochs than tabular ones
IMAGE_KINDS = ("mnist", "idx")
IMAGE_EPOCHS = 50
TOP_LEVEL_KEYS = {"dataset", "split", "pollution", "train", "architecture", "runs", "seed", "grid", "compare"}

_BLOB_DEFAULTS = {
    "dim": 8,
    "n_normal": 2000,
    "n_anomalous": 1000,
    "n_test_normal": 500,
    "n_test_anomalous": 500,
    "normal_center": 0.5,
    "anomaly_center": 0.6,
    "scale": 0.08,
}


class ConfigError(ValueError):
    """Invalid experiment config; the message starts with the offending key."""


def _expand(path: str | Path, base: Path | None) -> Path:
    p = Path(os.path.expanduser(str(path)))
    if not p.is_absolute() and base is not None:
        p = base / p
    return p


@dataclass
class ExperimentConfig:
    dataset: dict
    split: dict
    train: dict = field(default_factory=dict)
    pollution: dict | None = None
    architecture: list[int] | None = None
    runs: int = DEFAULT_RUNS
    seed: int = 0
    grid: dict | None = None
    compare: dict | None = None

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str | Path | None = None) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be a mapping")
        unknown = set(raw) - TOP_LEVEL_KEYS
        if unknown:
            raise ConfigError(f"config: unknown keys {sorted(unknown)}")
        for key in ("dataset", "split"):
            if not isinstance(raw.get(key), dict):
                raise ConfigError(f"{key}: required mapping is missing")
        base = Path(base_dir) if base_dir is not None else None
        cfg = cls(
            dataset=_check_dataset(dict(raw["dataset"]), base),
            split=dict(raw["split"]),
            train=dict(raw.get("train") or {}),
            pollution=dict(raw["pollution"]) if raw.get("pollution") else None,
            architecture=list(raw["architecture"]) if raw.get("architecture") else None,
            runs=int(raw.get("runs", DEFAULT_RUNS)),
            seed=int(raw.get("seed", 0)),
            grid=dict(raw["grid"]) if raw.get("grid") else None,
            compare=dict(raw["compare"]) if raw.get("compare") else None,
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.runs < 1:
            raise ConfigError(f"runs: must be >= 1, got {self.runs}")
        try:
            split_spec(self, self.seed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"split: {exc}") from None
        try:
            train_config(self, self.seed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train: {exc}") from None
        if self.pollution is not None:
            if self.split.get("protocol") == "odds":
                raise ConfigError("pollution: not available with the odds protocol")
            try:
                pollution_spec(self, self.seed)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"pollution: {exc}") from None
        if self.architecture is not None:
            try:
                nn._check_widths(self.architecture)
            except ValueError as exc:
                raise ConfigError(f"architecture: {exc}") from None
        if self.grid is not None:
            for axis in ("s", "alpha"):
                values = self.grid.get(axis)
                if not isinstance(values, list) or not values:
                    raise ConfigError(f"grid.{axis}: needs a non-empty list")
        if self.compare is not None:
            methods = self.compare.get("methods")
            if not isinstance(methods, list) or len(methods) < 2:
                raise ConfigError("compare.methods: list at least two methods")
            for m in methods:
                try:
                    TrainConfig(method=m)
                except ValueError as exc:
                    raise ConfigError(f"compare.methods: {exc}") from None

    def with_seed(self, seed: int) -> "ExperimentConfig":
        out = copy.deepcopy(self)
        out.seed = int(seed)
        return out

    def run_seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.runs)]

    def resolved(self) -> dict:
        """Config with every default written out (lambda is per run and goes elsewhere)."""
        tc = train_config(self, self.seed).as_dict()
        tc.pop("seed")
        spec = split_spec(self, self.seed)
        split = {
            "protocol": spec.protocol,
            "normal_classes": list(spec.normal_classes),
            "seen_anomaly_classes": list(spec.seen_anomaly_classes),
            "s": spec.s,
            "per_class_quota": spec.per_class_quota,
            "test_classes": None if spec.test_classes is None else list(spec.test_classes),
        }
        if spec.protocol == "odds":
            split = {
                "protocol": "odds",
                "train_fraction": float(self.split.get("train_fraction", 0.6)),
                "anomaly_fraction": float(self.split.get("anomaly_fraction", 0.05)),
            }
        out = {
            "dataset": _jsonable(self.dataset),
            "split": split,
            "pollution": None,
            "train": tc,
            "architecture": self.architecture,
            "runs": self.runs,
            "seed": self.seed,
        }
        if self.pollution is not None:
            ps = pollution_spec(self, self.seed)
            out["pollution"] = {"rate": ps.rate, "per_class": ps.per_class}
        if self.grid is not None:
            out["grid"] = {"s": list(self.grid["s"]), "alpha": list(self.grid["alpha"])}
        if self.compare is not None:
            out["compare"] = _jsonable(self.compare)
        return out


def _jsonable(obj: Any) -> Any:
    return json.loads(json.dumps(obj, default=str))


def _check_dataset(ds: dict, base: Path | None) -> dict:
    kind = ds.get("kind")
    if kind not in DATASET_KINDS:
        raise ConfigError(f"dataset.kind: expected one of {DATASET_KINDS}, got {kind!r}")
    if kind == "csv":
        for key in ("path", "test_path"):
            if key == "path" and key not in ds:
                raise ConfigError("dataset.path: required for csv datasets")
            if key in ds:
                p = _expand(ds[key], base)
                if not p.is_file():
                    raise ConfigError(f"dataset.{key}: file not found: {p}")
                ds[key] = str(p)
    elif kind == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if key not in ds:
                raise ConfigError(f"dataset.{key}: required for idx datasets")
            p = _expand(ds[key], base)
            if not p.is_file():
                raise ConfigError(f"dataset.{key}: file not found: {p}")
            ds[key] = str(p)
    elif kind == "mnist":
        where = datasets.mnist_dir(_expand(ds["path"], base) if ds.get("path") else None)
        if where is None:
            raise ConfigError("dataset.path: MNIST IDX files not found (set the key or AESAD_MNIST_DIR)")
        ds["path"] = str(where)
    elif kind == "builtin":
        if ds.get("name") not in datasets.BUILTIN_TABULAR:
            raise ConfigError(f"dataset.name: expected one of {sorted(datasets.BUILTIN_TABULAR)}")
    elif kind == "blobs":
        unknown = set(ds) - set(_BLOB_DEFAULTS) - {"kind", "seed"}
        if unknown:
            raise ConfigError(f"dataset: unknown blob keys {sorted(unknown)}")
        ds = {**_BLOB_DEFAULTS, **ds}
    return ds


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"--config: file not found: {path}")
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config: not valid YAML ({exc})") from None
    return ExperimentConfig.from_dict(raw, base_dir=path.parent)


# -- resolution of the individual blocks ------------------------------------


def split_spec(cfg: ExperimentConfig, seed: int, s: int | None = None) -> SplitSpec:
    sp = cfg.split
    protocol = sp.get("protocol")
    if protocol == "odds":
        return SplitSpec("odds", seed=seed)
    quota = sp.get("per_class_quota")
    if s is not None:
        quota = None
    elif "s" in sp:
        s = int(sp["s"])
    elif quota is None:
        s = DEFAULT_S
    else:
        s = 0
    test_classes = sp.get("test_classes")
    return SplitSpec(
        protocol,
        tuple(sp.get("normal_classes", ())),
        tuple(sp.get("seen_anomaly_classes", ())),
        s=s,
        seed=seed,
        per_class_quota=None if quota is None else int(quota),
        test_classes=None if test_classes is None else tuple(test_classes),
    )


def train_config(cfg: ExperimentConfig, seed: int, **overrides) -> TrainConfig:
    params = dict(cfg.train)
    if "epochs" not in params and cfg.dataset.get("kind") in IMAGE_KINDS:
        params["epochs"] = IMAGE_EPOCHS
    if "lambda" in params:
        params["lam"] = params.pop("lambda")
    if "seed" in params:
        raise ValueError("the training seed comes from the top-level seed")
    if overrides.get("alpha") is not None:
        params.pop("lam", None)
    params.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(seed=seed, **params)


def pollution_spec(cfg: ExperimentConfig, seed: int) -> PollutionSpec:
    p = cfg.pollution or {}
    unknown = set(p) - {"rate", "per_class"}
    if unknown:
        raise ValueError(f"unknown keys {sorted(unknown)}")
    per_class = p.get("per_class")
    return PollutionSpec(float(p.get("rate", 0.0)), seed, None if per_class is None else int(per_class))


# -- data -------------------------------------------------------------------


@functools.lru_cache(maxsize=4)
def _load_pair(kind: str, key: tuple) -> tuple[Dataset, Dataset | None]:
    if kind == "mnist":
        return datasets.load_mnist(key[0])
    if kind == "idx":
        return load_idx(key[0], key[1], "train"), load_idx(key[2], key[3], "test")
    if kind == "csv":
        path, test_path, label_column, class_column = key
        train = load_csv(path, label_column, class_column)
        test = load_csv(test_path, label_column, class_column) if test_path else None
        return train, test
    if kind == "toy":
        return datasets.load_toy(), None
    raise ValueError(kind)


def load_sources(dataset: dict, seed: int) -> tuple[Dataset, Dataset | None]:
    """Train source and (for class protocols) test source of a dataset block."""
    kind = dataset["kind"]
    if kind == "blobs":
        s = int(dataset.get("seed", seed))
        kw = {k: dataset[k] for k in ("normal_center", "anomaly_center", "scale")}
        train = datasets.gaussian_blobs(
            int(dataset["n_normal"]), int(dataset["n_anomalous"]), int(dataset["dim"]), s, stream="blobs-train", **kw
        )
        test = datasets.gaussian_blobs(
            int(dataset["n_test_normal"]), int(dataset["n_test_anomalous"]), int(dataset["dim"]), s,
            stream="blobs-test", **kw,
        )
        return train, test
    if kind == "builtin":
        return datasets.odds_style(dataset["name"], int(dataset.get("seed", 0))), None
    if kind == "mnist":
        return _load_pair("mnist", (dataset["path"],))
    if kind == "idx":
        keys = ("train_images", "train_labels", "test_images", "test_labels")
        return _load_pair("idx", tuple(dataset[k] for k in keys))
    if kind == "csv":
        key = (dataset["path"], dataset.get("test_path"), dataset.get("label_column", "label"),
               dataset.get("class_column"))
        return _load_pair("csv", key)
    return _load_pair("toy", ())


def _wants_normalization(dataset: dict) -> bool:
    default = dataset["kind"] in ("csv", "toy", "builtin")
    return bool(dataset.get("normalize", default))


@dataclass
class RunData:
    train: Dataset
    test: Dataset
    spec: SplitSpec
    scaler: MinMax | None
    split_hash: str


def prepare_run(cfg: ExperimentConfig, seed: int, s: int | None = None) -> RunData:
    """Split, pollute and normalize the data of one run."""
    spec = split_spec(cfg, seed, s)
    source, test_source = load_sources(cfg.dataset, seed)
    if spec.protocol == "odds":
        sp = cfg.split
        train, test = build_odds_split(
            source, seed, float(sp.get("train_fraction", 0.6)), float(sp.get("anomaly_fraction", 0.05))
        )
    else:
        if test_source is None:
            raise ConfigError(
                f"dataset: protocol {spec.protocol} needs a separate test set (dataset.test_path)"
            )
        train, test = build_split(source, test_source, spec)
        if cfg.pollution is not None:
            pool = anomaly_pool(source, spec, train)
            train = inject_pollution(train, pool, pollution_spec(cfg, seed))
    scaler = None
    if _wants_normalization(cfg.dataset):
        scaler = MinMax.fit(train.features)
        train = Dataset(scaler.transform(train.features), train.labels, train.class_ids, train.name, train.row_ids)
        test = Dataset(scaler.transform(test.features), test.labels, test.class_ids, test.name, test.row_ids)
    if not (train.in_unit_cube() and test.in_unit_cube()):
        raise ConfigError("dataset: features fall outside [0,1]; set dataset.normalize: true")
    return RunData(train, test, spec, scaler, split_hash({"train": train, "test": test}))


# -- single runs ------------------------------------------------------------


@dataclass
class RunResult:
    method: str
    seed: int
    auc: float
    per_class: dict[int, float]
    lam: float | None
    report: TrainReport
    net: nn.Network
    data: RunData
    scores: np.ndarray

    def summary(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "auc": self.auc,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
            "lambda": self.lam,
            "split_hash": self.data.split_hash,
        }


def widths_for(cfg: ExperimentConfig, dim: int) -> list[int]:
    widths = cfg.architecture or nn.default_widths(dim)
    if widths[0] != dim:
        raise ConfigError(f"architecture: input width {widths[0]} but data has {dim} features")
    return list(widths)


def evaluate_scores(scores: np.ndarray, test: Dataset, spec: SplitSpec) -> tuple[float, dict[int, float]]:
    overall = auc(scores, test.labels)
    per_class: dict[int, float] = {}
    if spec.protocol != "odds" and test.class_ids is not None:
        per_class = per_class_auc(scores, test.labels, test.class_ids, spec.normal_classes)
    return overall, per_class


def run_once(
    cfg: ExperimentConfig,
    seed: int,
    method: str | None = None,
    s: int | None = None,
    alpha: float | None = None,
    eval_every: int | None = None,
    data: RunData | None = None,
) -> RunResult:
    """Train and score one (config, seed) cell.

    Per-epoch test AUCs are recorded only when ``eval_every`` is set (either
    here or in the ``train`` block).
    """
    data = data or prepare_run(cfg, seed, s)
    tc = train_config(cfg, seed, method=method, alpha=alpha, eval_every=eval_every)
    net = nn.init_network(widths_for(cfg, data.train.dim), seed)
    net.meta = {"method": tc.method}
    test_for_curve = data.test if tc.eval_every is not None else None
    net, report = fit(net, data.train, tc, test_for_curve)
    scores = score(net, data.test.features)
    overall, per_class = evaluate_scores(scores, data.test, data.spec)
    lam = report.lam if tc.method == "aesad" else None
    return RunResult(tc.method, seed, overall, per_class, lam, report, net, data, scores)
