"""Training loops (AE-SAD, standard AE, negative-learning AE) and anomaly scoring."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from aesad import nn
from aesad.data import Dataset
from aesad.loss import FKind, lambda_schedule, row_errors, targets_and_weights
from aesad.metrics import auc, fmt, write_csv
from aesad.rng import SplitMix64

logger = logging.getLogger(__name__)

METHODS = ("aesad", "standard_ae", "neg_ae")
DEFAULT_ALPHA = 0.1


@dataclass
class TrainConfig:
    method: str = "aesad"
    f_kind: FKind = FKind.F0
    lam: float | None = None
    alpha: float | None = None
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_every: int | None = None
    neg_fraction: float = 0.1  # phase-2 epochs of neg_ae, relative to `epochs`

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        self.f_kind = FKind.parse(self.f_kind)
        if self.lam is not None and self.alpha is not None:
            raise ValueError("give lambda or alpha, not both")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.alpha is not None and self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.eval_every is not None and self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if not 0 <= self.neg_fraction:
            raise ValueError("neg_fraction must be >= 0")

    def resolve_lambda(self, n: int, s: int) -> float:
        """Explicit lambda, else ``lambda(alpha)`` from the label counts.

        Without either, alpha defaults to 0.1; with no labeled anomalies the
        weight is irrelevant and resolves to 1.
        """
        if self.lam is not None:
            return float(self.lam)
        if self.alpha is not None:
            return lambda_schedule(self.alpha, n, s)
        if s == 0:
            return 1.0
        return lambda_schedule(DEFAULT_ALPHA, n, s)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["f_kind"] = self.f_kind.value
        return d


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    auc_epochs: list[int] = field(default_factory=list)
    aucs: list[float] = field(default_factory=list)
    lam: float | None = None
    wall_time: float = 0.0
    final_epoch: int = 0

    def rows(self):
        by_epoch = dict(zip(self.auc_epochs, self.aucs))
        for epoch, loss in enumerate(self.losses, start=1):
            yield epoch, loss, by_epoch.get(epoch)

    def write_csv(self, path: str | Path) -> None:
        """``epoch,loss,auc`` (empty auc on epochs without evaluation); no timing data."""
        write_csv(path, ["epoch", "loss", "auc"], self.rows())


def score(net: nn.Network, rows: np.ndarray) -> np.ndarray:
    """Anomaly score of every row: squared reconstruction error."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[None, :]
    return row_errors(rows, nn.forward(net, rows))


def _maybe_eval(net, test_set, cfg, epoch, report, eval_every) -> None:
    if test_set is None or epoch % eval_every:
        return
    value = auc(score(net, test_set.features), test_set.labels)
    report.auc_epochs.append(epoch)
    report.aucs.append(value)


def _run_epochs(
    net: nn.Network,
    features: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray,
    cfg: TrainConfig,
    epochs: int,
    report: TrainReport,
    stream: str,
    test_set: Dataset | None = None,
    epoch_offset: int = 0,
    clamp: float | None = None,
) -> None:
    """Minibatch Adam on ``sum_r w_r ||t_r - xhat_r||^2 / batch_rows``.

    With ``clamp`` set, rows whose squared error already reaches it stop
    contributing (used by the ascent phase, where weights are negative).
    """
    n = features.shape[0]
    state = nn.AdamState.for_params(
        net.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps
    )
    eval_every = cfg.eval_every or 1
    for e in range(epochs):
        epoch = epoch_offset + e + 1
        order = SplitMix64(cfg.seed, stream, epoch).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            w = weights[idx] / idx.size
            if clamp is not None:
                err = row_errors(targets[idx], nn.forward(net, features[idx]))
                w = np.where(err >= clamp, 0.0, w)
            loss, grads = nn.value_and_grad(net, features[idx], targets[idx], w)
            total += loss * idx.size
            nn.adam_update_(net.parameters(), grads, state)
        report.losses.append(total / n)
        report.final_epoch = epoch
        _maybe_eval(net, test_set, cfg, epoch, report, eval_every)
        if epoch % 10 == 0:
            logger.debug("epoch %d loss %s", epoch, fmt(report.losses[-1]))


def _check_dims(net: nn.Network, ds: Dataset) -> None:
    if ds.dim != net.input_dim:
        raise ValueError(f"data has {ds.dim} features, network expects {net.input_dim}")


def train(
    net: nn.Network, train_set: Dataset, cfg: TrainConfig, test_set: Dataset | None = None
) -> tuple[nn.Network, TrainReport]:
    """AE-SAD: normal rows reconstruct to themselves, labeled anomalies to ``F(x)``.

    The network is updated in place and also returned.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    _check_dims(net, train_set)
    start = time.perf_counter()
    lam = cfg.resolve_lambda(train_set.n_normal, train_set.n_anomalous)
    targets, weights = targets_and_weights(train_set.features, train_set.labels, cfg.f_kind, lam)
    report = TrainReport(lam=lam)
    _run_epochs(net, train_set.features, targets, weights, cfg, cfg.epochs, report, "shuffle", test_set)
    report.wall_time = time.perf_counter() - start
    return net, report


def train_standard(
    net: nn.Network, train_set: Dataset, cfg: TrainConfig, test_set: Dataset | None = None
) -> tuple[nn.Network, TrainReport]:
    """Plain reconstruction training on the label-0 rows only."""
    _check_dims(net, train_set)
    normal = train_set.labels == 0
    if not normal.any():
        raise ValueError("no normal (label 0) rows to train on")
    start = time.perf_counter()
    x = train_set.features[normal]
    report = TrainReport()
    _run_epochs(net, x, x, np.ones(x.shape[0]), cfg, cfg.epochs, report, "shuffle", test_set)
    report.wall_time = time.perf_counter() - start
    return net, report


def train_neg(
    net: nn.Network, train_set: Dataset, cfg: TrainConfig, test_set: Dataset | None = None
) -> tuple[nn.Network, TrainReport]:
    """Negative learning: fit the normals, then push reconstruction error of anomalies up.

    Phase 2 runs ``ceil(neg_fraction * epochs)`` epochs of gradient ascent
    on the anomalies' reconstruction error, each row capped at ``d`` (the
    largest error a [0,1] output can reach).
    """
    _check_dims(net, train_set)
    if train_set.n_normal == 0 or train_set.n_anomalous == 0:
        raise ValueError("negative learning needs both normal and anomalous rows")
    start = time.perf_counter()
    _, report = train_standard(net, train_set, cfg, test_set)
    anomalous = train_set.labels == 1
    xa = train_set.features[anomalous]
    neg_epochs = math.ceil(cfg.neg_fraction * cfg.epochs)
    _run_epochs(
        net, xa, xa, -np.ones(xa.shape[0]), cfg, neg_epochs, report, "negative",
        test_set, epoch_offset=cfg.epochs, clamp=float(train_set.dim),
    )
    report.wall_time = time.perf_counter() - start
    return net, report


def fit(
    net: nn.Network, train_set: Dataset, cfg: TrainConfig, test_set: Dataset | None = None
) -> tuple[nn.Network, TrainReport]:
    """Dispatch on ``cfg.method``."""
    if cfg.method == "aesad":
        return train(net, train_set, cfg, test_set)
    if cfg.method == "standard_ae":
        return train_standard(net, train_set, cfg, test_set)
    return train_neg(net, train_set, cfg, test_set)
