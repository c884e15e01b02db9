"""Reconstruction error, the AE-SAD loss and its anomaly-target transforms.

Normal rows are reconstructed towards themselves; labeled anomalies are
reconstructed towards ``F(x)`` with weight ``lam``.  Scoring always uses
the plain reconstruction error.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class FKind(str, enum.Enum):
    F0 = "f0"  # negative image, 1 - x
    F1 = "f1"  # indicator of [0, 1/2]
    F2 = "f2"  # shift by 1/2 towards the far side

    @classmethod
    def parse(cls, value: "FKind | str") -> "FKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown F kind {value!r}; expected one of f0, f1, f2") from None


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1.0
    f_kind: FKind = FKind.F0

    def __post_init__(self) -> None:
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        object.__setattr__(self, "f_kind", FKind.parse(self.f_kind))


def _check_unit(x: np.ndarray) -> None:
    if x.size and not np.all((x >= 0.0) & (x <= 1.0)):
        raise ValueError("F is defined on [0,1]; input has components outside it")


def apply_f(kind: FKind | str, x: np.ndarray) -> np.ndarray:
    """Elementwise anomaly target.  ``x = 1/2`` belongs to the lower branch."""
    kind = FKind.parse(kind)
    x = np.asarray(x, dtype=np.float64)
    _check_unit(x)
    if kind is FKind.F0:
        return 1.0 - x
    low = x <= 0.5
    if kind is FKind.F1:
        return low.astype(np.float64)
    return np.where(low, x + 0.5, x - 0.5)


def reconstruction_error(x: np.ndarray, xhat: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {xhat.shape}")
    r = x - xhat
    return float(np.dot(r.ravel(), r.ravel()))


def row_errors(x: np.ndarray, xhat: np.ndarray) -> np.ndarray:
    """Per-row squared error of two ``(n, d)`` arrays."""
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {xhat.shape}")
    r = x - xhat
    return np.einsum("ij,ij->i", r, r)


def _check_label(y) -> int:
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y!r}")
    return int(y)


def aesad_loss(x: np.ndarray, xhat: np.ndarray, y: int, cfg: LossConfig) -> float:
    y = _check_label(y)
    if y == 0:
        return reconstruction_error(x, xhat)
    return cfg.lam * reconstruction_error(apply_f(cfg.f_kind, x), xhat)


def target_for(
    x: np.ndarray, y: int, kind: FKind | str, lam: float = 1.0
) -> tuple[np.ndarray, float]:
    """Regression form of the loss: ``aesad_loss == weight * ||target - xhat||^2``."""
    y = _check_label(y)
    x = np.asarray(x, dtype=np.float64)
    if y == 0:
        return x.copy(), 1.0
    return apply_f(kind, x), float(lam)


def targets_and_weights(
    features: np.ndarray, labels: np.ndarray, kind: FKind | str, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Batched :func:`target_for` over the rows of ``features``."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    anomalous = labels == 1
    targets = features.copy()
    if anomalous.any():
        targets[anomalous] = apply_f(kind, features[anomalous])
    weights = np.where(anomalous, float(lam), 1.0)
    return targets, weights


def lambda_schedule(alpha: float, n: int, s: int) -> float:
    """``1 + alpha * (n/s - 1)``: 1 at alpha=0, n/s at alpha=1.

    Evaluated as ``(1 - alpha) + alpha * (n/s)`` so both endpoints come out
    exact in floating point, whatever the ratio.
    """
    if s < 1:
        raise ValueError("lambda schedule needs at least one labeled anomaly (s >= 1)")
    if n < 1:
        raise ValueError(f"need at least one normal row, got n={n}")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    return (1.0 - alpha) + alpha * (n / s)


def alpha_grid(lo: float, hi: float, k: int) -> list[float]:
    """``k`` log-spaced values from ``lo`` to ``hi`` inclusive."""
    if not (0 < lo < hi) or k < 2:
        raise ValueError(f"need 0 < lo < hi and k >= 2, got lo={lo}, hi={hi}, k={k}")
    ratio = hi / lo
    values = [lo * ratio ** (i / (k - 1)) for i in range(k)]
    values[0], values[-1] = float(lo), float(hi)
    return values
