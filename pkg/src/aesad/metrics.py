"""AUC (rank form and pairwise oracle), per-class breakdowns, run aggregation, win rates."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


def _check_binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores but {labels.size} labels")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    n_pos = int((labels == 1).sum())
    if n_pos == 0 or n_pos == labels.size:
        raise ValueError("AUC needs both normal (0) and anomalous (1) rows")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    return scores, labels


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], sorted_vals.size]
    mean_rank = (starts + ends + 1) / 2.0  # mean of (start+1 .. end)
    ranks = np.empty(values.size, dtype=np.float64)
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def auc(scores, labels) -> float:
    """P(score of an anomaly > score of a normal) + 1/2 P(tie), via the rank-sum statistic."""
    scores, labels = _check_binary(scores, labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    rank_sum = average_ranks(scores)[pos].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_bruteforce(scores, labels) -> float:
    """Same quantity by enumerating every (anomaly, normal) pair."""
    scores, labels = _check_binary(scores, labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (pos.size * neg.size)


def per_class_auc(
    scores,
    labels,
    class_ids,
    normal_classes: Iterable[int],
    classes: Iterable[int] | None = None,
) -> dict[int, float]:
    """AUC of the normal rows against each anomalous class on its own."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    class_ids = np.asarray(class_ids)
    normal_classes = [int(c) for c in normal_classes]
    normal = np.isin(class_ids, normal_classes)
    if classes is None:
        classes = sorted(set(np.unique(class_ids[~normal]).tolist()))
    out = {}
    for c in classes:
        rows = class_ids == c
        if not rows.any():
            raise ValueError(f"class {c} has no rows")
        mask = normal | rows
        out[int(c)] = auc(scores[mask], labels[mask])
    return out


def aggregate_runs(aucs: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0.0 for a single run)."""
    values = np.asarray(list(aucs), dtype=np.float64)
    if values.size == 0:
        raise ValueError("no runs to aggregate")
    mean = float(values.mean())
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return mean, std


def win_probability(a_aucs: Sequence[float], b_aucs: Sequence[float]) -> float:
    """Fraction of paired runs where A scores strictly higher than B."""
    a = np.asarray(a_aucs, dtype=np.float64)
    b = np.asarray(b_aucs, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"paired results differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("no paired results")
    return float((a > b).mean())


def win_matrix(results: Mapping[str, Sequence[float]]) -> dict[str, dict[str, float | None]]:
    """Pairwise win probabilities; the diagonal is ``None``."""
    names = list(results)
    return {
        r: {c: None if r == c else win_probability(results[r], results[c]) for c in names}
        for r in names
    }


@dataclass
class EvalReport:
    method: str
    auc: float
    per_class: dict[int, float] = field(default_factory=dict)
    n_test: int = 0
    n_anomalous: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for v in [self.auc, *self.per_class.values()]:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"AUC outside [0,1]: {v}")

    def to_json(self) -> str:
        d = asdict(self)
        d["per_class"] = {str(k): v for k, v in self.per_class.items()}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [
            f"method: {self.method}",
            f"test rows: {self.n_test} ({self.n_anomalous} anomalous)",
            f"AUC: {fmt(self.auc)}",
        ]
        if self.per_class:
            lines.append("per-class AUC:")
            lines += [f"  {c}: {fmt(v)}" for c, v in sorted(self.per_class.items())]
        return "\n".join(lines) + "\n"


def fmt(x: float | None) -> str:
    """Fixed 6-decimal rendering used in every emitted table."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.6f}"


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, float) else v for v in row])
