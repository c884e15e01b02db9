"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every criterion writes its measurements as CSV files.  Criterion 10 reruns
all of them into a second directory and compares the files byte for byte.
The MNIST criteria need the raw IDX files (``$AESAD_MNIST_DIR`` or
``~/data/mnist``) and take several minutes each.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from aesad import nn
from aesad.datasets import mnist_dir
from aesad.experiment import ExperimentConfig, run_once
from aesad.loss import FKind, apply_f, lambda_schedule, targets_and_weights
from aesad.metrics import auc, auc_bruteforce, fmt, write_csv
from aesad.rng import SplitMix64

MNIST = mnist_dir()
needs_mnist = pytest.mark.skipif(MNIST is None, reason="MNIST IDX files not found (set AESAD_MNIST_DIR)")


@pytest.fixture
def verdict(request):
    """Record and print a criterion's outcome; the terminal summary repeats it."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", {})

    def record(number, name, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {name} -- {detail}"
        lines[number] = line
        print(line)
        return ok

    return record


def _exp(out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- runners: each writes CSVs under `out` and returns its measurements --------


def run_gradients(out: Path) -> dict:
    rows, worst = [], 0.0
    for seed in range(20):
        r = SplitMix64(seed, "accept-grad")
        d = 2 + int(r.uniform(1)[0] * 3)
        h = 2 + int(r.uniform(1)[0] * 3)
        latent = 1 + int(r.uniform(1)[0] * min(h, 3))
        net = nn.init_network([d, h, latent, h, d], seed)
        for layer in net.layers:
            layer.bias = 0.1 * r.normal(layer.n_out)
        x = r.uniform(6 * d).reshape(6, d)
        y = (r.uniform(6) < 0.5).astype(int)
        kind = list(FKind)[seed % 3]
        lam = 0.5 + 10 * r.uniform(1)[0]
        targets, weights = targets_and_weights(x, y, kind, lam)
        weights = weights / len(x)
        _, grads = nn.value_and_grad(net, x, targets, weights)
        numeric = nn.numeric_gradient(net, x, targets, weights, h=1e-5)
        err = 0.0
        for a, b in zip(grads, numeric):
            scale = np.maximum(np.abs(a), np.abs(b))
            both_zero = scale == 0
            err = max(err, float(np.max(np.where(both_zero, 0.0, np.abs(a - b) / np.where(both_zero, 1, scale)))))
        worst = max(worst, err)
        rows.append((seed, d, "-".join(map(str, net.widths)), kind.value, f"{err:.3e}"))
    write_csv(_exp(out) / "gradients.csv", ["seed", "d", "widths", "f_kind", "max_rel_err"], rows)
    return {"worst": worst, "nets": len(rows)}


def run_f_suite(out: Path) -> dict:
    r = SplitMix64(2, "accept-f")
    involution_ok, f1_ok, f2_dev = True, True, 0.0
    for _ in range(10_000):
        d = 1 + int(r.uniform(1)[0] * 16)
        x = r.uniform(d)
        involution_ok &= bool(np.array_equal(apply_f(FKind.F0, apply_f(FKind.F0, x)), x))
        f2_dev = max(f2_dev, float(np.max(np.abs(np.abs(apply_f(FKind.F2, x) - x) - 0.5))))
        f1_ok &= bool(np.array_equal(np.abs(apply_f(FKind.F1, x) - x), np.maximum(x, 1 - x)))
    write_csv(_exp(out) / "f_suite.csv", ["check", "result"], [
        ("f0_involution_exact", involution_ok),
        ("f2_max_gap_deviation", f"{f2_dev:.3e}"),
        ("f1_gap_is_max", f1_ok),
    ])
    return {"involution": involution_ok, "f2_dev": f2_dev, "f1": f1_ok}


def run_lambda(out: Path) -> dict:
    r = SplitMix64(3, "accept-lambda")
    rows, endpoints_ok, monotone_ok = [], True, True
    alphas = np.linspace(0, 2, 41)
    for _ in range(100):
        n = 1 + int(r.uniform(1)[0] * 10_000)
        s = 1 + int(r.uniform(1)[0] * 500)
        lo, hi = lambda_schedule(0.0, n, s), lambda_schedule(1.0, n, s)
        endpoints_ok &= lo == 1.0 and hi == n / s
        series = np.array([lambda_schedule(a, n, s) for a in alphas])
        steps = np.diff(series)
        if n > s:
            monotone_ok &= bool(np.all(steps > 0))
        elif n == s:
            monotone_ok &= bool(np.all(steps == 0))
        else:
            monotone_ok &= bool(np.all(steps < 0))
        rows.append((n, s, repr(lo), repr(hi), repr(n / s)))
    write_csv(_exp(out) / "lambda.csv", ["n", "s", "lambda_0", "lambda_1", "n_over_s"], rows)
    return {"endpoints": endpoints_ok, "monotone": monotone_ok}


def run_auc_oracle(out: Path) -> dict:
    r = SplitMix64(4, "accept-auc")
    rows, mismatches, with_ties = [], 0, 0
    for i in range(200):
        n = 2 + int(r.uniform(1)[0] * 199)
        labels = (r.uniform(n) < 0.3).astype(int)
        labels[0], labels[-1] = 0, 1
        # coarse grids on half the instances to force ties
        levels = 5 if i % 2 == 0 else 10**6
        scores = np.floor(r.uniform(n) * levels) / levels
        fast, slow = auc(scores, labels), auc_bruteforce(scores, labels)
        mismatches += fast != slow
        with_ties += len(np.unique(scores)) < n
        rows.append((i, n, repr(fast), repr(slow)))
    write_csv(_exp(out) / "auc_oracle.csv", ["instance", "n", "auc_rank", "auc_pairs"], rows)
    return {"mismatches": mismatches, "with_ties": with_ties}


BLOB_CONFIG = {
    "dataset": {"kind": "blobs", "dim": 8, "n_normal": 2000, "n_anomalous": 1000,
                "n_test_normal": 500, "n_test_anomalous": 500},
    "split": {"protocol": "one-vs-one", "normal_classes": [0], "seen_anomaly_classes": [1], "s": 16},
    "train": {"epochs": 30},
    "runs": 5,
    "seed": 0,
}


def run_blobs(out: Path) -> dict:
    cfg = ExperimentConfig.from_dict(BLOB_CONFIG)
    start = time.perf_counter()
    rows = []
    for seed in cfg.run_seeds():
        a = run_once(cfg, seed)
        b = run_once(cfg, seed, method="standard_ae", data=a.data)
        a.report.write_csv(_exp(out) / f"blobs_seed{seed}_aesad.csv")
        b.report.write_csv(out / f"blobs_seed{seed}_standard_ae.csv")
        rows.append((seed, a.auc, b.auc))
    elapsed = time.perf_counter() - start
    write_csv(out / "blobs.csv", ["seed", "aesad_auc", "standard_ae_auc"], rows)
    wins = sum(1 for _, a, b in rows if a >= 0.95 and a > b)
    return {"rows": rows, "wins": wins, "seconds": elapsed}


def _mnist_pair(cfg: ExperimentConfig, out: Path, tag: str) -> dict:
    seed = cfg.seed
    a = run_once(cfg, seed)
    b = run_once(cfg, seed, method="standard_ae", data=a.data)
    a.report.write_csv(_exp(out) / f"{tag}_aesad_epochs.csv")
    b.report.write_csv(out / f"{tag}_standard_ae_epochs.csv")
    write_csv(out / f"{tag}_auc.csv", ["method", "auc", "lambda", "train_rows", "train_labeled", "test_rows"], [
        ("aesad", a.auc, a.lam, len(a.data.train), a.data.train.n_anomalous, len(a.data.test)),
        ("standard_ae", b.auc, None, len(b.data.train), b.data.train.n_anomalous, len(b.data.test)),
    ])
    classes = sorted(a.per_class)
    write_csv(out / f"{tag}_per_class.csv", ["class", "aesad", "standard_ae"],
              [(c, a.per_class[c], b.per_class[c]) for c in classes])
    return {"aesad": a.auc, "ae": b.auc, "per_class": {c: (a.per_class[c], b.per_class[c]) for c in classes},
            "lam": a.lam, "train": a.data.train}


MNIST_8 = {
    "dataset": {"kind": "mnist"},
    "split": {"protocol": "one-vs-many", "normal_classes": [8], "seen_anomaly_classes": [1, 3, 5, 9], "s": 100},
    "train": {"epochs": 50},
    "runs": 1,
    "seed": 0,
}

MNIST_3_POLLUTED = {
    "dataset": {"kind": "mnist"},
    "split": {"protocol": "one-vs-many", "normal_classes": [3], "seen_anomaly_classes": [4, 5, 6],
              "per_class_quota": 50},
    "pollution": {"rate": 0.05},
    # alpha = 1 gives lambda = n/s with n counting every label-0 row
    "train": {"epochs": 50, "alpha": 1.0},
    "runs": 1,
    "seed": 0,
}


def run_mnist_seen(out: Path) -> dict:
    return _mnist_pair(ExperimentConfig.from_dict(MNIST_8), out, "mnist_8")


def run_mnist_polluted(out: Path) -> dict:
    return _mnist_pair(ExperimentConfig.from_dict(MNIST_3_POLLUTED), out, "mnist_3v456_polluted")


def _decile_trend(aucs) -> tuple[float, float]:
    a = np.asarray(aucs)
    k = max(1, math.ceil(len(a) / 10))
    return float(a[:k].mean()), float(a[-k:].mean())


def run_epoch_trend(out: Path) -> dict:
    rows, results = [], {}
    for name in ("wine", "wbc"):
        for seed in range(3):
            cfg = ExperimentConfig.from_dict({
                "dataset": {"kind": "builtin", "name": name},
                "split": {"protocol": "odds"},
                "train": {"epochs": 200, "eval_every": 1},
                "runs": 1,
                "seed": seed,
            })
            for method in ("aesad", "standard_ae"):
                res = run_once(cfg, seed, method=method)
                res.report.write_csv(_exp(out) / f"{name}_seed{seed}_{method}.csv")
                first, last = _decile_trend(res.report.aucs)
                results[(name, seed, method)] = (first, last)
                rows.append((name, seed, method, first, last))
    write_csv(out / "epoch_trend.csv", ["dataset", "seed", "method", "first_decile_auc", "last_decile_auc"], rows)
    return results


RUNNERS = {
    1: run_gradients,
    2: run_f_suite,
    3: run_lambda,
    4: run_auc_oracle,
    5: run_blobs,
    6: run_mnist_seen,
    8: run_mnist_polluted,
    9: run_epoch_trend,
}
MNIST_RUNNERS = {6, 8}


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Lazily computed first runs, shared between criteria (7 reads 6, 10 reads all)."""
    root = tmp_path_factory.mktemp("acceptance")
    cache = {}

    def get(number):
        if number not in cache:
            out = root / "first" / f"c{number}"
            cache[number] = (out, RUNNERS[number](out))
        return cache[number]

    get.root = root
    return get


# -- criteria --------------------------------------------------------------


def test_c01_gradient_oracle(runs, verdict):
    _, r = runs(1)
    ok = r["nets"] >= 20 and r["worst"] < 1e-5
    verdict(1, "gradient oracle", ok, f"{r['nets']} nets, max relative error {r['worst']:.2e} (< 1e-5)")
    assert ok


def test_c02_f_functions(runs, verdict):
    _, r = runs(2)
    eps = np.finfo(float).eps
    ok = r["involution"] and r["f1"] and r["f2_dev"] <= eps
    verdict(2, "F-function suite", ok,
            f"F0 involution exact={r['involution']}, |F2(x)-x|-1/2 max {r['f2_dev']:.1e} (<= {eps:.1e}), "
            f"F1 gap = max(x,1-x) {r['f1']}; 10^4 vectors")
    assert ok


def test_c03_lambda_schedule(runs, verdict):
    _, r = runs(3)
    ok = r["endpoints"] and r["monotone"]
    verdict(3, "lambda schedule", ok, f"exact endpoints={r['endpoints']}, monotone in alpha={r['monotone']}; 100 (n,s)")
    assert ok


def test_c04_auc_oracle(runs, verdict):
    _, r = runs(4)
    ok = r["mismatches"] == 0 and r["with_ties"] > 0
    verdict(4, "AUC oracle equivalence", ok, f"{r['mismatches']} mismatches in 200 instances ({r['with_ties']} with ties)")
    assert ok


def test_c05_synthetic_separation(runs, verdict):
    _, r = runs(5)
    ok = r["wins"] >= 4 and r["seconds"] < 60
    detail = ", ".join(f"seed {s}: {fmt(a)} vs {fmt(b)}" for s, a, b in r["rows"])
    verdict(5, "synthetic separation", ok, f"{r['wins']}/5 seeds pass in {r['seconds']:.0f}s ({detail})")
    assert ok


@pytest.mark.slow
@needs_mnist
def test_c06_mnist_seen_unseen(runs, verdict):
    _, r = runs(6)
    ok = r["aesad"] >= 0.97 and abs(r["aesad"] - 0.99) <= 0.03 and 0.82 <= r["ae"] <= 0.93
    verdict(6, "MNIST 8 vs {1,3,5,9}", ok,
            f"AE-SAD {fmt(r['aesad'])} (>= 0.97), AE {fmt(r['ae'])} (0.82-0.93), lambda {r['lam']:.3f}")
    assert ok


@pytest.mark.slow
@needs_mnist
def test_c07_per_class_dominance(runs, verdict):
    _, r = runs(6)
    seen = [1, 3, 5, 9]
    seen_ok = all(r["per_class"][c][0] >= r["per_class"][c][1] for c in seen)
    dominated = [c for c, (a, b) in r["per_class"].items() if a >= b]
    ok = seen_ok and len(dominated) >= 7 and len(r["per_class"]) == 9
    losers = sorted(set(r["per_class"]) - set(dominated))
    verdict(7, "per-class dominance", ok,
            f"seen classes all dominated={seen_ok}, {len(dominated)}/9 classes dominated (not: {losers})")
    assert ok


@pytest.mark.slow
@needs_mnist
def test_c08_pollution_robustness(runs, verdict):
    _, r = runs(8)
    train = r["train"]
    n, s = train.n_normal, train.n_anomalous
    gap = r["aesad"] - r["ae"]
    ok = (
        s == 150
        and r["lam"] == n / s
        and gap >= 0.02
        and abs(r["aesad"] - 0.961) <= 0.03
        and abs(r["ae"] - 0.904) <= 0.03
    )
    verdict(8, "MNIST 3 vs [4,5,6], 5% pollution", ok,
            f"AE-SAD {fmt(r['aesad'])} (0.961+-0.03), AE {fmt(r['ae'])} (0.904+-0.03), gap {gap:+.4f} (>= 0.02), "
            f"lambda = n/s = {n}/{s}")
    assert ok


def test_c09_epoch_trend(runs, verdict):
    _, r = runs(9)
    aesad = {k: v for k, v in r.items() if k[2] == "aesad"}
    ok = all(last >= first for first, last in aesad.values())
    detail = ", ".join(f"{k[0]}/{k[1]}: {first:.3f}->{last:.3f}" for k, (first, last) in sorted(aesad.items()))
    verdict(9, "epoch trend on ODDS-style sets", ok, f"first->last decile AUC, AE-SAD: {detail}")
    assert ok


def _csv_bytes(directory: Path) -> dict:
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*.csv"))}


def test_c10_determinism(runs, verdict):
    numbers = [k for k in RUNNERS if k not in MNIST_RUNNERS or MNIST is not None]
    differing, compared = [], 0
    for k in numbers:
        first_dir, _ = runs(k)
        second_dir = runs.root / "second" / f"c{k}"
        RUNNERS[k](second_dir)
        a, b = _csv_bytes(first_dir), _csv_bytes(second_dir)
        compared += len(a)
        if a != b:
            differing.append(k)
    skipped = "" if MNIST is not None else " (MNIST runs skipped)"
    ok = not differing and compared > 0
    verdict(10, "determinism", ok, f"{compared} metric CSVs from criteria {numbers} byte-identical on rerun"
            f"{'' if ok else f'; differing: {differing}'}{skipped}")
    assert ok
