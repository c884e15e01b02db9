"""Command line: ``aesad {train,evaluate,grid,compare}``.

Every verb writes into ``--out``; re-running with the same config and seed
rewrites identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from aesad import nn
from aesad.data import Dataset, MinMax, load_csv
from aesad.experiment import (
    ConfigError,
    ExperimentConfig,
    load_config,
    prepare_run,
    run_once,
)
from aesad.metrics import EvalReport, aggregate_runs, auc, fmt, per_class_auc, win_matrix, write_csv
from aesad.trainer import score

logger = logging.getLogger("aesad")

MODEL_FILE = "model.aesad"
METRICS_FILE = "metrics.csv"
MANIFEST_FILE = "manifest.json"


def _write_json(path: Path, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _run_jobs(fn: Callable, jobs: list, workers: int) -> Iterable:
    """Results of ``fn`` over ``jobs`` as they finish (pool of ``workers`` processes)."""
    if workers <= 1 or len(jobs) <= 1:
        for job in jobs:
            yield fn(job)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(fn, jobs)


# -- train ------------------------------------------------------------------


def cmd_train(cfg: ExperimentConfig, out: Path) -> dict:
    """Train one model (run seed = config seed); write model, per-epoch metrics, manifest."""
    out.mkdir(parents=True, exist_ok=True)
    eval_every = cfg.train.get("eval_every", 1)
    res = run_once(cfg, cfg.seed, eval_every=eval_every)
    extra = {}
    if res.data.scaler is not None:
        extra = {"scaler_min": res.data.scaler.mins, "scaler_max": res.data.scaler.maxs}
    nn.save_model(res.net, out / MODEL_FILE, extra)
    res.report.write_csv(out / METRICS_FILE)
    train, test = res.data.train, res.data.test
    manifest = {
        "command": "train",
        "config": cfg.resolved(),
        "lambda": res.lam,
        "eval_every": eval_every,
        "widths": res.net.widths,
        "split_hash": res.data.split_hash,
        "train_rows": len(train),
        "train_labeled_anomalies": train.n_anomalous,
        "test_rows": len(test),
        "test_anomalies": test.n_anomalous,
        "auc": res.auc,
        "per_class_auc": {str(k): v for k, v in sorted(res.per_class.items())},
    }
    _write_json(out / MANIFEST_FILE, manifest)
    logger.info("trained %s: test AUC %s", res.method, fmt(res.auc))
    return manifest


# -- evaluate ---------------------------------------------------------------


def _apply_scaler(ds: Dataset, extra: dict) -> Dataset:
    if "scaler_min" in extra:
        scaler = MinMax(extra["scaler_min"], extra["scaler_max"])
        if scaler.mins.size != ds.dim:
            raise ValueError(f"model was trained on {scaler.mins.size} features, data has {ds.dim}")
        return Dataset(scaler.transform(ds.features), ds.labels, ds.class_ids, ds.name, ds.row_ids)
    return ds


def cmd_evaluate(
    model_path: Path,
    out: Path,
    data_path: Path | None = None,
    cfg: ExperimentConfig | None = None,
    label_column: str = "label",
    class_column: str | None = None,
    dump_images: int = 0,
) -> EvalReport:
    """Score a dataset with a saved model; write ``scores.csv`` and the report.

    ``dump_images`` > 0 also writes input|reconstruction PGM pairs for the
    first rows of each label, when the feature count is a perfect square.
    """
    net, extra = nn.load_model(model_path)
    if data_path is not None:
        ds = _apply_scaler(load_csv(data_path, label_column, class_column), extra)
        normal_classes = None
        if ds.class_ids is not None:
            normal_classes = sorted(set(ds.class_ids[ds.labels == 0].tolist()))
        source = str(data_path)
    elif cfg is not None:
        run = prepare_run(cfg, cfg.seed)
        ds = run.test
        normal_classes = list(run.spec.normal_classes) if run.spec.protocol != "odds" else None
        source = f"test split of {cfg.dataset.get('kind')} (seed {cfg.seed})"
    else:
        raise ValueError("evaluate needs --data or --config")
    if ds.dim != net.input_dim:
        raise ValueError(f"model expects {net.input_dim} features, data has {ds.dim}")
    if not ds.in_unit_cube():
        raise ValueError("data falls outside [0,1] and the model carries no scaler")
    scores = score(net, ds.features)
    out.mkdir(parents=True, exist_ok=True)
    classes = ds.class_ids if ds.class_ids is not None else [""] * len(ds)
    rows = (
        (rid, repr(float(sc)), lab, cls)
        for rid, sc, lab, cls in zip(ds.row_ids.tolist(), scores, ds.labels.tolist(), list(classes))
    )
    write_csv(out / "scores.csv", ["row_id", "score", "label", "class"], rows)
    per_class = {}
    if normal_classes and ds.class_ids is not None and ds.n_anomalous:
        per_class = per_class_auc(scores, ds.labels, ds.class_ids, normal_classes)
    report = EvalReport(
        method=net.meta.get("method", "unknown"),
        auc=auc(scores, ds.labels),
        per_class=per_class,
        n_test=len(ds),
        n_anomalous=ds.n_anomalous,
        config={"model": str(model_path), "data": source, "widths": net.widths},
    )
    _atomic_write(out / "report.json", report.to_json())
    _atomic_write(out / "report.txt", report.to_text())
    if per_class:
        write_csv(out / "per_class.csv", ["class", "auc"], sorted(report.per_class.items()))
    if dump_images > 0:
        _dump_reconstructions(net, ds, out / "reconstructions", dump_images)
    logger.info("AUC %s over %d rows", fmt(report.auc), len(ds))
    return report


def _write_pgm(path: Path, pixels: np.ndarray) -> None:
    gray = np.clip(np.rint(pixels * 255), 0, 255).astype(np.uint8)
    header = f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode()
    path.write_bytes(header + gray.tobytes())


def _dump_reconstructions(net: nn.Network, ds: Dataset, directory: Path, per_label: int) -> None:
    side = math.isqrt(ds.dim)
    if side * side != ds.dim:
        logger.warning("skipping image dump: %d features is not a square image", ds.dim)
        return
    directory.mkdir(parents=True, exist_ok=True)
    for label in (0, 1):
        idx = np.flatnonzero(ds.labels == label)[:per_label]
        if idx.size == 0:
            continue
        recon = nn.forward(net, ds.features[idx])
        for i, row in enumerate(idx):
            pair = np.hstack([ds.features[row].reshape(side, side), recon[i].reshape(side, side)])
            _write_pgm(directory / f"row{ds.row_ids[row]}_label{label}.pgm", pair)


# -- grid -------------------------------------------------------------------


def _config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.resolved(), sort_keys=True).encode()).hexdigest()[:16]


def _grid_cell(job) -> dict:
    cfg, s, alpha, seed = job
    res = run_once(cfg, seed, s=s, alpha=alpha)
    return {"s": s, "alpha": alpha, "seed": seed, "auc": res.auc, "lambda": res.lam,
            "split_hash": res.data.split_hash}


def _cell_path(cells: Path, s: int, alpha: float, seed: int) -> Path:
    return cells / f"s{s}_alpha{alpha!r}_seed{seed}.json"


def cmd_grid(cfg: ExperimentConfig, out: Path, workers: int = 1) -> list[dict]:
    """Cross-product of ``grid.s`` x ``grid.alpha`` x run seeds, resumable per cell."""
    if cfg.grid is None:
        raise ConfigError("grid: block missing from config")
    s_values = [int(s) for s in cfg.grid["s"]]
    alphas = [float(a) for a in cfg.grid["alpha"]]
    if cfg.split.get("protocol") == "odds":
        raise ConfigError("grid.s: the odds protocol fixes the labeled count; use a class protocol")
    for s in s_values:
        try:
            prepare_run(cfg, cfg.seed, s=s)
        except ValueError as exc:
            raise ConfigError(f"grid.s: s={s} is infeasible ({exc})") from None
    out.mkdir(parents=True, exist_ok=True)
    cells = out / "cells"
    cells.mkdir(exist_ok=True)
    digest = _config_digest(cfg)
    order = [(s, a, seed) for s in s_values for a in alphas for seed in cfg.run_seeds()]
    pending = []
    for s, a, seed in order:
        p = _cell_path(cells, s, a, seed)
        if p.exists() and json.loads(p.read_text()).get("config_digest") == digest:
            continue
        pending.append((cfg, s, a, seed))
    logger.info("grid: %d cells, %d already complete", len(order), len(order) - len(pending))
    for result in _run_jobs(_grid_cell, pending, workers):
        result["config_digest"] = digest
        _write_json(_cell_path(cells, result["s"], result["alpha"], result["seed"]), result)
        logger.info("cell s=%s alpha=%s seed=%s AUC %s", result["s"], result["alpha"], result["seed"],
                    fmt(result["auc"]))

    results = [json.loads(_cell_path(cells, s, a, seed).read_text()) for s, a, seed in order]
    write_csv(out / "grid_long.csv", ["s", "alpha", "seed", "auc"],
              ((r["s"], r["alpha"], r["seed"], r["auc"]) for r in results))
    pivot_rows = []
    for s in s_values:
        row = [s]
        for a in alphas:
            mean, _ = aggregate_runs([r["auc"] for r in results if r["s"] == s and r["alpha"] == a])
            row.append(mean)
        pivot_rows.append(row)
    write_csv(out / "grid_pivot.csv", ["s"] + [f"alpha={fmt(a)}" for a in alphas], pivot_rows)
    _write_json(out / MANIFEST_FILE, {"command": "grid", "config": cfg.resolved(), "cells": len(order)})
    return results


# -- compare ----------------------------------------------------------------


def _settings(cfg: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    raw = cfg.compare.get("settings") or [{"name": "default"}]
    out = []
    for i, st in enumerate(raw):
        if not isinstance(st, dict) or "name" not in st:
            raise ConfigError(f"compare.settings[{i}]: needs a name")
        unknown = set(st) - {"name", "split", "pollution", "train"}
        if unknown:
            raise ConfigError(f"compare.settings[{i}]: unknown keys {sorted(unknown)}")
        derived = ExperimentConfig(
            dataset=cfg.dataset,
            split={**cfg.split, **(st.get("split") or {})},
            train={**cfg.train, **(st.get("train") or {})},
            pollution=st["pollution"] if "pollution" in st else cfg.pollution,
            architecture=cfg.architecture,
            runs=cfg.runs,
            seed=cfg.seed,
        )
        try:
            derived.validate()
        except ConfigError as exc:
            raise ConfigError(f"compare.settings[{i}].{exc}") from None
        out.append((str(st["name"]), derived))
    return out


def _compare_job(job) -> dict:
    name, cfg, seed, method = job
    res = run_once(cfg, seed, method=method)
    return {"setting": name, "seed": seed, "method": method, "auc": res.auc, "split_hash": res.data.split_hash}


def cmd_compare(cfg: ExperimentConfig, out: Path, workers: int = 1) -> dict:
    """Every listed method on identical splits; long table, mean/std table, win matrix."""
    if cfg.compare is None:
        raise ConfigError("compare: block missing from config")
    methods = list(cfg.compare["methods"])
    settings = _settings(cfg)
    jobs = [(name, scfg, seed, m) for name, scfg in settings for seed in scfg.run_seeds() for m in methods]
    results = list(_run_jobs(_compare_job, jobs, workers))

    by_key: dict[tuple, dict] = {(r["setting"], r["seed"], r["method"]): r for r in results}
    for name, scfg in settings:
        for seed in scfg.run_seeds():
            hashes = {by_key[(name, seed, m)]["split_hash"] for m in methods}
            if len(hashes) != 1:
                raise RuntimeError(f"setting {name} seed {seed}: methods saw different splits")

    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "compare_long.csv", ["setting", "seed", "method", "auc", "split_hash"],
              ((r["setting"], r["seed"], r["method"], r["auc"], r["split_hash"]) for r in results))
    table = []
    for name, scfg in settings:
        row = [name]
        for m in methods:
            mean, std = aggregate_runs([by_key[(name, seed, m)]["auc"] for seed in scfg.run_seeds()])
            row.append(f"{fmt(mean)}±{fmt(std)}")
        table.append(row)
    write_csv(out / "compare_table.csv", ["setting"] + methods, table)
    paired = {m: [by_key[(name, seed, m)]["auc"] for name, scfg in settings for seed in scfg.run_seeds()]
              for m in methods}
    matrix = win_matrix(paired)
    write_csv(out / "win_matrix.csv", ["method"] + methods,
              ([r] + [matrix[r][c] for c in methods] for r in methods))
    _write_json(out / MANIFEST_FILE, {"command": "compare", "config": cfg.resolved()})
    return {"results": results, "win_matrix": matrix}


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aesad", description="Semi-supervised anomaly detection with autoencoders.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", type=Path, required=config_required, help="YAML experiment config")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("train", help="train one model"))
    ev = sub.add_parser("evaluate", help="score data with a saved model")
    common(ev, config_required=False)
    ev.add_argument("--model", type=Path, required=True, help="model file written by train")
    ev.add_argument("--data", type=Path, help="CSV to score (otherwise the config's test split)")
    ev.add_argument("--label-column", default="label")
    ev.add_argument("--class-column", default=None)
    ev.add_argument("--dump-images", type=int, default=0, metavar="N",
                    help="write input|reconstruction PGMs for the first N rows of each label")
    common(sub.add_parser("grid", help="s x alpha x seed sensitivity grid"))
    common(sub.add_parser("compare", help="compare methods on identical splits"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config) if args.config is not None else None
        if cfg is not None and args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.command == "train":
            cmd_train(cfg, args.out)
        elif args.command == "evaluate":
            if args.data is None and cfg is None:
                raise ConfigError("--data: give a CSV to score or a --config")
            if args.data is not None and not args.data.is_file():
                raise ConfigError(f"--data: file not found: {args.data}")
            if not args.model.is_file():
                raise ConfigError(f"--model: file not found: {args.model}")
            cmd_evaluate(args.model, args.out, args.data, cfg, args.label_column, args.class_column,
                         args.dump_images)
        elif args.command == "grid":
            cmd_grid(cfg, args.out, args.workers)
        else:
            cmd_compare(cfg, args.out, args.workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
