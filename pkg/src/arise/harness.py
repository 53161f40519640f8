"""Seed sweeps over variants and environments, metrics CSVs and summaries."""
from __future__ import annotations

import csv
import json
import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, apply_variant
from .orchestrator import METRIC_COLUMNS, convergence_index, format_row, run_training

log = logging.getLogger(__name__)

WORKERS_ENV = "ARISE_WORKERS"
BASELINE = "ppo"


class EmptyReportError(ValueError):
    pass


def env_slug(env_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9.-]+", "_", env_id)


def run_name(variant: str, env_id: str, seed: int) -> str:
    return f"{variant}__{env_slug(env_id)}__seed{seed}"


@dataclass
class RunSpec:
    variant: str
    env_id: str
    seed: int
    cfg: ExperimentConfig


def run_single(spec: RunSpec) -> dict:
    """Train one (variant, env, seed) and stream its metrics CSV. Never raises."""
    out = Path(spec.cfg.out)
    name = run_name(spec.variant, spec.env_id, spec.seed)
    path = out / f"{name}.csv"
    arise_cfg = replace(apply_variant(spec.cfg.arise, spec.variant), seed=spec.seed)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(METRIC_COLUMNS)

            def on_row(row):
                writer.writerow(format_row(row))
                fh.flush()

            report = run_training(
                arise_cfg, replace(spec.cfg.ppo), spec.env_id, run_id=name, variant=spec.variant,
                checkpoint_dir=(out / "checkpoints" / name) if spec.cfg.checkpoint else None,
                on_row=on_row, log_wall_time=spec.cfg.log_wall_time)
        return {"run": name, "ok": True, "final_eval": report.final_eval}
    except Exception as exc:  # recorded, excluded from aggregates
        log.warning("run %s failed: %s", name, exc)
        failed = path.with_suffix(".failed")
        failed.write_text(f"{type(exc).__name__}: {exc}\n")
        if path.exists():
            path.unlink()
        return {"run": name, "ok": False, "error": str(exc)}


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_grid(cfg: ExperimentConfig) -> dict:
    """All variant x env x seed runs, then the summary written next to the CSVs."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    specs = [RunSpec(v, e, s, cfg) for v in cfg.variants for e in cfg.envs for s in cfg.seeds]
    n = _workers()
    if n == 1:
        results = [run_single(s) for s in specs]
    else:
        with ProcessPoolExecutor(n) as pool:
            results = list(pool.map(run_single, specs))
    failed = [r for r in results if not r["ok"]]
    if failed:
        log.warning("%d run(s) failed and are excluded: %s", len(failed), [r["run"] for r in failed])
    report = summarize(out)
    report["failed_runs"] = [r["run"] for r in failed]
    write_summary(report, out)
    return report


# -- summaries ---------------------------------------------------------------

def read_run(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected CSV header")
        return [dict(zip(header, row)) for row in reader]


def run_evals(rows: list[dict]) -> list[tuple[int, float]]:
    """(episodes_done, eval_return) for every row that carries an evaluation."""
    return [(int(r["episodes_done"]), float(r["eval_return"])) for r in rows if r["eval_return"] != ""]


def summarize(directory) -> dict:
    """Aggregate every metrics CSV in ``directory`` by (variant, env)."""
    directory = Path(directory)
    groups: dict[tuple[str, str], list[dict]] = {}
    for path in sorted(directory.glob("*.csv")):
        rows = read_run(path)
        if not rows:
            continue
        evals = run_evals(rows)
        if not evals:
            continue
        returns = [e[1] for e in evals]
        conv = convergence_index(returns)
        key = (rows[0]["variant"], rows[0]["env"])
        groups.setdefault(key, []).append({
            "seed": int(rows[0]["seed"]),
            "final_eval": returns[-1],
            "convergence_episodes": evals[conv][0],
        })
    if not groups:
        raise EmptyReportError(f"no completed runs in {directory}")
    cells = []
    for (variant, env), runs in sorted(groups.items()):
        finals = np.array([r["final_eval"] for r in runs])
        convs = np.array([r["convergence_episodes"] for r in runs], dtype=np.float64)
        cells.append({
            "variant": variant, "env": env, "n_runs": len(runs),
            "seeds": sorted(r["seed"] for r in runs),
            "final_eval_mean": float(finals.mean()), "final_eval_std": float(finals.std()),
            "convergence_episodes_mean": float(convs.mean()),
        })
    deltas = []
    by_env: dict[str, dict[str, float]] = {}
    for c in cells:
        by_env.setdefault(c["env"], {})[c["variant"]] = c["final_eval_mean"]
    for env, means in sorted(by_env.items()):
        for a in sorted(means):
            for b in sorted(means):
                if a != b:
                    deltas.append({"env": env, "a": a, "b": b, "delta": means[a] - means[b]})
    for c in cells:
        base = by_env[c["env"]].get(BASELINE)
        c["vs_baseline"] = None if base is None or c["variant"] == BASELINE else (
            "win" if c["final_eval_mean"] > base else "loss" if c["final_eval_mean"] < base else "tie")
    return {"cells": cells, "deltas": deltas}


def delta(report: dict, env: str, a: str, b: str) -> float:
    for d in report["deltas"]:
        if (d["env"], d["a"], d["b"]) == (env, a, b):
            return d["delta"]
    raise KeyError((env, a, b))


def format_table(report: dict) -> str:
    """Env x variant table of mean +- std final evaluation return."""
    variants = sorted({c["variant"] for c in report["cells"]})
    envs = sorted({c["env"] for c in report["cells"]})
    cell = {(c["env"], c["variant"]): c for c in report["cells"]}
    width = max(12, *(len(v) + 2 for v in variants))
    lines = ["Average evaluation return (mean +- std over seeds)",
             "environment".ljust(24) + "".join(v.rjust(width + 10) for v in variants)]
    for env in envs:
        parts = []
        for v in variants:
            c = cell.get((env, v))
            parts.append(("-" if c is None else f"{c['final_eval_mean']:.2f} +- {c['final_eval_std']:.2f}").rjust(width + 10))
        lines.append(env.ljust(24) + "".join(parts))
    return "\n".join(lines) + "\n"


def write_summary(report: dict, directory) -> None:
    directory = Path(directory)
    (directory / "summary.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    (directory / "summary.txt").write_text(format_table(report))
