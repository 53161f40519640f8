"""Command line: ``arise train | summarize | eval``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .envs import ConfigError


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="arise")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run a variant x env x seed grid")
    t.add_argument("--config", type=Path, help="key = value config file")
    t.add_argument("--env", help="environment id(s), comma separated")
    t.add_argument("--variant", help="variant(s), comma separated")
    t.add_argument("--seeds", help="comma separated seeds")
    t.add_argument("--out", help="output directory")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. arise.total_iterations=20")

    s = sub.add_parser("summarize", help="aggregate metrics CSVs")
    s.add_argument("--in", dest="directory", type=Path, required=True)

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint's best agent")
    e.add_argument("--checkpoint", type=Path, required=True, help="checkpoint directory or its manifest.json")
    e.add_argument("--episodes", type=int, default=10)
    return p


def _train(args) -> int:
    from .config import dump_config, parse_config
    from .harness import format_table, run_grid

    overrides = {"env": args.env, "variant": args.variant, "seeds": args.seeds, "out": args.out}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    cfg = parse_config(args.config, overrides)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    (Path(cfg.out) / "config.txt").write_text(dump_config(cfg))
    report = run_grid(cfg)
    sys.stdout.write(format_table(report))
    return 2 if report["failed_runs"] else 0


def _summarize(args) -> int:
    from .harness import format_table, summarize, write_summary

    report = summarize(args.directory)
    write_summary(report, args.directory)
    sys.stdout.write(format_table(report))
    return 0


def _eval(args) -> int:
    from .orchestrator import Arise

    trainer = Arise.load_checkpoint(args.checkpoint)
    best = trainer.best_agent()
    ret = trainer.evaluate(best, args.episodes)
    print(json.dumps({"agent": best, "episodes": args.episodes, "mean_return": ret}))
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    handler = {"train": _train, "summarize": _summarize, "eval": _eval}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
