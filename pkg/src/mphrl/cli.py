"""Command line: train, test, baseline, report, verify."""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from .errors import ChainIncompleteError, ContractError, CorruptionError, FormatVersionError
from .harness.config import RunConfig, load_config
from .harness.experiment import run_baseline, run_offline, run_test
from .harness.report import report
from .harness.verify import run_verify


def _config(path, **overrides) -> RunConfig:
    cfg = load_config(path) if path else RunConfig()
    kw = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **kw) if kw else cfg


def _progress(t0):
    return lambda msg: print(f"[{time.perf_counter() - t0:8.1f}s] {msg}", flush=True)


def cmd_train(a) -> int:
    cfg = _config(a.config, scale=a.scale)
    out = Path(a.out or cfg.out_dir)
    try:
        ctl, recs = run_offline(cfg, a.seed, out, _progress(time.perf_counter()))
    except ChainIncompleteError as e:
        print(f"chaining failed: {e}; partial artifacts in {out}", file=sys.stderr)
        return 2
    print(f"library: {len(ctl.lib)} primitives, subtasks {ctl.lib.subtasks}; {len(recs)} episodes -> {out}")
    return 0


def cmd_test(a) -> int:
    cfg = _config(a.config)
    recs = run_test(cfg, a.library, a.seed, a.out, episodes=a.episodes)
    goals = sum(r.goal for r in recs)
    print(f"{len(recs)} test episodes, goal reached in {goals} -> {a.out}")
    return 0


def cmd_baseline(a) -> int:
    cfg = _config(a.config, scale=a.scale)
    recs = run_baseline(cfg, a.algo, a.seed, a.out, _progress(time.perf_counter()))
    print(f"{a.algo}: {len(recs)} episodes -> {a.out}")
    return 0


def cmd_report(a) -> int:
    for p in report(a.runs, a.out, a.ema, a.window, a.svg):
        print(p)
    return 0


def cmd_verify(a) -> int:
    return 0 if run_verify() else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mphrl", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="offline curriculum for the primitive-library method")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("test", help="mixed test phase with a saved library")
    p.add_argument("--library", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_test)

    p = sub.add_parser("baseline", help="flat DDPG or tabular Q through the same schedule")
    p.add_argument("--algo", choices=("flat_ddpg", "tabular_q"), required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("report", help="learning curves and success table from run directories")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", default="report")
    p.add_argument("--ema", type=float, default=0.95)
    p.add_argument("--window", type=int, default=200)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("verify", help="toy-environment self-check")
    p.set_defaults(fn=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ContractError, CorruptionError, FormatVersionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
