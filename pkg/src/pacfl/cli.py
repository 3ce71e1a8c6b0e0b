"""Command line entry point.

Subcommands::

    pacfl run --policy pac --seed 0 --out runs/
    pacfl compare --policies pac,independent_ac --seeds 0..4 --out runs/
    pacfl hvi --runs runs/
    pacfl tabular-verify
    pacfl bound-check
    pacfl gradcheck
    pacfl check [NAME ...]

Every subcommand exits with status 0 when its checks pass and 1 otherwise.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import checks
from .config import ConfigError, load_config
from .harness import (
    POLICIES,
    parse_seeds,
    run,
    summarize_dir,
    summarize_records,
    summary_text,
)

log = logging.getLogger("pacfl")


def _config(args: argparse.Namespace):
    return load_config(Path(args.config).read_text()) if args.config else load_config()


def _seeds(args: argparse.Namespace) -> list[int]:
    if getattr(args, "seeds", None):
        return parse_seeds(args.seeds)
    return [args.seed]


def _progress(policy: str, seed: int):
    def report(ep: int, rewards: np.ndarray) -> None:
        if (ep + 1) % 10 == 0:
            log.info("%s seed %d episode %d total %.2f", policy, seed, ep + 1, float(rewards.sum()))

    return report


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.episodes is not None:
        cfg = cfg.replace(episodes=args.episodes)
    records = []
    for seed in _seeds(args):
        rec = run(cfg, args.policy, seed, args.out, progress=_progress(args.policy, seed))
        records.append(rec)
        print(f"{rec.run_id} eval_total={rec.total_reward:.4f} per_sp={np.round(rec.pareto_row, 4).tolist()}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.episodes is not None:
        cfg = cfg.replace(episodes=args.episodes)
    policies = args.policies.split(",")
    unknown = [p for p in policies if p not in POLICIES]
    if unknown:
        print(f"unknown policies: {', '.join(unknown)}", file=sys.stderr)
        return 2
    records = []
    for policy in policies:
        for seed in _seeds(args):
            rec = run(cfg, policy, seed, args.out, progress=_progress(policy, seed))
            print(f"{rec.run_id} eval_total={rec.total_reward:.4f}", flush=True)
            records.append(rec)
    text = summary_text(summarize_records(records))
    if args.out:
        Path(args.out, "summary.csv").write_text(text)
    print(text, end="")
    return 0


def cmd_hvi(args: argparse.Namespace) -> int:
    text = summary_text(summarize_dir(args.runs))
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def _report(results) -> int:
    ok = True
    for res in results:
        print(res.line())
        ok &= res.passed
    return 0 if ok else 1


def cmd_tabular(args: argparse.Namespace) -> int:
    return _report(
        [
            checks.contraction(seed=args.seed),
            checks.fixed_point(seed=args.seed),
            checks.equilibrium_selection(),
        ]
    )


def cmd_bound(args: argparse.Namespace) -> int:
    return _report([checks.kl_bound(args.instances, args.seed, args.temperature)])


def cmd_gradcheck(args: argparse.Namespace) -> int:
    return _report([checks.gradient_correctness(), checks.expectile_equivalence(seed=args.seed)])


def cmd_check(args: argparse.Namespace) -> int:
    names = args.names or list(checks.QUICK_CHECKS)
    unknown = [n for n in names if n not in checks.QUICK_CHECKS]
    if unknown:
        print(f"unknown checks: {', '.join(unknown)}; choose from {', '.join(checks.QUICK_CHECKS)}", file=sys.stderr)
        return 2
    return _report([checks.QUICK_CHECKS[n]() for n in names])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pacfl", description="Multi-SP quantized federated learning simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--seeds", help="inclusive range such as 0..4 (overrides --seed)")
        p.add_argument("--out", help="directory for CSV, JSONL and checkpoints")
        p.add_argument("--episodes", type=int, help="override the configured episode count")

    p = sub.add_parser("run", help="train or roll out one policy")
    p.add_argument("--policy", choices=POLICIES, default="pac")
    add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several policies and summarize with HVI")
    p.add_argument("--policies", default=",".join(POLICIES))
    add_run_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("hvi", help="summary table from run CSVs in a directory")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", help="write the summary table here")
    p.set_defaults(func=cmd_hvi)

    p = sub.add_parser("tabular-verify", help="operator contraction, fixed point, equilibrium selection")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_tabular)

    p = sub.add_parser("bound-check", help="randomized KL error-bound instances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--temperature", type=float, default=0.01, help="softening temperature as a fraction of the Q spread")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("gradcheck", help="finite-difference gradients and expectile/MSE equivalence")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("check", help="run named quick verification scenarios")
    p.add_argument("names", nargs="*", help=f"any of: {', '.join(checks.QUICK_CHECKS)}")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return int(args.func(args))
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
