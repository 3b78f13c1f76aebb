"""Command-line entry point.

::

    frontier-grpo train --seed 3 --steps 400 --out-dir runs/s3
    frontier-grpo ablate --seed 0 --num-seeds 10 --out-dir runs/ablation
    frontier-grpo inspect-buffer runs/s3/buffer.jsonl --top 10

``FRONTIER_GRPO_SEED`` and ``FRONTIER_GRPO_OUT_DIR`` override the config
file; explicit flags override both.
"""
from __future__ import annotations

import argparse
import collections
import json
import logging
import os
import sys
from typing import Sequence

import numpy as np

from . import __version__
from .ablation import ARMS, ablation_config, run_ablation
from .buffer import load_jsonl
from .config import ConfigError, RunConfig, env_overrides, load_config
from .harness import run_training
from .kernels import BACKEND

log = logging.getLogger("frontier_grpo")

DEFAULT_OUT_DIR = "runs"
# --mode also accepts the plain sampler names
_MODE_ALIASES = {"adaptive": "full"}


def _resolve_mode(mode: str) -> str:
    arm = _MODE_ALIASES.get(mode, mode)
    if arm not in ARMS:
        raise ConfigError(f"unknown mode {mode!r}; choose from {sorted(ARMS) + sorted(_MODE_ALIASES)}")
    return arm


def _base_config(args) -> tuple[RunConfig, str]:
    cfg = load_config(args.config) if args.config else RunConfig()
    env = env_overrides()
    out_dir = env.pop("out_dir", None)
    cfg = cfg.with_overrides(**env)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    if args.out_dir is not None:
        out_dir = args.out_dir
    return cfg, out_dir


def _cmd_train(args) -> int:
    cfg, out_dir = _base_config(args)
    out_dir = out_dir or os.path.join(DEFAULT_OUT_DIR, f"train-seed{cfg.seed}")
    kw = {}
    if args.mode is not None:
        kw.update(ARMS[_resolve_mode(args.mode)])
    cfg = cfg.with_overrides(
        total_steps=args.steps,
        execution_budget_ticks=args.budget_ticks,
        num_workers=args.workers,
        **kw,
    )
    if args.async_learner:
        cfg = cfg.with_overrides(async_learner=True)
    cfg = cfg.validate()
    log.info("kernel backend: %s", BACKEND)
    res = run_training(cfg)
    paths = res.write(out_dir)
    last = res.metrics[-1] if res.metrics else None
    print(f"steps={len(res.metrics)} buffer={len(res.buffer)} executions={res.executions} ticks={res.ticks_total}")
    if last is not None:
        print(f"final_reward={res.final_reward():.6f} stage={last.stage} policy_version={last.policy_version}")
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def _cmd_ablate(args) -> int:
    cfg, out_dir = _base_config(args)
    out_dir = out_dir or os.path.join(DEFAULT_OUT_DIR, "ablation")
    if args.workers is not None:
        cfg = cfg.with_overrides(num_workers=args.workers)
    cfg = ablation_config(cfg, args.budget_ticks, args.steps)
    arms = tuple(ARMS)
    if args.mode:
        arms = tuple(dict.fromkeys(_resolve_mode(m.strip()) for m in args.mode.split(",") if m.strip()))
    seeds = list(range(cfg.seed, cfg.seed + args.num_seeds))

    def progress(arm, seed, res):
        log.info("arm=%s seed=%d steps=%d final=%.4f", arm, seed, len(res.metrics), res.final_reward())
        if args.keep_runs:
            res.write(os.path.join(out_dir, arm, f"seed{seed}"))

    report = run_ablation(cfg, seeds, arms, progress)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.as_dict(), fh, indent=2)
        fh.write("\n")
    text = report.format()
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")
    print(text)
    print(f"report: {os.path.join(out_dir, 'report.json')}")
    return 0


def _cmd_inspect(args) -> int:
    with open(args.path, encoding="utf-8") as fh:
        recs = load_jsonl(fh)
    if args.json:
        for r in recs[: args.top] if args.top else recs:
            print(json.dumps(r, separators=(",", ":")))
        return 0
    kinds = collections.Counter(r["kind"] for r in recs)
    depth = collections.Counter(r["depth"] for r in recs)
    pot = np.array([r["potential"] for r in recs], dtype=np.float64)
    visited = sum(1 for r in recs if r["visit_times"])
    print(f"states: {len(recs)}")
    print("kinds: " + " ".join(f"{k}={kinds.get(k, 0)}" for k in ("Draft", "Debug", "Improve")))
    print("depth: " + " ".join(f"{d}:{depth[d]}" for d in sorted(depth)))
    print(f"visited: {visited}")
    if pot.size:
        print(f"potential: min={pot.min():.4f} mean={pot.mean():.4f} max={pot.max():.4f}")
    if args.top:
        order = sorted(range(len(recs)), key=lambda i: (-recs[i]["potential"], recs[i]["depth"], i))
        print(f"top {args.top} by potential:")
        for i in order[: args.top]:
            r = recs[i]
            print(f"  {r['state_id']:<16} {r['kind']:<8} depth={r['depth']} potential={r['potential']:.4f} task={r['instance_id']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="frontier-grpo", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbose = argparse.ArgumentParser(add_help=False)
    verbose.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--seed", type=int, help="run seed (first seed for ablate)")
        sp.add_argument("--out-dir", help="output directory")
        sp.add_argument("--steps", type=int, help="number of outer steps (step cap for ablate)")
        sp.add_argument("--budget-ticks", type=int, help="execution tick budget")
        sp.add_argument("--workers", type=int, help="rollout worker threads")

    tr = sub.add_parser("train", parents=[verbose], help="run one training run")
    common(tr)
    tr.add_argument("--mode", help="full (alias adaptive), uniform or no_buffer")
    tr.add_argument("--async-learner", action="store_true", help="overlap learner and rollouts (staleness 1)")
    tr.set_defaults(func=_cmd_train)

    ab = sub.add_parser("ablate", parents=[verbose], help="paired multi-seed comparison of the three arms")
    common(ab)
    ab.add_argument("--mode", help="comma-separated arms to run (default: all)")
    ab.add_argument("--num-seeds", type=int, default=10)
    ab.add_argument("--keep-runs", action="store_true", help="also write every run's files")
    ab.set_defaults(func=_cmd_ablate)

    ib = sub.add_parser("inspect-buffer", parents=[verbose], help="summarize a buffer.jsonl snapshot")
    ib.add_argument("path")
    ib.add_argument("--top", type=int, default=0, help="list the N highest-potential states")
    ib.add_argument("--json", action="store_true", help="print raw records instead of a summary")
    ib.set_defaults(func=_cmd_inspect)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"frontier-grpo: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"frontier-grpo: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
