"""Compare the compiled and numpy sampler kernels on end-of-run buffer sizes.

    python benchmarks/bench_kernels.py [--sizes 1000 25734] [--repeat 20]

A 400-step run ends with 134 + 400 * 64 = 25734 states, and the sampling
distribution is rebuilt over the whole buffer every step.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from frontier_grpo import kernels, sampler
from frontier_grpo.buffer import BufferSnapshot


def synthetic_snapshot(n: int, t: int, seed: int = 0, window: int = 20) -> BufferSnapshot:
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 6, n).astype(np.int64)
    visits = np.zeros((n, window), dtype=np.int64)
    for i in np.flatnonzero(counts):
        visits[i, : counts[i]] = np.sort(rng.choice(t, counts[i], replace=False))
    return BufferSnapshot(
        size=n,
        iteration=t,
        ids=[f"s{i}" for i in range(n)],
        kind=rng.integers(0, 3, n).astype(np.int8),
        depth=rng.integers(0, 8, n).astype(np.int64),
        potential=rng.random(n),
        visits=visits,
        visit_counts=counts,
        last_std=rng.random(n),
    )


def _time(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def bench(n: int, repeat: int) -> list[tuple[str, dict[str, float]]]:
    t = 400
    snap = synthetic_snapshot(n, t)
    stage = sampler.stage_for(n)
    order = sampler._kind_order(snap)
    probs = np.random.default_rng(1).random(n)
    probs /= probs.sum()
    u = np.random.default_rng(2).random(8)
    rows: dict[str, dict[str, float]] = {}
    for name, mod in kernels.backends().items():
        rows.setdefault("cooling_factors", {})[name] = _time(
            lambda: mod.cooling_factors(snap.visits, snap.visit_counts, t, stage.hard_block, 0.3, 0.9), repeat
        )
        rows.setdefault("rank_weights", {})[name] = _time(
            lambda: mod.rank_weights(order, snap.kind, 3, stage.top_percentile, stage.focusing_rho, stage.min_weight_ratio),
            repeat,
        )
        rows.setdefault("sample_8", {})[name] = _time(lambda: mod.sample_without_replacement(probs, u), repeat)
        saved = (kernels.cooling_factors, kernels.rank_weights, kernels.sample_without_replacement)
        kernels.cooling_factors, kernels.rank_weights = mod.cooling_factors, mod.rank_weights
        kernels.sample_without_replacement = mod.sample_without_replacement
        try:
            rows.setdefault("build_distribution", {})[name] = _time(lambda: sampler.build_distribution(snap, t), repeat)
        finally:
            kernels.cooling_factors, kernels.rank_weights, kernels.sample_without_replacement = saved
    return list(rows.items())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 25734])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    names = list(kernels.backends())
    print(f"default backend: {kernels.BACKEND}")
    header = f"{'n':>7} {'kernel':<20}" + "".join(f"{nm + ' ms':>12}" for nm in names)
    if "cython" in names:
        header += f"{'speedup':>9}"
    print(header)
    for n in args.sizes:
        for kernel, times in bench(n, args.repeat):
            line = f"{n:>7} {kernel:<20}" + "".join(f"{times[nm]:12.3f}" for nm in names)
            if "cython" in times:
                line += f"{times['python'] / times['cython']:8.1f}x"
            print(line)


if __name__ == "__main__":
    main()
