"""Paired multi-seed comparison of the full method against its two ablations.

Arms:

``full``
    adaptive sampling over the evolving buffer.
``no_buffer``
    adaptive sampling, but spawned children are never appended, so the
    sampler only ever sees the seed Draft states.
``uniform``
    evolving buffer, sampling uniform over states outside their hard block.

All arms share the seed, task suite and execution-tick budget.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .config import RunConfig
from .harness import RunResult, run_training

ARMS: dict[str, dict] = {
    "full": {"sampler_mode": "adaptive", "buffer_mode": "evolving"},
    "no_buffer": {"sampler_mode": "adaptive", "buffer_mode": "static"},
    "uniform": {"sampler_mode": "uniform", "buffer_mode": "evolving"},
}
COMPARISONS = (("full", "uniform"), ("full", "no_buffer"))

# about 400 steps x 64 executions x ~8 ticks; the budget, not the step cap, ends every arm
DEFAULT_BUDGET_TICKS = 200_000
DEFAULT_STEP_CAP = 1000


def ablation_config(config: RunConfig, budget_ticks: int | None = None, step_cap: int | None = None) -> RunConfig:
    """Config for an equal-budget ablation: default budget, and a step cap loose enough not to bind."""
    budget = budget_ticks if budget_ticks is not None else config.execution_budget_ticks
    return replace(
        config,
        execution_budget_ticks=DEFAULT_BUDGET_TICKS if budget is None else budget,
        total_steps=DEFAULT_STEP_CAP if step_cap is None else step_cap,
    ).validate()


@dataclass
class PairedTest:
    better: str
    worse: str
    mean_diff: float
    t_stat: float
    p_value: float
    wins: int
    n: int

    @property
    def significant(self) -> bool:
        return self.p_value < 0.05 and self.mean_diff > 0


@dataclass
class AblationReport:
    seeds: list[int]
    budget_ticks: int | None
    finals: dict[str, list[float]]
    steps: dict[str, list[int]]
    tests: list[PairedTest] = field(default_factory=list)
    curves: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def summary(self) -> dict[str, tuple[float, float]]:
        return {arm: (float(np.mean(v)), float(np.std(v, ddof=1))) for arm, v in self.finals.items()}

    def as_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "budget_ticks": self.budget_ticks,
            "arms": {
                arm: {"mean": m, "sd": s, "finals": self.finals[arm], "steps": self.steps[arm]}
                for arm, (m, s) in self.summary().items()
            },
            "tests": [
                {
                    "better": t.better,
                    "worse": t.worse,
                    "mean_diff": t.mean_diff,
                    "t": t.t_stat,
                    "p_one_sided": t.p_value,
                    "wins": t.wins,
                    "n": t.n,
                    "significant": t.significant,
                }
                for t in self.tests
            ],
        }

    def format(self) -> str:
        lines = [f"{'arm':<10} {'mean':>8} {'sd':>8} {'steps':>7}"]
        for arm, (m, s) in self.summary().items():
            lines.append(f"{arm:<10} {m:8.4f} {s:8.4f} {np.mean(self.steps[arm]):7.1f}")
        for t in self.tests:
            verdict = "yes" if t.significant else "no"
            lines.append(
                f"{t.better} > {t.worse}: diff={t.mean_diff:+.4f} t={t.t_stat:.2f} "
                f"p={t.p_value:.2e} wins={t.wins}/{t.n} significant={verdict}"
            )
        return "\n".join(lines)


def paired_one_sided(a: Sequence[float], b: Sequence[float], better: str, worse: str) -> PairedTest:
    """Paired t-test of H1: mean(a - b) > 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = a - b
    if np.all(diff == diff[0]):
        # zero variance: the t statistic is undefined, decide by sign
        t_stat = math.copysign(math.inf, diff[0]) if diff[0] != 0 else 0.0
        p = 0.0 if diff[0] > 0 else 1.0
    else:
        res = stats.ttest_rel(a, b, alternative="greater")
        t_stat, p = float(res.statistic), float(res.pvalue)
    return PairedTest(better, worse, float(diff.mean()), t_stat, p, int((diff > 0).sum()), int(diff.size))


def run_ablation(
    config: RunConfig,
    seeds: Sequence[int],
    arms: Sequence[str] = tuple(ARMS),
    progress: Callable[[str, int, RunResult], None] | None = None,
) -> AblationReport:
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ValueError("an ablation needs at least 2 seeds")
    budget = config.execution_budget_ticks
    finals: dict[str, list[float]] = {a: [] for a in arms}
    steps: dict[str, list[int]] = {a: [] for a in arms}
    curves: dict[str, list[np.ndarray]] = {a: [] for a in arms}
    for seed in seeds:
        for arm in arms:
            cfg = replace(config, seed=seed, suite_seed=None, **ARMS[arm])
            res = run_training(cfg)
            finals[arm].append(res.final_reward())
            steps[arm].append(len(res.metrics))
            curves[arm].append(res.eval_curve())
            if progress is not None:
                progress(arm, seed, res)
    tests = [paired_one_sided(finals[a], finals[b], a, b) for a, b in COMPARISONS if a in arms and b in arms]
    return AblationReport(seeds, budget, finals, steps, tests, curves)
