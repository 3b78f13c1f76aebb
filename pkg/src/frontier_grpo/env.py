"""Synthetic task environment standing in for real ML-engineering pipelines.

Each task has a latent difficulty, a base fragility (chance that any
submission breaks), a performance ceiling, and a frozen 100-entry human
leaderboard. An action is an index into ``EnvParams.quality_levels``;
higher quality lowers the failure chance and raises the expected score.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import IO, Sequence

import numpy as np
from scipy.special import ndtr

from .buffer import ContextState, ErrorClass, ExecFeedback, Kind, TaskInstance
from .rewards import LeaderboardRef, RewardParams, humanrank, prior_score, shaped_reward

SUITE_FORMAT = "frontier-grpo.suite"
SUITE_VERSION = 1
LEADERBOARD_SIZE = 100
FEATURE_DIM = 4
MAX_FAIL = 0.95
DIFFICULTY_PENALTY = 0.5

SUCCESS_TICKS = (4.0, 16.0)
FAILURE_TICKS = (2.0, 8.0)


@dataclass(frozen=True)
class SyntheticTask:
    instance: TaskInstance
    ceiling: float
    difficulty: float
    fragility: float
    leaderboard: LeaderboardRef

    @property
    def id(self) -> str:
        return self.instance.id


@dataclass(frozen=True)
class EnvParams:
    quality_levels: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    noise_sigma: float = 0.05
    debug_rescue_bonus: float = 0.3
    improve_gain: float = 0.3
    rng_seed: int = 0

    def __post_init__(self):
        q = self.quality_levels
        if not q or any(not 0.0 <= x <= 1.0 for x in q):
            raise ValueError("quality levels must lie in [0, 1]")
        if any(b < a for a, b in zip(q, q[1:])):
            raise ValueError("quality levels must be sorted ascending")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 0 <= self.debug_rescue_bonus <= 1 or not 0 <= self.improve_gain <= 1:
            raise ValueError("debug_rescue_bonus and improve_gain must lie in [0, 1]")

    @property
    def n_actions(self) -> int:
        return len(self.quality_levels)


@dataclass(frozen=True)
class ExecOutcome:
    feedback: ExecFeedback
    raw_score: float
    latency_ticks: int
    # continuous performance before ranking; None when the run failed
    performance: float | None = None

    def __post_init__(self):
        if (self.raw_score == -1) == self.feedback.succeeded:
            raise ValueError("raw_score is -1 exactly when the execution failed")
        if (self.performance is None) == self.feedback.succeeded:
            raise ValueError("performance is recorded exactly when the execution succeeded")
        if self.latency_ticks < 1:
            raise ValueError("latency must be a positive tick count")


def make_task_suite(n: int, seed: int) -> list[SyntheticTask]:
    if n < 1:
        raise ValueError("a suite needs at least one task")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0x5017E,)))
    # stratified difficulties: one draw per 1/n slice, in shuffled order
    difficulty = (rng.permutation(n) + rng.random(n)) / n
    fragility = rng.uniform(0.0, 0.4, n)
    ceiling = rng.uniform(0.7, 1.0, n)
    feats = rng.normal(size=(n, FEATURE_DIM))
    boards = rng.beta(4.0, 2.5, size=(n, LEADERBOARD_SIZE)) * 0.95
    tasks = []
    for i in range(n):
        tid = f"task-{i:03d}"
        inst = TaskInstance(
            id=tid,
            description_features=tuple(float(v) for v in feats[i]),
            difficulty=float(difficulty[i]),
            metric_id="humanrank",
            leaderboard_id=f"lb-{i:03d}",
        )
        tasks.append(
            SyntheticTask(
                instance=inst,
                ceiling=float(ceiling[i]),
                difficulty=float(difficulty[i]),
                fragility=float(fragility[i]),
                leaderboard=LeaderboardRef.from_scores(boards[i]),
            )
        )
    return tasks


def failure_probability(task: SyntheticTask, kind: Kind, quality: float, env: EnvParams) -> float:
    rescue = env.debug_rescue_bonus * quality if kind == Kind.DEBUG else 0.0
    p = task.fragility + task.difficulty * (1.0 - quality) - rescue
    return min(max(p, 0.0), MAX_FAIL)


def mean_performance(task: SyntheticTask, x: ContextState, quality: float, env: EnvParams) -> float:
    progress = prior_score(x) if x.kind == Kind.IMPROVE else 0.0
    return task.ceiling * (quality * (1.0 - task.difficulty * DIFFICULTY_PENALTY) + env.improve_gain * progress)


def _ticks(rng: np.random.Generator, bounds: tuple[float, float]) -> int:
    lo, hi = bounds
    return max(1, int(math.ceil(math.exp(rng.uniform(math.log(lo), math.log(hi))))))


def execute(task: SyntheticTask, x: ContextState, action: int, env: EnvParams, rng: np.random.Generator) -> ExecOutcome:
    if not 0 <= action < env.n_actions:
        raise ValueError(f"action {action} outside [0, {env.n_actions})")
    q = env.quality_levels[action]
    p_fail = failure_probability(task, x.kind, q, env)
    if rng.random() < p_fail:
        err = ErrorClass.RUNTIME_ERROR if rng.random() < 0.6 else ErrorClass.INVALID_SUBMISSION
        detail = int(rng.integers(1, 16))
        return ExecOutcome(ExecFeedback(False, err, detail), -1.0, _ticks(rng, FAILURE_TICKS))
    perf = mean_performance(task, x, q, env) + env.noise_sigma * rng.standard_normal()
    perf = min(max(perf, 0.0), task.ceiling)
    return ExecOutcome(ExecFeedback.success(), humanrank(perf, task.leaderboard), _ticks(rng, SUCCESS_TICKS), perf)


def tick_cost(outcome: ExecOutcome) -> int:
    return outcome.latency_ticks


def expected_success_reward(
    task: SyntheticTask, x: ContextState, action: int, env: EnvParams, reward: RewardParams = RewardParams()
) -> float:
    """E[shaped reward | execution succeeded], exact under the clamped Gaussian noise."""
    q = env.quality_levels[action]
    m = mean_performance(task, x, q, env)
    c = task.ceiling
    s_p = prior_score(x)
    board = task.leaderboard.as_array()

    def r_at(perf: float) -> float:
        return shaped_reward(humanrank(perf, task.leaderboard), s_p, reward)

    if env.noise_sigma == 0:
        return r_at(min(max(m, 0.0), c))
    cuts = np.unique(board[(board > 0.0) & (board <= c)])
    lefts = np.concatenate(([0.0], cuts))
    cdf = ndtr((cuts - m) / env.noise_sigma)
    # perf lands in [lefts[i], lefts[i+1]); the clamp puts atoms at 0 and the ceiling
    probs = np.diff(np.concatenate(([0.0], cdf, [1.0])))
    return float(sum(p * r_at(v) for p, v in zip(probs, lefts) if p > 0))


def expected_reward(
    task: SyntheticTask, x: ContextState, action: int, env: EnvParams, reward: RewardParams = RewardParams()
) -> float:
    """Exact expected shaped reward of one execution (failures score 0)."""
    p_fail = failure_probability(task, x.kind, env.quality_levels[action], env)
    return (1.0 - p_fail) * expected_success_reward(task, x, action, env, reward)


# --------------------------------------------------------------------------
# suite files


def dump_suite(tasks: Sequence[SyntheticTask], seed: int, fh: IO[str]) -> None:
    header = {"format": SUITE_FORMAT, "version": SUITE_VERSION, "seed": int(seed), "n": len(tasks)}
    fh.write(json.dumps(header, separators=(",", ":")) + "\n")
    for t in tasks:
        rec = {
            "instance": asdict(t.instance),
            "ceiling": t.ceiling,
            "difficulty": t.difficulty,
            "fragility": t.fragility,
            "leaderboard": list(t.leaderboard.participant_scores),
        }
        fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_suite(fh: IO[str]) -> tuple[list[SyntheticTask], dict]:
    lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValueError("empty suite file")
    header = json.loads(lines[0])
    if header.get("format") != SUITE_FORMAT:
        raise ValueError(f"not a task-suite file (format={header.get('format')!r})")
    if header.get("version") != SUITE_VERSION:
        raise ValueError(f"unsupported suite version {header.get('version')}")
    tasks = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        inst = rec["instance"]
        inst["description_features"] = tuple(inst["description_features"])
        tasks.append(
            SyntheticTask(
                instance=TaskInstance(**inst),
                ceiling=rec["ceiling"],
                difficulty=rec["difficulty"],
                fragility=rec["fragility"],
                leaderboard=LeaderboardRef(tuple(rec["leaderboard"])),
            )
        )
    if len(tasks) != header.get("n"):
        raise ValueError(f"suite header says {header.get('n')} tasks, file has {len(tasks)}")
    return tasks, header
