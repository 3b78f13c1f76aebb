"""Stage-aware rank-based sampling distribution over the evolving buffer.

Construction pipeline for one outer iteration ``t``:

1. within each task kind, order states by potential (descending), breaking
   ties by smaller depth and then insertion order;
2. keep the top ``top_percentile`` fraction of each kind and assign
   normalized ranks ``i / (keep - 1)`` over the kept states;
3. weight each kept state by ``max((1 - rank)**rho, min_weight_ratio)``,
   times its kind multiplier, times its cooling factor;
4. normalize, then mix with a uniform distribution over the eligible
   states (kept and not hard-blocked).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import kernels
from .buffer import BufferSnapshot, Kind

N_KINDS = len(Kind)


class NoEligibleState(RuntimeError):
    """Every state is inside its hard-block window; the caller must advance t."""


@dataclass(frozen=True)
class StageParams:
    name: str
    focusing_rho: float
    min_weight_ratio: float
    exploration_eps: float
    top_percentile: float
    hard_block: int

    def __post_init__(self):
        if self.focusing_rho < 0:
            raise ValueError("focusing_rho must be >= 0")
        if not 0 < self.min_weight_ratio <= 1:
            raise ValueError("min_weight_ratio must be in (0, 1]")
        if not 0 <= self.exploration_eps <= 1:
            raise ValueError("exploration_eps must be in [0, 1]")
        if not 0 < self.top_percentile <= 1:
            raise ValueError("top_percentile must be in (0, 1]")
        if int(self.hard_block) != self.hard_block or self.hard_block < 1:
            raise ValueError("hard_block must be a positive integer")


EARLY = StageParams("early", 2.0, 0.01, 0.2, 1.0, 1)
MID = StageParams("mid", 3.5, 0.005, 0.15, 1.0, 2)
LATE = StageParams("late", 5.0, 0.001, 0.1, 0.4, 3)


@dataclass(frozen=True)
class StageSchedule:
    early: StageParams = EARLY
    mid: StageParams = MID
    late: StageParams = LATE
    thresholds: tuple[int, int] = (200, 1000)

    def __post_init__(self):
        lo, hi = self.thresholds
        if not 0 < lo < hi:
            raise ValueError("stage thresholds must be strictly increasing and positive")


@dataclass(frozen=True)
class CoolingParams:
    gamma: float = 0.3
    eta: float = 0.9

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        if not 0 < self.eta < 1:
            raise ValueError("eta must be in (0, 1)")


@dataclass(frozen=True)
class TypeWeights:
    draft_multiplier: float = 2.0
    debug_multiplier: float = 1.0
    improve_multiplier: float = 1.0

    def __post_init__(self):
        if min(self.as_array()) <= 0:
            raise ValueError("type multipliers must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.draft_multiplier, self.debug_multiplier, self.improve_multiplier])


@dataclass
class SamplingDistribution:
    """Probabilities over the eligible support of one iteration."""

    ids: list[str]
    probs: np.ndarray
    rows: np.ndarray
    stage: str = ""
    diagnostics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.ids, self.probs.tolist()))

    def entropy(self) -> float:
        p = self.probs[self.probs > 0]
        return float(-(p * np.log(p)).sum())


def stage_for(buffer_size: int, schedule: StageSchedule = StageSchedule()) -> StageParams:
    if buffer_size < 1:
        raise ValueError("buffer_size must be >= 1")
    lo, hi = schedule.thresholds
    if buffer_size < lo:
        return schedule.early
    if buffer_size < hi:
        return schedule.mid
    return schedule.late


def _kind_order(snap: BufferSnapshot) -> np.ndarray:
    n = snap.size
    # lexsort: last key is primary
    return np.lexsort((np.arange(n), snap.depth, -snap.potential, snap.kind)).astype(np.int64)


def ranks_within_kind(snap: BufferSnapshot) -> dict[str, float]:
    """Normalized rank of every state among its kind; 0 is the highest potential."""
    if snap.size == 0:
        raise ValueError("snapshot is empty")
    _, ranks = kernels.rank_weights(_kind_order(snap), snap.kind, N_KINDS, 1.0, 0.0, 1.0)
    return dict(zip(snap.ids, ranks.tolist()))


def base_weight(rank_norm: float, stage: StageParams) -> float:
    if not 0.0 <= rank_norm <= 1.0:
        raise ValueError("rank must lie in [0, 1]")
    return max((1.0 - rank_norm) ** stage.focusing_rho, stage.min_weight_ratio)


def cooling(
    visit_times,
    t: int,
    stage: StageParams,
    cp: CoolingParams = CoolingParams(),
) -> float:
    """Hard refractory gate times a decaying penalty per recorded visit."""
    visits = list(visit_times)
    if not visits:
        return 1.0
    if t - max(visits) <= stage.hard_block:
        return 0.0
    out = 1.0
    for k in visits:
        out *= 1.0 - cp.gamma * cp.eta ** (t - k)
    return out


def cooling_factors(snap: BufferSnapshot, t: int, stage: StageParams, cp: CoolingParams) -> np.ndarray:
    return kernels.cooling_factors(snap.visits, snap.visit_counts, int(t), int(stage.hard_block), cp.gamma, cp.eta)


def _finish(snap, rows, raw, eps, stage, extra=None) -> SamplingDistribution:
    total = raw.sum()
    q = raw / total
    if eps > 0:
        q = (1.0 - eps) * q + eps / rows.size
    q = q / q.sum()
    frontier = np.nan_to_num(snap.last_std[rows], nan=0.0) > 0
    dist = SamplingDistribution([snap.ids[i] for i in rows], q, rows, stage.name)
    dist.diagnostics = {
        "stage": stage.name,
        "support_size": int(rows.size),
        "entropy": dist.entropy(),
        "frontier_mass": float(q[frontier].sum()),
    }
    if extra:
        dist.diagnostics.update(extra)
    return dist


def build_distribution(
    snap: BufferSnapshot,
    t: int,
    schedule: StageSchedule = StageSchedule(),
    cooling_params: CoolingParams = CoolingParams(),
    type_weights: TypeWeights = TypeWeights(),
) -> SamplingDistribution:
    if snap.size == 0:
        raise NoEligibleState("buffer snapshot is empty")
    stage = stage_for(snap.size, schedule)
    weights, _ = kernels.rank_weights(
        _kind_order(snap), snap.kind, N_KINDS, stage.top_percentile, stage.focusing_rho, stage.min_weight_ratio
    )
    cool = cooling_factors(snap, t, stage, cooling_params)
    raw = weights * type_weights.as_array()[snap.kind] * cool
    rows = np.flatnonzero(raw > 0)
    if rows.size == 0:
        raise NoEligibleState(f"all states hard-blocked at t={t}")
    return _finish(snap, rows, raw[rows], stage.exploration_eps, stage)


def uniform_distribution(
    snap: BufferSnapshot,
    t: int,
    schedule: StageSchedule = StageSchedule(),
) -> SamplingDistribution:
    """Ablation baseline: uniform over states outside their hard-block window."""
    if snap.size == 0:
        raise NoEligibleState("buffer snapshot is empty")
    stage = stage_for(snap.size, schedule)
    last = np.where(
        snap.visit_counts > 0,
        snap.visits[np.arange(snap.size), np.maximum(snap.visit_counts - 1, 0)],
        np.iinfo(np.int64).min // 2,
    )
    rows = np.flatnonzero(t - last > stage.hard_block)
    if rows.size == 0:
        raise NoEligibleState(f"all states hard-blocked at t={t}")
    return _finish(snap, rows, np.ones(rows.size), 0.0, stage)


def sample_batch(dist: SamplingDistribution, k: int, rng) -> list[str]:
    """Draw ``k`` distinct states by sequential renormalization.

    ``rng`` is a :class:`numpy.random.Generator` or anything accepted by
    :func:`numpy.random.default_rng`.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    support = int(np.count_nonzero(dist.probs > 0))
    if k > support:
        raise ValueError(f"cannot draw {k} distinct states from a support of {support}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    picks = kernels.sample_without_replacement(dist.probs, rng.random(k))
    return [dist.ids[i] for i in picks]


def support_mass(dist: SamplingDistribution, ids: Mapping[str, object] | set) -> float:
    chosen = set(ids)
    return float(sum(p for i, p in zip(dist.ids, dist.probs) if i in chosen))


def is_normalized(dist: SamplingDistribution, tol: float = 1e-9) -> bool:
    return bool(np.all(dist.probs >= 0)) and math.isclose(float(dist.probs.sum()), 1.0, abs_tol=tol)
