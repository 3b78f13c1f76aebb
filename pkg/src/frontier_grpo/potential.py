"""Learnability potential of a state from its latest GRPO reward group."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .buffer import DEFAULT_P_INIT, EvolvingBuffer


@dataclass(frozen=True)
class PotentialParams:
    uncertainty_weight: float = 0.5
    headroom_weight: float = 0.5
    std_clip: float = 1.0
    p_init: float = DEFAULT_P_INIT

    def __post_init__(self):
        if self.uncertainty_weight < 0 or self.headroom_weight < 0:
            raise ValueError("potential weights must be non-negative")
        if not self.std_clip > 0:
            raise ValueError("std_clip must be positive")
        if self.p_init < 0:
            raise ValueError("p_init must be non-negative")


def _validate(rewards: Sequence[float]) -> list[float]:
    r = [float(x) for x in rewards]
    if len(r) < 2:
        raise ValueError(f"a reward group needs at least 2 members, got {len(r)}")
    for x in r:
        if not math.isfinite(x):
            raise ValueError("reward group contains a non-finite value")
    return r


def group_mean_std(rewards: Sequence[float]) -> tuple[float, float]:
    """Mean and population (divisor G) standard deviation."""
    r = _validate(rewards)
    if min(r) == max(r):
        # fsum(r) / g can be one ulp off r[0]; a constant group must give exactly zero spread
        return r[0], 0.0
    g = len(r)
    mu = math.fsum(r) / g
    var = math.fsum((x - mu) ** 2 for x in r) / g
    return mu, math.sqrt(var)


def potential(rewards: Sequence[float], params: PotentialParams = PotentialParams()) -> float:
    r = _validate(rewards)
    if any(x < 0.0 or x > 1.0 for x in r):
        raise ValueError("shaped rewards must lie in [0, 1]")
    mu, sigma = group_mean_std(r)
    uncertainty = min(max(sigma, 0.0), params.std_clip)
    headroom = min(max(1.0 - mu, 0.0), 1.0)
    return params.uncertainty_weight * uncertainty + params.headroom_weight * headroom


def update_potential(
    buffer: EvolvingBuffer,
    state_id: str,
    rewards: Sequence[float],
    params: PotentialParams = PotentialParams(),
) -> float:
    """Overwrite a state's potential from its most recent group. Returns the new value."""
    value = potential(rewards, params)
    _, sigma = group_mean_std(rewards)
    buffer.set_potential(state_id, value, group_std=sigma)
    return value
