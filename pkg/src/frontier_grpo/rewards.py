"""HumanRank scoring and the mixed absolute/relative shaped reward."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .buffer import ContextState, Kind

INVALID = -1.0


@dataclass(frozen=True)
class RewardParams:
    alpha_improve: float = 0.3
    epsilon_stab: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.alpha_improve <= 1.0:
            raise ValueError("alpha_improve must lie in [0, 1]")
        if not self.epsilon_stab > 0:
            raise ValueError("epsilon_stab must be positive")


@dataclass(frozen=True)
class LeaderboardRef:
    """Synthetic human leaderboard, higher score is better."""

    participant_scores: tuple[float, ...]

    def __post_init__(self):
        s = self.participant_scores
        if not s:
            raise ValueError("leaderboard is empty")
        if any(b < a for a, b in zip(s, s[1:])):
            raise ValueError("leaderboard scores must be sorted ascending")

    @classmethod
    def from_scores(cls, scores: Sequence[float]) -> "LeaderboardRef":
        return cls(tuple(sorted(float(x) for x in scores)))

    @property
    def n(self) -> int:
        return len(self.participant_scores)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.participant_scores, dtype=np.float64)


def humanrank(score: float | None, board: LeaderboardRef) -> float:
    """``1 - p/N`` with ``p = min(N, 1 + #(participants strictly better))``; -1 if invalid.

    ``None`` (or NaN) marks an invalid submission. Ties with humans go in the
    submission's favour.
    """
    if not board.participant_scores:
        raise ValueError("leaderboard is empty")
    if score is None or score != score:
        return INVALID
    arr = board.as_array()
    better = arr.size - int(np.searchsorted(arr, score, side="right"))
    # a submission below every participant still ranks last, not N + 1
    rank = min(1 + better, arr.size)
    return 1.0 - rank / arr.size


def prior_score(x: ContextState) -> float:
    """Baseline a new solution from ``x`` is compared against.

    Drafts start from 0. Otherwise the most recent valid score in the history
    is inherited; a chain of failures falls back to 0.
    """
    if x.kind == Kind.DRAFT:
        return 0.0
    for entry in reversed(x.history):
        if entry.score >= 0:
            return entry.score
    return 0.0


def shaped_reward(s: float, s_p: float, params: RewardParams = RewardParams()) -> float:
    if s == INVALID:
        return 0.0
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"score {s} is neither -1 nor in [0, 1]")
    if not 0.0 <= s_p < 1.0:
        raise ValueError(f"baseline score {s_p} must lie in [0, 1)")
    a = params.alpha_improve
    gain = max(0.0, (s - s_p) / (1.0 - s_p + params.epsilon_stab))
    return (1.0 - a) * s + a * gain
