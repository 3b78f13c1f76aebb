"""GRPO on a linear-softmax toy policy.

The policy maps a small structured feature vector of a context state to
logits over ``K`` discrete actions. Each action stands for one complete
response, so sequence-level and token-level importance ratios coincide.
Gradients are analytic; :mod:`tests.test_grpo` checks them against central
finite differences.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .buffer import ContextState, Kind
from .potential import group_mean_std

N_DEPTH_BUCKETS = 4
FEATURE_DIM = 3 + 1 + N_DEPTH_BUCKETS + 1 + 1
HISTORY_NORM = 10.0


def context_features(x: ContextState) -> np.ndarray:
    """kind one-hot (3), difficulty, depth bucket one-hot (4), last score, history length / 10."""
    f = np.zeros(FEATURE_DIM)
    f[int(x.kind)] = 1.0
    f[3] = x.instance.difficulty
    f[4 + min(x.depth, N_DEPTH_BUCKETS - 1)] = 1.0
    f[8] = x.history[-1].score if x.history else -1.0
    f[9] = min(x.depth, HISTORY_NORM) / HISTORY_NORM
    return f


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


@dataclass(frozen=True)
class PolicySnapshot:
    params: np.ndarray
    version: int

    def logits(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features) @ self.params.T


class ToyPolicy:
    """Linear categorical policy with a frozen reference copy of its initial weights."""

    def __init__(self, n_actions: int, feature_dim: int = FEATURE_DIM, params: np.ndarray | None = None):
        if params is None:
            params = np.zeros((n_actions, feature_dim))
        params = np.array(params, dtype=np.float64)
        if params.shape != (n_actions, feature_dim):
            raise ValueError(f"params shape {params.shape} != {(n_actions, feature_dim)}")
        if not np.all(np.isfinite(params)):
            raise ValueError("policy parameters must be finite")
        self.params = params
        self.reference_params = params.copy()
        self.version = 0
        self._lock = threading.Lock()

    @property
    def n_actions(self) -> int:
        return self.params.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.params.shape[1]

    def snapshot(self) -> PolicySnapshot:
        with self._lock:
            return PolicySnapshot(self.params.copy(), self.version)

    def reference(self) -> PolicySnapshot:
        return PolicySnapshot(self.reference_params, -1)

    def publish(self, params: np.ndarray) -> int:
        """Atomically install new parameters and bump the version."""
        with self._lock:
            self.params = params
            self.version += 1
            return self.version


def _check_features(params: np.ndarray, features: np.ndarray) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.shape[-1] != params.shape[1]:
        raise ValueError(f"feature dimension {f.shape[-1]} != policy input dimension {params.shape[1]}")
    return f


def action_distribution(policy, features, temperature: float = 1.0) -> np.ndarray:
    """``softmax(logits / temperature)`` for one feature vector or a batch."""
    params = policy.params
    f = _check_features(params, features)
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return softmax((f @ params.T) / temperature)


def entropy(probs: np.ndarray) -> np.ndarray:
    p = np.clip(probs, 1e-300, None)
    return -(probs * np.log(p)).sum(axis=-1)


# --------------------------------------------------------------------------
# advantages and loss


@dataclass(frozen=True)
class GrpoParams:
    clip_delta: float = 0.2
    kl_coeff: float = 0.005
    entropy_coeff: float = 0.0005
    group_size: int = 8
    eps_adv: float = 1e-6
    rollout_temperature: float = 0.7
    logprob_temperature: float = 1.0

    def __post_init__(self):
        if not 0 < self.clip_delta < 1:
            raise ValueError("clip_delta must lie in (0, 1)")
        if self.kl_coeff < 0 or self.entropy_coeff < 0:
            raise ValueError("regularization coefficients must be non-negative")
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")
        if self.eps_adv < 0:
            raise ValueError("eps_adv must be non-negative")


@dataclass(frozen=True)
class AdvantageGroup:
    rewards: tuple[float, ...]
    mean: float
    std: float
    advantages: tuple[float, ...]
    eps_adv: float

    @property
    def degenerate(self) -> bool:
        return self.std == 0.0


def advantages(rewards: Sequence[float], eps_adv: float = 1e-6) -> AdvantageGroup:
    mu, sigma = group_mean_std(rewards)
    denom = sigma + eps_adv
    if denom == 0.0:
        adv = tuple(0.0 for _ in rewards)
    else:
        adv = tuple((float(r) - mu) / denom for r in rewards)
    return AdvantageGroup(tuple(float(r) for r in rewards), mu, sigma, adv, eps_adv)


def clipped_surrogate(ratio, adv, delta):
    """Per-sample ``min(ratio * adv, clip(ratio, 1-delta, 1+delta) * adv)``."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - delta, 1.0 + delta) * adv)


def kl_estimate(new_logprobs, ref_logprobs):
    """Per-sample ``exp(d) - d - 1`` with ``d = ref - new``; always >= 0."""
    d = np.asarray(ref_logprobs, dtype=np.float64) - np.asarray(new_logprobs, dtype=np.float64)
    return np.expm1(d) - d


@dataclass
class LossParts:
    loss: float
    surrogate: float
    kl: float
    entropy: float


def grpo_loss(new_logprobs, old_logprobs, ref_logprobs, adv, params: GrpoParams = GrpoParams(), entropies=None):
    """Negated GRPO objective averaged over samples, and its gradient w.r.t. ``new_logprobs``.

    ``adv`` is an :class:`AdvantageGroup` or a plain sequence of advantages.
    ``entropies`` (per-sample policy entropies) only enters the value; its
    gradient flows through the logits and is handled by :func:`loss_and_grad`.
    """
    new = np.asarray(new_logprobs, dtype=np.float64)
    old = np.asarray(old_logprobs, dtype=np.float64)
    ref = np.asarray(ref_logprobs, dtype=np.float64)
    a = np.asarray(adv.advantages if isinstance(adv, AdvantageGroup) else adv, dtype=np.float64)
    if not (new.shape == old.shape == ref.shape == a.shape) or new.ndim != 1:
        raise ValueError("log-prob and advantage vectors must have equal length")
    if not (np.all(np.isfinite(new)) and np.all(np.isfinite(old)) and np.all(np.isfinite(ref))):
        raise ValueError("non-finite log-probabilities")
    n = new.size
    delta = params.clip_delta
    ratio = np.exp(new - old)
    unclipped = ratio * a
    clipped = np.clip(ratio, 1.0 - delta, 1.0 + delta) * a
    surr = np.minimum(unclipped, clipped)
    # the min follows the unclipped branch when it is no larger, or when the ratio is in range
    inside = (ratio >= 1.0 - delta) & (ratio <= 1.0 + delta)
    follows = (unclipped <= clipped) | inside
    d_surr = np.where(follows, unclipped, 0.0)
    d = ref - new
    kl = np.expm1(d) - d
    d_kl = 1.0 - np.exp(d)
    ent = 0.0 if entropies is None else float(np.mean(entropies))
    value = -surr.mean() + params.kl_coeff * kl.mean() - params.entropy_coeff * ent
    grad = (-d_surr + params.kl_coeff * d_kl) / n
    return float(value), grad, LossParts(float(value), float(surr.mean()), float(kl.mean()), ent)


# --------------------------------------------------------------------------
# batched update


@dataclass
class Batch:
    features: np.ndarray
    actions: np.ndarray
    old_logprobs: np.ndarray
    ref_logprobs: np.ndarray
    advantages: np.ndarray
    versions: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.actions.shape[0])

    @classmethod
    def concat(cls, parts: Sequence["Batch"]) -> "Batch":
        versions = None
        if all(p.versions is not None for p in parts):
            versions = np.concatenate([p.versions for p in parts])
        return cls(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.actions for p in parts]),
            np.concatenate([p.old_logprobs for p in parts]),
            np.concatenate([p.ref_logprobs for p in parts]),
            np.concatenate([p.advantages for p in parts]),
            versions,
        )


def loss_and_grad(params: np.ndarray, batch: Batch, gp: GrpoParams = GrpoParams()):
    """Full loss (surrogate, KL and exact entropy bonus) and its gradient w.r.t. ``params``."""
    f = batch.features
    z = (f @ params.T) / gp.logprob_temperature
    logp = log_softmax(z)
    p = np.exp(logp)
    idx = np.arange(len(batch))
    new = logp[idx, batch.actions]
    ent = -(p * logp).sum(axis=1)
    value, g_new, parts = grpo_loss(new, batch.old_logprobs, batch.ref_logprobs, batch.advantages, gp, ent)
    # d new_logprob / d z = onehot(a) - p
    g_z = -p * g_new[:, None]
    g_z[idx, batch.actions] += g_new
    # d H / d z_j = -p_j (log p_j + H); loss carries -beta_H * mean(H)
    g_h = -p * (logp + ent[:, None])
    g_z -= gp.entropy_coeff * g_h / len(batch)
    grad = (g_z.T @ f) / gp.logprob_temperature
    return value, grad, parts


@dataclass
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.98
    weight_decay: float = 0.1
    grad_clip_norm: float = 1.0
    eps: float = 1e-8

    @classmethod
    def for_policy(cls, policy: ToyPolicy, **kw) -> "OptimizerState":
        return cls(np.zeros_like(policy.params), np.zeros_like(policy.params), **kw)


@dataclass
class UpdateMetrics:
    loss: float
    surrogate: float
    kl: float
    entropy: float
    grad_norm: float
    version: int
    aborted: bool = False
    clip_fraction: float = 0.0
    extra: dict = field(default_factory=dict)


def adam_step(params: np.ndarray, grad: np.ndarray, opt: OptimizerState) -> np.ndarray:
    """One adaptive-moment step with decoupled weight decay; returns new params."""
    opt.step_count += 1
    opt.first_moment = opt.beta1 * opt.first_moment + (1 - opt.beta1) * grad
    opt.second_moment = opt.beta2 * opt.second_moment + (1 - opt.beta2) * grad * grad
    m_hat = opt.first_moment / (1 - opt.beta1**opt.step_count)
    v_hat = opt.second_moment / (1 - opt.beta2**opt.step_count)
    step = m_hat / (np.sqrt(v_hat) + opt.eps) + opt.weight_decay * params
    return params - opt.learning_rate * step


def update(policy: ToyPolicy, opt: OptimizerState, batch: Batch, gp: GrpoParams = GrpoParams()) -> UpdateMetrics:
    if len(batch) == 0:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(batch.advantages)):
        raise ValueError("non-finite advantages")
    params = policy.params
    value, grad, parts = loss_and_grad(params, batch, gp)
    norm = float(np.sqrt((grad * grad).sum()))
    if not (math.isfinite(norm) and math.isfinite(value)):
        return UpdateMetrics(value, parts.surrogate, parts.kl, parts.entropy, norm, policy.version, aborted=True)
    if norm > opt.grad_clip_norm:
        grad = grad * (opt.grad_clip_norm / norm)
    new_params = adam_step(params, grad, opt)
    version = policy.publish(new_params)
    ratio = np.exp(
        log_softmax((batch.features @ params.T) / gp.logprob_temperature)[np.arange(len(batch)), batch.actions]
        - batch.old_logprobs
    )
    clipped = float(np.mean(np.abs(ratio - 1.0) > gp.clip_delta))
    return UpdateMetrics(value, parts.surrogate, parts.kl, parts.entropy, norm, version, clip_fraction=clipped)
