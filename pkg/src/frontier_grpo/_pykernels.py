"""Numpy implementations of the sampler kernels.

Used when the compiled ``_ckernels`` module is unavailable, or when
``FRONTIER_GRPO_PURE_PYTHON=1`` is set. Signatures and results match the
compiled versions (up to floating point summation order).
"""
from __future__ import annotations

import math

import numpy as np


def cooling_factors(visits, counts, t, hard_block, gamma, eta):
    counts = np.asarray(counts)
    out = np.ones(counts.shape[0], dtype=np.float64)
    rows = np.flatnonzero(counts > 0)
    if rows.size == 0:
        return out
    v = np.asarray(visits)[rows]
    c = counts[rows]
    last = v[np.arange(rows.size), c - 1]
    cols = np.arange(v.shape[1])
    valid = cols[None, :] < c[:, None]
    age = np.where(valid, t - v, 0).astype(np.float64)
    factors = np.where(valid, 1.0 - gamma * np.power(eta, age), 1.0)
    prod = np.ones(rows.size)
    # left-to-right product keeps the same rounding as the compiled loop
    for j in range(v.shape[1]):
        prod = prod * factors[:, j]
    prod[t - last <= hard_block] = 0.0
    out[rows] = prod
    return out


def rank_weights(order, kind, n_kinds, top_pct, rho, floor):
    order = np.asarray(order, dtype=np.int64)
    n = order.shape[0]
    weights = np.zeros(n, dtype=np.float64)
    ranks = np.full(n, np.nan, dtype=np.float64)
    if n == 0:
        return weights, ranks
    ks = np.asarray(kind)[order]
    boundaries = np.flatnonzero(np.diff(ks)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [n]))
    for start, end in zip(starts, ends):
        n_k = int(end - start)
        keep = min(max(int(math.ceil(top_pct * n_k - 1e-9)), 1), n_k)
        rows = order[start:start + keep]
        r = np.zeros(keep) if keep == 1 else np.arange(keep) / (keep - 1)
        w = np.maximum(np.power(1.0 - r, rho), floor)
        ranks[rows] = r
        weights[rows] = w
    return weights, ranks


def sample_without_replacement(probs, uniforms):
    work = np.array(probs, dtype=np.float64, copy=True)
    out = np.empty(len(uniforms), dtype=np.int64)
    for j, r in enumerate(uniforms):
        nz = np.flatnonzero(work > 0.0)
        if nz.size == 0:
            raise ValueError("ran out of positive-probability entries")
        csum = np.cumsum(work)
        u = r * csum[-1]
        pick = int(np.searchsorted(csum, u, side="right"))
        if pick >= work.shape[0] or work[pick] <= 0.0:
            # u rounded onto the upper edge
            pick = int(nz[-1])
        out[j] = pick
        work[pick] = 0.0
    return out
