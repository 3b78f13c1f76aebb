import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from frontier_grpo.buffer import BufferSnapshot, ExecFeedback, TaskInstance, new_buffer, transition

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


def make_instances(n, seed=0):
    rng = np.random.default_rng(seed)
    return [
        TaskInstance(f"t{i}", tuple(rng.normal(size=2)), float(rng.random()), "humanrank", f"lb{i}")
        for i in range(n)
    ]


def snapshot_from(states, t, window=20):
    """Build a BufferSnapshot from oracle-style dicts (kind, depth, potential, visits[, std])."""
    n = len(states)
    visits = np.full((n, window), -1, dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    for i, s in enumerate(states):
        v = sorted(s["visits"])[-window:]
        visits[i, : len(v)] = v
        counts[i] = len(v)
    return BufferSnapshot(
        size=n,
        iteration=t,
        ids=[f"s{i}" for i in range(n)],
        kind=np.array([s["kind"] for s in states], dtype=np.int8),
        depth=np.array([s["depth"] for s in states], dtype=np.int64),
        potential=np.array([s["potential"] for s in states], dtype=np.float64),
        visits=visits,
        visit_counts=counts,
        last_std=np.array([s.get("std", np.nan) for s in states], dtype=np.float64),
    )


def random_states(rng, n, t, max_visits=5, potential_levels=None):
    out = []
    for _ in range(n):
        nv = int(rng.integers(0, max_visits + 1))
        nv = min(nv, t)
        visits = sorted(rng.choice(t, nv, replace=False).tolist()) if nv else []
        pot = float(rng.choice(potential_levels)) if potential_levels is not None else float(rng.random())
        out.append({"kind": int(rng.integers(0, 3)), "depth": int(rng.integers(0, 6)), "potential": pot, "visits": visits})
    return out


def grow_chain(buf, parent_id, n, rng, start=0):
    """Append ``n`` children below ``parent_id`` with random outcomes; returns their ids."""
    ids = []
    parent = buf.get(parent_id)
    for i in range(n):
        ok = bool(rng.random() < 0.5)
        fb = ExecFeedback.success() if ok else ExecFeedback.failure()
        score = float(rng.random()) if ok else -1.0
        child = transition(parent, f"sol{start + i}", fb, score, state_id=f"c{start + i}")
        buf.append(child)
        ids.append(child.state_id)
        parent = child
    return ids


@pytest.fixture
def small_buffer():
    return new_buffer(make_instances(6))
