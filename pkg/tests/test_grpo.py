import math
import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import make_instances
from frontier_grpo.buffer import ContextState, ExecFeedback, transition
from frontier_grpo.grpo import (
    FEATURE_DIM,
    Batch,
    GrpoParams,
    OptimizerState,
    ToyPolicy,
    action_distribution,
    adam_step,
    advantages,
    clipped_surrogate,
    context_features,
    entropy,
    grpo_loss,
    kl_estimate,
    log_softmax,
    loss_and_grad,
    update,
)

GP = GrpoParams()


def random_batch(rng, n=16, k=5, d=FEATURE_DIM, params=None, spread=0.3):
    f = rng.normal(size=(n, d))
    actions = rng.integers(0, k, n)
    base = params if params is not None else rng.normal(scale=0.5, size=(k, d))
    lp = log_softmax(f @ base.T)[np.arange(n), actions]
    old = lp + rng.normal(scale=spread, size=n)
    ref = lp + rng.normal(scale=spread, size=n)
    return Batch(f, actions, old, ref, rng.normal(size=n), np.zeros(n, dtype=np.int64))


def fd_grad(params, batch, gp, h=1e-5):
    g = np.zeros_like(params)
    for idx in np.ndindex(params.shape):
        p1 = params.copy()
        p2 = params.copy()
        p1[idx] += h
        p2[idx] -= h
        g[idx] = (loss_and_grad(p1, batch, gp)[0] - loss_and_grad(p2, batch, gp)[0]) / (2 * h)
    return g


def away_from_kinks(params, batch, gp, margin=1e-3):
    z = log_softmax(batch.features @ params.T)[np.arange(len(batch)), batch.actions]
    ratio = np.exp(z - batch.old_logprobs)
    return np.all(np.abs(ratio - (1 - gp.clip_delta)) > margin) and np.all(np.abs(ratio - (1 + gp.clip_delta)) > margin)


# -- policy ------------------------------------------------------------------


def test_zero_params_uniform():
    pol = ToyPolicy(5)
    p = action_distribution(pol, np.ones(FEATURE_DIM))
    assert np.allclose(p, 0.2, atol=1e-15)


def test_softmax_shift_invariance():
    z = np.array([0.3, -1.2, 2.0])
    assert np.allclose(log_softmax(z + 7.5), log_softmax(z), atol=1e-14)


def test_temperature_sharpens():
    pol = ToyPolicy(2, 1, params=np.array([[2.0], [0.0]]))
    hot = action_distribution(pol, [1.0], 1.0)
    cold = action_distribution(pol, [1.0], 0.7)
    assert cold[0] > hot[0]
    assert hot[0] == pytest.approx(1 / (1 + math.exp(-2)))
    assert cold[0] == pytest.approx(1 / (1 + math.exp(-2 / 0.7)))


def test_policy_validation():
    with pytest.raises(ValueError):
        ToyPolicy(3, 2, params=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ToyPolicy(2, 2, params=np.array([[np.nan, 0], [0, 0]]))
    with pytest.raises(ValueError):
        action_distribution(ToyPolicy(2, 3), np.ones(4))
    with pytest.raises(ValueError):
        action_distribution(ToyPolicy(2, 3), np.ones(3), temperature=0.0)


def test_context_features():
    inst = make_instances(1)[0]
    x = ContextState("x", inst)
    f = context_features(x)
    assert f.shape == (FEATURE_DIM,)
    assert f[0] == 1 and f[4] == 1 and f[8] == -1 and f[9] == 0
    y = transition(x, "a", ExecFeedback.success(), 0.4, state_id="y")
    g = context_features(y)
    assert g[2] == 1 and g[5] == 1 and g[8] == 0.4 and g[9] == 0.1


def test_snapshot_and_publish_versions():
    pol = ToyPolicy(3, 2)
    s0 = pol.snapshot()
    assert pol.publish(np.ones((3, 2))) == 1
    assert s0.version == 0 and np.all(s0.params == 0)
    assert pol.snapshot().version == 1
    assert np.all(pol.reference().params == 0)


# -- advantages ---------------------------------------------------------------


def test_advantage_examples():
    assert advantages([1, 1, 1, 1]).advantages == (0.0, 0.0, 0.0, 0.0)
    assert advantages([0, 0, 0, 0]).advantages == (0.0, 0.0, 0.0, 0.0)
    assert advantages([1, 1, 1, 1]).degenerate
    a = advantages([0, 1], eps_adv=0.0).advantages
    assert a == (-1.0, 1.0)
    a = advantages([0, 1]).advantages
    assert a[1] == pytest.approx(0.5 / (0.5 + 1e-6), rel=1e-15)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=16))
def test_advantages_match_oracle(r):
    got = advantages(r).advantages
    want = oracles.advantages(r)
    for g, w in zip(got, want):
        assert math.isclose(g, w, rel_tol=1e-12, abs_tol=1e-12)
    assert abs(sum(got)) < 1e-9


# -- loss -------------------------------------------------------------------


def test_clip_examples():
    assert clipped_surrogate(1.5, 1.0, 0.2) == pytest.approx(1.2)
    assert clipped_surrogate(0.5, -1.0, 0.2) == pytest.approx(-0.8)
    assert clipped_surrogate(1.1, 1.0, 0.2) == pytest.approx(1.1)


def test_clip_grid_matches_brute_force():
    for ratio in np.linspace(0.1, 3.0, 59):
        for adv in np.linspace(-2, 2, 21):
            for delta in (0.05, 0.2, 0.5):
                lo, hi = 1 - delta, 1 + delta
                clipped = lo if ratio < lo else hi if ratio > hi else ratio
                want = min(ratio * adv, clipped * adv)
                assert clipped_surrogate(ratio, adv, delta) == pytest.approx(want, abs=1e-15)


def test_identity_policy_no_signal():
    n = 6
    lp = np.log(np.full(n, 0.25))
    gp = GrpoParams(kl_coeff=0.0, entropy_coeff=0.0)
    value, grad, _ = grpo_loss(lp, lp, lp, np.zeros(n), gp)
    assert value == 0.0 and np.all(grad == 0.0)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20), st.lists(st.floats(-5, 5), min_size=1, max_size=20))
def test_kl_estimate_nonnegative(a, b):
    n = min(len(a), len(b))
    assert np.all(kl_estimate(a[:n], b[:n]) >= 0)


def test_kl_zero_at_reference():
    x = np.array([-0.3, -2.0])
    assert np.all(kl_estimate(x, x) == 0)


def test_loss_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 12))
        new = np.log(rng.uniform(0.05, 1, n))
        old = new + rng.normal(scale=0.4, size=n)
        ref = new + rng.normal(scale=0.4, size=n)
        adv = rng.normal(size=n)
        ent = rng.uniform(0, 1.6, n)
        got = grpo_loss(new, old, ref, adv, GP, ent)[0]
        want = oracles.grpo_objective(new, old, ref, adv, entropies=ent)
        assert math.isclose(got, want, rel_tol=1e-12, abs_tol=1e-14)


def test_loss_shape_errors():
    with pytest.raises(ValueError):
        grpo_loss([0.0, 0.0], [0.0], [0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        grpo_loss([np.nan], [0.0], [0.0], [1.0])


def test_logprob_gradient_matches_fd():
    rng = np.random.default_rng(1)
    n = 10
    new = np.log(rng.uniform(0.1, 1, n))
    old = new + rng.normal(scale=0.3, size=n)
    ref = new + rng.normal(scale=0.3, size=n)
    adv = rng.normal(size=n)
    _, g, _ = grpo_loss(new, old, ref, adv)
    h = 1e-6
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        fd = (grpo_loss(new + e, old, ref, adv)[0] - grpo_loss(new - e, old, ref, adv)[0]) / (2 * h)
        assert fd == pytest.approx(g[i], rel=1e-5, abs=1e-9)


def test_single_sample_elementwise_fd():
    rng = np.random.default_rng(2)
    params = rng.normal(scale=0.5, size=(5, FEATURE_DIM))
    batch = random_batch(rng, n=1, params=params, spread=0.05)
    _, g, _ = loss_and_grad(params, batch, GP)
    fd = fd_grad(params, batch, GP)
    big = np.abs(fd) > 1e-9
    assert np.all(np.abs(fd - g)[big] / np.abs(fd)[big] < 1e-4)
    assert np.all(np.abs(fd - g)[~big] < 1e-9)


def test_constant_group_zero_policy_gradient():
    rng = np.random.default_rng(3)
    params = rng.normal(size=(5, FEATURE_DIM))
    batch = random_batch(rng, n=8, params=params)
    batch.advantages = np.array(advantages([0.4] * 8).advantages)
    gp = GrpoParams(kl_coeff=0.0, entropy_coeff=0.0)
    _, g, _ = loss_and_grad(params, batch, gp)
    assert np.all(g == 0.0)


# -- optimizer ----------------------------------------------------------------


def test_zero_gradient_only_decays():
    pol = ToyPolicy(3, 2, params=np.array([[1.0, -2.0], [0.5, 0.0], [3.0, 1.0]]))
    opt = OptimizerState.for_policy(pol, learning_rate=0.01)
    new = adam_step(pol.params, np.zeros_like(pol.params), opt)
    assert np.allclose(new, pol.params * (1 - 0.01 * 0.1), rtol=0, atol=1e-15)


def test_update_clips_and_is_deterministic():
    rng = np.random.default_rng(4)
    batch = random_batch(rng, n=32)
    batch.advantages *= 50
    runs = []
    for _ in range(2):
        pol = ToyPolicy(5, params=np.full((5, FEATURE_DIM), 0.1))
        opt = OptimizerState.for_policy(pol, learning_rate=0.01)
        m = update(pol, opt, batch)
        runs.append(pol.params.copy())
        assert m.version == 1 and pol.version == 1 and m.grad_norm > 1.0
    assert np.array_equal(runs[0], runs[1])


def test_update_aborts_on_non_finite():
    rng = np.random.default_rng(5)
    batch = random_batch(rng, n=4)
    batch.features[0, 0] = 1e308
    batch.features[0, 1] = -1e308
    pol = ToyPolicy(5, params=np.ones((5, FEATURE_DIM)))
    before = pol.params.copy()
    opt = OptimizerState.for_policy(pol)
    with np.errstate(all="ignore"):
        m = update(pol, opt, batch)
    assert m.aborted and pol.version == 0 and np.array_equal(pol.params, before)
    with pytest.raises(ValueError):
        update(pol, opt, Batch(batch.features[:0], batch.actions[:0], batch.old_logprobs[:0], batch.ref_logprobs[:0], batch.advantages[:0]))


def test_reader_sees_whole_versions():
    """Snapshots taken while a learner publishes never mix two parameter sets."""
    pol = ToyPolicy(2, 2)
    stop = threading.Event()
    seen = []

    def reader():
        while not stop.is_set():
            s = pol.snapshot()
            seen.append((s.version, float(s.params[0, 0]), float(s.params[1, 1])))

    th = threading.Thread(target=reader)
    th.start()
    for v in range(1, 300):
        pol.publish(np.full((2, 2), float(v)))
    stop.set()
    th.join()
    assert all(a == b == float(v) for v, a, b in seen)


def test_entropy_helper():
    assert entropy(np.array([0.5, 0.5])) == pytest.approx(math.log(2))
    assert entropy(np.array([1.0, 0.0])) == 0.0


def test_gradient_fd_random_pairs():
    rng = np.random.default_rng(6)
    done = 0
    while done < 20:
        params = rng.normal(scale=0.5, size=(5, FEATURE_DIM))
        batch = random_batch(rng, n=int(rng.integers(2, 24)), params=params)
        if not away_from_kinks(params, batch, GP):
            continue
        _, g, _ = loss_and_grad(params, batch, GP)
        fd = fd_grad(params, batch, GP)
        assert np.linalg.norm(fd - g) / max(np.linalg.norm(fd), 1e-12) < 1e-4
        done += 1
