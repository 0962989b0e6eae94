import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smc2switch import adaptive
from smc2switch.adaptive import (
    LagState,
    MoveContext,
    adaptive_move,
    kernel_score,
    lag_countdown,
    psjd,
    remaining_repeats,
    sjd_target,
)
from smc2switch.engine import weighted_mean_cov
from smc2switch.filters import bootstrap_pf
from smc2switch.kernels import MutationStats
from smc2switch.population import PG, PMMH, CostCounter, Population, TargetSpec


def test_psjd_fixtures():
    u = np.random.default_rng(0).normal(size=(10, 3))
    np.testing.assert_array_equal(psjd(u, u, np.eye(3)), np.zeros(3))
    before = np.zeros((5, 1))
    after = np.full((5, 1), 2.0)
    assert psjd(before, after, np.array([[0.5]]))[0] == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(3, 40), st.integers(0, 2**32 - 1))
def test_psjd_sum_is_mean_mahalanobis_jump(p, n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(p, p))
    sigma = A @ A.T + p * np.eye(p)
    vals, vecs = np.linalg.eigh(sigma)
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
    u0, u1 = rng.normal(size=(n, p)), rng.normal(size=(n, p))
    d = u0 - u1
    joint = np.mean(np.einsum("ij,jk,ik->i", d, np.linalg.inv(sigma), d))
    assert abs(psjd(u0, u1, inv_sqrt).sum() - joint) < 1e-10 * max(1.0, joint)


def test_kernel_score():
    assert kernel_score(np.array([4.0, 9.0]), 2) == 2.0
    assert kernel_score(np.zeros(3), 7) == 0.0
    assert kernel_score(np.array([4.0, 9.0]), 4) == 1.0
    with pytest.raises(ValueError):
        kernel_score(np.ones(2), 0)


def test_sjd_target_fixtures():
    rng = np.random.default_rng(1)
    u = rng.normal(size=(200, 3)) @ np.array([[2.0, 0, 0], [0.5, 1.0, 0], [0, 0.3, 0.2]])
    W = rng.random(200)
    W /= W.sum()
    mu, sigma, inv_sqrt = weighted_mean_cov(u, W)
    # with the weighted covariance of the same population the value is exactly 4 * dim
    assert sjd_target(u, W, mu, np.linalg.inv(sigma)) == pytest.approx(12.0, rel=1e-9)
    assert sjd_target(np.tile(mu, (5, 1)), np.ones(5) / 5, mu, np.eye(3)) == 0.0
    A = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    v = u @ A.T + 1.0
    mv, sv, _ = weighted_mean_cov(v, W)
    assert sjd_target(v, W, mv, np.linalg.inv(sv)) == pytest.approx(12.0, rel=1e-9)


def test_remaining_repeats_fixtures():
    assert remaining_repeats(10.0, np.array([2.0, 3.0]), np.array([2.0, 5.0]), 2.0, K=5) == 15
    assert remaining_repeats(3.0, np.array([2.0]), np.array([2.0]), 1.0) == 0
    assert remaining_repeats(10.0, np.array([0.0]), np.array([0.0]), 0.0, r_max=1000) == 1000
    assert remaining_repeats(1e9, np.array([0.0]), np.array([0.0]), 1e-9) == 1000


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 50), st.floats(0.0, 5), st.floats(1e-3, 5), st.floats(1e-3, 5))
def test_remaining_repeats_monotone(target, achieved, m1, m2):
    lo, hi = min(m1, m2), max(m1, m2)
    p = np.array([achieved])
    assert remaining_repeats(target, p, p, hi) <= remaining_repeats(target, p, p, lo)
    assert remaining_repeats(target, p + 1.0, p, lo) <= remaining_repeats(target, p, p, lo)


def test_lag_countdown_fixtures():
    for alt in (1.01, 1.5, 1.99):
        assert lag_countdown(2.0, alt) == 2
    assert lag_countdown(2.0, 0.0) == 50
    assert lag_countdown(1.0, 3.0) == 1
    assert lag_countdown(1e6, 1.0) == 50


def test_lag_state_schedule():
    lag = LagState(horizon=5)
    assert [lag.due() for _ in range(5)] == [True] * 5
    lag.record(2.0, 1.5)
    assert [lag.due() for _ in range(4)] == [False, True, True, True]
    lag.record(3.0, 1.0)
    assert [lag.due() for _ in range(3)] == [False, False, True]


def test_move_context_adapt():
    ctx = MoveContext(np.eye(2), np.eye(2), 8.0)
    ctx.pmmh_stats = MutationStats(100, 14)
    ctx.pg_stats = [MutationStats(10, 0), MutationStats(0, 0)]
    ctx.adapt()
    assert ctx.eps2_pmmh == 1.0  # capped
    assert ctx.eps2_blocks[0] == pytest.approx(0.1 * np.exp(-2))
    assert ctx.eps2_blocks[1] == 0.1
    assert ctx.pmmh_stats.proposals == 0


def _setup(bm, bm_series, default, n=30, nx=16, seed=0):
    rng = np.random.default_rng(seed)
    theta = np.tile(bm.true_theta, (n, 1)) * np.exp(0.05 * rng.normal(size=(n, 4)))
    target = TargetSpec("DA", bm_series, default, nx, nx // 2, d=8)
    if default == PMMH:
        ll = bootstrap_pf(bm, theta, target.data, nx, rng, history=False).loglik
        pop = Population(theta, np.zeros(n), PMMH, nx, loglik=ll)
    else:
        from smc2switch.filters import backward_sample

        out = bootstrap_pf(bm, theta, target.data, nx // 2, rng)
        pop = Population(theta, np.zeros(n), PG, nx // 2,
                         path=backward_sample(out, bm, theta, target.data, rng))
    u, _ = bm.unconstrain(theta)
    mu, sigma, inv_sqrt = weighted_mean_cov(u, np.ones(n) / n)
    ctx = MoveContext(sigma, inv_sqrt, 2.0, K=2, r_max=3)
    return pop, target, ctx, rng


def test_test_kernel_zero_repeats_has_zero_psjd(bm, bm_series):
    pop, target, ctx, rng = _setup(bm, bm_series, PMMH)
    np.testing.assert_array_equal(adaptive.test_kernel(bm, pop, target, ctx, 0, rng), np.zeros(4))


@pytest.mark.parametrize("default", [PMMH, PG])
@pytest.mark.parametrize("policy", ["never", "always", "lag"])
def test_adaptive_move_ends_in_default_representation(bm, bm_series, default, policy):
    pop, target, ctx, rng = _setup(bm, bm_series, default)
    before = pop.logw.copy()
    cost = CostCounter()
    new, rec = adaptive_move(bm, pop, target, ctx, policy, LagState(), rng, cost)
    assert new.kind == default and new.nx == target.nx(default)
    assert new.logw.tobytes() == before.tobytes()
    assert rec.tested_alt == (policy != "never")
    assert rec.applications == (2 if policy == "never" else 4) + rec.r_rem
    assert 0 <= rec.r_rem <= 3
    assert cost.total > 0


def test_never_policy_uses_default_twice(bm, bm_series, monkeypatch):
    pop, target, ctx, rng = _setup(bm, bm_series, PMMH)
    seen = {}
    real = adaptive.remaining_repeats

    def spy(tgt, p_def, p_alt, m_best, K, r_max):
        seen["same"] = np.array_equal(p_def, p_alt)
        return real(tgt, p_def, p_alt, m_best, K, r_max)

    monkeypatch.setattr(adaptive, "remaining_repeats", spy)
    adaptive_move(bm, pop, target, ctx, "never", LagState(), rng)
    assert seen["same"]


def test_adaptive_move_validates(bm, bm_series):
    pop, target, ctx, rng = _setup(bm, bm_series, PMMH)
    with pytest.raises(ValueError):
        adaptive_move(bm, pop, target, ctx, "sometimes", LagState(), rng)
    target.default = PG
    with pytest.raises(ValueError):
        adaptive_move(bm, pop, target, ctx, "never", LagState(), rng)
