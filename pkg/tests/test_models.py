import numpy as np
import pytest
from scipy import stats

from smc2switch.models import (
    AR1,
    MODELS,
    InvalidParameterError,
    TimeSeries,
    from_unconstrained,
    get_model,
    to_unconstrained,
)

LOG_2PI = np.log(2 * np.pi)


def _model(name):
    return AR1(n_beta=3) if name == "ar1" else get_model(name)


def _truth(m):
    return np.asarray(m.true_theta, dtype=float)


def test_bm_prior_at_truth_matches_hand_sum(bm):
    def normal(x, mu, sd):
        return -0.5 * LOG_2PI - np.log(sd) - 0.5 * ((x - mu) / sd) ** 2

    def half_normal(x, sd):
        return np.log(2.0) + normal(x, 0.0, sd)

    expected = normal(1.0, 3.0, 5.0) + normal(1.2, 2.0, 5.0) + half_normal(1.5, 2.0) + half_normal(1.0, 2.0)
    assert bm.log_prior(np.array([1.0, 1.2, 1.5, 1.0]))[0] == pytest.approx(expected, abs=1e-12)


def test_ar1_prior_outside_support():
    m = AR1(n_beta=2)
    theta = np.array([1.5, 1.0, 0.0, 0.1, 0.1])
    assert m.log_prior(theta)[0] == -np.inf


def test_svm_prior_matches_scipy():
    m = get_model("svm")
    theta = np.array([0.0, 0.5, 0.0, 0.5, 1.0, 1.0])
    expected = (
        stats.norm(0, 10).logpdf(0.0)
        + stats.uniform(0, 1).logpdf(0.5)
        + stats.norm(0, 10).logpdf(0.0)
        + stats.uniform(0, 1).logpdf(0.5)
        + stats.halfnorm(scale=2).logpdf(1.0)
        + stats.halfnorm(scale=2).logpdf(1.0)
    )
    assert m.log_prior(theta)[0] == pytest.approx(expected, abs=1e-12)


def test_sample_prior_moments_and_support(bm):
    rng = np.random.default_rng(0)
    draws = bm.sample_prior(rng, 100_000)
    se = 5.0 / np.sqrt(draws.shape[0])
    assert abs(draws[:, 1].mean() - 2.0) < 3 * se
    assert np.all(draws[:, 2:] >= 0)
    phi = AR1(n_beta=2).sample_prior(rng, 10_000)[:, 0]
    assert np.all((phi > 0) & (phi < 1))


def test_bm_transition_at_own_mean(bm):
    theta = np.array([1.0, 1.2, 1.5, 1.0])
    val = bm.log_transition(theta, np.array([[0.0]]), np.array([[0.075]]), 1)
    assert val[0, 0] == pytest.approx(-np.log(1.5 * np.sqrt(2 * np.pi)), abs=1e-12)


def test_bm_observation_at_mean(bm):
    theta = np.array([1.0, 1.2, 1.5, 1.0])
    series = TimeSeries(np.array([0.3]))
    val = bm.log_observation(theta, np.array([[0.3]]), 0, series)
    assert val[0, 0] == pytest.approx(-0.5 * LOG_2PI, abs=1e-12)


def test_ar1_observation_fixture():
    m = AR1(n_beta=2)
    theta = np.array([0.5, 1.0, 0.0, 0.1, 0.1])
    series = TimeSeries(np.array([0.2]), np.array([[1.0, 1.0]]))
    val = m.log_observation(theta, np.array([[0.0]]), 0, series)
    assert val[0, 0] == pytest.approx(stats.norm(0.2, 1.0).logpdf(0.2), abs=1e-12)


def test_ar1_init_collapses_when_phi_zero():
    m = AR1(n_beta=1)
    mean, sd = m.init_moments(np.array([[0.0, 0.7, 0.3, 0.0]]), None)
    assert mean[0, 0] == 0.3 and sd[0, 0] == pytest.approx(0.7)


def test_svm_transition_moments():
    m = get_model("svm")
    theta = np.array([[0.0, 0.5, 0.0, 0.5, 1.0, 1.0]])
    mean, sd = m.transition_moments(theta, np.array([[2.0]]), 1, None)
    assert mean[0, 0] == pytest.approx(1.0) and sd[0, 0] ** 2 == pytest.approx(1.0)


def test_zero_variance_rejected(bm):
    theta = np.array([1.0, 1.2, 0.0, 1.0])
    with pytest.raises(InvalidParameterError):
        bm.log_transition(theta, np.array([[0.0]]), np.array([[0.0]]), 1)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_transition_integrates_to_one(name):
    m = _model(name)
    rng = np.random.default_rng(1)
    series, x = m.simulate(_truth(m), 5, rng)
    _, s = m.transition_moments(_truth(m)[None], np.array([[x[2]]]), 3, series)
    mean, _ = m.transition_moments(_truth(m)[None], np.array([[x[2]]]), 3, series)
    grid = np.linspace(mean[0, 0] - 12 * s[0, 0], mean[0, 0] + 12 * s[0, 0], 20001)
    dens = np.exp(m.log_transition(_truth(m), np.full((1, grid.size), x[2]), grid[None], 3, series))
    assert np.trapezoid(dens[0], grid) == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_block2_does_not_enter_transition(name):
    m = _model(name)
    rng = np.random.default_rng(2)
    series, x = m.simulate(_truth(m), 5, rng)
    theta = _truth(m)
    base = m.log_transition(theta, x[None, :-1], x[None, 1:], np.arange(1, 5), series)
    for j in m.block2:
        pert = theta.copy()
        pert[j] *= 1.3 if pert[j] != 0 else 1.0
        pert[j] += 0.01 if m.transforms[j] == "identity" else 0.0
        val = m.log_transition(pert, x[None, :-1], x[None, 1:], np.arange(1, 5), series)
        np.testing.assert_array_equal(val, base)


def test_block_partition(bm):
    for name in MODELS:
        m = _model(name)
        b1, b2 = m.blocks()
        assert sorted(list(b1) + list(b2)) == list(range(m.dim))
        assert not set(b1) & set(b2)


@pytest.mark.parametrize("name", sorted(MODELS))
@pytest.mark.parametrize("temper", [0.0, 0.37, 1.0])
def test_block_gradients_match_finite_differences(name, temper):
    m = _model(name)
    rng = np.random.default_rng(3)
    theta = _truth(m)
    series, x = m.simulate(theta, 8, rng)
    path = x[None]
    u0, _ = to_unconstrained(theta, m.transforms)

    def f(u):
        th, lj = from_unconstrained(u, m.transforms)
        return m.log_joint(th, path, series, temper)[0] + lj

    for block in (1, 2):
        idx = m.blocks()[block - 1]
        g = m.grad_block_log_target(theta, path, series, temper, block)[0]
        fd = np.empty(len(idx))
        for k, i in enumerate(idx):
            h = 1e-5 * max(1.0, abs(u0[i]))
            up, um = u0.copy(), u0.copy()
            up[i] += h
            um[i] -= h
            fd[k] = (f(up) - f(um)) / (2 * h)
        scale = np.maximum(1.0, np.abs(fd))
        assert np.all(np.abs(g - fd) / scale < 1e-5), (block, g, fd)


def test_temper_zero_removes_observation_term(bm, bm_series):
    theta = _truth(bm)
    path = bm_series.y[None] + 0.1
    g = bm.grad_block_log_target(theta, path, bm_series, 0.0, 2)[0]
    # block 2 is sigma alone: prior gradient -sigma/4 times dsigma/du plus log-Jacobian 1
    assert g[0] == pytest.approx(-1.0 / 4.0 + 1.0, abs=1e-12)


def test_gradient_rejects_nonfinite_target(bm, bm_series):
    theta = np.array([1.0, 1.2, 1.5, -1.0])
    with pytest.raises(InvalidParameterError):
        bm.grad_block_log_target(theta, bm_series.y[None], bm_series, 1.0, 2)


def test_transform_fixtures():
    u, lj = to_unconstrained(np.array([1.0, 0.5, 3.0]), ("log", "logit", "identity"))
    assert u[0] == 0.0 and u[1] == pytest.approx(0.0, abs=1e-15) and u[2] == 3.0
    # log-Jacobian of the log map at sigma = 1 is 0; logit at 1/2 is log(1/4)
    assert lj == pytest.approx(np.log(0.25))
    with pytest.raises(InvalidParameterError):
        to_unconstrained(np.array([1.0]), ("logit",))


def test_transform_roundtrip_and_jacobian():
    rng = np.random.default_rng(4)
    tags = ("identity", "log", "logit")
    u = rng.normal(size=(100, 3)) * 3
    th, lj = from_unconstrained(u, tags)
    back, _ = to_unconstrained(th, tags)
    np.testing.assert_allclose(back, u, atol=1e-12, rtol=1e-12)
    h = 1e-6
    num = np.zeros(100)
    for i in range(3):
        up, um = u.copy(), u.copy()
        up[:, i] += h
        um[:, i] -= h
        num += np.log((from_unconstrained(up, tags)[0][:, i] - from_unconstrained(um, tags)[0][:, i]) / (2 * h))
    np.testing.assert_allclose(lj, num, atol=1e-6)


def test_bm_noise_free_simulation(bm):
    theta = np.array([1.0, 1.2, 1e-9, 1e-9])
    series, _ = bm.simulate(theta, 10, np.random.default_rng(5))
    np.testing.assert_allclose(series.y, 1.0 + 1.2 * np.arange(1, 11), atol=1e-6)


def test_simulation_is_seeded():
    m = AR1(n_beta=2)
    a, xa = m.simulate(_truth(m), 30, np.random.default_rng(6))
    b, xb = m.simulate(_truth(m), 30, np.random.default_rng(6))
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.z, b.z)
    np.testing.assert_array_equal(xa, xb)
    assert a.z.shape == (30, 2)


def test_csv_roundtrip(tmp_path):
    m = AR1(n_beta=2)
    series, x = m.simulate(_truth(m), 12, np.random.default_rng(7))
    path = tmp_path / "d.csv"
    series.to_csv(path, latent=x)
    back = TimeSeries.from_csv(path)
    np.testing.assert_array_equal(back.y, series.y)
    np.testing.assert_array_equal(back.z, series.z)


def test_csv_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("y\n1.0\nabc\n")
    with pytest.raises(ValueError, match="malformed"):
        TimeSeries.from_csv(bad)
    nohdr = tmp_path / "nohdr.csv"
    nohdr.write_text("x\n1.0\n")
    with pytest.raises(ValueError, match="no 'y'"):
        TimeSeries.from_csv(nohdr)
