import os
import subprocess
import sys

import numpy as np
import pytest

from smc2switch import _accel

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba unavailable")


def _weights(rng, B, N):
    w = rng.random((B, N)) ** 3
    w[0] = 0.0
    w[0, N // 2] = 1.0
    return w


@needs_numba
@pytest.mark.parametrize("shape", [(1, 2), (7, 5), (40, 64)])
def test_inverse_cdf_backends_agree(shape):
    rng = np.random.default_rng(0)
    w = _weights(rng, *shape)
    u = rng.random((shape[0], 33))
    np.testing.assert_array_equal(_accel.inverse_cdf_rows(w, u, "numba"),
                                  _accel.inverse_cdf_rows(w, u, "numpy"))
    np.testing.assert_array_equal(_accel.sorted_inverse_cdf_rows(w, u, "numba"),
                                  _accel.sorted_inverse_cdf_rows(w, u, "numpy"))


@needs_numba
@pytest.mark.parametrize("pin", [False, True])
def test_resample_backends_agree(pin):
    rng = np.random.default_rng(1)
    with np.errstate(divide="ignore"):
        logW, _ = _accel.normalize_rows(np.log(_weights(rng, 30, 16)))
    u = rng.random((30, 16))
    a, ma = _accel.resample_rows(logW, u, 8.0, pin, "numba")
    b, mb = _accel.resample_rows(logW, u, 8.0, pin, "numpy")
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(ma, mb)


def test_resample_only_low_ess_rows_and_pins_slot_zero():
    logW = np.log(np.array([[0.25, 0.25, 0.25, 0.25], [0.97, 0.01, 0.01, 0.01]]))
    u = np.random.default_rng(2).random((2, 4))
    anc, mask = _accel.resample_rows(logW, u, 2.0, pin_first=True)
    assert mask.tolist() == [False, True]
    assert anc[0].tolist() == [0, 1, 2, 3]
    assert anc[1, 0] == 0


def test_inverse_cdf_boundaries():
    w = np.array([[0.0, 1.0, 0.0]])
    u = np.array([[0.0, 0.5, 1.0 - 1e-16]])
    assert _accel.inverse_cdf_rows(w, u, "numpy").tolist() == [[1, 1, 1]]


def test_normalize_rows_dead_row():
    lw = np.array([[0.0, np.log(3.0)], [-np.inf, -np.inf]])
    logW, lse = _accel.normalize_rows(lw)
    np.testing.assert_allclose(np.exp(logW[0]), [0.25, 0.75])
    assert lse[0] == pytest.approx(np.log(4.0))
    assert lse[1] == -np.inf and np.all(logW[1] == -np.inf)
    assert _accel.ess_rows(logW[:1])[0] == pytest.approx(1.0 / (0.25**2 + 0.75**2))


def test_unknown_backend():
    with pytest.raises(ValueError):
        _accel.inverse_cdf_rows(np.ones((1, 2)), np.zeros((1, 1)), "cuda")


def test_env_flag_selects_numpy_path():
    code = "import smc2switch._accel as a; print(a.BACKEND, a.HAVE_NUMBA)"
    env = dict(os.environ, SMC2SWITCH_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    assert out.stdout.split() == ["numpy", "False"]
