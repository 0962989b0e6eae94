"""Per-step array kernels shared by every particle filter in the package.

The index-search loops (inverse-CDF sampling and resampling) have a numba
implementation and a pure-numpy one. The numba path is used when numba
imports cleanly and ``SMC2SWITCH_DISABLE_NUMBA`` is unset (or ``0``); set
it to ``1`` before importing the package to force the numpy path.
Randomness never enters the kernels: callers pass pre-drawn uniforms, so
both paths return identical indices for identical inputs.

Elementwise work (``exp``, log-sum-exp, ESS) always runs in numpy, whose
vectorised ``exp`` is far faster than numba's scalar one.
"""

import os

import numpy as np

_flag = os.environ.get("SMC2SWITCH_DISABLE_NUMBA", "0").strip().lower()
DISABLED = _flag not in ("", "0", "false", "no")

try:
    if DISABLED:
        raise ImportError("numba disabled by SMC2SWITCH_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# --- numpy-only elementwise helpers -------------------------------------------


def normalize_rows(lw):
    """Row-wise log-sum-exp normalisation.

    Returns ``(logW, lse)`` where ``logW`` rows sum to one in probability
    space and ``lse`` is the log of each row's unnormalised total. Rows with
    no finite entry come back as all ``-inf`` with ``lse = -inf``.
    """
    lw = np.asarray(lw, dtype=np.float64)
    m = lw.max(axis=1)
    dead = ~np.isfinite(m)
    m_safe = np.where(dead, 0.0, m)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.exp(lw - m_safe[:, None]).sum(axis=1)
        lse = np.log(s) + m_safe
    lse[dead] = -np.inf
    logW = lw - np.where(dead, 0.0, lse)[:, None]
    logW[dead] = -np.inf
    return logW, lse


def ess_rows(logW):
    """``1 / sum(W^2)`` per row of normalised log-weights."""
    W = np.exp(logW)
    return 1.0 / np.sum(W * W, axis=1)


# --- numpy path ---------------------------------------------------------------


def _inverse_cdf_np(w, u):
    B, N = w.shape
    out = np.empty(u.shape, dtype=np.int64)
    for b in range(B):
        c = np.cumsum(w[b])
        idx = np.searchsorted(c, u[b] * c[-1], side="right")
        np.minimum(idx, N - 1, out=idx)
        out[b] = idx
    return out


# --- numba path ---------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True, error_model="numpy")
    def _inverse_cdf_nb(w, u):
        B, N = w.shape
        M = u.shape[1]
        out = np.empty((B, M), dtype=np.int64)
        c = np.empty(N)
        for b in range(B):
            s = 0.0
            for n in range(N):
                s += w[b, n]
                c[n] = s
            for m in range(M):
                x = u[b, m] * s
                lo, hi = 0, N
                while lo < hi:
                    mid = (lo + hi) >> 1
                    if c[mid] <= x:
                        lo = mid + 1
                    else:
                        hi = mid
                out[b, m] = lo if lo < N else N - 1
        return out

    @njit(cache=True, error_model="numpy")
    def _sorted_inverse_cdf_nb(w, us):
        # us rows are sorted, so one forward sweep over the CDF suffices
        B, N = w.shape
        M = us.shape[1]
        out = np.empty((B, M), dtype=np.int64)
        c = np.empty(N)
        for b in range(B):
            s = 0.0
            for n in range(N):
                s += w[b, n]
                c[n] = s
            j = 0
            for m in range(M):
                x = us[b, m] * s
                while j < N - 1 and c[j] <= x:
                    j += 1
                out[b, m] = j
        return out


# --- public dispatch ----------------------------------------------------------


def inverse_cdf_rows(w, u, backend=None):
    """Draw categorical indices per row from nonnegative weights ``w``.

    ``u`` holds uniforms of shape ``(B, M)``; the result has the same shape
    and ``out[b, m]`` is the draw driven by ``u[b, m]``.
    """
    w = np.ascontiguousarray(w, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    if _use_numba(backend):
        return _inverse_cdf_nb(w, u)
    return _inverse_cdf_np(w, u)


def sorted_inverse_cdf_rows(w, u, backend=None):
    """Like :func:`inverse_cdf_rows` but sorts each row of ``u`` first.

    The draws are still i.i.d. categorical; only their order changes, which
    lets the numba path replace binary searches by a single merge.
    """
    w = np.ascontiguousarray(w, dtype=np.float64)
    us = np.sort(np.asarray(u, dtype=np.float64), axis=1)
    if _use_numba(backend):
        return _sorted_inverse_cdf_nb(w, us)
    return _inverse_cdf_np(w, us)


def resample_rows(logW, u, threshold, pin_first=False, backend=None):
    """Multinomial resampling of the rows whose ESS falls below ``threshold``.

    Returns ``(ancestors, mask)``. Rows not resampled keep identity
    ancestry. With ``pin_first`` slot 0 always descends from slot 0 and
    the remaining slots are driven by ``u[:, 1:]``; this is how the
    conditional filter keeps its reference trajectory alive.
    """
    W = np.exp(np.asarray(logW, dtype=np.float64))
    B, N = W.shape
    with np.errstate(divide="ignore"):
        mask = 1.0 / np.sum(W * W, axis=1) < threshold
    anc = np.empty((B, N), dtype=np.int64)
    anc[:] = np.arange(N)
    if mask.any():
        rows = np.flatnonzero(mask)
        if pin_first:
            anc[rows, 1:] = sorted_inverse_cdf_rows(W[rows], u[rows, 1:], backend)
            anc[rows, 0] = 0
        else:
            anc[rows] = sorted_inverse_cdf_rows(W[rows], u[rows], backend)
    return anc, mask


def _use_numba(backend):
    if backend is None:
        return HAVE_NUMBA
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but unavailable")
        return True
    if backend == "numpy":
        return False
    raise ValueError(f"unknown backend {backend!r}")
