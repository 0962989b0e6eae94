"""Bootstrap and conditional particle filters with backward sampling.

All filters run a batch of ``B`` independent filters at once, one per row
of ``theta``. Resampling is multinomial and adaptive: a row is resampled
before propagation only when its ESS has dropped below ``N/2``. The
likelihood estimate accumulates ``log sum_n W_{t-1}^n g(y_t|x_t^n)^temper``
per step, which stays unbiased under adaptive resampling.
"""

from dataclasses import dataclass

import numpy as np

from . import _accel


class ParticleCollapseError(RuntimeError):
    """Every weight in a filter or backward pass is zero."""


@dataclass
class FilterOutput:
    """History of a batch of particle filters.

    ``x``, ``logW`` and ``ancestors`` have shape ``(B, d, N)`` when the
    history was kept and are ``None`` otherwise; ``ancestors[:, t, n]`` is
    the index at ``t - 1`` that particle ``n`` at ``t`` descends from.
    ``x_last``/``logW_last`` always hold the final cloud.
    """

    x: np.ndarray | None
    logW: np.ndarray | None
    ancestors: np.ndarray | None
    log_increments: np.ndarray
    loglik: np.ndarray
    x_last: np.ndarray | None
    logW_last: np.ndarray | None
    cost: int

    @property
    def weights(self):
        return None if self.logW is None else np.exp(self.logW)

    @property
    def steps(self):
        return self.log_increments.shape[1]


@dataclass
class Cloud:
    """Live filter state for a batch: last particles and their log-weights."""

    x: np.ndarray
    logW: np.ndarray
    loglik: np.ndarray

    @property
    def n(self):
        return self.x.shape[1]

    def take(self, idx):
        return Cloud(self.x[idx].copy(), self.logW[idx].copy(), self.loglik[idx].copy())

    def replace(self, mask, other):
        self.x[mask] = other.x[mask]
        self.logW[mask] = other.logW[mask]
        self.loglik[mask] = other.loglik[mask]


@dataclass
class InvariantPath:
    """A batch of retained trajectories with cached path log-densities.

    ``log_px`` caches ``log p(x|theta)`` and ``log_py`` caches the
    untempered ``log p(y|x, theta)``.
    """

    x: np.ndarray
    k: np.ndarray | None
    log_px: np.ndarray
    log_py: np.ndarray

    @property
    def length(self):
        return self.x.shape[1]

    def take(self, idx):
        k = None if self.k is None else self.k[idx].copy()
        return InvariantPath(self.x[idx].copy(), k, self.log_px[idx].copy(), self.log_py[idx].copy())

    def replace(self, mask, other):
        self.x[mask] = other.x[mask]
        if self.k is not None and other.k is not None:
            self.k[mask] = other.k[mask]
        self.log_px[mask] = other.log_px[mask]
        self.log_py[mask] = other.log_py[mask]

    def refresh_caches(self, model, theta, series):
        self.log_px, self.log_py = model.path_log_densities(theta, self.x, series)
        return self


# --- small single-vector helpers -------------------------------------------------


def ess(weights):
    """Effective sample size ``1 / sum(W^2)`` of a normalised weight vector."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or not np.any(w > 0):
        raise ValueError("all weights are zero: total particle collapse")
    w = w / w.sum()
    return 1.0 / np.sum(w * w)


def multinomial_resample(weights, count, rng, backend=None):
    """``count`` i.i.d. categorical draws (0-based indices) from ``weights``."""
    w = np.asarray(weights, dtype=float)[None, :]
    u = rng.random((1, count))
    return _accel.inverse_cdf_rows(w, u, backend)[0]


# --- filtering --------------------------------------------------------------------


def _temper_column(temper, B):
    return np.broadcast_to(np.asarray(temper, dtype=float), (B,))[:, None]


def _weight(model, theta, x, t, series, logW, temper_col, backend):
    lg = model.log_observation(theta, x, t, series)
    with np.errstate(invalid="ignore"):
        tl = np.where(temper_col == 0.0, 0.0, temper_col * lg)
    return _accel.normalize_rows(logW + tl)


def _step(model, theta, x, logW, t, series, rng, temper_col, ref_t, backend):
    """Advance a batch cloud to time ``t``; returns ``(x, logW, anc, inc)``."""
    B = theta.shape[0]
    if t == 0:
        n = logW.shape[1]
        x = model.sample_init(theta, n, rng, series)
        anc = np.broadcast_to(np.arange(n), (B, n))
        logW = np.full((B, n), -np.log(n))
    else:
        n = x.shape[1]
        u = rng.random((B, n))
        anc, mask = _accel.resample_rows(logW, u, n / 2.0, ref_t is not None, backend)
        if mask.any():
            logW = logW.copy()
            logW[mask] = -np.log(n)
            x = x[np.arange(B)[:, None], anc]
        x = model.sample_transition(theta, x, t, rng, series)
    if ref_t is not None:
        x[:, 0] = ref_t
    logW, inc = _weight(model, theta, x, t, series, logW, temper_col, backend)
    return x, logW, anc, inc


def run_filter(model, theta, series, n, rng, temper=1.0, reference=None, history=True,
               backend=None):
    """Shared driver for :func:`bootstrap_pf` and :func:`conditional_pf`."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if n < 2:
        raise ValueError(f"need at least 2 state particles, got {n}")
    B = theta.shape[0]
    d = series.T
    temper_col = _temper_column(temper, B)
    if reference is not None and reference.shape != (B, d):
        raise ValueError(f"reference shape {reference.shape} does not match {(B, d)}")
    inc = np.zeros((B, d))
    xs = np.empty((B, d, n)) if history else None
    lws = np.empty((B, d, n)) if history else None
    ancs = np.empty((B, d, n), dtype=np.int64) if history else None
    x = None
    logW = np.full((B, n), -np.log(n))
    loglik = np.zeros(B)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(d):
            ref_t = None if reference is None else reference[:, t]
            x, logW, anc, inc_t = _step(model, theta, x, logW, t, series, rng,
                                        temper_col, ref_t, backend)
            inc[:, t] = np.where(np.isnan(inc_t), -np.inf, inc_t)
            # accumulate in time order so a live cloud extended step by step agrees exactly
            loglik += inc[:, t]
            if history:
                xs[:, t], lws[:, t], ancs[:, t] = x, logW, anc
    loglik[np.isnan(loglik)] = -np.inf
    return FilterOutput(xs, lws, ancs, inc, loglik, x, logW if d else None, B * n * d)


def bootstrap_pf(model, theta, series, n, rng, temper=1.0, history=True, backend=None):
    """Bootstrap particle filter over all of ``series`` for each row of ``theta``.

    With ``temper = g`` the incremental weights are ``g(y_t|x_t)^g``, so the
    estimate targets ``int p(x) p(y|x)^g dx``. Rows whose weights all vanish
    return ``loglik = -inf``.
    """
    return run_filter(model, theta, series, n, rng, temper, None, history, backend)


def conditional_pf(model, theta, series, n, reference, rng, temper=1.0, backend=None):
    """Conditional particle filter with the reference pinned in slot 0.

    ``reference`` is an :class:`InvariantPath` or an array ``(B, d)``.
    The reference is never resampled away; the other ``n - 1`` slots are
    resampled and propagated exactly as in :func:`bootstrap_pf`.
    """
    ref = reference.x if isinstance(reference, InvariantPath) else np.asarray(reference)
    return run_filter(model, theta, series, n, rng, temper, ref, True, backend)


def backward_sample(out, model, theta, series, rng, backend=None):
    """Draw one trajectory per row by backward simulation.

    ``k_T`` follows the final filter weights and each earlier ``k_t``
    follows ``W_t^n f(x_{t+1}^{k} | x_t^n)`` renormalised. The transition
    density is untempered; tempering only enters through the forward weights.
    """
    if out.x is None:
        raise ValueError("backward sampling needs the full filter history")
    theta = np.atleast_2d(theta)
    B, d, n = out.x.shape
    path = np.empty((B, d))
    k = np.empty((B, d), dtype=np.int64)
    if d == 0:
        return InvariantPath(path, k, np.zeros(B), np.zeros(B))
    u = rng.random((B, d))
    rows = np.arange(B)
    final = out.logW[:, d - 1]
    if not np.all(np.isfinite(final).any(axis=1)):
        bad = np.flatnonzero(~np.isfinite(final).any(axis=1))
        raise ParticleCollapseError(f"final filter weights are all zero for rows {bad.tolist()}")
    k[:, d - 1] = _accel.inverse_cdf_rows(np.exp(final), u[:, d - 1 : d], backend)[:, 0]
    path[:, d - 1] = out.x[rows, d - 1, k[:, d - 1]]
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(d - 2, -1, -1):
            lf = model.log_transition(theta, out.x[:, t], path[:, t + 1 : t + 2], t + 1, series)
            logWb, lse = _accel.normalize_rows(out.logW[:, t] + lf)
            if not np.all(np.isfinite(lse)):
                bad = np.flatnonzero(~np.isfinite(lse))
                raise ParticleCollapseError(
                    f"backward weights all zero at t={t} for rows {bad.tolist()}"
                )
            k[:, t] = _accel.inverse_cdf_rows(np.exp(logWb), u[:, t : t + 1], backend)[:, 0]
            path[:, t] = out.x[rows, t, k[:, t]]
    lpx, lpy = model.path_log_densities(theta, path, series)
    return InvariantPath(path, k, lpx, lpy)


def extend_cloud_one_step(model, theta, cloud, series, t, rng, temper=1.0, backend=None,
                          n=None):
    """Advance a live cloud from ``y_{t-1}`` to ``y_t`` (0-based ``t``).

    ``cloud`` is ``None`` when ``t == 0``; then ``n`` particles are drawn
    from the initial law. Returns ``(new_cloud, log_increment)`` where the
    increment is the log of the weighted mean of ``g(y_t|x_t)``.
    """
    theta = np.atleast_2d(theta)
    B = theta.shape[0]
    if cloud is None:
        if t != 0:
            raise ValueError("a missing cloud can only be extended at t = 0")
        if n is None or n < 2:
            raise ValueError("need n >= 2 particles to start a cloud")
        x, logW, prev_ll = None, np.full((B, n), -np.log(n)), np.zeros(B)
    else:
        x, logW, prev_ll = cloud.x, cloud.logW, cloud.loglik
    with np.errstate(over="ignore", invalid="ignore"):
        x, logW, _, inc = _step(model, theta, x, logW, t, series, rng,
                                _temper_column(temper, B), None, backend)
    inc = np.where(np.isnan(inc), -np.inf, inc)
    return Cloud(x, logW, prev_ll + inc), inc


def tune_state_particles(model, theta, series, rng, target_variance=1.0, n_min=16,
                         n_max=4096, replicates=50, backend=None):
    """Smallest ``n`` on a doubling grid whose log-likelihood variance is small.

    Runs ``replicates`` independent filters at each candidate and returns the
    first candidate whose sample variance of the log-likelihood estimate is
    at most ``target_variance``. Returns ``n_max`` if no candidate qualifies.
    """
    theta = np.asarray(theta, dtype=float).reshape(1, -1)
    batch = np.repeat(theta, replicates, axis=0)
    n = int(n_min)
    any_finite = False
    while True:
        out = bootstrap_pf(model, batch, series, n, rng, history=False, backend=backend)
        ll = out.loglik
        if np.all(np.isfinite(ll)):
            any_finite = True
            if np.var(ll, ddof=1) <= target_variance:
                return n
        if n >= n_max:
            break
        n = min(2 * n, n_max)
    if not any_finite:
        raise ParticleCollapseError("non-finite likelihood estimates at every candidate")
    return n_max
