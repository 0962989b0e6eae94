"""Exact Kalman recursions for the Brownian-motion model (test oracle)."""

import numpy as np

from .models import BrownianMotion, RestrictedModel

LOG_2PI = np.log(2.0 * np.pi)


def _bm_theta(model, theta):
    base = model.base if isinstance(model, RestrictedModel) else model
    if not isinstance(base, BrownianMotion):
        raise TypeError(f"Kalman oracle only supports the BM model, got {model!r}")
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if isinstance(model, RestrictedModel):
        theta = model.expand(theta)
    return theta


def kalman_filter(model, theta, y):
    """Run the filter for each row of ``theta``.

    Returns ``(loglik, filt_mean, filt_var, pred_mean, pred_var)`` with the
    per-step arrays shaped ``(B, T)``.
    """
    theta = _bm_theta(model, theta)
    y = np.asarray(y, dtype=float)
    x0, beta, gamma, sigma = theta.T
    drift = beta - 0.5 * gamma**2
    B, T = theta.shape[0], y.shape[0]
    a = x0 + drift
    P = gamma**2
    ll = np.zeros(B)
    fm, fv, pm, pv = (np.empty((B, T)) for _ in range(4))
    for t in range(T):
        pm[:, t], pv[:, t] = a, P
        S = P + sigma**2
        r = y[t] - a
        ll += -0.5 * (LOG_2PI + np.log(S) + r * r / S)
        K = P / S
        a = a + K * r
        P = P * (1.0 - K)
        fm[:, t], fv[:, t] = a, P
        a = a + drift
        P = P + gamma**2
    return ll, fm, fv, pm, pv


def kalman_loglik(model, theta, y):
    """Exact ``log p(y_{1:T} | theta)``; scalar for a single ``theta``."""
    ll = kalman_filter(model, theta, y)[0]
    return ll[0] if np.ndim(theta) == 1 else ll


def kalman_smoother(model, theta, y):
    """Rauch-Tung-Striebel smoothed means and variances, each ``(B, T)``."""
    _, fm, fv, pm, pv = kalman_filter(model, theta, y)
    sm, sv = fm.copy(), fv.copy()
    for t in range(fm.shape[1] - 2, -1, -1):
        J = fv[:, t] / pv[:, t + 1]
        sm[:, t] = fm[:, t] + J * (sm[:, t + 1] - pm[:, t + 1])
        sv[:, t] = fv[:, t] + J * J * (sv[:, t + 1] - pv[:, t + 1])
    return sm, sv
