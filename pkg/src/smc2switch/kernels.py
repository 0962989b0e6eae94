"""PMMH and particle Gibbs mutation kernels with stepsize adaptation.

Both kernels act on a whole :class:`~smc2switch.population.Population` at
once and update it in place. Proposals live in the unconstrained
parameterisation, so every acceptance ratio carries the log-Jacobian of the
transform.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .filters import backward_sample, bootstrap_pf, conditional_pf
from .population import KINDS, PG, PMMH

PMMH_TARGET_AR = 0.07
PG_TARGET_AR = 0.574
K_MALA = 5


@dataclass
class MutationStats:
    """Proposal and acceptance counts, pooled over particles and repeats."""

    proposals: int = 0
    accepted: int = 0

    def __post_init__(self):
        if self.accepted > self.proposals:
            raise ValueError("more acceptances than proposals")

    def __add__(self, other):
        return MutationStats(self.proposals + other.proposals, self.accepted + other.accepted)

    @property
    def rate(self):
        return self.accepted / self.proposals if self.proposals else float("nan")


@dataclass
class KernelConfig:
    """Tuning state of one kernel kind."""

    kind: str
    nx: int
    eps2_pmmh: float = 1.0
    eps2_blocks: tuple = (0.1, 0.1)
    k_mala: int = K_MALA

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.nx < 2:
            raise ValueError(f"nx must be at least 2, got {self.nx}")
        if not 0.0 <= self.eps2_pmmh <= 1.0:
            raise ValueError(f"eps2_pmmh must lie in [0, 1], got {self.eps2_pmmh}")
        if any(e < 0 for e in self.eps2_blocks):
            raise ValueError("MALA stepsizes must be nonnegative")
        if self.k_mala < 0:
            raise ValueError("k_mala must be nonnegative")

    @property
    def target_ar(self):
        return PMMH_TARGET_AR if self.kind == PMMH else PG_TARGET_AR


def adapt_stepsize(eps2, ar, target, cap=None):
    """``eps2 * exp(2 (ar / target - 1))``, optionally capped."""
    if target <= 0:
        raise ValueError("target acceptance rate must be positive")
    if not np.isfinite(ar):
        return eps2
    out = eps2 * np.exp(2.0 * (ar / target - 1.0))
    return min(out, cap) if cap is not None else out


def regularize(sigma):
    """``sigma + 1e-8 * trace(sigma) / dim * I``."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    p = sigma.shape[0]
    tr = np.trace(sigma)
    jitter = 1e-8 * tr / p if tr > 0 else 1e-12
    return sigma + jitter * np.eye(p)


def scaled(power, ll):
    """``power * ll`` with the convention ``0 * -inf = 0``."""
    with np.errstate(invalid="ignore"):
        return np.where(np.asarray(power) == 0.0, 0.0, power * ll)


def valid_rows(model, theta):
    """Rows that sit strictly inside the support with a finite prior."""
    u, _ = model.unconstrain(theta)
    return np.isfinite(u).all(axis=1) & np.isfinite(model.log_prior(theta))


# --- PMMH ---------------------------------------------------------------------


def pmmh_step(model, pop, target, sigma, eps2, rng, cost=None, backend=None,
              sample_states=False):
    """One random-walk PMMH update of every particle; returns the accept mask.

    The proposal is ``N(u, eps2 * sigma)`` in unconstrained space. Under data
    annealing the filter runs over the first ``d`` observations and, when
    the population carries a live cloud, accepted particles take over the
    new one. Under density tempering the
    filter is tempered at ``g`` unless the population holds untempered
    estimates (``pop.pmmh_power``), in which case the target uses
    ``g * loglik``.

    With ``sample_states`` the filter keeps its history and every accepted
    particle also takes a backward-sampled trajectory into ``pop.states``,
    giving draws of the latent states alongside the parameters.
    """
    if pop.kind != PMMH:
        raise ValueError(f"pmmh_step needs a PMMH population, got {pop.kind}")
    B, p = pop.theta.shape
    series = target.data
    u, lj = model.unconstrain(pop.theta)
    chol = np.sqrt(eps2) * np.linalg.cholesky(regularize(sigma))
    u_new = u + rng.standard_normal((B, p)) @ chol.T
    log_u = np.log(rng.random(B))
    th_new, lj_new = model.from_unconstrained(u_new)
    ok = valid_rows(model, th_new)
    lp_new = np.where(ok, model.log_prior(th_new), -np.inf)

    temper = 1.0 if (target.mode == "DA" or pop.pmmh_power) else target.g
    power = target.g if pop.pmmh_power else 1.0
    ll_new = np.full(B, -np.inf)
    out = None
    rows = np.flatnonzero(ok)
    if target.steps == 0:
        ll_new[rows] = 0.0
    elif rows.size:
        keep_cloud = target.mode == "DA" and pop.cloud is not None
        out = bootstrap_pf(model, th_new[rows], series, pop.nx, rng, temper,
                           history=sample_states, backend=backend)
        ll_new[rows] = out.loglik
        if cost is not None:
            cost.add(out.cost)

    cur = model.log_prior(pop.theta) + lj + scaled(power, pop.loglik)
    new = lp_new + lj_new + scaled(power, ll_new)
    with np.errstate(invalid="ignore"):
        log_alpha = new - cur
    accept = ok & (log_u < log_alpha)

    pop.theta[accept] = th_new[accept]
    pop.loglik[accept] = ll_new[accept]
    if out is None:
        return accept
    pos = np.full(B, -1)
    pos[rows] = np.arange(rows.size)
    sel = np.flatnonzero(accept)
    if sample_states and sel.size:
        if pop.states is None:
            pop.states = np.full((B, target.steps), np.nan)
        path = backward_sample(out, model, th_new[rows], series, rng, backend=backend)
        pop.states[sel] = path.x[pos[sel]]
    if keep_cloud:
        pop.cloud.x[sel] = out.x_last[pos[sel]]
        pop.cloud.logW[sel] = out.logW_last[pos[sel]]
        pop.cloud.loglik[sel] = ll_new[sel]
    return accept


# --- particle Gibbs -----------------------------------------------------------


def refresh_path(model, pop, target, rng, cost=None, backend=None):
    """Conditional filter on the current path followed by backward sampling."""
    if target.steps == 0:
        return
    out = conditional_pf(model, pop.theta, target.data, pop.nx, pop.path, rng,
                         target.temper, backend=backend)
    if cost is not None:
        cost.add(out.cost)
    pop.path = backward_sample(out, model, pop.theta, target.data, rng, backend=backend)


def mala_block(model, pop, target, sigma, eps2, block, rng, cache=None):
    """One preconditioned MALA update of ``block`` (1 or 2) for every particle.

    The proposal is ``N(u_b + eps2/2 * S grad_b, eps2 * S)`` where ``S`` is
    the block of ``sigma``. A zero stepsize proposes the current point,
    which is accepted.

    ``cache`` is an optional dict holding the log target (``"cur"``) and the
    full unconstrained gradient (``"grad"``) at the current points; it is
    filled when empty and kept current, so consecutive updates on the same
    path skip recomputing them.
    """
    idx = model.blocks()[block - 1]
    B = pop.size
    if idx.size == 0:
        return MutationStats()
    if eps2 == 0:
        return MutationStats(B, B)
    series, g, path = target.data, target.temper, pop.path
    S = regularize(np.asarray(sigma)[np.ix_(idx, idx)])
    L = np.linalg.cholesky(S)
    z = rng.standard_normal((B, idx.size))
    log_u = np.log(rng.random(B))

    u, lj = model.unconstrain(pop.theta)
    if cache is None:
        cache = {}
    if "cur" not in cache:
        cache["cur"] = model.log_prior(pop.theta) + lj + path.log_px + scaled(g, path.log_py)
        with np.errstate(all="ignore"):
            cache["grad"] = model.grad_log_target_u(pop.theta, path.x, series, g)
    cur = cache["cur"]
    grad = cache["grad"][:, idx]
    ok = np.isfinite(grad).all(axis=1) & np.isfinite(cur)
    grad = np.where(ok[:, None], grad, 0.0)
    mean_f = u[:, idx] + 0.5 * eps2 * grad @ S
    ub_new = mean_f + np.sqrt(eps2) * z @ L.T
    u_new = u.copy()
    u_new[:, idx] = ub_new
    th_new, lj_new = model.from_unconstrained(u_new)
    ok &= valid_rows(model, th_new)

    rows = np.flatnonzero(ok)
    new = np.full(B, -np.inf)
    lpx_new = np.full(B, -np.inf)
    lpy_new = np.full(B, -np.inf)
    log_q = np.zeros(B)
    grad_full = np.full((B, u.shape[1]), np.nan)
    if rows.size:
        th_r, x_r = th_new[rows], path.x[rows]
        lpx_r, lpy_r = model.path_log_densities(th_r, x_r, series)
        lpx_new[rows], lpy_new[rows] = lpx_r, lpy_r
        new[rows] = model.log_prior(th_r) + lj_new[rows] + lpx_r + scaled(g, lpy_r)
        with np.errstate(all="ignore"):
            grad_full[rows] = model.grad_log_target_u(th_r, x_r, series, g)
        grad_new = grad_full[rows][:, idx]
        good = np.isfinite(grad_new).all(axis=1) & np.isfinite(new[rows])
        grad_new = np.where(good[:, None], grad_new, 0.0)
        mean_r = ub_new[rows] + 0.5 * eps2 * grad_new @ S
        w_r = solve_triangular(L, (u[rows][:, idx] - mean_r).T, lower=True).T
        with np.errstate(over="ignore"):
            log_q[rows] = -0.5 * (np.sum(w_r**2, axis=1) / eps2 - np.sum(z[rows] ** 2, axis=1))
        ok[rows] &= good
    with np.errstate(invalid="ignore"):
        log_alpha = new - cur + log_q
    accept = ok & (log_u < log_alpha)

    pop.theta[accept] = th_new[accept]
    path.log_px[accept] = lpx_new[accept]
    path.log_py[accept] = lpy_new[accept]
    cache["cur"] = np.where(accept, new, cur)
    cache["grad"] = np.where(accept[:, None], grad_full, cache["grad"])
    return MutationStats(B, int(accept.sum()))


def pg_step(model, pop, target, sigma, eps2_blocks, rng, k_mala=K_MALA, cost=None,
            backend=None):
    """Refresh every path, then ``k_mala`` sweeps of block-1 and block-2 MALA.

    Returns the per-block :class:`MutationStats`.
    """
    if pop.kind != PG:
        raise ValueError(f"pg_step needs a PG population, got {pop.kind}")
    refresh_path(model, pop, target, rng, cost, backend)
    stats = [MutationStats(), MutationStats()]
    cache = {}
    for _ in range(k_mala):
        for b in (1, 2):
            stats[b - 1] = stats[b - 1] + mala_block(model, pop, target, sigma,
                                                     eps2_blocks[b - 1], b, rng, cache)
    return tuple(stats)
