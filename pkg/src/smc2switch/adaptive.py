"""Kernel scoring by squared jumping distance and the adaptive move step."""

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import (
    K_MALA,
    PG_TARGET_AR,
    PMMH_TARGET_AR,
    MutationStats,
    adapt_stepsize,
    pg_step,
    pmmh_step,
)
from .population import PMMH
from .switching import switch_to

POLICIES = ("never", "always", "lag")
K_TEST = 5
R_MAX = 1000
LAG_CAP = 50
LAG_HORIZON = 5


def psjd(u_before, u_after, inv_sqrt):
    """Mean over particles of the elementwise squared whitened displacement."""
    v = (np.asarray(u_before) - np.asarray(u_after)) @ np.atleast_2d(inv_sqrt)
    return np.mean(v * v, axis=0)


def kernel_score(p, nx):
    """``min(pSJD) / N_x``."""
    if nx <= 0:
        raise ValueError("N_x must be positive")
    return float(np.min(p)) / nx


def sjd_target(u, weights, mu, sigma_inv):
    """Four times the weighted squared Mahalanobis distance to the mean."""
    r = np.asarray(u) - np.asarray(mu)
    maha = np.einsum("ij,jk,ik->i", r, np.atleast_2d(sigma_inv), r)
    return 4.0 * float(np.sum(np.asarray(weights) * maha))


def remaining_repeats(target, p_def, p_alt, m_best, K=K_TEST, r_max=R_MAX):
    """Repeats still needed to reach ``target`` after both kernel tests.

    ``ceil((target - min(p_def + p_alt)) / (m_best / K))`` floored at 0 and
    capped at ``r_max``; no measured movement (``m_best = 0``) gives ``r_max``.
    """
    gap = target - float(np.min(np.asarray(p_def) + np.asarray(p_alt)))
    if gap <= 0:
        return 0
    if m_best <= 0:
        return r_max
    return int(min(r_max, math.ceil(gap / (m_best / K))))


def lag_countdown(score_def, score_alt, cap=LAG_CAP):
    """Iterations until the alternate is tested again: ``max(1, ceil(def/alt))``."""
    if score_alt <= 0:
        return cap
    return int(min(cap, max(1, math.ceil(score_def / score_alt))))


@dataclass
class LagState:
    """Countdown to the next alternate-kernel test under the lag policy."""

    countdown: int = 0
    iteration: int = 0
    horizon: int = LAG_HORIZON
    cap: int = LAG_CAP

    def due(self):
        """Advance one mutation step and report whether the alternate is tested."""
        self.countdown = max(0, self.countdown - 1)
        due = self.iteration < self.horizon or self.countdown == 0
        self.iteration += 1
        return due

    def record(self, score_def, score_alt):
        self.countdown = lag_countdown(score_def, score_alt, self.cap)


@dataclass
class MoveContext:
    """Everything a kernel application needs besides the population."""

    sigma: np.ndarray
    inv_sqrt: np.ndarray
    sjd_target: float
    eps2_pmmh: float = 1.0
    eps2_blocks: list = field(default_factory=lambda: [0.1, 0.1])
    k_mala: int = K_MALA
    K: int = K_TEST
    r_max: int = R_MAX
    two_stage: bool = True
    pmmh_stats: MutationStats = field(default_factory=MutationStats)
    pg_stats: list = field(default_factory=lambda: [MutationStats(), MutationStats()])

    def adapt(self):
        """Update stepsizes from the pooled acceptance rates, then reset counts."""
        if self.pmmh_stats.proposals:
            self.eps2_pmmh = adapt_stepsize(self.eps2_pmmh, self.pmmh_stats.rate,
                                            PMMH_TARGET_AR, cap=1.0)
        for b in range(2):
            if self.pg_stats[b].proposals:
                self.eps2_blocks[b] = adapt_stepsize(self.eps2_blocks[b],
                                                     self.pg_stats[b].rate, PG_TARGET_AR)
        self.pmmh_stats = MutationStats()
        self.pg_stats = [MutationStats(), MutationStats()]


def apply_kernel(model, pop, target, ctx, rng, cost=None, backend=None):
    """One application of the population's current kernel."""
    if pop.kind == PMMH:
        acc = pmmh_step(model, pop, target, ctx.sigma, ctx.eps2_pmmh, rng, cost, backend)
        ctx.pmmh_stats = ctx.pmmh_stats + MutationStats(acc.size, int(acc.sum()))
    else:
        s1, s2 = pg_step(model, pop, target, ctx.sigma, ctx.eps2_blocks, rng, ctx.k_mala,
                         cost, backend)
        ctx.pg_stats = [ctx.pg_stats[0] + s1, ctx.pg_stats[1] + s2]


def test_kernel(model, pop, target, ctx, K, rng, cost=None, backend=None):
    """Apply the current kernel ``K`` times; returns the pSJD vector."""
    u0, _ = model.unconstrain(pop.theta)
    for _ in range(K):
        apply_kernel(model, pop, target, ctx, rng, cost, backend)
    u1, _ = model.unconstrain(pop.theta)
    return psjd(u0, u1, ctx.inv_sqrt)


@dataclass
class MoveRecord:
    """What one adaptive move did (one diagnostics row)."""

    tested_alt: bool
    chosen: str
    score_def: float
    score_alt: float
    r_rem: int
    applications: int


def adaptive_move(model, pop, target, ctx, policy, lag, rng, cost=None, backend=None):
    """Test the default kernel, maybe test the alternate, finish with the best.

    Returns ``(population, MoveRecord)``. The returned population is always
    in the default kernel's representation.
    """
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}, got {policy!r}")
    default, alt = target.default, target.alternate
    if pop.kind != default:
        raise ValueError("population must enter the move in the default representation")
    K = ctx.K
    p_def = test_kernel(model, pop, target, ctx, K, rng, cost, backend)
    s_def = kernel_score(p_def, target.nx(default))
    if policy == "always":
        tested = True
    elif policy == "lag":
        tested = lag.due()
    else:
        tested = False

    if not tested:
        r_rem = remaining_repeats(ctx.sjd_target, p_def, p_def, float(np.min(p_def)), K,
                                  ctx.r_max)
        for _ in range(r_rem):
            apply_kernel(model, pop, target, ctx, rng, cost, backend)
        return pop, MoveRecord(False, default, s_def, float("nan"), r_rem, K + r_rem)

    pop = switch_to(model, pop, alt, target, rng, cost, backend, ctx.two_stage)
    p_alt = test_kernel(model, pop, target, ctx, K, rng, cost, backend)
    s_alt = kernel_score(p_alt, target.nx(alt))
    if policy == "lag":
        lag.record(s_def, s_alt)
    best, p_best = (default, p_def) if s_def >= s_alt else (alt, p_alt)
    r_rem = remaining_repeats(ctx.sjd_target, p_def, p_alt, float(np.min(p_best)), K,
                              ctx.r_max)
    if best == default:
        pop = switch_to(model, pop, default, target, rng, cost, backend, ctx.two_stage)
        for _ in range(r_rem):
            apply_kernel(model, pop, target, ctx, rng, cost, backend)
    else:
        for _ in range(r_rem):
            apply_kernel(model, pop, target, ctx, rng, cost, backend)
        pop = switch_to(model, pop, default, target, rng, cost, backend, ctx.two_stage)
    return pop, MoveRecord(True, best, s_def, s_alt, r_rem, 2 * K + r_rem)
