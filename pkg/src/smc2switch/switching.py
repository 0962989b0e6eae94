"""Moves between the PMMH and PG representations of a population.

A switch replaces the kernel-specific auxiliary variables (likelihood
estimate and cloud, or invariant path) by a draw from the destination
kernel's conditional law given ``theta``. With the backward kernel chosen
as the reverse of that draw every incremental weight is exactly one, so
the log-weights are passed through untouched.
"""

import numpy as np

from .filters import (
    Cloud,
    InvariantPath,
    ParticleCollapseError,
    backward_sample,
    bootstrap_pf,
    conditional_pf,
)
from .population import KINDS, PG, PMMH, Population

MAX_ATTEMPTS = 3


def _empty_path(B):
    return InvariantPath(np.empty((B, 0)), np.empty((B, 0), dtype=np.int64),
                         np.zeros(B), np.zeros(B))


def _retry_rows(run, B):
    """Call ``run(rows)`` until every row succeeds or attempts run out.

    ``run`` returns ``(result_rows, failed_mask)``; results for rows that
    succeeded are kept. Returns the list of per-attempt results and the
    number of retried rows.
    """
    rows = np.arange(B)
    parts, retried = [], 0
    for _ in range(MAX_ATTEMPTS):
        res, failed = run(rows)
        parts.append((rows[~failed], res, ~failed))
        if not failed.any():
            return parts, retried
        retried += int(failed.sum())
        rows = rows[failed]
    raise ParticleCollapseError(
        f"filter collapsed for {rows.size} parameter particle(s) after {MAX_ATTEMPTS} attempts"
    )


def _to_pmmh(model, pop, nx, target, rng, cost, backend):
    B = pop.size
    power = target.power_pmmh
    temper = 1.0 if (target.mode == "DA" or power) else target.g
    loglik = np.zeros(B)
    cloud = None
    if target.steps == 0:
        return Population(pop.theta.copy(), pop.logw, PMMH, nx, loglik=loglik,
                          pmmh_power=power, failures=pop.failures)
    keep_cloud = target.mode == "DA"
    if keep_cloud:
        cloud = Cloud(np.empty((B, nx)), np.empty((B, nx)), loglik)

    def run(rows):
        out = bootstrap_pf(model, pop.theta[rows], target.data, nx, rng, temper,
                           history=False, backend=backend)
        if cost is not None:
            cost.add(out.cost)
        return out, ~np.isfinite(out.loglik)

    parts, retried = _retry_rows(run, B)
    for rows, out, good in parts:
        loglik[rows] = out.loglik[good]
        if keep_cloud:
            cloud.x[rows] = out.x_last[good]
            cloud.logW[rows] = out.logW_last[good]
    return Population(pop.theta.copy(), pop.logw, PMMH, nx, loglik=loglik, cloud=cloud,
                      pmmh_power=power, failures=pop.failures + retried)


def _to_pg(model, pop, nx, target, rng, cost, backend):
    B = pop.size
    if target.steps == 0:
        return Population(pop.theta.copy(), pop.logw, PG, nx, path=_empty_path(B),
                          failures=pop.failures)
    d = target.steps
    path = InvariantPath(np.empty((B, d)), np.empty((B, d), dtype=np.int64),
                         np.empty(B), np.empty(B))
    conditional = pop.kind == PG

    def run(rows):
        theta = pop.theta[rows]
        if conditional:
            out = conditional_pf(model, theta, target.data, nx, pop.path.x[rows], rng,
                                 target.temper, backend=backend)
        else:
            out = bootstrap_pf(model, theta, target.data, nx, rng, target.temper,
                               history=True, backend=backend)
        if cost is not None:
            cost.add(out.cost)
        failed = ~np.isfinite(out.logW[:, -1]).any(axis=1)
        good = ~failed
        sub = None
        if good.any():
            keep = np.flatnonzero(good)
            out.x, out.logW = out.x[keep], out.logW[keep]
            sub = backward_sample(out, model, theta[keep], target.data, rng, backend=backend)
        return sub, failed

    parts, retried = _retry_rows(run, B)
    for rows, sub, _ in parts:
        if rows.size:
            path.x[rows], path.k[rows] = sub.x, sub.k
            path.log_px[rows], path.log_py[rows] = sub.log_px, sub.log_py
    return Population(pop.theta.copy(), pop.logw, PG, nx, path=path,
                      failures=pop.failures + retried)


def switch(model, pop, to_kind, to_nx, target, rng, cost=None, backend=None):
    """Move ``pop`` to the ``to_kind`` representation with ``to_nx`` state particles.

    Covers all four source/destination pairs. PG destinations run a
    bootstrap filter (from PMMH) or a conditional filter on the current
    path (from PG), then backward-sample; PMMH destinations run a fresh
    bootstrap filter and keep its estimate and, under data annealing, its
    final cloud. The returned population shares ``logw`` with the input.
    """
    if to_kind not in KINDS:
        raise ValueError(f"unknown kernel kind {to_kind!r}")
    if to_nx < 2:
        raise ValueError(f"need at least 2 state particles, got {to_nx}")
    if to_kind == PMMH:
        new = _to_pmmh(model, pop, to_nx, target, rng, cost, backend)
    else:
        new = _to_pg(model, pop, to_nx, target, rng, cost, backend)
    assert new.logw is pop.logw
    return new


def switch_da(model, pop, to_kind, to_nx, target, rng, cost=None, backend=None):
    """Data-annealing switch at ``target.d`` observations."""
    if target.mode != "DA":
        raise ValueError("switch_da needs a data-annealing target")
    return switch(model, pop, to_kind, to_nx, target, rng, cost, backend)


def switch_dt(model, pop, to_kind, to_nx, target, rng, cost=None, backend=None):
    """Density-tempering switch with every filter tempered at ``target.g``."""
    if target.mode != "DT":
        raise ValueError("switch_dt needs a density-tempering target")
    return switch(model, pop, to_kind, to_nx, target, rng, cost, backend)


def two_stage_pmmh_to_pg(model, pop, target, nx_pmmh, nx_pg, rng, cost=None, backend=None):
    """PMMH to PG at ``nx_pmmh`` state particles, then PG to PG down to ``nx_pg``.

    Starting the path from the larger filter keeps more distinct early
    states than a direct switch at ``nx_pg``.
    """
    if pop.kind != PMMH:
        raise ValueError("two-stage switch starts from a PMMH population")
    if nx_pg > nx_pmmh:
        raise ValueError(f"nx_pg ({nx_pg}) must not exceed nx_pmmh ({nx_pmmh})")
    mid = switch(model, pop, PG, nx_pmmh, target, rng, cost, backend)
    return switch(model, mid, PG, nx_pg, target, rng, cost, backend)


def switch_to(model, pop, to_kind, target, rng, cost=None, backend=None, two_stage=True):
    """Switch to ``to_kind`` at the particle count ``target`` assigns it.

    PMMH to PG goes through the two-stage move whenever the PG count is
    smaller and ``two_stage`` is set.
    """
    nx = target.nx(to_kind)
    if pop.kind == PMMH and to_kind == PG and two_stage and nx < pop.nx:
        return two_stage_pmmh_to_pg(model, pop, target, pop.nx, nx, rng, cost, backend)
    return switch(model, pop, to_kind, nx, target, rng, cost, backend)
