"""Gold references, efficiency scores and replicate sweeps."""

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .engine import EngineConfig, RunAbort, RunMetrics, run
from .filters import ParticleCollapseError, bootstrap_pf
from .kernels import pmmh_step
from .population import PMMH, Population, TargetSpec

TABLE_COLUMNS = ("Method", "Test K_alt", "K_def", "r", "# targets", "R mean",
                 "RelEff_MSE", "RelEff_PFC", "RelEff")
BURN_IN = 0.2


# --- gold references ---------------------------------------------------------------


@dataclass
class GoldReference:
    """Posterior means from a long PMMH run, with Monte Carlo standard errors."""

    param_names: tuple
    means: list
    sds: list
    mcse: list
    chain_length: int
    chains: int
    nx: int
    seed: int | None = None
    acceptance: float = float("nan")

    @property
    def mean_array(self):
        return np.asarray(self.means, dtype=float)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        data["param_names"] = tuple(data["param_names"])
        return cls(**data)


def batch_means_se(samples, batches=20):
    """Per-column Monte Carlo standard error of the mean by batch means.

    ``samples`` has shape ``(chains, iterations, p)``. About ``batches``
    batches are formed in total, split evenly over the chains, so that each
    batch stays long when there are many short chains; sticky pseudo-marginal
    chains make short batches badly underestimate the error.
    """
    samples = np.asarray(samples, dtype=float)
    C, n, p = samples.shape
    b = max(1, min(math.ceil(batches / C), n // 10))
    size = n // b
    trimmed = samples[:, : b * size].reshape(C, b, size, p).mean(axis=2).reshape(C * b, p)
    if trimmed.shape[0] < 2:
        return np.full(p, np.nan)
    return trimmed.std(axis=0, ddof=1) / math.sqrt(trimmed.shape[0])


def pmmh_chains(model, series, theta0, iterations, nx, proposal_cov, rng, backend=None):
    """Run ``len(theta0)`` independent PMMH chains; returns ``(samples, acceptance)``.

    ``samples`` has shape ``(chains, iterations, p)`` on the natural scale.
    The proposal is a Gaussian random walk in unconstrained coordinates.
    """
    theta0 = np.atleast_2d(np.asarray(theta0, dtype=float))
    C, p = theta0.shape
    target = TargetSpec("DA", series, PMMH, nx, nx, d=series.T)
    out = bootstrap_pf(model, theta0, series, nx, rng, history=False, backend=backend)
    pop = Population(theta0.copy(), np.zeros(C), PMMH, nx, loglik=out.loglik.copy())
    samples = np.empty((C, iterations, p))
    accepted = 0
    for i in range(iterations):
        acc = pmmh_step(model, pop, target, proposal_cov, 1.0, rng, backend=backend)
        accepted += int(acc.sum())
        samples[:, i] = pop.theta
    return samples, accepted / (C * iterations)


def run_gold(model, series, chain_length, nx, rng, chains=10, pilot=None, seed=None,
             backend=None):
    """PMMH gold run with ``chain_length`` total iterations spread over ``chains``.

    The random-walk covariance is ``2.38^2 / p`` times the covariance of a
    pilot SMC^2 posterior (run here unless ``pilot`` gives one as a
    :class:`~smc2switch.engine.RunResult`), and chains start from pilot
    draws. The first 20% of every chain is discarded.
    """
    per_chain = chain_length // chains
    burn = int(BURN_IN * per_chain)
    if per_chain - burn < 1 or chain_length < 1000 + int(BURN_IN * chain_length):
        raise ValueError("chain length must leave at least 1000 iterations after burn-in")
    if pilot is None:
        cfg = EngineConfig(mode="DA", default_kernel=PMMH, n_theta=200, nx_pmmh=nx)
        pilot = run(model, series, cfg, rng, backend)
    u, _ = model.unconstrain(pilot.theta)
    W = pilot.weights
    mu = W @ u
    cov = ((u - mu) * W[:, None]).T @ (u - mu)
    p = u.shape[1]
    prop = cov * (2.38**2 / p)
    start = pilot.theta[rng.choice(len(W), size=chains, p=W)]
    samples, acc = pmmh_chains(model, series, start, per_chain, nx, prop, rng, backend)
    if acc == 0:
        raise RunAbort("gold chain never accepted a proposal")
    kept = samples[:, burn:]
    flat = kept.reshape(-1, p)
    return GoldReference(
        param_names=tuple(model.param_names),
        means=flat.mean(axis=0).tolist(),
        sds=flat.std(axis=0, ddof=1).tolist(),
        mcse=batch_means_se(kept).tolist(),
        chain_length=per_chain * chains,
        chains=chains,
        nx=nx,
        seed=seed,
        acceptance=acc,
    )


# --- scoring -------------------------------------------------------------------------


def mse(posterior_mean, gold):
    """Mean over parameters of squared error against the gold means (natural scale)."""
    ref = gold.mean_array if isinstance(gold, GoldReference) else np.asarray(gold, dtype=float)
    diff = np.asarray(posterior_mean, dtype=float) - ref
    return float(np.mean(diff * diff))


def score_runs(runs, base):
    """``(RelEff_MSE, RelEff_PFC, RelEff)`` of ``runs`` relative to ``base``.

    Each argument is a nonempty list of :class:`RunMetrics` with ``mse``
    set. ``Eff = mean(PFC * MSE)`` and ``RelEff = Eff_base / Eff_method``;
    the MSE and PFC variants use the means of those columns alone.
    """
    if not runs or not base:
        raise ValueError("score_runs needs nonempty run lists")

    def effs(ms):
        m = np.array([r.mse for r in ms], dtype=float)
        c = np.array([r.pfc for r in ms], dtype=float)
        return m.mean(), c.mean(), np.mean(m * c)

    b, r = effs(base), effs(runs)
    if min(r) <= 0 or not all(np.isfinite(r)):
        raise ZeroDivisionError("method efficiency is zero or undefined")
    return tuple(bi / ri for bi, ri in zip(b, r))


# --- replicates --------------------------------------------------------------------


@dataclass
class ReplicateOutcome:
    seed: int
    metrics: RunMetrics | None
    posterior_mean: list | None
    error: str | None = None

    @property
    def ok(self):
        return self.error is None


@dataclass
class Variant:
    """One table row: a method configuration and its replicate outcomes."""

    config: EngineConfig
    outcomes: list = field(default_factory=list)

    @property
    def label(self):
        c = self.config
        return (c.mode, c.policy, c.default_kernel, c.r)

    def good(self):
        return [o for o in self.outcomes if o.ok]


def _one_replicate(args):
    model, series, config, seed, gold, backend = args
    rng = np.random.default_rng(seed)
    try:
        res = run(model, series, config, rng, backend)
    except (RunAbort, ParticleCollapseError, FloatingPointError) as exc:
        return ReplicateOutcome(seed, None, None, f"{type(exc).__name__}: {exc}")
    pm = res.posterior_mean()
    if gold is not None:
        res.metrics.mse = mse(pm, gold)
    return ReplicateOutcome(seed, res.metrics, pm.tolist())


def replicate_runner(model, series, config, seeds, gold=None, jobs=1, backend=None):
    """Run one configuration under each seed; failures are recorded, not raised."""
    seeds = list(seeds)
    if len(set(seeds)) != len(seeds):
        raise ValueError("replicate seeds must be distinct")
    tasks = [(model, series, config, s, gold, backend) for s in seeds]
    if jobs <= 1 or len(tasks) <= 1:
        return [_one_replicate(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_one_replicate, tasks))


def table_rows(variants, base):
    """Aggregate variants into Table-1 style rows relative to ``base``."""
    rows = []
    base_runs = [o.metrics for o in base.good()]
    for v in variants:
        good = [o.metrics for o in v.good()]
        mode, policy, kdef, r = v.label
        row = {"Method": mode, "Test K_alt": policy, "K_def": kdef, "r": f"{r:.2f}"}
        if good:
            row["# targets"] = f"{np.mean([m.targets for m in good]):.1f}"
            row["R mean"] = f"{np.mean([m.mean_repeats for m in good]):.1f}"
            try:
                rel = score_runs(good, base_runs)
                row.update({"RelEff_MSE": f"{rel[0]:.2f}", "RelEff_PFC": f"{rel[1]:.2f}",
                            "RelEff": f"{rel[2]:.2f}"})
            except (ValueError, ZeroDivisionError):
                row.update({"RelEff_MSE": "", "RelEff_PFC": "", "RelEff": ""})
        else:
            row.update({k: "" for k in TABLE_COLUMNS[4:]})
        rows.append(row)
    return rows


def write_table(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow(row)


def dump_variant(variant, directory):
    """Write one JSON file per replicate of ``variant`` under ``directory``."""
    os.makedirs(directory, exist_ok=True)
    mode, policy, kdef, r = variant.label
    paths = []
    for o in variant.outcomes:
        name = f"{mode}_{policy}_{kdef}_r{r:.2f}_seed{o.seed}.json"
        doc = {
            "config": asdict(variant.config),
            "seed": o.seed,
            "metrics": None if o.metrics is None else {
                k: v for k, v in asdict(o.metrics).items() if k != "wall_time"
            },
            "posterior_mean": o.posterior_mean,
            "error": o.error,
        }
        path = os.path.join(directory, name)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
        paths.append(path)
    return paths


def load_variants(paths):
    """Rebuild :class:`Variant` objects from JSON dumps written by :func:`dump_variant`."""
    groups = {}
    for path in sorted(paths):
        with open(path) as fh:
            doc = json.load(fh)
        cfg = EngineConfig(**doc["config"])
        key = (cfg.mode, cfg.policy, cfg.default_kernel, cfg.r, cfg.nx_pmmh, cfg.n_theta)
        v = groups.setdefault(key, Variant(cfg))
        m = doc["metrics"]
        metrics = None if m is None else RunMetrics(wall_time=0.0, **m)
        v.outcomes.append(ReplicateOutcome(doc["seed"], metrics, doc["posterior_mean"],
                                           doc["error"]))
    return list(groups.values())
