"""SMC^2 driver for data annealing (DA) and density tempering (DT).

A run alternates reweighting towards the next target with resample-move
steps. Under DA a resample-move happens whenever the ESS drops below half
the population; under DT the tempering exponent is chosen so that the ESS
lands at half the population and every iteration resamples and mutates.
"""

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import adaptive
from ._accel import normalize_rows
from .filters import (
    InvariantPath,
    ParticleCollapseError,
    backward_sample,
    bootstrap_pf,
    extend_cloud_one_step,
    multinomial_resample,
)
from .models import InvalidParameterError
from .population import KINDS, PG, PMMH, CostCounter, Population, TargetSpec

MODES = ("DA", "DT")


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending setting."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class RunAbort(RuntimeError):
    """The sampler cannot continue (all weights zero, collapsed population)."""


class DegeneratePopulationError(RunAbort):
    """Every parameter particle sits at the same point."""


@dataclass
class EngineConfig:
    """Settings of one SMC^2 run.

    ``nx_pg`` is ``max(2, round(r * nx_pmmh))``. Density tempering with a
    PMMH default uses untempered estimates raised to ``g`` and is a
    baseline without switching, so it requires ``policy = "never"``.
    """

    mode: str = "DA"
    default_kernel: str = PMMH
    n_theta: int = 100
    nx_pmmh: int = 200
    r: float = 1.0
    policy: str = "never"
    K: int = adaptive.K_TEST
    k_mala: int = adaptive.K_MALA
    r_max: int = adaptive.R_MAX
    lag_cap: int = adaptive.LAG_CAP
    lag_horizon: int = adaptive.LAG_HORIZON
    two_stage: bool = True
    tol_ess: float = 1.0
    max_bisect: int = 60

    def __post_init__(self):
        self.validate()

    @property
    def nx_pg(self):
        return max(2, int(round(self.r * self.nx_pmmh)))

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")
        if self.default_kernel not in KINDS:
            raise ConfigError("default_kernel", f"must be one of {KINDS}, got {self.default_kernel!r}")
        if self.policy not in adaptive.POLICIES:
            raise ConfigError("switch_policy", f"must be one of {adaptive.POLICIES}, got {self.policy!r}")
        if not isinstance(self.n_theta, int) or self.n_theta < 2:
            raise ConfigError("N_theta", f"must be an integer >= 2, got {self.n_theta!r}")
        if not isinstance(self.nx_pmmh, int) or self.nx_pmmh < 2:
            raise ConfigError("Nx_pmmh", f"must be an integer >= 2, got {self.nx_pmmh!r}")
        if not (isinstance(self.r, (int, float)) and 0.0 < self.r <= 1.0):
            raise ConfigError("r", f"must lie in (0, 1], got {self.r!r}")
        if self.K < 1:
            raise ConfigError("K", f"must be at least 1, got {self.K}")
        if self.k_mala < 0:
            raise ConfigError("k_mala", f"must be nonnegative, got {self.k_mala}")
        if self.mode == "DT" and self.default_kernel == PMMH and self.policy != "never":
            raise ConfigError(
                "switch_policy",
                "density tempering with a PMMH default is a no-switching baseline; use 'never'",
            )


@dataclass
class RunMetrics:
    """Summary of one run; ``mse`` is filled in by scoring against a gold reference."""

    log_evidence: float
    pfc: int
    targets: int
    mean_repeats: float
    wall_time: float
    mse: float = float("nan")
    failures: int = 0

    def as_dict(self):
        return asdict(self)


@dataclass
class RunResult:
    theta: np.ndarray
    weights: np.ndarray
    metrics: RunMetrics
    diagnostics: list = field(default_factory=list)
    param_names: tuple = ()

    def posterior_mean(self):
        return self.weights @ self.theta


# --- population statistics -------------------------------------------------------


def weighted_mean_cov(u, weights):
    """Weighted mean, covariance and inverse square root of the rows of ``u``.

    The covariance is ``sum_i W_i (u_i - mu)(u_i - mu)^T``. The inverse
    square root comes from a symmetric eigendecomposition with eigenvalues
    floored at ``1e-12``. Raises :class:`DegeneratePopulationError` when the
    weighted population has no spread.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    W = np.asarray(weights, dtype=float)
    W = W / W.sum()
    mu = W @ u
    r = u - mu
    sigma = (r * W[:, None]).T @ r
    sigma = 0.5 * (sigma + sigma.T)
    if not np.all(np.isfinite(sigma)) or np.trace(sigma) <= 0:
        raise DegeneratePopulationError("parameter particles have collapsed to a single point")
    vals, vecs = np.linalg.eigh(sigma)
    vals = np.maximum(vals, 1e-12)
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
    return mu, sigma, inv_sqrt


def adapt_temperature(logw, ll, g, target_ess=None, tol=1.0, max_iter=60):
    """Next exponent ``g + dg`` giving ESS ``target_ess`` (default ``N/2``).

    Incremental log-weights are ``dg * ll``. When the full step to 1 keeps
    the ESS at or above the target the exponent jumps to 1; otherwise
    bisection on ``dg`` stops once ``|ESS - target| < tol``.
    """
    logw = np.asarray(logw, dtype=float)
    ll = np.asarray(ll, dtype=float)
    if target_ess is None:
        target_ess = logw.size / 2.0
    if g >= 1.0:
        raise ValueError("tempering has already reached 1")

    def ess_at(dg):
        with np.errstate(invalid="ignore"):
            inc = np.where(dg == 0.0, 0.0, dg * ll)
        lw = np.where(np.isnan(inc), -np.inf, logw + inc)
        if not np.isfinite(lw).any():
            return 0.0
        W = np.exp(lw - logsumexp(lw))
        return 1.0 / np.sum(W * W)

    hi = 1.0 - g
    if ess_at(hi) >= target_ess:
        return 1.0
    lo = 0.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        e = ess_at(mid)
        if abs(e - target_ess) < tol:
            return g + mid
        if e > target_ess:
            lo = mid
        else:
            hi = mid
    return g + 0.5 * (lo + hi)


def _log_normalize(logw):
    lw, lse = normalize_rows(np.asarray(logw, dtype=float)[None, :])
    return lw[0], float(lse[0])


# --- the sampler -----------------------------------------------------------------


class SMC2:
    """One SMC^2 run; construct, then call :meth:`run`."""

    def __init__(self, model, series, config, rng, backend=None):
        self.model = model
        self.series = series
        self.config = config
        self.rng = rng
        self.backend = backend
        self.cost = CostCounter()
        self.target = TargetSpec(config.mode, series, config.default_kernel,
                                 config.nx_pmmh, config.nx_pg)
        self.log_evidence = 0.0
        self.targets = 0
        self.applications = 0
        self.diagnostics = []
        self.lag = adaptive.LagState(horizon=config.lag_horizon, cap=config.lag_cap)
        self.eps2_pmmh = 1.0
        self.eps2_blocks = [0.1, 0.1]
        self.ctx = None
        self.pop = None

    # --- setup
    def init_population(self):
        """Prior draws, uniform weights, auxiliary state for the default kernel."""
        cfg, tgt, model = self.config, self.target, self.model
        N = cfg.n_theta
        theta = model.sample_prior(self.rng, N)
        logw = np.full(N, -math.log(N))
        nx = tgt.nx(tgt.default)
        if tgt.mode == "DA" or self.series.T == 0:
            if tgt.default == PMMH:
                pop = Population(theta, logw, PMMH, nx, loglik=np.zeros(N))
            else:
                B = N
                path = InvariantPath(np.empty((B, 0)), np.empty((B, 0), dtype=np.int64),
                                     np.zeros(B), np.zeros(B))
                pop = Population(theta, logw, PG, nx, path=path)
        elif tgt.default == PG:
            out = bootstrap_pf(model, theta, self.series, nx, self.rng, 0.0,
                               backend=self.backend)
            self.cost.add(out.cost)
            path = backward_sample(out, model, theta, self.series, self.rng, self.backend)
            pop = Population(theta, logw, PG, nx, path=path)
        else:
            out = bootstrap_pf(model, theta, self.series, nx, self.rng, 1.0,
                               history=False, backend=self.backend)
            self.cost.add(out.cost)
            pop = Population(theta, logw, PMMH, nx, loglik=out.loglik.copy(),
                             pmmh_power=True)
        self.pop = pop
        return pop

    # --- reweighting
    def _accumulate(self, inc):
        pop = self.pop
        lw, _ = _log_normalize(pop.logw)
        with np.errstate(invalid="ignore"):
            new = lw + inc
        new = np.where(np.isnan(new), -np.inf, new)
        if not np.isfinite(new).any():
            raise RunAbort(f"all parameter weights are zero at {self._position()}")
        self.log_evidence += float(logsumexp(new))
        pop.logw, _ = _log_normalize(new)

    def reweight_da(self):
        """Add observation ``d`` (0-based) to the target."""
        pop, tgt, model = self.pop, self.target, self.model
        t = tgt.d
        if t >= self.series.T:
            raise ValueError("all observations are already processed")
        if pop.kind == PMMH:
            cloud, inc = extend_cloud_one_step(model, pop.theta, pop.cloud, self.series, t,
                                               self.rng, backend=self.backend, n=pop.nx)
            self.cost.add(pop.size * pop.nx)
            pop.cloud = cloud
            pop.loglik = cloud.loglik.copy()
        else:
            inc = self._extend_paths(t)
        self._accumulate(inc)
        tgt.d = t + 1

    def _extend_paths(self, t):
        pop, model, series = self.pop, self.model, self.series
        path = pop.path
        with np.errstate(invalid="ignore", over="ignore"):
            if t == 0:
                x = model.sample_init(pop.theta, 1, self.rng, series)
                lpx = model.log_init(pop.theta, x, series)[:, 0]
            else:
                prev = path.x[:, -1:]
                x = model.sample_transition(pop.theta, prev, t, self.rng, series)
                lpx = model.log_transition(pop.theta, prev, x, t, series)[:, 0]
            lg = model.log_observation(pop.theta, x, t, series)[:, 0]
        k = np.zeros((pop.size, 1), dtype=np.int64)
        pop.path = InvariantPath(np.hstack([path.x, x]), np.hstack([path.k, k]),
                                 path.log_px + lpx, path.log_py + lg)
        return lg

    def _tempering_loglik(self):
        pop = self.pop
        return pop.path.log_py if pop.kind == PG else pop.loglik

    def reweight_dt(self):
        """Raise the exponent to the adaptively chosen next value."""
        tgt = self.target
        ll = self._tempering_loglik()
        g_new = adapt_temperature(self.pop.logw, ll, tgt.g, tol=self.config.tol_ess,
                                  max_iter=self.config.max_bisect)
        dg = g_new - tgt.g
        with np.errstate(invalid="ignore"):
            inc = np.where(ll == -np.inf, -np.inf, dg * ll)
        self._accumulate(inc)
        tgt.g = g_new

    # --- resample-move
    def _position(self):
        tgt = self.target
        return f"d={tgt.d}" if tgt.mode == "DA" else f"g={tgt.g:.6g}"

    def _prepare_move(self):
        """Covariance, SJD target and stepsizes from the weighted population."""
        pop = self.pop
        W = pop.normalized_weights()
        u, _ = self.model.unconstrain(pop.theta)
        mu, sigma, inv_sqrt = weighted_mean_cov(u, W)
        target_sjd = adaptive.sjd_target(u, W, mu, inv_sqrt @ inv_sqrt)
        if self.ctx is not None:
            self.ctx.adapt()
            self.eps2_pmmh, self.eps2_blocks = self.ctx.eps2_pmmh, list(self.ctx.eps2_blocks)
        cfg = self.config
        self.ctx = adaptive.MoveContext(
            sigma=sigma, inv_sqrt=inv_sqrt, sjd_target=target_sjd,
            eps2_pmmh=self.eps2_pmmh, eps2_blocks=list(self.eps2_blocks),
            k_mala=cfg.k_mala, K=cfg.K, r_max=cfg.r_max, two_stage=cfg.two_stage,
        )

    def resample_and_mutate(self):
        pop = self.pop
        ess = pop.ess()
        self._prepare_move()
        idx = multinomial_resample(pop.normalized_weights(), pop.size, self.rng, self.backend)
        self.pop = pop.take(idx)
        self.pop.logw = np.full(pop.size, -math.log(pop.size))
        self.pop, rec = adaptive.adaptive_move(
            self.model, self.pop, self.target, self.ctx, self.config.policy, self.lag,
            self.rng, self.cost, self.backend,
        )
        self.targets += 1
        self.applications += rec.applications
        tgt = self.target
        self.diagnostics.append({
            "iteration": self.targets,
            "position": tgt.d if tgt.mode == "DA" else tgt.g,
            "kernel": rec.chosen,
            "tested_alt": int(rec.tested_alt),
            "score_def": rec.score_def,
            "score_alt": rec.score_alt,
            "R_rem": rec.r_rem,
            "ESS": ess,
            "eps2_pmmh": self.ctx.eps2_pmmh,
            "eps2_block1": self.ctx.eps2_blocks[0],
            "eps2_block2": self.ctx.eps2_blocks[1],
            "pfc": self.cost.total,
        })

    # --- main loop
    def run(self):
        start = time.perf_counter()
        try:
            self._run()
        except (ParticleCollapseError, InvalidParameterError, np.linalg.LinAlgError) as exc:
            raise RunAbort(f"{type(exc).__name__} at {self._position()}: {exc}") from exc
        pop = self.pop
        metrics = RunMetrics(
            log_evidence=self.log_evidence,
            pfc=self.cost.total,
            targets=self.targets,
            mean_repeats=self.applications / self.targets if self.targets else 0.0,
            wall_time=time.perf_counter() - start,
            failures=pop.failures,
        )
        return RunResult(pop.theta.copy(), pop.normalized_weights(), metrics,
                         self.diagnostics, tuple(self.model.param_names))

    def _run(self):
        self.init_population()
        tgt, T = self.target, self.series.T
        if T == 0:
            tgt.g = 1.0
            return
        if tgt.mode == "DA":
            while tgt.d < T:
                self.reweight_da()
                if self.pop.ess() < self.pop.size / 2.0:
                    self.resample_and_mutate()
        else:
            while tgt.g < 1.0:
                self.reweight_dt()
                self.resample_and_mutate()


def run(model, series, config, rng, backend=None):
    """Run SMC^2 and return a :class:`RunResult`."""
    return SMC2(model, series, config, rng, backend).run()
