"""Population and target bookkeeping shared by the kernels and the engine."""

from dataclasses import dataclass, field, replace

import numpy as np

from .filters import Cloud, InvariantPath

PMMH = "PMMH"
PG = "PG"
KINDS = (PMMH, PG)


@dataclass
class TargetSpec:
    """Which member of the target sequence is current.

    ``mode`` is ``"DA"`` (data annealing, ``d`` observations processed) or
    ``"DT"`` (density tempering at exponent ``g`` over the full series).
    """

    mode: str
    series: object
    default: str = PMMH
    nx_pmmh: int = 100
    nx_pg: int = 100
    d: int = 0
    g: float = 0.0

    def __post_init__(self):
        if self.mode not in ("DA", "DT"):
            raise ValueError(f"mode must be 'DA' or 'DT', got {self.mode!r}")
        if self.default not in KINDS:
            raise ValueError(f"default kernel must be one of {KINDS}, got {self.default!r}")

    @property
    def data(self):
        return self.series.head(self.d) if self.mode == "DA" else self.series

    @property
    def temper(self):
        return 1.0 if self.mode == "DA" else self.g

    @property
    def steps(self):
        return self.d if self.mode == "DA" else self.series.T

    @property
    def power_pmmh(self):
        """DT with a PMMH default reweights with ``p_hat ** g`` (untempered filter)."""
        return self.mode == "DT" and self.default == PMMH

    @property
    def alternate(self):
        return PG if self.default == PMMH else PMMH

    def nx(self, kind):
        return self.nx_pmmh if kind == PMMH else self.nx_pg

    def copy(self):
        return replace(self)


@dataclass
class ThetaParticle:
    """One parameter particle with its kernel-specific auxiliary state."""

    theta: np.ndarray
    logw: float
    kind: str
    nx: int
    loglik: float | None = None
    cloud_x: np.ndarray | None = None
    cloud_logW: np.ndarray | None = None
    path: np.ndarray | None = None
    log_px: float | None = None
    log_py: float | None = None


@dataclass
class Population:
    """``N_theta`` parameter particles stored column-wise.

    PMMH-typed populations carry ``loglik`` (and, for data annealing, the
    live ``cloud``); PG-typed populations carry an :class:`InvariantPath`.
    ``pmmh_power`` marks PMMH estimates from an untempered filter that the
    target raises to the power ``g``. ``states`` optionally holds one latent
    trajectory per particle drawn alongside PMMH estimates.
    """

    theta: np.ndarray
    logw: np.ndarray
    kind: str
    nx: int
    loglik: np.ndarray | None = None
    cloud: Cloud | None = None
    path: InvariantPath | None = None
    pmmh_power: bool = False
    states: np.ndarray | None = None
    failures: int = field(default=0)

    @property
    def size(self):
        return self.theta.shape[0]

    def normalized_weights(self):
        lw = self.logw - np.max(self.logw)
        w = np.exp(lw)
        return w / w.sum()

    def ess(self):
        W = self.normalized_weights()
        return 1.0 / np.sum(W * W)

    def take(self, idx):
        """Copy of the population at indices ``idx`` (used by resampling)."""
        return Population(
            theta=self.theta[idx].copy(),
            logw=self.logw[idx].copy(),
            kind=self.kind,
            nx=self.nx,
            loglik=None if self.loglik is None else self.loglik[idx].copy(),
            cloud=None if self.cloud is None else self.cloud.take(idx),
            path=None if self.path is None else self.path.take(idx),
            pmmh_power=self.pmmh_power,
            states=None if self.states is None else self.states[idx].copy(),
            failures=self.failures,
        )

    def particle(self, i):
        """A single-particle view as a :class:`ThetaParticle`."""
        p = ThetaParticle(self.theta[i].copy(), float(self.logw[i]), self.kind, self.nx)
        if self.loglik is not None:
            p.loglik = float(self.loglik[i])
        if self.cloud is not None:
            p.cloud_x, p.cloud_logW = self.cloud.x[i].copy(), self.cloud.logW[i].copy()
        if self.path is not None:
            p.path = self.path.x[i].copy()
            p.log_px, p.log_py = float(self.path.log_px[i]), float(self.path.log_py[i])
        return p


class CostCounter:
    """Particle-filter cost: running sum of ``N_x * time steps`` per filter run."""

    def __init__(self, total=0):
        self.total = int(total)

    def add(self, amount):
        self.total += int(amount)

    def __repr__(self):
        return f"CostCounter({self.total})"
