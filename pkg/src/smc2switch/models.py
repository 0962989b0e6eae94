"""State space models, priors and parameter transforms.

Every model here has a scalar latent state with Gaussian initial,
transition and observation densities, so the base class implements
sampling and log-densities from three ``*_moments`` hooks. All methods are
vectorised over a batch of parameter vectors: ``theta`` has shape
``(B, p)`` and latent arrays have shape ``(B, n)`` where ``n`` is either a
particle count (filters, scalar ``t``) or a path length (``t`` an index
array aligned with the last axis).

Time indices are 0-based: ``t = 0`` is the first observation.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

LOG_2PI = np.log(2.0 * np.pi)


class InvalidParameterError(ValueError):
    """Raised when a parameter vector cannot define a density."""


# --- data -----------------------------------------------------------------------


@dataclass(frozen=True)
class TimeSeries:
    """Observations ``y`` (length T) with optional covariates ``z`` (T, k)."""

    y: np.ndarray
    z: np.ndarray | None = None
    names: tuple = field(default=(), compare=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        object.__setattr__(self, "y", y)
        if self.z is not None:
            z = np.asarray(self.z, dtype=float)
            if z.ndim == 1:
                z = z[:, None]
            if z.shape[0] != y.shape[0]:
                raise ValueError(
                    f"covariates have {z.shape[0]} rows but y has {y.shape[0]}"
                )
            object.__setattr__(self, "z", z)

    @property
    def T(self):
        return self.y.shape[0]

    def head(self, d):
        """The first ``d`` observations."""
        return TimeSeries(self.y[:d], None if self.z is None else self.z[:d])

    def to_csv(self, path, latent=None):
        """Write one row per time point: ``y``, then ``z1..zk``, then ``x_true``."""
        cols = ["y"]
        arrays = [self.y[:, None]]
        if self.z is not None:
            cols += [f"z{j + 1}" for j in range(self.z.shape[1])]
            arrays.append(self.z)
        if latent is not None:
            cols.append("x_true")
            arrays.append(np.asarray(latent, dtype=float).reshape(-1, 1))
        table = np.hstack(arrays)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in table:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path):
        """Read a CSV with a header row.

        The ``y`` column holds observations and columns whose names start
        with ``z`` are covariates (kept in file order). Other columns, such
        as ``t`` or ``x_true``, are ignored.
        """
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty file")
        header = [h.strip() for h in rows[0]]
        if "y" not in header:
            raise ValueError(f"{path}: header has no 'y' column")
        body = [r for r in rows[1:] if r and any(c.strip() for c in r)]
        if not body:
            raise ValueError(f"{path}: no observations")
        try:
            table = np.array([[float(c) for c in r] for r in body])
        except ValueError as exc:
            raise ValueError(f"{path}: malformed CSV ({exc})") from None
        if table.shape[1] != len(header):
            raise ValueError(f"{path}: rows do not match header width")
        y = table[:, header.index("y")]
        zcols = [i for i, h in enumerate(header) if h.startswith("z")]
        z = table[:, zcols] if zcols else None
        return cls(y, z)


# --- priors ---------------------------------------------------------------------


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float

    def logpdf(self, x):
        return -0.5 * LOG_2PI - np.log(self.sd) - 0.5 * ((x - self.mean) / self.sd) ** 2

    def grad(self, x):
        return -(x - self.mean) / self.sd**2

    def sample(self, rng, n):
        return rng.normal(self.mean, self.sd, size=n)


@dataclass(frozen=True)
class HalfNormal:
    """Half-normal with scale ``sd`` (variance parameter ``sd**2``)."""

    sd: float

    def logpdf(self, x):
        with np.errstate(divide="ignore"):
            val = np.log(2.0) - 0.5 * LOG_2PI - np.log(self.sd) - 0.5 * (x / self.sd) ** 2
        return np.where(x >= 0, val, -np.inf)

    def grad(self, x):
        return -x / self.sd**2

    def sample(self, rng, n):
        return np.abs(rng.normal(0.0, self.sd, size=n))


@dataclass(frozen=True)
class Uniform:
    low: float = 0.0
    high: float = 1.0

    def logpdf(self, x):
        inside = (x > self.low) & (x < self.high)
        return np.where(inside, -np.log(self.high - self.low), -np.inf)

    def grad(self, x):
        return np.zeros_like(x)

    def sample(self, rng, n):
        return rng.uniform(self.low, self.high, size=n)


@dataclass(frozen=True)
class Exponential:
    rate: float = 1.0

    def logpdf(self, x):
        return np.where(x >= 0, np.log(self.rate) - self.rate * x, -np.inf)

    def grad(self, x):
        return np.full_like(x, -self.rate)

    def sample(self, rng, n):
        return rng.exponential(1.0 / self.rate, size=n)


# --- transforms -----------------------------------------------------------------

TRANSFORMS = ("identity", "log", "logit")


def _softplus(x):
    return np.logaddexp(0.0, x)


def from_unconstrained(u, transforms):
    """Map unconstrained ``u`` to natural parameters.

    Returns ``(theta, logjac)`` where ``logjac = log|d theta / d u|`` summed
    over components.
    """
    u = np.asarray(u, dtype=float)
    theta = u.copy()
    logjac = np.zeros(u.shape[:-1])
    for i, tag in enumerate(transforms):
        if tag == "log":
            theta[..., i] = np.exp(u[..., i])
            logjac = logjac + u[..., i]
        elif tag == "logit":
            theta[..., i] = expit(u[..., i])
            logjac = logjac - _softplus(-u[..., i]) - _softplus(u[..., i])
    return theta, logjac


def unconstrain(theta, transforms):
    """Like :func:`to_unconstrained` but boundary values give ``inf``/``nan``."""
    theta = np.asarray(theta, dtype=float)
    u = theta.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        for i, tag in enumerate(transforms):
            if tag == "log":
                u[..., i] = np.log(theta[..., i])
            elif tag == "logit":
                u[..., i] = logit(theta[..., i])
        _, logjac = from_unconstrained(u, transforms)
    return u, logjac


def to_unconstrained(theta, transforms):
    """Inverse of :func:`from_unconstrained`; returns ``(u, logjac)``.

    Boundary values (zero for log, 0 or 1 for logit) map to infinity and
    are rejected.
    """
    u, logjac = unconstrain(theta, transforms)
    if not np.all(np.isfinite(u)):
        raise InvalidParameterError("parameter on or outside its support boundary")
    return u, logjac


def jacobian_terms(theta, transforms):
    """Elementwise ``d theta / d u`` and ``d logjac / d u`` at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    dtheta = np.ones_like(theta)
    dlogjac = np.zeros_like(theta)
    for i, tag in enumerate(transforms):
        if tag == "log":
            dtheta[..., i] = theta[..., i]
            dlogjac[..., i] = 1.0
        elif tag == "logit":
            p = theta[..., i]
            dtheta[..., i] = p * (1.0 - p)
            dlogjac[..., i] = 1.0 - 2.0 * p
    return dtheta, dlogjac


# --- base model -----------------------------------------------------------------


def _normal_logpdf(x, mean, sd):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        val = -0.5 * LOG_2PI - np.log(sd) - 0.5 * ((x - mean) / sd) ** 2
    return np.where(sd > 0, val, -np.inf)


def _as_batch(theta):
    theta = np.asarray(theta, dtype=float)
    return theta[None, :] if theta.ndim == 1 else theta


class StateSpaceModel:
    """Scalar-state SSM with Gaussian initial, transition and observation laws.

    Subclasses set ``name``, ``param_names``, ``transforms``, ``block1``
    (indices of the parameters that appear in the transition density),
    ``priors`` and implement the three moment hooks. ``grad_log_joint``
    falls back to central finite differences when not overridden.
    """

    name = "ssm"
    param_names: tuple = ()
    transforms: tuple = ()
    block1: tuple = ()
    priors: tuple = ()
    state_dim = 1

    @property
    def dim(self):
        return len(self.param_names)

    @property
    def block2(self):
        return tuple(i for i in range(self.dim) if i not in self.block1)

    def blocks(self):
        return (np.array(self.block1, dtype=int), np.array(self.block2, dtype=int))

    # --- moment hooks, each returns (mean, sd) broadcast against x / x_prev
    def init_moments(self, theta, series):
        raise NotImplementedError

    def transition_moments(self, theta, x_prev, t, series):
        raise NotImplementedError

    def observation_moments(self, theta, x, t, series):
        raise NotImplementedError

    # --- priors
    def log_prior_terms(self, theta):
        theta = _as_batch(theta)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.stack(
                [pr.logpdf(theta[:, i]) for i, pr in enumerate(self.priors)], axis=1
            )

    def log_prior(self, theta):
        """Log prior density per row; ``-inf`` outside the support."""
        out = self.log_prior_terms(theta).sum(axis=1)
        return np.where(np.isnan(out), -np.inf, out)

    def grad_log_prior(self, theta):
        theta = _as_batch(theta)
        return np.stack([pr.grad(theta[:, i]) for i, pr in enumerate(self.priors)], axis=1)

    def sample_prior(self, rng, n=1):
        return np.stack([pr.sample(rng, n) for pr in self.priors], axis=1)

    def in_support(self, theta):
        return np.isfinite(self.log_prior(theta))

    # --- transforms
    def to_unconstrained(self, theta):
        return to_unconstrained(theta, self.transforms)

    def from_unconstrained(self, u):
        return from_unconstrained(u, self.transforms)

    def unconstrain(self, theta):
        return unconstrain(theta, self.transforms)

    # --- densities and samplers
    def _check_sd(self, sd):
        if np.any(np.asarray(sd) <= 0) or np.any(np.isnan(sd)):
            raise InvalidParameterError(f"{self.name}: non-positive standard deviation")

    def sample_init(self, theta, n, rng, series=None):
        theta = _as_batch(theta)
        m, s = self.init_moments(theta, series)
        return m + s * rng.standard_normal((theta.shape[0], n))

    def log_init(self, theta, x, series=None):
        m, s = self.init_moments(_as_batch(theta), series)
        self._check_sd(s)
        return _normal_logpdf(x, m, s)

    def sample_transition(self, theta, x_prev, t, rng, series=None):
        m, s = self.transition_moments(_as_batch(theta), x_prev, t, series)
        with np.errstate(invalid="ignore", over="ignore"):
            return m + s * rng.standard_normal(np.shape(x_prev))

    def log_transition(self, theta, x_prev, x, t, series=None):
        m, s = self.transition_moments(_as_batch(theta), x_prev, t, series)
        self._check_sd(s)
        return _normal_logpdf(x, m, s)

    def log_observation(self, theta, x, t, series):
        m, s = self.observation_moments(_as_batch(theta), x, t, series)
        y = series.y[t]
        with np.errstate(invalid="ignore", over="ignore"):
            out = _normal_logpdf(y, m, s)
        return np.where(np.isnan(out), -np.inf, out)

    def sample_observation(self, theta, x, t, series, rng):
        m, s = self.observation_moments(_as_batch(theta), x, t, series)
        return m + s * rng.standard_normal(np.shape(m))

    def path_log_densities(self, theta, path, series):
        """``(log p(x|theta), log p(y|x,theta))`` for paths of shape (B, d)."""
        theta = _as_batch(theta)
        B, d = path.shape
        if d == 0:
            return np.zeros(B), np.zeros(B)
        lpx = self.log_init(theta, path[:, :1], series)[:, 0]
        if d > 1:
            t = np.arange(1, d)
            lpx = lpx + self.log_transition(theta, path[:, :-1], path[:, 1:], t, series).sum(axis=1)
        lpy = self.log_observation(theta, path, np.arange(d), series).sum(axis=1)
        return lpx, lpy

    def log_joint(self, theta, path, series, temper=1.0):
        """log p(theta) + log p(x|theta) + temper * log p(y|x,theta)."""
        lpx, lpy = self.path_log_densities(theta, path, series)
        return self.log_prior(theta) + lpx + temper * lpy

    def grad_log_joint(self, theta, path, series, temper=1.0):
        """Natural-scale gradient of :meth:`log_joint`, shape (B, p)."""
        return self._fd_grad_log_joint(theta, path, series, temper)

    def _fd_grad_log_joint(self, theta, path, series, temper, h=1e-6):
        theta = _as_batch(theta)
        out = np.empty_like(theta)
        for i in range(self.dim):
            step = h * np.maximum(1.0, np.abs(theta[:, i]))
            tp, tm = theta.copy(), theta.copy()
            tp[:, i] += step
            tm[:, i] -= step
            fp = self.log_joint(tp, path, series, temper)
            fm = self.log_joint(tm, path, series, temper)
            out[:, i] = (fp - fm) / (2 * step)
        return out

    def grad_log_target_u(self, theta, path, series, temper=1.0):
        """Gradient in unconstrained coordinates, Jacobian term included."""
        theta = _as_batch(theta)
        g = self.grad_log_joint(theta, path, series, temper)
        dtheta, dlogjac = jacobian_terms(theta, self.transforms)
        return g * dtheta + dlogjac

    def grad_block_log_target(self, theta, path, series, temper, block):
        """Unconstrained gradient restricted to block 1 or 2.

        Raises :class:`InvalidParameterError` if the target is not finite at
        ``theta`` (there is nothing to differentiate).
        """
        theta = _as_batch(theta)
        val = self.log_joint(theta, path, series, temper)
        if not np.all(np.isfinite(val)):
            raise InvalidParameterError("log target is not finite at theta")
        idx = self.blocks()[block - 1]
        return self.grad_log_target_u(theta, path, series, temper)[:, idx]

    # --- simulation
    def simulate(self, theta, T, rng, covariates=None):
        """Ancestral simulation; returns ``(TimeSeries, latent path)``."""
        theta = _as_batch(np.asarray(theta, dtype=float))
        z = self.simulate_covariates(T, rng) if covariates is None else covariates
        y = np.zeros(T)
        series = TimeSeries(y, z)
        x = np.empty(T)
        for t in range(T):
            if t == 0:
                x[t] = self.sample_init(theta, 1, rng, series)[0, 0]
            else:
                x[t] = self.sample_transition(theta, np.array([[x[t - 1]]]), t, rng, series)[0, 0]
            series.y[t] = self.sample_observation(theta, np.array([[x[t]]]), t, series, rng).reshape(-1)[0]
        return series, x

    def simulate_covariates(self, T, rng):
        return None

    def __repr__(self):
        return f"{type(self).__name__}()"


# --- concrete models ------------------------------------------------------------


class BrownianMotion(StateSpaceModel):
    """Discretised Brownian motion with drift observed in Gaussian noise.

    ``x_1 ~ N(x0 + beta - gamma^2/2, gamma^2)``, same increment law
    thereafter, ``y_t ~ N(x_t, sigma^2)``.
    """

    name = "bm"
    param_names = ("x0", "beta", "gamma", "sigma")
    transforms = ("identity", "identity", "log", "log")
    block1 = (0, 1, 2)
    priors = (Normal(3.0, 5.0), Normal(2.0, 5.0), HalfNormal(2.0), HalfNormal(2.0))
    true_theta = (1.0, 1.2, 1.5, 1.0)
    default_T = 100
    default_nx = 200

    def init_moments(self, theta, series):
        x0, beta, gamma = theta[:, 0:1], theta[:, 1:2], theta[:, 2:3]
        return x0 + beta - 0.5 * gamma**2, gamma

    def transition_moments(self, theta, x_prev, t, series):
        beta, gamma = theta[:, 1:2], theta[:, 2:3]
        return x_prev + beta - 0.5 * gamma**2, gamma

    def observation_moments(self, theta, x, t, series):
        return x, theta[:, 3:4]

    def grad_log_joint(self, theta, path, series, temper=1.0):
        theta = _as_batch(theta)
        grad = self.grad_log_prior(theta)
        d = path.shape[1]
        if d == 0:
            return grad
        x0, beta, gamma, sigma = (theta[:, i : i + 1] for i in range(4))
        prev = np.concatenate([x0, path[:, :-1]], axis=1)
        e = path - prev - (beta - 0.5 * gamma**2)
        g2 = gamma[:, 0] ** 2
        grad[:, 0] += e[:, 0] / g2
        grad[:, 1] += e.sum(axis=1) / g2
        grad[:, 2] += -d / gamma[:, 0] + (e**2).sum(axis=1) / gamma[:, 0] ** 3 - e.sum(axis=1) / gamma[:, 0]
        r = series.y[:d] - path
        grad[:, 3] += temper * (-d / sigma[:, 0] + (r**2).sum(axis=1) / sigma[:, 0] ** 3)
        return grad


class FlexibleAllee(StateSpaceModel):
    """Flexible-allee logistic growth with the latent state on the log scale.

    ``l_t = log x_t`` evolves as ``l_{t+1} = l_t + b0 + b1 x_t + b2 x_t^2 +
    N(0, gamma^2)`` starting from abundance ``x0``; ``y_t ~ N(l_t, sigma^2)``.
    """

    name = "allee"
    param_names = ("beta0", "beta1", "beta2", "x0", "gamma", "sigma")
    transforms = ("identity", "identity", "identity", "log", "log", "log")
    block1 = (0, 1, 2, 3, 4)
    priors = (
        Normal(0.0, 0.2),
        Normal(0.0, 0.001),
        Normal(0.0, 0.001),
        HalfNormal(1000.0),
        Exponential(1.0),
        Exponential(1.0),
    )
    true_theta = (0.2, -0.001, -1e-6, 150.0, 0.1, 0.1)
    default_T = 60
    default_nx = 1700

    @staticmethod
    def _growth(theta, lprev):
        b0, b1, b2 = theta[:, 0:1], theta[:, 1:2], theta[:, 2:3]
        with np.errstate(over="ignore", invalid="ignore"):
            X = np.exp(lprev)
            return lprev + b0 + b1 * X + b2 * X * X

    def init_moments(self, theta, series):
        with np.errstate(divide="ignore"):
            lx0 = np.log(theta[:, 3:4])
        return self._growth(theta, lx0), theta[:, 4:5]

    def transition_moments(self, theta, x_prev, t, series):
        return self._growth(theta, x_prev), theta[:, 4:5]

    def observation_moments(self, theta, x, t, series):
        return x, theta[:, 5:6]

    def grad_log_joint(self, theta, path, series, temper=1.0):
        theta = _as_batch(theta)
        grad = self.grad_log_prior(theta)
        d = path.shape[1]
        if d == 0:
            return grad
        b1, b2, x0 = theta[:, 1], theta[:, 2], theta[:, 3]
        gamma, sigma = theta[:, 4], theta[:, 5]
        prev = np.concatenate([np.log(theta[:, 3:4]), path[:, :-1]], axis=1)
        X = np.exp(prev)
        e = path - self._growth(theta, prev)
        g2 = gamma**2
        grad[:, 0] += e.sum(axis=1) / g2
        grad[:, 1] += (e * X).sum(axis=1) / g2
        grad[:, 2] += (e * X * X).sum(axis=1) / g2
        grad[:, 3] += e[:, 0] * (1.0 / x0 + b1 + 2.0 * b2 * x0) / g2
        grad[:, 4] += -d / gamma + (e**2).sum(axis=1) / gamma**3
        r = series.y[:d] - path
        grad[:, 5] += temper * (-d / sigma + (r**2).sum(axis=1) / sigma**3)
        return grad


class SVInMean(StateSpaceModel):
    """Stochastic volatility in mean.

    ``y_t ~ N(a + b y_{t-1} + d s^2 e^{h_t}, s^2 e^{h_t})`` with AR(1) log
    volatility ``h_t ~ N(phi h_{t-1}, sigma^2)`` started at stationarity.
    The lagged return before the first observation is ``y0`` (default 0).
    """

    name = "svm"
    param_names = ("a", "b", "d", "phi", "sigma", "s")
    transforms = ("identity", "logit", "identity", "logit", "log", "log")
    block1 = (3, 4)
    priors = (
        Normal(0.0, 10.0),
        Uniform(0.0, 1.0),
        Normal(0.0, 10.0),
        Uniform(0.0, 1.0),
        HalfNormal(2.0),
        HalfNormal(2.0),
    )
    true_theta = (0.05, 0.1, 0.05, 0.9, 0.3, 1.0)
    default_T = 260
    default_nx = 60

    def __init__(self, y0=0.0):
        self.y0 = float(y0)

    def _lag(self, t, series):
        if np.ndim(t) == 0:
            return series.y[t - 1] if t > 0 else self.y0
        t = np.asarray(t)
        return np.where(t > 0, series.y[t - 1], self.y0)

    def init_moments(self, theta, series):
        phi, sigma = theta[:, 3:4], theta[:, 4:5]
        with np.errstate(divide="ignore", invalid="ignore"):
            sd = sigma / np.sqrt(1.0 - phi**2)
        return np.zeros_like(sigma), sd

    def transition_moments(self, theta, x_prev, t, series):
        return theta[:, 3:4] * x_prev, theta[:, 4:5]

    def observation_moments(self, theta, x, t, series):
        a, b, dm, s = theta[:, 0:1], theta[:, 1:2], theta[:, 2:3], theta[:, 5:6]
        with np.errstate(over="ignore", invalid="ignore"):
            v = s**2 * np.exp(x)
            return a + b * self._lag(t, series) + dm * v, np.sqrt(v)

    def grad_log_joint(self, theta, path, series, temper=1.0):
        theta = _as_batch(theta)
        grad = self.grad_log_prior(theta)
        d = path.shape[1]
        if d == 0:
            return grad
        a, b, dm, phi, sigma, s = (theta[:, i : i + 1] for i in range(6))
        h = path
        om = 1.0 - phi[:, 0] ** 2
        s2 = sigma[:, 0] ** 2
        h1 = h[:, 0]
        grad[:, 3] += -phi[:, 0] / om + h1**2 * phi[:, 0] / s2
        grad[:, 4] += -1.0 / sigma[:, 0] + h1**2 * om / sigma[:, 0] ** 3
        if d > 1:
            e = h[:, 1:] - phi * h[:, :-1]
            grad[:, 3] += (e * h[:, :-1]).sum(axis=1) / s2
            grad[:, 4] += -(d - 1) / sigma[:, 0] + (e**2).sum(axis=1) / sigma[:, 0] ** 3
        lag = self._lag(np.arange(d), series)
        v = s**2 * np.exp(h)
        r = series.y[:d] - (a + b * lag + dm * v)
        grad[:, 0] += temper * (r / v).sum(axis=1)
        grad[:, 1] += temper * (r * lag / v).sum(axis=1)
        grad[:, 2] += temper * r.sum(axis=1)
        grad[:, 5] += temper * ((-1.0 + 2.0 * dm * r + r**2 / v) / s).sum(axis=1)
        return grad


class AR1(StateSpaceModel):
    """Stationary AR(1) log-variance with a linear-regression mean.

    ``x_t ~ N(mu + phi (x_{t-1} - mu), sigma^2)``, ``x_1`` stationary, and
    ``y_t ~ N(z_t' beta, exp(x_t))``.
    """

    name = "ar1"
    block1 = (0, 1, 2)
    default_T = 400
    default_nx = 420

    def __init__(self, n_beta=20):
        self.n_beta = int(n_beta)
        self.param_names = ("phi", "sigma", "mu") + tuple(
            f"beta{j + 1}" for j in range(self.n_beta)
        )
        self.transforms = ("logit", "log", "identity") + ("identity",) * self.n_beta
        self.priors = (Uniform(0.0, 1.0), HalfNormal(10.0), Normal(0.0, 5.0)) + (
            Normal(0.0, 1.0),
        ) * self.n_beta
        self.true_theta = (0.5, 1.0, 0.38) + (0.1,) * self.n_beta

    def init_moments(self, theta, series):
        phi, sigma, mu = theta[:, 0:1], theta[:, 1:2], theta[:, 2:3]
        with np.errstate(divide="ignore", invalid="ignore"):
            return mu, sigma / np.sqrt(1.0 - phi**2)

    def transition_moments(self, theta, x_prev, t, series):
        phi, sigma, mu = theta[:, 0:1], theta[:, 1:2], theta[:, 2:3]
        return mu + phi * (x_prev - mu), sigma

    def _regression_mean(self, theta, t, series):
        if series is None or series.z is None:
            raise ValueError("ar1 observation density needs covariates z_t")
        beta = theta[:, 3:]
        if np.ndim(t) == 0:
            return (beta @ series.z[t])[:, None]
        return beta @ series.z[np.asarray(t)].T

    def observation_moments(self, theta, x, t, series):
        with np.errstate(over="ignore"):
            return self._regression_mean(theta, t, series), np.exp(0.5 * x)

    def simulate_covariates(self, T, rng):
        return rng.standard_normal((T, self.n_beta))

    def grad_log_joint(self, theta, path, series, temper=1.0):
        theta = _as_batch(theta)
        grad = self.grad_log_prior(theta)
        d = path.shape[1]
        if d == 0:
            return grad
        phi, sigma, mu = theta[:, 0:1], theta[:, 1:2], theta[:, 2:3]
        c = path - mu
        om = 1.0 - phi[:, 0] ** 2
        s2 = sigma[:, 0] ** 2
        c1 = c[:, 0]
        grad[:, 0] += -phi[:, 0] / om + c1**2 * phi[:, 0] / s2
        grad[:, 1] += -1.0 / sigma[:, 0] + c1**2 * om / sigma[:, 0] ** 3
        grad[:, 2] += c1 * om / s2
        if d > 1:
            e = c[:, 1:] - phi * c[:, :-1]
            grad[:, 0] += (e * c[:, :-1]).sum(axis=1) / s2
            grad[:, 1] += -(d - 1) / sigma[:, 0] + (e**2).sum(axis=1) / sigma[:, 0] ** 3
            grad[:, 2] += (e.sum(axis=1) * (1.0 - phi[:, 0])) / s2
        r = series.y[:d] - self._regression_mean(theta, np.arange(d), series)
        grad[:, 3:] += temper * ((r * np.exp(-path)) @ series.z[:d])
        return grad

    def __repr__(self):
        return f"AR1(n_beta={self.n_beta})"


class RestrictedModel(StateSpaceModel):
    """A model with some parameters held at fixed values.

    Only the free parameters carry a prior; fixed ones contribute nothing
    to the target. Useful for low-dimensional oracles (quadrature).
    """

    def __init__(self, base, fixed):
        unknown = set(fixed) - set(base.param_names)
        if unknown:
            raise ValueError(f"unknown parameters to fix: {sorted(unknown)}")
        self.base = base
        self.fixed = {k: float(v) for k, v in fixed.items()}
        self.free = tuple(i for i, n in enumerate(base.param_names) if n not in fixed)
        self.name = base.name
        self.param_names = tuple(base.param_names[i] for i in self.free)
        self.transforms = tuple(base.transforms[i] for i in self.free)
        self.priors = tuple(base.priors[i] for i in self.free)
        self.block1 = tuple(j for j, i in enumerate(self.free) if i in base.block1)
        self._full = np.array(
            [self.fixed.get(n, np.nan) for n in base.param_names], dtype=float
        )
        if hasattr(base, "true_theta"):
            self.true_theta = tuple(base.true_theta[i] for i in self.free)

    def expand(self, theta):
        theta = _as_batch(theta)
        full = np.tile(self._full, (theta.shape[0], 1))
        full[:, self.free] = theta
        return full

    def init_moments(self, theta, series):
        return self.base.init_moments(self.expand(theta), series)

    def transition_moments(self, theta, x_prev, t, series):
        return self.base.transition_moments(self.expand(theta), x_prev, t, series)

    def observation_moments(self, theta, x, t, series):
        return self.base.observation_moments(self.expand(theta), x, t, series)

    def grad_log_joint(self, theta, path, series, temper=1.0):
        theta = _as_batch(theta)
        full = self.expand(theta)
        g = self.base.grad_log_joint(full, path, series, temper)
        g -= self.base.grad_log_prior(full)
        return g[:, self.free] + self.grad_log_prior(theta)

    def simulate_covariates(self, T, rng):
        return self.base.simulate_covariates(T, rng)

    def __repr__(self):
        return f"RestrictedModel({self.base!r}, fixed={self.fixed})"


MODELS = {"bm": BrownianMotion, "allee": FlexibleAllee, "svm": SVInMean, "ar1": AR1}


def get_model(name, fixed=None, **kwargs):
    """Build a registered model by name, optionally with fixed parameters."""
    try:
        model = MODELS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    if fixed:
        model = RestrictedModel(model, fixed)
    return model
