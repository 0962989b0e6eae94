"""JSON run configuration with command-line overrides."""

import json
import os
from dataclasses import asdict, dataclass

from .engine import ConfigError, EngineConfig
from .models import MODELS, TimeSeries, get_model

FIELDS = ("model", "mode", "default_kernel", "N_theta", "Nx_pmmh", "r", "switch_policy",
          "seed", "data_path", "T")


@dataclass
class RunConfig:
    """User-facing run settings, one field per JSON key.

    ``data_path`` may be omitted; the data are then simulated from the
    model's reference parameter values with ``T`` observations and ``seed``.
    ``Nx_pmmh`` defaults to the model's reference particle count.
    """

    model: str = "bm"
    mode: str = "DA"
    default_kernel: str = "PMMH"
    N_theta: int = 100
    Nx_pmmh: int | None = None
    r: float = 1.0
    switch_policy: str = "never"
    seed: int = 0
    data_path: str | None = None
    T: int | None = None

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError("model", f"unknown model {self.model!r}; choose from {sorted(MODELS)}")
        if not _is_int(self.seed) or self.seed < 0:
            raise ConfigError("seed", f"must be a nonnegative integer, got {self.seed!r}")
        if self.T is not None and (not _is_int(self.T) or self.T < 1):
            raise ConfigError("T", f"must be a positive integer, got {self.T!r}")
        if not _is_number(self.r):
            raise ConfigError("r", f"must be a number, got {self.r!r}")
        if self.data_path is not None and not os.path.isfile(self.data_path):
            raise ConfigError("data_path", f"file not found: {self.data_path}")
        self.engine_config()
        return self

    def build_model(self):
        return get_model(self.model)

    def nx_pmmh(self):
        return self.Nx_pmmh if self.Nx_pmmh is not None else self.build_model().default_nx

    def engine_config(self):
        return EngineConfig(mode=self.mode, default_kernel=self.default_kernel,
                            n_theta=self.N_theta, nx_pmmh=self.nx_pmmh(), r=float(self.r),
                            policy=self.switch_policy)

    def load_series(self, rng=None):
        """The observations: read from ``data_path`` or simulated."""
        import numpy as np

        if self.data_path is not None:
            try:
                return TimeSeries.from_csv(self.data_path)
            except (OSError, ValueError) as exc:
                raise ConfigError("data_path", str(exc)) from None
        model = self.build_model()
        T = self.T if self.T is not None else model.default_T
        rng = rng if rng is not None else np.random.default_rng(self.seed)
        series, _ = model.simulate(np.asarray(model.true_theta), T, rng)
        return series

    def to_dict(self):
        return asdict(self)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def load_config(path=None, overrides=None):
    """Read a JSON config (if ``path``) and apply non-``None`` ``overrides``."""
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be a JSON object")
        unknown = sorted(set(data) - set(FIELDS))
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration field")
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    if "N_theta" in data and not _is_int(data["N_theta"]):
        raise ConfigError("N_theta", f"must be an integer, got {data['N_theta']!r}")
    if data.get("Nx_pmmh") is not None and not _is_int(data["Nx_pmmh"]):
        raise ConfigError("Nx_pmmh", f"must be an integer, got {data['Nx_pmmh']!r}")
    return RunConfig(**data).validate()
