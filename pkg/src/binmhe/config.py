"""Scenario configuration: defaults, key-value file parsing, manifest round trip.

Config files are plain ``key = value`` text, one scenario per file; ``#``
starts a comment. List-valued keys take comma- or space-separated entries.
Unknown keys are a hard error so typos cannot silently fall back to
defaults. CLI flags override file values.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

_EDGES = ("bottom", "top", "left", "right")
_THRESHOLD_MODES = ("uniform", "evenly")
_LAYOUTS = ("random", "fixed")


class ConfigError(ValueError):
    """Malformed or inconsistent scenario configuration."""


@dataclass
class ScenarioConfig:
    """Experiment constants; the defaults reproduce the case-study setup:
    a 7.44 m^2 domain with the concentration held at 30 on the bottom edge,
    a ~900-vertex truth grid stepped at 1 s, a ~100-node estimator grid at
    0.1 Hz, horizon 5, arrival/process/prior weights 1e3/1e2/1e3, prior
    mean 5, 1200 s duration, and thresholds drawn uniformly in
    (0.05, 29.95)."""

    domain_width: float = 3.1
    domain_height: float = 2.4
    dirichlet_edge: str = "bottom"
    diffusivity: float = 0.01
    dirichlet_value: float = 30.0
    truth_dt: float = 1.0
    truth_nx: int = 33
    truth_ny: int = 26
    est_nx: int = 11
    est_ny: int = 7
    sample_ratio: int = 10
    duration: float = 1200.0
    horizon: int = 5
    arrival_weight: float = 1000.0
    process_weight: float = 100.0
    prior_weight: float = 1000.0
    prior_mean: float = 5.0
    truth_x0: float = 0.0
    truth_noise_var: float = 0.0
    sensor_count: int = 5
    noise_var: float = 0.25
    estimator_noise_var: float = 0.0     # 0 = use noise_var
    threshold_low: float = 0.05
    threshold_high: float = 29.95
    threshold_mode: str = "uniform"
    sensor_layout: str = "random"
    mc_runs: int = 100
    rng_seed: int = 0
    probe_nx: int = 19
    probe_ny: int = 16
    solver_tol: float = 1e-7
    solver_max_iter: int = 500
    workers: int = 1
    out_dir: str = "out"
    noise_sweep_values: tuple = (1e-4, 1e-2, 0.25, 1.0, 4.0, 16.0)
    noise_sweep_sensors: int = 20
    sensor_sweep_values: tuple = (5, 20, 100)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.domain_width <= 0 or self.domain_height <= 0:
            raise ConfigError("domain dimensions must be positive")
        for name in ("truth_nx", "truth_ny", "est_nx", "est_ny",
                     "probe_nx", "probe_ny", "sensor_count", "mc_runs",
                     "sample_ratio", "solver_max_iter"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.truth_dt <= 0 or self.duration <= 0:
            raise ConfigError("truth_dt and duration must be positive")
        if self.dirichlet_edge not in _EDGES:
            raise ConfigError(f"dirichlet_edge must be one of {_EDGES}")
        if self.threshold_mode not in _THRESHOLD_MODES:
            raise ConfigError(f"threshold_mode must be one of {_THRESHOLD_MODES}")
        if self.sensor_layout not in _LAYOUTS:
            raise ConfigError(f"sensor_layout must be one of {_LAYOUTS}")
        if not self.threshold_low < self.threshold_high:
            raise ConfigError("threshold_low must be below threshold_high")
        if min(self.arrival_weight, self.process_weight, self.prior_weight) <= 0:
            raise ConfigError("weights must be positive")
        if self.noise_var < 0 or self.estimator_noise_var < 0:
            raise ConfigError("noise variances cannot be negative")
        if self.solver_tol <= 0:
            raise ConfigError("solver_tol must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def as_mapping(self):
        out = asdict(self)
        out["noise_sweep_values"] = list(self.noise_sweep_values)
        out["sensor_sweep_values"] = list(self.sensor_sweep_values)
        return out


def _coerce(name, kind, raw):
    try:
        if kind is float:
            return float(raw)
        if kind is int:
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        if kind is str:
            return str(raw)
        if kind is tuple:
            if isinstance(raw, str):
                parts = raw.replace(",", " ").split()
            else:
                parts = list(raw)
            return tuple(float(p) for p in parts)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot parse value {raw!r} for key {name!r}") from None
    raise ConfigError(f"unsupported config field type for {name!r}")


def from_mapping(mapping):
    """Build a ScenarioConfig from a dict, rejecting unknown keys."""
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = {name: _coerce(name, type(getattr(ScenarioConfig, name)), raw)
              for name, raw in mapping.items()}
    return ScenarioConfig(**values)


def load_config(path):
    """Parse a key-value scenario file."""
    mapping = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', "
                                  f"got {stripped!r}")
            key, _, value = stripped.partition("=")
            key, value = key.strip(), value.strip()
            if key in mapping:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            mapping[key] = value
    return from_mapping(mapping)
