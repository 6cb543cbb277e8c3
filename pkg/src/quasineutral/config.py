"""Experiment configuration with JSON round-trip."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from .scenarios import SCENARIOS

MIN_DT = 1e-8


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    # grid
    dim: int = 2
    points: int = 128
    extent: float = 2.0 * math.pi
    # fluid
    gamma: float = 5.0 / 3.0
    mu: float = 1.0
    nu: float = 1.0
    lambda_list: list[float] = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    T: float = 1.0
    # time step: dt = min(dt_per_lambda * lam, dt_cap), then checked against c_cfl
    c_cfl: float = 0.5
    dt_per_lambda: float = 1.0 / 32.0
    dt_cap: float = 1.5e-3
    propagator: str = "acoustic"
    # initial data
    scenario: str = "ill_prepared"
    seed: int = 0
    amplitude: float = 0.1
    mode: list[int] = field(default_factory=lambda: [1, 0])
    # outputs
    out_dir: str = "out"
    samples_per_period: int = 24
    diagnostics_stride: int = 1
    # analysis
    correctors: bool = True
    defect: bool = True
    strichartz: bool = False
    rates: bool = True
    extraction: str = "windowed"
    n_bins: int = 32
    low_freq_radius: float = 4.0
    corrector_start: float = 0.2
    corrector_diffusivity: float | None = None
    holder_max_lag: float = 0.2
    workers: int = 1
    profile: str = "desk"

    def __post_init__(self):
        self.lambda_list = [float(x) for x in self.lambda_list]
        self.mode = [int(m) for m in self.mode]
        self.validate()

    def validate(self) -> None:
        if self.dim not in (2, 3):
            raise ConfigError(f"dim must be 2 or 3, got {self.dim}")
        if self.points < 4 or self.points % 2:
            raise ConfigError(f"points must be an even number >= 4, got {self.points}")
        if not self.lambda_list:
            raise ConfigError("lambda_list is empty")
        if any(x <= 0 for x in self.lambda_list):
            raise ConfigError("lambda_list entries must be positive")
        if any(b >= a for a, b in zip(self.lambda_list, self.lambda_list[1:])):
            raise ConfigError(f"lambda_list must be strictly decreasing, got {self.lambda_list}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; registry: {', '.join(SCENARIOS)}")
        if len(self.mode) != self.dim:
            raise ConfigError(f"mode {self.mode} needs {self.dim} entries")
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if self.dt(min(self.lambda_list)) < MIN_DT:
            raise ConfigError(f"smallest lambda implies dt={self.dt(min(self.lambda_list)):.3e} < {MIN_DT}")
        if self.samples_per_period < 16:
            raise ConfigError("need at least 16 samples per oscillation period")
        if self.extraction not in ("windowed", "duhamel"):
            raise ConfigError(f"unknown extraction method {self.extraction!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def dt(self, lam: float) -> float:
        return min(self.dt_per_lambda * lam, self.dt_cap)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


PROFILES = {
    "desk": {"dim": 2, "points": 128, "mode": [1, 0]},
    "heavy": {"dim": 3, "points": 32, "mode": [1, 0, 0]},
}


def profile_config(name: str, **overrides) -> ExperimentConfig:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose desk or heavy")
    data = dict(PROFILES[name], profile=name)
    data.update(overrides)
    return ExperimentConfig.from_dict(data)
