"""Planner, vehicle and simulator configuration.

All values are SI units. Defaults follow the simulation parameters used for
the merge evaluation: 5 lateral stations per lane, 3 look-ahead layers,
7 acceleration samples over [-2, 2] m/s^2 and +-0.6 rad steering angle and
steering-rate bounds.
"""

import dataclasses
import json
import logging
import math
import sys
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any
from typing import Dict
from typing import Optional

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

VARIANTS = ("full", "ablation-A", "ablation-B", "no-obs")


@dataclass(frozen=True)
class VehicleConfig:
    length: float = 4.8
    width: float = 1.9
    wheelbase: float = 2.7
    steering_max: float = 0.6
    steering_rate_max: float = 0.6

    def __post_init__(self):
        for name in ("length", "width", "wheelbase", "steering_max", "steering_rate_max"):
            if getattr(self, name) <= 0:
                msg = f"vehicle.{name} must be positive"
                raise ConfigError(msg)

    @property
    def kappa_max(self) -> float:
        return math.tan(self.steering_max) / self.wheelbase

    def kappa_rate_max(self, v: float) -> float:
        """Bound on dkappa/ds at speed v.

        dkappa/dt = steering_rate / (L cos^2 delta) is smallest at delta = 0, so
        the guaranteed rate is steering_rate / L. Below 1 m/s the speed is held
        at 1 m/s so the bound stays finite.
        """
        return self.steering_rate_max / (self.wheelbase * max(v, 1.0))


@dataclass(frozen=True)
class LatticeConfig:
    n_layers: int = 3
    stations_per_lane: int = 5
    accel_min: float = -2.0
    accel_max: float = 2.0
    accel_samples: int = 7
    t_horizon: float = 6.0
    d_min: float = 30.0
    d_max: float = 120.0
    # None means half the vehicle width plus a small clearance
    lateral_margin: Optional[float] = None

    def __post_init__(self):
        if self.n_layers < 1 or self.stations_per_lane < 1 or self.accel_samples < 1:
            msg = "lattice counts must be >= 1"
            raise ConfigError(msg)
        if self.accel_min > self.accel_max:
            msg = "lattice.accel_min must not exceed accel_max"
            raise ConfigError(msg)
        if not 0 < self.d_min <= self.d_max or self.t_horizon <= 0:
            msg = "look-ahead requires 0 < d_min <= d_max and t_horizon > 0"
            raise ConfigError(msg)


@dataclass(frozen=True)
class CostWeights:
    w_curvature: float = 10.0
    w_jerk: float = 1.0
    w_curvature_rate: float = 10.0
    w_velocity: float = 0.2
    w_consistency: float = 0.5
    w_center: float = 1.0
    w_obs: float = 5.0
    alpha1: float = 1.0
    alpha2: float = 1.0
    m: float = 1.0
    m_merge: float = 2.0
    c: float = 10.0
    t_reaction: float = 1.0
    a_max_dec: float = 2.0
    a_max_acc: float = 2.0
    eps_t: float = 0.05
    footprint_inflation: float = 0.2

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                msg = f"weights.{f.name} must be >= 0"
                raise ConfigError(msg)
        if self.m_merge < self.m:
            msg = "weights.m_merge must be greater than or equal to weights.m"
            raise ConfigError(msg)
        if min(self.c, self.a_max_dec, self.a_max_acc, self.t_reaction) <= 0:
            msg = "weights.c, a_max_dec, a_max_acc and t_reaction must be positive"
            raise ConfigError(msg)


@dataclass(frozen=True)
class PlannerConfig:
    vehicle: VehicleConfig = field(default_factory=VehicleConfig)
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    weights: CostWeights = field(default_factory=CostWeights)
    time_budget: float = 0.09
    waypoint_dt: float = 0.1
    waypoint_horizon: float = 5.0
    variant: str = "full"

    def __post_init__(self):
        if self.time_budget <= 0:
            msg = "time_budget must be positive"
            raise ConfigError(msg)
        if self.variant not in VARIANTS:
            msg = f"unknown variant {self.variant!r}, expected one of {VARIANTS}"
            raise ConfigError(msg)


@dataclass(frozen=True)
class IdmParams:
    v0_desired: float = 15.28
    T_headway: float = 1.5
    a_max: float = 1.5
    b_comf: float = 2.0
    s0_min_gap: float = 2.0
    delta: float = 4.0
    yield_factor: float = 0.1

    def __post_init__(self):
        for name in ("v0_desired", "T_headway", "a_max", "b_comf", "s0_min_gap", "delta"):
            if getattr(self, name) <= 0:
                msg = f"idm.{name} must be positive"
                raise ConfigError(msg)
        if not 0.0 <= self.yield_factor <= 1.0:
            msg = "idm.yield_factor must lie in [0, 1]"
            raise ConfigError(msg)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.02
    plan_period: float = 0.1
    timeout: float = 100.0
    yield_anticipation: float = 0.2

    def __post_init__(self):
        if self.dt <= 0 or self.plan_period <= 0:
            msg = "sim.dt and sim.plan_period must be positive"
            raise ConfigError(msg)
        ratio = self.plan_period / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            msg = "sim.dt must divide sim.plan_period"
            raise ConfigError(msg)

    @property
    def steps_per_plan(self) -> int:
        return int(round(self.plan_period / self.dt))


def _build(cls, values: Dict[str, Any], section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        msg = f"unknown keys in [{section}]: {sorted(unknown)}"
        raise ConfigError(msg)
    return cls(**values)


def planner_config_from_dict(data: Dict[str, Any]) -> PlannerConfig:
    data = dict(data)
    sections = {
        "vehicle": VehicleConfig,
        "lattice": LatticeConfig,
        "weights": CostWeights,
    }
    kwargs = {}
    for name, cls in sections.items():
        kwargs[name] = _build(cls, data.pop(name, {}), name)
    data.pop("sim", None)
    kwargs.update(data)
    return _build(PlannerConfig, kwargs, "planner")


def sim_config_from_dict(data: Dict[str, Any]) -> SimConfig:
    return _build(SimConfig, dict(data.get("sim", {})), "sim")


def read_config_file(path) -> Dict[str, Any]:
    path = Path(path)
    try:
        if path.suffix == ".toml":
            with path.open("rb") as f:
                return tomllib.load(f)
        with path.open() as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        msg = f"cannot read config {path}: {e}"
        raise ConfigError(msg) from e


def load_planner_config(path=None) -> PlannerConfig:
    if path is None:
        return PlannerConfig()
    logger.debug("loading planner config from %s", path)
    return planner_config_from_dict(read_config_file(path))


def load_sim_config(path=None) -> SimConfig:
    if path is None:
        return SimConfig()
    return sim_config_from_dict(read_config_file(path))


def config_to_dict(config) -> Dict[str, Any]:
    return dataclasses.asdict(config)
