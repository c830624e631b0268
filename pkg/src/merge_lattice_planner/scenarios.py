"""Merge scenarios: roads, ego start and main-lane traffic.

Two generators are provided, a time-headway sweep over a fixed ramp and a
seeded random suite over eight ramp templates. Scenarios and suite
manifests are stored as JSON.
"""

import json
import logging
import math
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from .config import IdmParams
from .errors import ConfigError
from .errors import ScenarioError
from .path_geometry import Lane
from .path_geometry import RoadModel
from .path_geometry import road_from_dict
from .path_geometry import road_to_dict
from .prediction import TrafficVehicle

logger = logging.getLogger(__name__)

KMH = 1.0 / 3.6
SWEEP_SPEED = 55.0 * KMH
SWEEP_YIELD = 0.1
SUITE_YIELDS = (0.1, 0.7)
# margin of road kept after the ramp end for the look-ahead
RUNOUT = 250.0
S_HARD_NOSE = 100.0
EGO_START = 40.0
STREAM_AHEAD = 200.0
STREAM_DURATION = 100.0


@dataclass(frozen=True)
class GeometryTemplate:
    name: str
    ramp_length: float
    taper: float
    main_curvature: float = 0.0

    def road(self, speed_limit: float, w_merge: float = 3.5, w_main: float = 3.5) -> RoadModel:
        s_soft = S_HARD_NOSE + self.taper
        s_end = s_soft + self.ramp_length
        total = s_end + RUNOUT
        arcs = [[60.0, 0.0], [s_end - 60.0, self.main_curvature], [total - s_end, 0.0]]
        road = road_from_dict({
            "arcs": arcs,
            "start": [0.0, 0.0, 0.0],
            "spacing": 0.5,
            "w_merge": w_merge,
            "w_main": w_main,
            "s_hard_nose": S_HARD_NOSE,
            "s_soft_nose": s_soft,
            "s_ramp_end": s_end,
            "speed_limit": speed_limit,
        })
        road.geometry["template"] = self.name
        return road


TEMPLATES = (
    GeometryTemplate("straight-short", 120.0, 40.0),
    GeometryTemplate("straight-medium", 200.0, 60.0),
    GeometryTemplate("straight-long", 350.0, 80.0),
    GeometryTemplate("left-short", 150.0, 50.0, 1.0 / 400.0),
    GeometryTemplate("right-short", 150.0, 50.0, -1.0 / 400.0),
    GeometryTemplate("left-long", 250.0, 60.0, 1.0 / 400.0),
    GeometryTemplate("right-long", 300.0, 70.0, -1.0 / 400.0),
    GeometryTemplate("gentle-left", 180.0, 40.0, 1.0 / 800.0),
)


@dataclass(frozen=True)
class VehicleSpawn:
    id: str
    lane: Lane
    s: float
    v: float
    idm: IdmParams = field(default_factory=IdmParams)
    length: float = 4.8
    width: float = 1.9

    def vehicle(self) -> TrafficVehicle:
        return TrafficVehicle(self.id, self.lane, self.s, self.v, self.length, self.width, idm=self.idm)


@dataclass(frozen=True)
class TrafficStream:
    """Evenly spaced vehicles at a common speed and time headway.

    Vehicles fill the lane from ``s_front`` back to the road start and keep
    entering at the road start until ``count`` vehicles have been spawned.
    The k-th vehicle uses ``yield_pattern[k % len(yield_pattern)]``.
    """

    name: str
    headway: float
    speed: float
    count: int
    s_front: float
    yield_pattern: Tuple[float, ...] = (SWEEP_YIELD,)
    lane: Lane = Lane.MAIN
    desired_speed: Optional[float] = None
    length: float = 4.8
    width: float = 1.9

    @property
    def spacing(self) -> float:
        """Center to center distance at the stream headway."""
        return self.length + IdmParams().s0_min_gap + self.headway * self.speed

    def idm(self, index: int) -> IdmParams:
        v0 = self.desired_speed if self.desired_speed is not None else self.speed
        return IdmParams(
            v0_desired=max(v0, 0.1),
            T_headway=self.headway,
            yield_factor=self.yield_pattern[index % len(self.yield_pattern)],
        )

    def vehicle(self, index: int, s: float) -> TrafficVehicle:
        return TrafficVehicle(f"{self.name}-{index:03d}", self.lane, s, self.speed, self.length, self.width, idm=self.idm(index))

    def initial(self) -> List[TrafficVehicle]:
        out = []
        s = self.s_front
        while s >= 0.0 and len(out) < self.count:
            out.append(self.vehicle(len(out), s))
            s -= self.spacing
        return out


@dataclass(frozen=True)
class Scenario:
    label: str
    road: RoadModel
    ego_s: float
    ego_l: float
    ego_v: float
    vehicles: Tuple[VehicleSpawn, ...] = ()
    streams: Tuple[TrafficStream, ...] = ()
    seed: Optional[int] = None
    template: str = ""

    def initial_traffic(self) -> List[TrafficVehicle]:
        out = [v.vehicle() for v in self.vehicles]
        for stream in self.streams:
            out.extend(stream.initial())
        return out


def validate_scenario(scenario: Scenario, ego_length: float = 4.8, ego_width: float = 1.9) -> List[str]:
    """Diagnostics for a scenario; an empty list means it is valid."""
    road = scenario.road
    out = []
    if not 0.0 <= scenario.ego_s < road.s_hard_nose:
        out.append(f"ego placement: s={scenario.ego_s:.1f} must lie in [0, s_hard_nose={road.s_hard_nose:.1f})")
    half = 0.5 * ego_width
    if not half <= scenario.ego_l <= road.w_merge - half:
        out.append(f"ego placement: l={scenario.ego_l:.2f} does not fit the merge lane")
    if scenario.ego_v < 0:
        out.append(f"ego speed {scenario.ego_v} is negative")
    if road.total_length < road.s_ramp_end + 30.0:
        out.append("road ends less than 30 m after the ramp end")

    for stream in scenario.streams:
        if stream.headway <= 0:
            out.append(f"stream {stream.name}: headway must be positive")
        if stream.speed < 0 or stream.count < 0:
            out.append(f"stream {stream.name}: speed and count must be non-negative")
        if not stream.yield_pattern or any(not 0.0 <= y <= 1.0 for y in stream.yield_pattern):
            out.append(f"stream {stream.name}: yield factors must lie in [0, 1]")
    if out:
        return out

    traffic = scenario.initial_traffic()
    for v in traffic:
        if not 0.0 <= v.s <= road.total_length:
            out.append(f"vehicle {v.id}: s={v.s:.1f} is off the road")
        if v.lane == Lane.MERGE and v.s >= road.s_ramp_end:
            out.append(f"vehicle {v.id}: merge lane ends before s={v.s:.1f}")
        if v.lane == Lane.OFF_ROAD:
            out.append(f"vehicle {v.id}: not in a lane")
    for lane in (Lane.MERGE, Lane.MAIN):
        ordered = sorted((v for v in traffic if v.lane == lane), key=lambda v: v.s)
        for a, b in zip(ordered, ordered[1:]):
            if b.s - a.s < 0.5 * (a.length + b.length):
                out.append(f"overlap: {a.id} and {b.id} at s={a.s:.1f}/{b.s:.1f}")
    for v in traffic:
        if v.lane == Lane.MERGE and abs(v.s - scenario.ego_s) < 0.5 * (v.length + ego_length):
            out.append(f"overlap: ego and {v.id} at s={v.s:.1f}")
    return out


def ensure_valid(scenario: Scenario):
    diagnostics = validate_scenario(scenario)
    if diagnostics:
        raise ScenarioError([f"{scenario.label}: {d}" for d in diagnostics])


def _stream_count(speed: float, spacing: float, s_front: float) -> int:
    return int(math.ceil((s_front + speed * STREAM_DURATION) / spacing)) + 1


def generate_headway_sweep(
    count: int = 50,
    headway_min: float = 0.25,
    headway_max: float = 3.0,
    speed: float = SWEEP_SPEED,
    yield_factor: float = SWEEP_YIELD,
    template: GeometryTemplate = TEMPLATES[1],
    speed_limit: float = 65.0 * KMH,
    ego_speed: float = 15.0,
) -> List[Scenario]:
    """Main-lane streams of increasing density over one fixed ramp."""
    if count < 2:
        msg = "a headway sweep needs at least two scenarios"
        raise ConfigError(msg)
    if not 0 < headway_min <= headway_max:
        msg = "headways must satisfy 0 < min <= max"
        raise ConfigError(msg)
    road = template.road(speed_limit)
    s_front = min(EGO_START + STREAM_AHEAD, road.total_length - 10.0)
    out = []
    for i, h in enumerate(np.linspace(headway_min, headway_max, count)):
        h = float(h)
        single = TrafficStream("main", h, speed, 1, s_front)
        stream = TrafficStream(
            "main",
            h,
            speed,
            _stream_count(speed, single.spacing, s_front),
            s_front,
            yield_pattern=(yield_factor,),
        )
        out.append(Scenario(
            label=f"headway-{i:02d}",
            road=road,
            ego_s=EGO_START,
            ego_l=0.5 * road.w_merge,
            ego_v=ego_speed,
            streams=(stream,),
            seed=i,
            template=template.name,
        ))
    return out


def _range(name: str, value) -> Tuple[float, float]:
    lo, hi = (float(v) for v in value)
    if lo > hi or lo < 0:
        msg = f"distribution {name} needs 0 <= low <= high"
        raise ConfigError(msg)
    return lo, hi


@dataclass(frozen=True)
class SuiteDistributions:
    """Sampling ranges for random suites; speeds in m/s."""

    lane_width: Tuple[float, float] = (3.3, 3.7)
    speed_limit: Tuple[float, float] = (60.0 * KMH, 120.0 * KMH)
    main_speed: Tuple[float, float] = (10.0 * KMH, 120.0 * KMH)
    headway: Tuple[float, float] = (0.5, 3.0)
    ego_speed: Tuple[float, float] = (8.0, 20.0)
    yield_factors: Tuple[float, ...] = SUITE_YIELDS
    merge_lead_probability: float = 0.25

    def __post_init__(self):
        for name in ("lane_width", "speed_limit", "main_speed", "headway", "ego_speed"):
            _range(name, getattr(self, name))
        if self.headway[0] <= 0:
            msg = "distribution headway must be positive"
            raise ConfigError(msg)
        if self.lane_width[0] < 2.5:
            msg = "lanes narrower than 2.5 m cannot fit the ego"
            raise ConfigError(msg)
        if not self.yield_factors or any(not 0.0 <= y <= 1.0 for y in self.yield_factors):
            msg = "yield factors must lie in [0, 1]"
            raise ConfigError(msg)
        if not 0.0 <= self.merge_lead_probability <= 1.0:
            msg = "merge_lead_probability must lie in [0, 1]"
            raise ConfigError(msg)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SuiteDistributions":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            msg = f"unknown distribution keys: {sorted(unknown)}"
            raise ConfigError(msg)
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


def generate_random_suite(
    distributions: Optional[SuiteDistributions] = None,
    seed: int = 0,
    count: int = 160,
) -> List[Scenario]:
    """Seeded suite with templates assigned round-robin so each is used
    equally often when ``count`` is a multiple of the template count."""
    dist = distributions or SuiteDistributions()
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        template = TEMPLATES[i % len(TEMPLATES)]
        w = float(rng.uniform(*dist.lane_width))
        speed_limit = float(rng.uniform(*dist.speed_limit))
        road = template.road(speed_limit, w_merge=w, w_main=w)
        main_speed = float(rng.uniform(*dist.main_speed))
        headway = float(rng.triangular(dist.headway[0], 0.5 * sum(dist.headway), dist.headway[1]))
        ego_v = float(rng.uniform(*dist.ego_speed))
        pattern = tuple(float(y) for y in rng.choice(dist.yield_factors, size=16))
        s_front = min(EGO_START + float(rng.uniform(50.0, STREAM_AHEAD)), road.total_length - 10.0)
        single = TrafficStream("main", headway, main_speed, 1, s_front)
        stream = TrafficStream(
            "main",
            headway,
            main_speed,
            _stream_count(main_speed, single.spacing, s_front),
            s_front,
            yield_pattern=pattern,
            desired_speed=main_speed,
        )
        vehicles = ()
        if rng.uniform() < dist.merge_lead_probability:
            s_lead = EGO_START + float(rng.uniform(20.0, 50.0))
            v_lead = max(ego_v + float(rng.uniform(-3.0, 3.0)), 1.0)
            vehicles = (VehicleSpawn("ramp-000", Lane.MERGE, s_lead, v_lead, IdmParams(v0_desired=v_lead)),)
        out.append(Scenario(
            label=f"random-{i:03d}",
            road=road,
            ego_s=EGO_START,
            ego_l=0.5 * w,
            ego_v=ego_v,
            vehicles=vehicles,
            streams=(stream,),
            seed=int(rng.integers(2**31)),
            template=template.name,
        ))
    return out


def scenario_to_dict(scenario: Scenario) -> Dict[str, Any]:
    def lane_fix(d):
        d["lane"] = Lane(d["lane"]).value
        return d

    return {
        "label": scenario.label,
        "seed": scenario.seed,
        "template": scenario.template,
        "road": road_to_dict(scenario.road),
        "ego": {"s": scenario.ego_s, "l": scenario.ego_l, "v": scenario.ego_v},
        "vehicles": [lane_fix(asdict(v)) for v in scenario.vehicles],
        "streams": [lane_fix(asdict(st)) for st in scenario.streams],
    }


def scenario_from_dict(data: Dict[str, Any]) -> Scenario:
    try:
        road_data = dict(data["road"])
        template = road_data.pop("template", data.get("template", ""))
        road = road_from_dict(road_data)
        if template:
            road.geometry["template"] = template
        vehicles = tuple(
            VehicleSpawn(**{**v, "lane": Lane(v["lane"]), "idm": IdmParams(**v.get("idm", {}))})
            for v in data.get("vehicles", [])
        )
        streams = tuple(
            TrafficStream(**{**st, "lane": Lane(st.get("lane", "main")), "yield_pattern": tuple(st.get("yield_pattern", (SWEEP_YIELD,)))})
            for st in data.get("streams", [])
        )
        ego = data["ego"]
        return Scenario(
            label=data.get("label", "scenario"),
            road=road,
            ego_s=float(ego["s"]),
            ego_l=float(ego["l"]),
            ego_v=float(ego["v"]),
            vehicles=vehicles,
            streams=streams,
            seed=data.get("seed"),
            template=template,
        )
    except (KeyError, TypeError, ValueError) as e:
        msg = f"invalid scenario: {e}"
        raise ConfigError(msg) from e


def save_scenario(scenario: Scenario, path):
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2))


def load_scenario(path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))


def write_suite(scenarios: Sequence[Scenario], out_dir, name: str, seed: Optional[int] = None) -> Path:
    """One JSON file per scenario plus ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for sc in scenarios:
        filename = f"{sc.label}.json"
        save_scenario(sc, out_dir / filename)
        entries.append({"file": filename, "label": sc.label, "seed": sc.seed})
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"suite": name, "seed": seed, "scenarios": entries}, indent=2))
    logger.info("wrote %d scenarios to %s", len(entries), out_dir)
    return manifest


def load_suite(manifest_path) -> List[Scenario]:
    manifest_path = Path(manifest_path)
    data = json.loads(manifest_path.read_text())
    return [load_scenario(manifest_path.parent / e["file"]) for e in data["scenarios"]]


BUILTIN_SUITES = ("headway_sweep", "random")


def builtin_suite(name: str, seed: int = 0, count: Optional[int] = None) -> List[Scenario]:
    if name == "headway_sweep":
        return generate_headway_sweep(count or 50)
    if name == "random":
        return generate_random_suite(seed=seed, count=count or 160)
    msg = f"unknown suite {name!r}, expected one of {BUILTIN_SUITES}"
    raise ConfigError(msg)
