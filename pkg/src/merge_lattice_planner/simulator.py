"""Closed-loop merge simulation.

Traffic follows the intelligent driver model. Main-lane vehicles react to a
merging ego through a blended virtual leader whose weight grows with the
vehicle's yield factor and the ego's encroachment into the main lane. The
ego tracks the planned trajectory exactly.
"""

import json
import logging
import math
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from typing import Any
from typing import Dict
from typing import List
from typing import NamedTuple
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from .behavior import BehaviorState
from .behavior import desired_speed
from .behavior import select_vehicles_of_interest
from .behavior import update_behavior
from .config import IdmParams
from .config import PlannerConfig
from .config import SimConfig
from .config import VehicleConfig
from .errors import OutOfRangeError
from .errors import ProjectionError
from .lattice import lookahead_distance
from .metrics import compute_episode_metrics
from .path_geometry import Lane
from .path_geometry import RoadModel
from .path_geometry import lateral_offset_state
from .path_geometry import project_many
from .path_geometry import query_pose
from .path_geometry import wrap_angle
from .planner import EgoState
from .planner import MergePlanner
from .planner import Trajectory
from .prediction import OrientedBox
from .prediction import TrafficVehicle
from .prediction import boxes_overlap
from .prediction import vehicle_box
from .scenarios import Scenario
from .scenarios import TrafficStream
from .scenarios import ensure_valid

logger = logging.getLogger(__name__)

IDM_DECEL_FLOOR = -8.0
# encroachment weight once the ego signals its intent to merge
F_MIN = 0.2
# gap standing in for a missing real leader when blending with the ego
FREE_ROAD_GAP = 150.0

DEFAULT_IDM = IdmParams()


def idm_acceleration(v: float, gap: float, v_lead: float, p: IdmParams) -> float:
    """Intelligent driver model acceleration; ``gap = inf`` means free road."""
    free = 1.0 - (v / p.v0_desired) ** p.delta
    if math.isinf(gap):
        a = p.a_max * free
    elif gap <= 0.0:
        return IDM_DECEL_FLOOR
    else:
        s_star = p.s0_min_gap + max(0.0, v * p.T_headway + v * (v - v_lead) / (2.0 * math.sqrt(p.a_max * p.b_comf)))
        a = p.a_max * (free - (s_star / gap) ** 2)
    return min(max(a, IDM_DECEL_FLOOR), p.a_max)


class EgoFootprint(NamedTuple):
    s: float
    l: float  # noqa: E741
    v: float
    heading_error: float
    length: float
    width: float

    def lateral_extent(self) -> Tuple[float, float]:
        half = 0.5 * (self.length * abs(math.sin(self.heading_error)) + self.width * abs(math.cos(self.heading_error)))
        return self.l - half, self.l + half


def encroachment(ego: EgoFootprint, road: RoadModel) -> float:
    """Fraction of the ego's lateral extent inside the main lane."""
    lo, hi = ego.lateral_extent()
    top = road.w_merge + road.w_main
    inside = max(0.0, min(hi, top) - max(lo, road.w_merge))
    return min(inside / (hi - lo), 1.0)


def blocks_lane(ego: EgoFootprint, l_center: float, width: float) -> bool:
    """True once the ego footprint reaches laterally into a vehicle's body
    band, centred on its lane centre."""
    lo, hi = ego.lateral_extent()
    return hi > l_center - 0.5 * width and lo < l_center + 0.5 * width


def merge_reactive_gap(
    main_vehicle: TrafficVehicle,
    ego: EgoFootprint,
    road: RoadModel,
    yield_factor: float,
    leader: Optional[Tuple[float, float]] = None,
    intent: bool = False,
) -> Optional[Tuple[float, float]]:
    """Effective (gap, leader speed) a main-lane vehicle perceives when the
    ego is merging ahead of it, or None when the ego does not matter.

    ``leader`` is the real in-lane (gap, speed); ``intent`` is set once the
    ego is past the soft nose in a merge state.
    """
    if ego.s <= main_vehicle.s:
        return None
    f = encroachment(ego, road)
    f_eff = max(f, F_MIN) if intent else f
    if f_eff <= 0.0:
        return None
    w = yield_factor * f_eff
    gap_ego = ego.s - main_vehicle.s - 0.5 * (ego.length + main_vehicle.length)
    if leader is not None and gap_ego >= leader[0]:
        # the real leader is nearer than the ego
        return None
    gap_real, v_real = leader if leader is not None else (max(FREE_ROAD_GAP, gap_ego), main_vehicle.v)
    return gap_real * (1.0 - w) + gap_ego * w, v_real * (1.0 - w) + ego.v * w


@dataclass(frozen=True)
class StreamState:
    stream: TrafficStream
    spawned: int
    last_id: Optional[str] = None


@dataclass(frozen=True)
class WorldState:
    t: float
    ego: EgoState
    ego_s: float
    ego_l: float
    traffic: Tuple[TrafficVehicle, ...]
    behavior: BehaviorState = BehaviorState.PRE_MERGE_BEFORE_HARD_NOSE
    streams: Tuple[StreamState, ...] = ()
    plan_start: float = 0.0
    ego_kappa: float = 0.0
    failure: Optional[str] = None
    colliding: Optional[Tuple[str, str]] = None

    def footprint(self, road: RoadModel, vehicle: VehicleConfig) -> EgoFootprint:
        s = min(max(self.ego_s, 0.0), road.total_length)
        heading_error = wrap_angle(self.ego.theta - query_pose(road.reference, s)[2])
        return EgoFootprint(self.ego_s, self.ego_l, self.ego.v, float(heading_error), vehicle.length, vehicle.width)


def initial_world(scenario: Scenario) -> WorldState:
    road = scenario.road
    state = lateral_offset_state(road.reference, scenario.ego_s, scenario.ego_l)
    ego = EgoState(state.x, state.y, state.theta, scenario.ego_v, 0.0, state.kappa)
    streams = []
    traffic = list(scenario.initial_traffic())
    for stream in scenario.streams:
        placed = [v for v in traffic if v.id.startswith(f"{stream.name}-")]
        last = min(placed, key=lambda v: v.s).id if placed else None
        streams.append(StreamState(stream, len(placed), last))
    return WorldState(
        t=0.0,
        ego=ego,
        ego_s=scenario.ego_s,
        ego_l=scenario.ego_l,
        traffic=tuple(traffic),
        streams=tuple(streams),
        ego_kappa=state.kappa,
    )


def _leaders(traffic: Sequence[TrafficVehicle]) -> Dict[str, Optional[TrafficVehicle]]:
    out = {}
    for lane in (Lane.MERGE, Lane.MAIN):
        ordered = sorted((v for v in traffic if v.lane == lane), key=lambda v: (v.s, v.id))
        for follower, leader in zip(ordered, ordered[1:] + [None]):
            out[follower.id] = leader
    return out


def _traffic_accelerations(world: WorldState, road: RoadModel, vehicle: VehicleConfig) -> List[float]:
    ego = world.footprint(road, vehicle)
    f = encroachment(ego, road)
    intent = world.behavior in (BehaviorState.MERGE_INITIATION, BehaviorState.MERGE_CONTINUATION)
    leaders = _leaders(world.traffic)
    out = []
    for veh in world.traffic:
        p = veh.idm or DEFAULT_IDM
        lead = leaders.get(veh.id)
        real = None
        if lead is not None:
            real = (lead.s - veh.s - 0.5 * (lead.length + veh.length), lead.v)
        if veh.lane == Lane.MAIN and ego.s > veh.s:
            ego_gap = ego.s - veh.s - 0.5 * (ego.length + veh.length)
            if f >= 1.0 or blocks_lane(ego, road.lane_center(veh.lane), veh.width):
                # an ego ahead and inside the vehicle's lateral band is an ordinary leader
                if real is None or ego_gap < real[0]:
                    real = (ego_gap, ego.v)
            else:
                blended = merge_reactive_gap(veh, ego, road, p.yield_factor, real, intent)
                if blended is not None:
                    real = blended
        gap, v_lead = real if real is not None else (math.inf, veh.v)
        out.append(idm_acceleration(veh.v, gap, v_lead, p))
    return out


def _advance_traffic(world: WorldState, road: RoadModel, vehicle: VehicleConfig, dt: float) -> Tuple[TrafficVehicle, ...]:
    moved = []
    for veh, a in zip(world.traffic, _traffic_accelerations(world, road, vehicle)):
        v = max(veh.v + a * dt, 0.0)
        s = veh.s + v * dt
        # merge-lane traffic leaves at the ramp end, everyone at the road end
        if s > road.total_length or (veh.lane == Lane.MERGE and s >= road.s_ramp_end):
            continue
        moved.append(veh.moved(s, v, (v - veh.v) / dt))
    return tuple(moved)


def _inflow(streams: Tuple[StreamState, ...], traffic: Tuple[TrafficVehicle, ...]):
    by_id = {v.id: v for v in traffic}
    new_streams, new_traffic = [], list(traffic)
    for st in streams:
        stream = st.stream
        last = by_id.get(st.last_id) if st.last_id else None
        if st.spawned < stream.count and (last is None or last.s >= stream.spacing):
            veh = stream.vehicle(st.spawned, 0.0)
            new_traffic.append(veh)
            st = StreamState(stream, st.spawned + 1, veh.id)
        new_streams.append(st)
    return tuple(new_streams), tuple(new_traffic)


def step(
    world: WorldState,
    plan: Trajectory,
    dt: float,
    road: RoadModel,
    vehicle: VehicleConfig = VehicleConfig(),
) -> WorldState:
    """Advance the world by ``dt``: traffic by semi-implicit Euler on the IDM
    acceleration, the ego by exact interpolation of the current plan."""
    traffic = _advance_traffic(world, road, vehicle, dt)
    streams, traffic = _inflow(world.streams, traffic)
    t = world.t + dt
    x, y, theta, v, a = plan.state_at(t - world.plan_start)
    ego = EgoState(x, y, theta, v, a, plan.curvature_at(t - world.plan_start))
    failure = world.failure
    try:
        s, lat = road.project(x, y)
    except (ProjectionError, OutOfRangeError):
        s, lat = world.ego_s, world.ego_l
        failure = failure or "road_departure"
    return replace(world, t=t, ego=ego, ego_s=s, ego_l=lat, traffic=traffic, streams=streams, ego_kappa=ego.kappa, failure=failure)


def ego_box(world: WorldState, vehicle: VehicleConfig) -> OrientedBox:
    return OrientedBox(world.ego.x, world.ego.y, world.ego.theta, vehicle.length, vehicle.width)


def off_road(world: WorldState, road: RoadModel, vehicle: VehicleConfig) -> Optional[str]:
    """``road_departure`` when a footprint corner crosses an outer road edge,
    ``ramp_overrun`` when the ego center is in the merge lane past its end."""
    if world.ego_l < road.w_merge and world.ego_s >= road.s_ramp_end:
        return "ramp_overrun"
    corners = ego_box(world, vehicle).corners()
    _, lat = project_many(road.reference, corners[:, 0], corners[:, 1], np.full(4, world.ego_s))
    if np.any(lat < 0.0) or np.any(lat > road.w_merge + road.w_main):
        return "road_departure"
    return None


def detect_collision(world: WorldState, road: RoadModel, vehicle: VehicleConfig = VehicleConfig()) -> Optional[Tuple[str, str]]:
    """First colliding pair: ("ego", vehicle id) or ("ego", failure kind)
    for the road boundary."""
    box = ego_box(world, vehicle)
    reach = math.hypot(vehicle.length, vehicle.width)
    for veh in sorted(world.traffic, key=lambda v: v.id):
        if abs(veh.s - world.ego_s) > reach + veh.length:
            continue
        if boxes_overlap(box, vehicle_box(road, veh)):
            return "ego", veh.id
    boundary = off_road(world, road, vehicle)
    if boundary is not None:
        return "ego", boundary
    return None


@dataclass
class EpisodeResult:
    label: str
    outcome: str
    reason: str
    merge_time: Optional[float] = None
    metrics: Dict[str, Any] = field(default_factory=dict)
    trace: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    def summary(self) -> Dict[str, Any]:
        return {
            "type": "summary",
            "label": self.label,
            "outcome": self.outcome,
            "reason": self.reason,
            "merge_time": self.merge_time,
            "metrics": self.metrics,
        }

    def write_trace(self, path):
        with open(path, "w") as f:
            for record in self.trace:
                f.write(json.dumps(record) + "\n")
            f.write(json.dumps(self.summary()) + "\n")


def _cycle_record(world: WorldState, v_desired: Optional[float], plan_trace: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    e = world.ego
    return {
        "type": "cycle",
        "t": world.t,
        "behavior": world.behavior.label,
        "v_desired": v_desired,
        "ego": {
            "x": e.x,
            "y": e.y,
            "theta": e.theta,
            "v": e.v,
            "a": e.a,
            "kappa": e.kappa,
            "s": world.ego_s,
            "l": world.ego_l,
        },
        "traffic": [{"id": v.id, "lane": v.lane.value, "s": v.s, "v": v.v} for v in world.traffic],
        "plan": plan_trace,
    }


def run_episode(
    scenario: Scenario,
    planner_config: Optional[PlannerConfig] = None,
    sim_config: Optional[SimConfig] = None,
    time_budget: Optional[float] = None,
) -> EpisodeResult:
    """Plan at the planning period, simulate at the sim step, until the merge
    completes or the episode fails.

    ``time_budget`` overrides the planner budget; ``math.inf`` makes the run
    independent of wall-clock time.
    """
    planner_config = planner_config or PlannerConfig()
    sim_config = sim_config or SimConfig()
    ensure_valid(scenario)
    road = scenario.road
    vehicle = planner_config.vehicle
    planner = MergePlanner(road, planner_config)
    if time_budget is not None:
        planner.set_time_budget(time_budget)

    world = initial_world(scenario)
    trace: List[Dict[str, Any]] = []
    plan = None
    outcome, reason, merge_time = "failure", "timeout", None
    n_steps = int(round(sim_config.timeout / sim_config.dt))
    per_plan = sim_config.steps_per_plan

    for i in range(n_steps + 1):
        if i % per_plan == 0:
            heading_error = world.footprint(road, vehicle).heading_error
            behavior = update_behavior((world.ego_s, world.ego_l), road, world.behavior, heading_error)
            world = replace(world, behavior=behavior, plan_start=world.t)
            if behavior == BehaviorState.POST_MERGE_LANE_FOLLOW:
                trace.append(_cycle_record(world, None, None))
                outcome, reason, merge_time = "success", "merged", world.t
                break
            voi = select_vehicles_of_interest(world.ego_s, world.traffic, behavior)
            reach = lookahead_distance(world.ego.v, planner_config.lattice)
            v_d = desired_speed(world.ego_s, world.ego.v, voi, road, planner_config.weights, vehicle.length, reach)
            plan = planner.plan(world.ego, world.traffic, behavior, v_d)
            trace.append(_cycle_record(world, v_d, planner.last_trace))
        if i == n_steps:
            break
        world = step(world, plan, sim_config.dt, road, vehicle)
        if world.failure is not None:
            reason = world.failure
            break
        hit = detect_collision(world, road, vehicle)
        if hit is not None:
            reason = "collision" if hit[1] not in ("road_departure", "ramp_overrun") else hit[1]
            world = replace(world, colliding=hit, failure=reason)
            break

    result = EpisodeResult(scenario.label, outcome, reason, merge_time, trace=trace)
    result.metrics = compute_episode_metrics(trace)
    logger.info("%s: %s (%s) at t=%.1f s", scenario.label, outcome, reason, world.t)
    return result
