"""High-level merge behavior and desired speed.

The behavior machine moves through five states from lane following on the
ramp to lane following on the main road. Each cycle it picks the vehicles of
interest, the goal lateral offset for the lattice and a desired speed that
keeps the predicted gap to the most critical vehicle at the reaction
distance.
"""

import enum
import logging
import math
from dataclasses import dataclass
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

from .config import CostWeights
from .path_geometry import Lane
from .path_geometry import RoadModel
from .prediction import TrafficVehicle

logger = logging.getLogger(__name__)

CENTERLINE_TOLERANCE = 0.3
HEADING_TOLERANCE = 0.05


class BehaviorState(enum.IntEnum):
    PRE_MERGE_BEFORE_HARD_NOSE = 0
    PRE_MERGE_AFTER_HARD_NOSE = 1
    MERGE_INITIATION = 2
    MERGE_CONTINUATION = 3
    POST_MERGE_LANE_FOLLOW = 4

    @property
    def label(self) -> str:
        return self.name.lower()


MERGE_STATES = (BehaviorState.MERGE_INITIATION, BehaviorState.MERGE_CONTINUATION)


def is_merge_state(state: BehaviorState) -> bool:
    return state in MERGE_STATES


def update_behavior(
    ego_frenet: Tuple[float, float],
    road: RoadModel,
    current: BehaviorState,
    heading_error: float = 0.0,
) -> BehaviorState:
    s, l = ego_frenet  # noqa: E741
    if current == BehaviorState.POST_MERGE_LANE_FOLLOW:
        return current

    if l >= road.w_merge:
        centered = abs(l - road.l_main_center) <= CENTERLINE_TOLERANCE and abs(heading_error) < HEADING_TOLERANCE
        target = BehaviorState.POST_MERGE_LANE_FOLLOW if centered else BehaviorState.MERGE_CONTINUATION
    elif s < road.s_hard_nose:
        target = BehaviorState.PRE_MERGE_BEFORE_HARD_NOSE
    elif s < road.s_soft_nose:
        target = BehaviorState.PRE_MERGE_AFTER_HARD_NOSE
    else:
        target = BehaviorState.MERGE_INITIATION

    if current == BehaviorState.MERGE_CONTINUATION and target == BehaviorState.MERGE_INITIATION:
        return target
    return max(current, target)


def goal_lateral(behavior: BehaviorState, road: RoadModel) -> float:
    if behavior < BehaviorState.MERGE_INITIATION:
        return road.l_merge_center
    return road.l_main_center


@dataclass(frozen=True)
class VehiclesOfInterest:
    lead_merge: Optional[TrafficVehicle] = None
    lead_main: Optional[TrafficVehicle] = None
    rear_main: Optional[TrafficVehicle] = None

    def main_lane(self) -> List[TrafficVehicle]:
        return [v for v in (self.lead_main, self.rear_main) if v is not None]


def bumper_gap(ego_s: float, ego_length: float, other: TrafficVehicle) -> float:
    return abs(other.s - ego_s) - 0.5 * (ego_length + other.length)


def select_vehicles_of_interest(
    ego_s: float,
    traffic: Sequence[TrafficVehicle],
    behavior: BehaviorState,
) -> VehiclesOfInterest:
    """Nearest vehicle ahead in the merge lane and nearest vehicles ahead and
    behind in the main lane, ordered by center arc length."""

    def nearest(lane, ahead):
        pool = [v for v in traffic if v.lane == lane and ((v.s > ego_s) if ahead else (v.s <= ego_s))]
        if not pool:
            return None
        return min(pool, key=lambda v: (abs(v.s - ego_s), v.id))

    lead_main = nearest(Lane.MAIN, ahead=True)
    if behavior == BehaviorState.POST_MERGE_LANE_FOLLOW:
        return VehiclesOfInterest(lead_main=lead_main)
    return VehiclesOfInterest(
        lead_merge=nearest(Lane.MERGE, ahead=True),
        lead_main=lead_main,
        rear_main=nearest(Lane.MAIN, ahead=False),
    )


@dataclass(frozen=True)
class Requirement:
    role: str
    vehicle: TrafficVehicle
    gap: float
    predictive_gap: float
    alpha: float
    # the ego is closing on the vehicle: faster than a lead, slower than the follower
    applies: bool = True


@dataclass(frozen=True)
class SafetyAssessment:
    requirements: Tuple[Requirement, ...] = ()

    @property
    def binding(self) -> Optional[Requirement]:
        active = [r for r in self.requirements if r.applies]
        if not active:
            return None
        return min(active, key=lambda r: r.alpha)

    def get(self, role: str) -> Optional[Requirement]:
        return next((r for r in self.requirements if r.role == role), None)


def predictive_lead_gap(d: float, v: float, v_lead: float, a_max_dec: float) -> float:
    if v > v_lead:
        return d - (v - v_lead) ** 2 / (2.0 * a_max_dec)
    return d


def predictive_rear_gap(d: float, v: float, v_rear: float, a_max_acc: float) -> float:
    if v < v_rear:
        return d - (v_rear - v) ** 2 / (2.0 * a_max_acc)
    return d


def predictive_distances(
    ego_s: float,
    ego_v: float,
    voi: VehiclesOfInterest,
    weights: CostWeights,
    ego_length: float = 4.8,
    max_gap: float = math.inf,
) -> SafetyAssessment:
    """Predictive gaps and safety factors; vehicles further than ``max_gap``
    do not constrain the ego."""
    reqs = []
    for role in ("lead_merge", "lead_main"):
        veh = getattr(voi, role)
        if veh is None:
            continue
        d = bumper_gap(ego_s, ego_length, veh)
        if d > max_gap:
            continue
        d_tilde = predictive_lead_gap(d, ego_v, veh.v, weights.a_max_dec)
        alpha = d_tilde / ego_v if ego_v > 0 else math.inf
        reqs.append(Requirement(role, veh, d, d_tilde, alpha, ego_v > veh.v))
    veh = voi.rear_main
    if veh is not None:
        d = bumper_gap(ego_s, ego_length, veh)
        if d <= max_gap:
            d_tilde = predictive_rear_gap(d, ego_v, veh.v, weights.a_max_acc)
            alpha = d_tilde / veh.v if veh.v > 0 else math.inf
            reqs.append(Requirement("rear_main", veh, d, d_tilde, alpha, ego_v < veh.v))
    return SafetyAssessment(tuple(reqs))


def _lead_speed(req: Requirement, weights: CostWeights, speed_limit: float) -> float:
    b, t, vl, d = weights.a_max_dec, weights.t_reaction, req.vehicle.v, req.gap
    if d <= t * vl:
        # at or below the lead speed the braking term vanishes: d = t v
        return min(max(d / t, 0.0), speed_limit)
    # d - (v - vl)^2 / (2 b) = t v  ->  v^2 + (2 b t - 2 vl) v + vl^2 - 2 b d = 0
    # with d > t vl the discriminant is positive and the larger root exceeds vl
    p = 2.0 * b * t - 2.0 * vl
    q = vl * vl - 2.0 * b * d
    v = (-p + math.sqrt(p * p - 4.0 * q)) / 2.0
    return min(v, speed_limit)


def _rear_speed(req: Requirement, weights: CostWeights, speed_limit: float) -> float:
    # d - (vr - v)^2 / (2 a) = t vr
    a, t, vr, d = weights.a_max_acc, weights.t_reaction, req.vehicle.v, req.gap
    rhs = 2.0 * a * (d - t * vr)
    if rhs < 0.0:
        return min(vr, speed_limit)
    roots = sorted((vr - math.sqrt(rhs), vr + math.sqrt(rhs)))
    admissible = [r for r in roots if 0.0 <= r <= speed_limit]
    if admissible:
        return admissible[-1]
    return min(max(roots[-1], 0.0), speed_limit)


def desired_speed(
    ego_s: float,
    ego_v: float,
    voi: VehiclesOfInterest,
    road: RoadModel,
    weights: CostWeights,
    ego_length: float = 4.8,
    max_gap: float = math.inf,
) -> float:
    """Speed limit unless a vehicle of interest the ego is closing on is
    inside its safety factor; then the speed at which the most critical
    requirement holds with equality."""
    assessment = predictive_distances(ego_s, ego_v, voi, weights, ego_length, max_gap)
    binding = assessment.binding
    if binding is None or binding.alpha >= weights.t_reaction:
        return road.speed_limit
    if binding.role == "rear_main":
        v_d = _rear_speed(binding, weights, road.speed_limit)
    else:
        v_d = _lead_speed(binding, weights, road.speed_limit)
    logger.debug("desired speed %.2f bound by %s (alpha %.2f)", v_d, binding.role, binding.alpha)
    return v_d
