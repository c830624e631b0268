"""Trajectory cost terms and hard feasibility gates.

Every term takes a candidate made of edges, each with a ``path``
(PathSegment) and, for time dependent terms, a ``profile``. Curvature terms
are exact integrals of the cubic; the other integrals over arc length use
the composite trapezoid rule on the path samples. Terms that
make a candidate unacceptable return ``math.inf``; :func:`total_cost` turns
that into the ``infeasible`` flag instead of doing arithmetic with it.
"""

import logging
import math
from dataclasses import dataclass
from dataclasses import field
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np
from scipy.integrate import trapezoid

from .behavior import BehaviorState
from .behavior import is_merge_state
from .config import CostWeights
from .config import VehicleConfig
from .curvature_spline import coeffs_from_knots
from .path_geometry import RoadModel
from .prediction import CollisionGeometry
from .prediction import EgoSweep
from .prediction import OrientedBox
from .prediction import SweepExtents
from .prediction import TrafficVehicle
from .prediction import boxes_overlap
from .prediction import corridor_entry_time
from .prediction import find_collision_positions
from .prediction import first_timed_overlap
from .prediction import sweep_extents

logger = logging.getLogger(__name__)

TERMS = ("curvature", "jerk", "curvature_rate", "velocity", "consistency", "center", "obs")
# floor for safety distances used as exponent denominators
D_SAFE_MIN = 0.5


def _trapz(y, x) -> float:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return 0.0
    return float(trapezoid(np.asarray(y, dtype=float), x))


def _edges(traj) -> List:
    if hasattr(traj, "segments"):
        return list(traj.segments)
    if hasattr(traj, "path"):
        return [traj]
    return list(traj)


def _paths(traj) -> List:
    if hasattr(traj, "poses"):
        return [traj]
    return [e.path for e in _edges(traj)]


def _edge_times(edge) -> np.ndarray:
    if hasattr(edge, "times"):
        return edge.times()
    return edge.profile.time_at_distance(edge.path.s)


def _edge_offset(edge) -> Tuple[float, float]:
    node = getattr(edge, "from_node", None)
    if node is None:
        return 0.0, 0.0
    return node.arc, node.t


def _square_integral(poly: np.polynomial.Polynomial, s_f: float) -> float:
    q = (poly * poly).integ()
    return float(q(s_f) - q(0.0))


def _kappa_poly(path) -> np.polynomial.Polynomial:
    return np.polynomial.Polynomial(coeffs_from_knots(path.params))


def cost_curvature(traj) -> float:
    """Bending energy, integrated exactly on each cubic segment."""
    return sum(_square_integral(_kappa_poly(p), p.length) for p in _paths(traj))


def _jerk_integral(profile) -> float:
    # jerk(t) = A + B t
    A, B, T = 2.0 * profile.c2, 6.0 * profile.c3, profile.T
    return A * A * T + A * B * T * T + B * B * T**3 / 3.0


def cost_jerk(traj) -> float:
    """Squared longitudinal jerk integrated over each edge duration."""
    return sum(_jerk_integral(e.profile) for e in _edges(traj))


def cost_curvature_rate(traj) -> float:
    return sum(_square_integral(_kappa_poly(p).deriv(), p.length) for p in _paths(traj))


def cost_velocity(traj, v_d: float) -> float:
    total = 0.0
    for e in _edges(traj):
        v = e.profile.speed(_edge_times(e))
        total += _trapz((v - v_d) ** 2, e.path.s)
    return total


class PreviousPath:
    """Previously selected path, measured from the point closest to the
    current vehicle position."""

    def __init__(self, xy, x0: float, y0: float):
        xy = np.asarray(xy, dtype=float)
        if len(xy) < 2:
            self.xy = xy
            self.arc = np.zeros(len(xy))
            return
        seg = np.hypot(*np.diff(xy, axis=0).T)
        arc = np.concatenate(([0.0], np.cumsum(seg)))
        # closest point on the polyline to (x0, y0)
        d = xy[1:] - xy[:-1]
        w = np.array([x0, y0]) - xy[:-1]
        u = np.clip(np.einsum("ij,ij->i", w, d) / np.maximum(np.einsum("ij,ij->i", d, d), 1e-12), 0.0, 1.0)
        proj = xy[:-1] + u[:, None] * d
        i = int(np.argmin(np.hypot(*(proj - [x0, y0]).T)))
        start_arc = arc[i] + u[i] * seg[i]
        keep = arc > start_arc
        self.xy = np.vstack((proj[i], xy[keep]))
        self.arc = np.concatenate(([0.0], arc[keep] - start_arc))

    @property
    def length(self) -> float:
        return float(self.arc[-1]) if len(self.arc) else 0.0

    def __bool__(self):
        return len(self.xy) >= 2 and self.length > 0.0

    def at(self, s) -> Tuple[np.ndarray, np.ndarray]:
        return np.interp(s, self.arc, self.xy[:, 0]), np.interp(s, self.arc, self.xy[:, 1])


def cost_consistency(traj, previous_path: Optional[PreviousPath]) -> float:
    """Squared distance between current and previous paths at equal arc
    length from the shared start, over their common length."""
    if previous_path is None or not previous_path:
        return 0.0
    total = 0.0
    for e in _edges(traj):
        arc0, _ = _edge_offset(e)
        arc = arc0 + e.path.s
        common = arc <= previous_path.length + 1e-9
        if np.count_nonzero(common) < 2:
            continue
        px, py = previous_path.at(arc[common])
        d2 = (e.path.x[common] - px) ** 2 + (e.path.y[common] - py) ** 2
        total += _trapz(d2, arc[common])
    return total


def off_road_mask(road: RoadModel, s, l) -> np.ndarray:  # noqa: E741
    s, l = np.asarray(s), np.asarray(l)
    merge = (l >= 0.0) & (l < road.w_merge) & (s < road.s_ramp_end)
    main = (l >= road.w_merge) & (l <= road.w_merge + road.w_main)
    return ~(merge | main) | (s > road.total_length)


def center_integrand(D, road: RoadModel, weights: CostWeights, merge_branch: bool):
    D = np.asarray(D, dtype=float)
    if not merge_branch:
        return weights.m * D
    return np.where(D < 0.5 * road.w_main, weights.m * D, weights.c + weights.m_merge * D)


def cost_center(traj, road: RoadModel, behavior: BehaviorState, l_d: float, weights: Optional[CostWeights] = None, merge_branch: bool = True) -> float:
    """Lane centering cost, with the merge branch active in merge states.

    ``merge_branch=False`` always uses the lane-follow branch.
    """
    weights = weights or CostWeights()
    use_merge = merge_branch and is_merge_state(behavior)
    total = 0.0
    for e in _edges(traj):
        s_ref, l_ref = e.spatial.s_ref, e.spatial.l_ref
        if np.any(off_road_mask(road, s_ref, l_ref)):
            return math.inf
        D = np.abs(l_ref - l_d)
        total += _trapz(center_integrand(D, road, weights, use_merge), e.path.s)
    return total


def safe_following_distance(v: float, v_lead: float, weights: CostWeights) -> float:
    braking = max((v * v - v_lead * v_lead) / (2.0 * weights.a_max_dec), 0.0)
    return v * weights.t_reaction + braking


def follow_integrand(v, v_lead: float, d, weights: CostWeights):
    """alpha1 * max((v - v_lead) / d, 0) + exp((d_safe - d) / d_safe) for d > 0."""
    v = np.asarray(v, dtype=float)
    d = np.asarray(d, dtype=float)
    d_safe = v * weights.t_reaction + np.maximum((v * v - v_lead * v_lead) / (2.0 * weights.a_max_dec), 0.0)
    ttc = weights.alpha1 * np.maximum((v - v_lead) / d, 0.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        expo = np.where(d_safe > 1e-9, np.exp((d_safe - d) / np.maximum(d_safe, 1e-9)), 0.0)
    return ttc + expo


def cost_obs_follow(
    traj,
    lead: Optional[TrafficVehicle],
    weights: CostWeights,
    ego_length: float = 4.8,
    lane_band: Optional[Tuple[float, float]] = None,
) -> float:
    """Inverse time-to-collision and safe-distance cost against a lead
    vehicle predicted at constant speed.

    With ``lane_band`` only samples whose lateral offset lies in the band
    contribute.
    """
    if lead is None:
        return 0.0
    total = 0.0
    for e in _edges(traj):
        _, t0 = _edge_offset(e)
        t_rel = _edge_times(e)
        v = e.profile.speed(t_rel)
        d = lead.s + lead.v * (t0 + t_rel) - e.spatial.s_ref - 0.5 * (lead.length + ego_length)
        mask = np.ones_like(d, dtype=bool)
        if lane_band is not None:
            mask = (e.spatial.l_ref >= lane_band[0]) & (e.spatial.l_ref <= lane_band[1])
        if not np.any(mask):
            continue
        if np.any(d[mask] <= 0.0):
            return math.inf
        integrand = np.where(mask, follow_integrand(v, lead.v, np.where(mask, d, 1.0), weights), 0.0)
        total += _trapz(integrand, e.path.s)
    return total


def merge_conflict_cost(T_ego, T_obs, d_ego, d_obs, d_safe_ego, d_safe_obs, weights: CostWeights) -> float:
    dt = abs(T_ego - T_obs)
    if dt < weights.eps_t:
        return math.inf
    term_t = 0.0 if math.isinf(dt) else weights.alpha2 / dt
    d_safe_ego = max(d_safe_ego, D_SAFE_MIN)
    d_safe_obs = max(d_safe_obs, D_SAFE_MIN)
    return term_t + math.exp((d_safe_ego - d_ego) / d_safe_ego) + math.exp((d_safe_obs - d_obs) / d_safe_obs)


def conflict_safe_distances(T_ego: float, T_obs: float, v_ego: float, v_obs: float, weights: CostWeights) -> Tuple[float, float]:
    """(d_safe_ego, d_safe_obs): the vehicle arriving second needs its full
    braking distance, the one arriving first the reaction distance of the
    vehicle following it."""
    if T_ego > T_obs:
        return v_ego * v_ego / (2.0 * weights.a_max_dec), weights.t_reaction * v_ego
    return weights.t_reaction * v_obs, v_obs * v_obs / (2.0 * weights.a_max_dec)


def speed_at_arc(traj, arc: float) -> float:
    for e in _edges(traj):
        arc0, _ = _edge_offset(e)
        if arc <= arc0 + e.path.length + 1e-9:
            return float(e.profile.speed(e.profile.time_at_distance(arc - arc0)))
    last = _edges(traj)[-1]
    return last.profile.v_end


def cost_obs_merge(traj, obstacles: Sequence[TrafficVehicle], geometries: Sequence[CollisionGeometry], weights: CostWeights) -> float:
    """Largest conflict cost over the main-lane vehicles of interest."""
    worst = 0.0
    for obstacle, geom in zip(obstacles, geometries):
        if not geom.exists:
            continue
        v_ego = speed_at_arc(traj, geom.s_ego)
        d_safe_ego, d_safe_obs = conflict_safe_distances(geom.T_ego, geom.T_obs, v_ego, obstacle.v, weights)
        value = merge_conflict_cost(geom.T_ego, geom.T_obs, geom.d_ego, geom.d_obs, d_safe_ego, d_safe_obs, weights)
        if math.isinf(value):
            return math.inf
        worst = max(worst, value)
    return worst


def curvature_within_bounds(path, limits: VehicleConfig) -> bool:
    return bool(np.all(np.abs(path.kappa) <= limits.kappa_max + 1e-12))


def curvature_rate_within_bounds(path, speeds, limits: VehicleConfig) -> bool:
    bound = limits.steering_rate_max / limits.wheelbase
    return bool(np.all(np.abs(path.kappa_rate) * np.maximum(speeds, 1.0) <= bound + 1e-12))


def check_hard_constraints(traj, limits: VehicleConfig) -> bool:
    for e in _edges(traj):
        if not curvature_within_bounds(e.path, limits):
            return False
        if not curvature_rate_within_bounds(e.path, e.profile.speed(_edge_times(e)), limits):
            return False
    return True


def check_static_collision(traj, static_obstacles: Sequence[OrientedBox], ego_dims: Tuple[float, float] = (4.8, 1.9)) -> bool:
    """True when the ego footprint swept along the path stays clear."""
    if not static_obstacles:
        return True
    length, width = ego_dims
    reach = 0.5 * math.hypot(length, width)
    for p in _paths(traj):
        for obs in static_obstacles:
            obs_reach = reach + 0.5 * math.hypot(obs.length, obs.width)
            close = np.hypot(p.x - obs.x, p.y - obs.y) <= obs_reach
            for k in np.flatnonzero(close):
                if boxes_overlap(OrientedBox(p.x[k], p.y[k], p.theta[k], length, width), obs):
                    return False
    return True


@dataclass
class CostBreakdown:
    terms: Dict[str, float] = field(default_factory=lambda: dict.fromkeys(TERMS, 0.0))
    total: float = 0.0
    infeasible: bool = False
    reason: str = ""

    def __add__(self, other: "CostBreakdown") -> "CostBreakdown":
        if self.infeasible or other.infeasible:
            return CostBreakdown.rejected(self.reason or other.reason)
        return CostBreakdown(
            terms={k: self.terms[k] + other.terms[k] for k in TERMS},
            total=self.total + other.total,
        )

    @classmethod
    def rejected(cls, reason: str) -> "CostBreakdown":
        return cls(total=math.inf, infeasible=True, reason=reason)

    def as_dict(self) -> Dict[str, object]:
        out = {f"J_{k}": self.terms[k] for k in TERMS}
        out["total"] = None if self.infeasible else self.total
        out["infeasible"] = self.infeasible
        if self.reason:
            out["reason"] = self.reason
        return out


def weighted(terms: Dict[str, float], weights: CostWeights) -> CostBreakdown:
    for name, value in terms.items():
        if math.isinf(value) or math.isnan(value):
            return CostBreakdown.rejected(f"{name}_infinite")
    total = sum(getattr(weights, f"w_{k}") * terms[k] for k in TERMS)
    return CostBreakdown(terms=dict(terms), total=total)


@dataclass
class CostContext:
    road: RoadModel
    behavior: BehaviorState
    l_d: float
    v_desired: float
    weights: CostWeights = field(default_factory=CostWeights)
    vehicle: VehicleConfig = field(default_factory=VehicleConfig)
    previous: Optional[PreviousPath] = None
    lead_merge: Optional[TrafficVehicle] = None
    lead_main: Optional[TrafficVehicle] = None
    rear_main: Optional[TrafficVehicle] = None
    merge_obstacles: Sequence[TrafficVehicle] = ()
    static_obstacles: Sequence[OrientedBox] = ()
    merge_branch: bool = True
    use_obs: bool = True

    @property
    def ego_dims(self) -> Tuple[float, float]:
        return self.vehicle.length, self.vehicle.width

    def traffic_of_interest(self) -> List[Tuple[TrafficVehicle, bool]]:
        """Vehicles of interest with a flag set for those ahead of the ego."""
        out = [(v, True) for v in (self.lead_merge, self.lead_main) if v is not None]
        if self.rear_main is not None:
            out.append((self.rear_main, False))
        return out

    @property
    def merge_band(self) -> Tuple[float, float]:
        return 0.0, self.road.w_merge - 1e-9

    @property
    def main_band(self) -> Tuple[float, float]:
        return self.road.w_merge, self.road.w_merge + self.road.w_main


def obstacle_cost(traj, context: CostContext, geometries: Optional[Sequence[CollisionGeometry]] = None) -> float:
    if not context.use_obs:
        return 0.0
    w = context.weights
    follow = cost_obs_follow(traj, context.lead_merge, w, context.vehicle.length, context.merge_band)
    if math.isinf(follow):
        return follow
    follow += cost_obs_follow(traj, context.lead_main, w, context.vehicle.length, context.main_band)
    if math.isinf(follow) or not is_merge_state(context.behavior) or not context.merge_obstacles:
        return follow
    if geometries is None:
        geometries = [
            find_collision_positions(traj, obs, context.road, context.ego_dims, w.footprint_inflation)
            for obs in context.merge_obstacles
        ]
    return follow + cost_obs_merge(traj, context.merge_obstacles, geometries, w)


def _edge_sweep(edge) -> EgoSweep:
    if hasattr(edge, "sweep"):
        return edge.sweep()
    arc0, t0 = _edge_offset(edge)
    p = edge.path
    return EgoSweep(p.x, p.y, p.theta, edge.spatial.s_ref, edge.spatial.l_ref, arc0 + p.s, t0 + _edge_times(edge))


def _sweep_with_extents(edge, context: CostContext) -> Tuple[EgoSweep, SweepExtents]:
    sweep = _edge_sweep(edge)
    memo = getattr(getattr(edge, "spatial", None), "memo", None)
    if memo is None:
        return sweep, sweep_extents(sweep, context.road, context.ego_dims)
    if "extents" not in memo:
        memo["extents"] = sweep_extents(sweep, context.road, context.ego_dims)
    return sweep, memo["extents"]


def overlaps_traffic(traj, context: CostContext) -> bool:
    """True when the inflated ego footprint meets a vehicle of interest
    predicted at constant speed.

    Vehicles ahead are checked over the whole candidate. The main-lane
    follower only counts until ``t_reaction`` after the ego first reaches
    its lateral band; from then on it follows the ego.
    """
    w = context.weights
    inflation = w.footprint_inflation
    for e in _edges(traj):
        sweep, extents = _sweep_with_extents(e, context)
        for veh, ahead in context.traffic_of_interest():
            t_max = math.inf
            if not ahead:
                entry = corridor_entry_time(sweep, veh, context.road, context.ego_dims, inflation, extents)
                if math.isinf(entry):
                    continue
                t_max = entry + w.t_reaction
            if first_timed_overlap(sweep, veh, context.road, context.ego_dims, inflation, t_max, extents) is not None:
                return True
    return False


def total_cost(traj, context: CostContext) -> CostBreakdown:
    if not check_hard_constraints(traj, context.vehicle):
        return CostBreakdown.rejected("hard_constraint")
    if not check_static_collision(traj, context.static_obstacles, context.ego_dims):
        return CostBreakdown.rejected("static_collision")
    if context.use_obs and overlaps_traffic(traj, context):
        return CostBreakdown.rejected("traffic_overlap")
    terms = {
        "curvature": cost_curvature(traj),
        "jerk": cost_jerk(traj),
        "curvature_rate": cost_curvature_rate(traj),
        "velocity": cost_velocity(traj, context.v_desired),
        "consistency": cost_consistency(traj, context.previous),
        "center": cost_center(traj, context.road, context.behavior, context.l_d, context.weights, context.merge_branch),
        "obs": obstacle_cost(traj, context),
    }
    return weighted(terms, context.weights)
