"""Per-cycle planning loop.

A cycle builds the lattice around the ego, runs a layered forward dynamic
program over (layer, station, acceleration) nodes, and returns the cheapest
complete candidate as waypoints. When the time budget runs out the best
frontier labels are completed greedily.
"""

import collections
import logging
import math
import time
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
from .behavior import goal_lateral
from .behavior import is_merge_state
from .behavior import select_vehicles_of_interest
from .config import PlannerConfig
from .costing import CostBreakdown
from .costing import CostContext
from .costing import PreviousPath
from .costing import cost_center
from .costing import cost_consistency
from .costing import cost_curvature
from .costing import cost_curvature_rate
from .costing import cost_jerk
from .costing import cost_obs_follow
from .costing import cost_obs_merge
from .costing import cost_velocity
from .costing import overlaps_traffic
from .costing import weighted
from .errors import ConfigError
from .errors import EmptyLatticeError
from .errors import ProjectionError
from .lattice import BvpCache
from .lattice import Lattice
from .lattice import LatticeEdge
from .lattice import LatticeNode
from .lattice import build_lattice
from .path_geometry import Lane
from .path_geometry import RoadModel
from .path_geometry import StaticState
from .path_geometry import lane_membership
from .prediction import EgoSweep
from .prediction import TrafficVehicle
from .prediction import conflict_geometry
from .prediction import first_conflict

logger = logging.getLogger(__name__)


class Waypoint(NamedTuple):
    x: float
    y: float
    t: float
    v: float
    a: float


@dataclass(frozen=True)
class EgoState:
    x: float
    y: float
    theta: float
    v: float
    a: float = 0.0
    kappa: float = 0.0


@dataclass
class Trajectory:
    segments: Tuple[LatticeEdge, ...] = ()
    waypoints: List[Waypoint] = field(default_factory=list)
    breakdown: CostBreakdown = field(default_factory=CostBreakdown)
    fallback: bool = False
    # heading at each waypoint, used when there are no segments
    headings: Optional[np.ndarray] = None

    @property
    def duration(self) -> float:
        if self.segments:
            return self.segments[-1].to_node.t - self.segments[0].from_node.t
        if self.waypoints:
            return self.waypoints[-1].t - self.waypoints[0].t
        return 0.0

    def sweep(self) -> EgoSweep:
        parts = [e.sweep() for e in self.segments]
        return EgoSweep(*(np.concatenate([getattr(p, f) for p in parts]) for f in EgoSweep._fields))

    def xy(self) -> np.ndarray:
        if self.segments:
            pts = [np.column_stack((self.segments[0].path.x[:1], self.segments[0].path.y[:1]))]
            pts += [np.column_stack((e.path.x[1:], e.path.y[1:])) for e in self.segments]
            return np.vstack(pts)
        xy = np.array([(w.x, w.y) for w in self.waypoints], dtype=float).reshape(-1, 2)
        if len(xy) < 2:
            return xy
        keep = np.concatenate(([True], np.hypot(*np.diff(xy, axis=0).T) > 1e-9))
        return xy[keep]

    def state_at(self, t: float) -> Tuple[float, float, float, float, float]:
        """(x, y, theta, v, a) at time ``t`` from the planning start; held at
        the final state beyond the end."""
        if self.segments:
            t = min(max(t, self.segments[0].from_node.t), self.segments[-1].to_node.t)
            edge = next((e for e in self.segments if t <= e.to_node.t + 1e-12), self.segments[-1])
            rel = t - edge.from_node.t
            p, prof = edge.path, edge.profile
            d = min(float(prof.distance(rel)), p.length)
            theta = np.interp(d, p.s, np.unwrap(p.theta))
            return (
                float(np.interp(d, p.s, p.x)),
                float(np.interp(d, p.s, p.y)),
                float(theta),
                max(float(prof.speed(rel)), 0.0),
                float(prof.accel(rel)),
            )
        if not self.waypoints:
            msg = "empty trajectory"
            raise ValueError(msg)
        wp = np.array(self.waypoints, dtype=float)
        if t >= wp[-1, 2]:
            # a finished stop holds its last pose
            v_end = float(wp[-1, 3])
            return float(wp[-1, 0]), float(wp[-1, 1]), self._heading(len(wp) - 1), v_end, 0.0 if v_end <= 0.0 else float(wp[-1, 4])
        cols = [float(np.interp(t, wp[:, 2], wp[:, i])) for i in (0, 1, 3, 4)]
        theta = float(np.interp(t, wp[:, 2], self.headings)) if self.headings is not None else 0.0
        return cols[0], cols[1], theta, cols[2], cols[3]

    def _heading(self, i: int) -> float:
        return float(self.headings[i]) if self.headings is not None else 0.0

    def curvature_at(self, t: float) -> float:
        if not self.segments:
            return 0.0
        t = min(max(t, self.segments[0].from_node.t), self.segments[-1].to_node.t)
        edge = next((e for e in self.segments if t <= e.to_node.t + 1e-12), self.segments[-1])
        d = min(float(edge.profile.distance(t - edge.from_node.t)), edge.path.length)
        return float(np.interp(d, edge.path.s, edge.path.kappa))


@dataclass
class PlanContext:
    ego: EgoState
    traffic: Sequence[TrafficVehicle] = ()
    behavior: BehaviorState = BehaviorState.PRE_MERGE_BEFORE_HARD_NOSE
    v_desired: float = 0.0
    time_budget: float = 0.09
    previous: Optional[Trajectory] = None
    static_obstacles: Sequence = ()

    def __post_init__(self):
        if not self.time_budget > 0:
            msg = "time_budget must be positive"
            raise ConfigError(msg)


def to_waypoints(traj: Trajectory, dt: float = 0.1, horizon: float = 5.0) -> List[Waypoint]:
    """Uniform samples of the trajectory over min(horizon, duration)."""
    if not traj.segments:
        return [w for w in traj.waypoints if w.t <= horizon + 1e-9]
    t0 = traj.segments[0].from_node.t
    span = min(horizon, traj.duration)
    n = int(math.floor(span / dt + 1e-9))
    out = []
    for i in range(n + 1):
        x, y, _, v, a = traj.state_at(t0 + i * dt)
        out.append(Waypoint(x, y, i * dt, v, a))
    return out


def _headings(traj: Trajectory, dt: float, horizon: float) -> np.ndarray:
    span = min(horizon, traj.duration)
    n = int(math.floor(span / dt + 1e-9))
    t0 = traj.segments[0].from_node.t
    return np.array([traj.state_at(t0 + i * dt)[2] for i in range(n + 1)])


def stop_trajectory(ego: EgoState, previous: Optional[Trajectory], config: PlannerConfig) -> Trajectory:
    """Comfortable stop along the previous path, or straight ahead when there
    is none."""
    b = config.weights.a_max_dec
    dt, horizon = config.waypoint_dt, config.waypoint_horizon
    n = int(math.floor(horizon / dt + 1e-9))
    t = dt * np.arange(n + 1)
    t_stop = ego.v / b
    tc = np.minimum(t, t_stop)
    dist = ego.v * tc - 0.5 * b * tc * tc
    v = np.maximum(ego.v - b * t, 0.0)
    a = np.where(t < t_stop, -b, 0.0)

    path = PreviousPath(previous.xy(), ego.x, ego.y) if previous is not None else None
    if path:
        # extend the remaining previous path straight past its end
        end_heading = math.atan2(*(path.xy[-1] - path.xy[-2])[::-1])
        extra = max(float(dist[-1]) - path.length, 0.0) + 1.0
        tail = path.xy[-1] + extra * np.array([math.cos(end_heading), math.sin(end_heading)])
        xy = np.vstack((path.xy, tail))
        arc = np.concatenate((path.arc, [path.length + extra]))
        xs, ys = np.interp(dist, arc, xy[:, 0]), np.interp(dist, arc, xy[:, 1])
        seg_heading = np.arctan2(np.diff(xy[:, 1]), np.diff(xy[:, 0]))
        idx = np.clip(np.searchsorted(arc, dist, side="right") - 1, 0, len(seg_heading) - 1)
        headings = seg_heading[idx]
    else:
        xs = ego.x + dist * math.cos(ego.theta)
        ys = ego.y + dist * math.sin(ego.theta)
        headings = np.full_like(t, ego.theta)
    waypoints = [Waypoint(float(x), float(y), float(ti), float(vi), float(ai)) for x, y, ti, vi, ai in zip(xs, ys, t, v, a)]
    return Trajectory(
        waypoints=waypoints,
        breakdown=CostBreakdown.rejected("no_feasible_candidate"),
        fallback=True,
        headings=headings,
    )


@dataclass(eq=False)
class _Label:
    node: LatticeNode
    cost: CostBreakdown
    edge: Optional[LatticeEdge] = None
    parent: Optional["_Label"] = None

    def edges(self) -> Tuple[LatticeEdge, ...]:
        out = []
        label = self
        while label.edge is not None:
            out.append(label.edge)
            label = label.parent
        return tuple(reversed(out))


def edge_cost(edge: LatticeEdge, context: CostContext) -> CostBreakdown:
    """Cost of one lattice edge given its start node.

    Speed independent terms and the spatial part of the conflict search are
    memoized on the spatial edge for the cycle.
    """
    sp = edge.spatial
    static = sp.memo.get("static")
    if static is None:
        static = {
            "curvature": cost_curvature(edge),
            "curvature_rate": cost_curvature_rate(edge),
            "center": cost_center(edge, context.road, context.behavior, context.l_d, context.weights, context.merge_branch),
        }
        sp.memo["static"] = static
    if context.use_obs and overlaps_traffic(edge, context):
        return CostBreakdown.rejected("traffic_overlap")
    terms = dict(static)
    terms["jerk"] = cost_jerk(edge)
    terms["velocity"] = cost_velocity(edge, context.v_desired)
    terms["consistency"] = cost_consistency(edge, context.previous)
    terms["obs"] = _edge_obstacle_cost(edge, context)
    return weighted(terms, context.weights)


def _edge_obstacle_cost(edge: LatticeEdge, context: CostContext) -> float:
    if not context.use_obs:
        return 0.0
    w = context.weights
    total = cost_obs_follow(edge, context.lead_merge, w, context.vehicle.length, context.merge_band)
    if math.isinf(total):
        return total
    total += cost_obs_follow(edge, context.lead_main, w, context.vehicle.length, context.main_band)
    if math.isinf(total) or not is_merge_state(context.behavior) or not context.merge_obstacles:
        return total
    sweep = edge.sweep()
    geometries = []
    for obs in context.merge_obstacles:
        key = ("conflict", obs.id)
        if key not in edge.spatial.memo:
            edge.spatial.memo[key] = first_conflict(
                sweep, obs, context.road, context.ego_dims, w.footprint_inflation, edge.spatial.memo.get("extents")
            )
        geometries.append(conflict_geometry(sweep, obs, edge.spatial.memo[key]))
    return total + cost_obs_merge(edge, context.merge_obstacles, geometries, w)


def _root_node(ego: EgoState, road: RoadModel) -> LatticeNode:
    s, l = road.project(ego.x, ego.y)  # noqa: E741
    lane = lane_membership(road, s, l)
    if lane == Lane.OFF_ROAD:
        lane = Lane.MAIN if l >= road.w_merge else Lane.MERGE
    static = StaticState(ego.x, ego.y, ego.theta, ego.kappa, s, l)
    return LatticeNode(static=static, t=0.0, v=max(ego.v, 0.0), a=ego.a, layer=0, lane=lane)


def cost_context(ctx: PlanContext, road: RoadModel, config: PlannerConfig, s_ego: float) -> CostContext:
    voi = select_vehicles_of_interest(s_ego, ctx.traffic, ctx.behavior)
    v_desired = road.speed_limit if config.variant == "ablation-A" else ctx.v_desired
    previous = PreviousPath(ctx.previous.xy(), ctx.ego.x, ctx.ego.y) if ctx.previous is not None else None
    return CostContext(
        road=road,
        behavior=ctx.behavior,
        l_d=goal_lateral(ctx.behavior, road),
        v_desired=v_desired,
        weights=config.weights,
        vehicle=config.vehicle,
        previous=previous,
        lead_merge=voi.lead_merge,
        lead_main=voi.lead_main,
        rear_main=voi.rear_main,
        merge_obstacles=tuple(voi.main_lane()),
        static_obstacles=tuple(ctx.static_obstacles),
        merge_branch=config.variant != "ablation-B",
        use_obs=config.variant != "no-obs",
    )


def _edge_accel(edge: LatticeEdge) -> float:
    prof = edge.profile
    return (prof.v_end**2 - prof.v0**2) / (2.0 * edge.path.length)


class _Search:
    """Layered forward dynamic program with an anytime deadline."""

    def __init__(self, lattice: Lattice, context: CostContext, deadline: float):
        self.lattice = lattice
        self.context = context
        self.deadline = deadline
        self.candidates = 0
        self.rejected: collections.Counter = collections.Counter()
        self.interrupted = False
        self.best: Optional[_Label] = None

    def _ordered(self, node: LatticeNode) -> List[LatticeEdge]:
        """Stations nearest the goal lateral first, then gentler
        accelerations; the sort is stable so ties keep enumeration order."""
        edges = list(self.lattice.expand(node))
        l_d = self.context.l_d
        return sorted(edges, key=lambda e: (abs(e.to_node.static.l - l_d), abs(_edge_accel(e))))

    def _cost(self, edge: LatticeEdge) -> CostBreakdown:
        self.candidates += 1
        cost = edge_cost(edge, self.context)
        if cost.infeasible:
            self.rejected[cost.reason] += 1
        return cost

    def _offer(self, label: Optional[_Label]):
        if label is not None and (self.best is None or label.cost.total < self.best.cost.total):
            self.best = label

    def run(self) -> Dict[int, Dict[tuple, _Label]]:
        """Fill ``labels`` layer by layer and keep ``best``, the cheapest
        complete plan seen so far.

        ``best`` only takes greedy completions of fully expanded layers and
        last-layer labels, so a later deadline never returns a dearer plan.
        """
        root = _Label(self.lattice.root, CostBreakdown())
        labels: Dict[int, Dict[tuple, _Label]] = {0: {root.node.key: root}}
        self._offer(self.complete(root))
        l_d = self.context.l_d
        for k in range(self.lattice.n_layers):
            frontier = sorted(
                labels.get(k, {}).values(),
                key=lambda lb: (abs(lb.node.static.l - l_d), abs(lb.node.a)),
            )
            nxt: Dict[tuple, _Label] = {}
            for label in frontier:
                if time.perf_counter() > self.deadline:
                    self.interrupted = True
                    break
                for edge in self._ordered(label.node):
                    cost = self._cost(edge)
                    if cost.infeasible:
                        continue
                    total = label.cost + cost
                    key = edge.to_node.key
                    # strict improvement keeps the earlier label on ties
                    if key not in nxt or total.total < nxt[key].cost.total:
                        nxt[key] = _Label(edge.to_node, total, edge, label)
            if nxt:
                labels[k + 1] = nxt
                if k + 1 == self.lattice.n_layers:
                    self._offer(min(nxt.values(), key=lambda lb: lb.cost.total))
                elif not self.interrupted:
                    for label in sorted(nxt.values(), key=lambda lb: lb.cost.total)[:3]:
                        self._offer(self.complete(label))
            if self.interrupted or not nxt:
                break
        return labels

    def complete(self, label: _Label) -> Optional[_Label]:
        """Extend a label to the last layer by the cheapest feasible edge."""
        while label.node.layer < self.lattice.n_layers:
            best = None
            for edge in self._ordered(label.node):
                cost = self._cost(edge)
                if cost.infeasible:
                    continue
                total = label.cost + cost
                if best is None or total.total < best.cost.total:
                    best = _Label(edge.to_node, total, edge, label)
            if best is None:
                return None
            label = best
        return label


def enumerate_candidates(
    ctx: PlanContext,
    road: RoadModel,
    config: PlannerConfig,
    limit: Optional[int] = None,
) -> List[Tuple[Tuple[LatticeEdge, ...], CostBreakdown]]:
    """Every layer path through the lattice with its summed cost.

    A path whose edge turns out infeasible is listed once, truncated at that
    edge. Enumeration stops after ``limit`` candidates.
    """
    root = _root_node(ctx.ego, road)
    context = cost_context(ctx, road, config, root.static.s)
    lattice = build_lattice(root, road, context.v_desired, config, static_obstacles=context.static_obstacles)
    out: List[Tuple[Tuple[LatticeEdge, ...], CostBreakdown]] = []

    def walk(node, prefix, acc):
        if limit is not None and len(out) >= limit:
            return
        if node.layer == lattice.n_layers:
            out.append((prefix, acc))
            return
        for edge in lattice.expand(node):
            cost = edge_cost(edge, context)
            if cost.infeasible:
                if limit is None or len(out) < limit:
                    out.append((prefix + (edge,), acc + cost))
                continue
            walk(edge.to_node, prefix + (edge,), acc + cost)

    walk(root, (), CostBreakdown())
    return out


def plan_cycle(
    ctx: PlanContext,
    road: RoadModel,
    config: PlannerConfig,
    bvp_cache: Optional[BvpCache] = None,
    trace: Optional[Dict[str, Any]] = None,
) -> Trajectory:
    """One planning cycle; ``trace`` receives the per-cycle record."""
    start = time.perf_counter()
    deadline = start + ctx.time_budget
    bvp_cache = bvp_cache if bvp_cache is not None else BvpCache()
    bvp_cache.new_cycle()
    record: Dict[str, Any] = {"behavior": ctx.behavior.label, "candidates": 0, "pruned": {}}

    traj = None
    try:
        root = _root_node(ctx.ego, road)
        context = cost_context(ctx, road, config, root.static.s)
        record["v_desired"] = context.v_desired
        lattice = build_lattice(
            root,
            road,
            context.v_desired,
            config,
            static_obstacles=context.static_obstacles,
            bvp_cache=bvp_cache,
            deadline=deadline,
        )
        search = _Search(lattice, context, deadline)
        search.run()
        best = search.best
        if best is not None and best.edge is not None:
            traj = Trajectory(segments=best.edges(), breakdown=best.cost)
        record["candidates"] = search.candidates
        record["interrupted"] = search.interrupted
        record["pruned"] = dict(lattice.pruned + search.rejected)
        record["bvp"] = {"solves": bvp_cache.solves, "hits": bvp_cache.hits}
    except (EmptyLatticeError, ProjectionError) as exc:
        logger.warning("planning failed: %s", exc)
        record["error"] = str(exc)

    if traj is None:
        traj = stop_trajectory(ctx.ego, ctx.previous, config)
    else:
        traj.waypoints = to_waypoints(traj, config.waypoint_dt, config.waypoint_horizon)
        traj.headings = _headings(traj, config.waypoint_dt, config.waypoint_horizon)

    record["fallback"] = traj.fallback
    record["cost"] = traj.breakdown.as_dict()
    record["wall_time"] = time.perf_counter() - start
    record["waypoints"] = [list(w) for w in traj.waypoints]
    if trace is not None:
        trace.update(record)
    return traj


class MergePlanner:
    """Stateful planner: keeps the previous plan and the boundary value
    cache between cycles."""

    def __init__(self, road: RoadModel, config: Optional[PlannerConfig] = None):
        self.road = road
        self.config = config or PlannerConfig()
        self.time_budget = self.config.time_budget
        self.debug = False
        self.bvp_cache = BvpCache()
        self.previous: Optional[Trajectory] = None
        self.last_trace: Dict[str, Any] = {}

    def set_time_budget(self, time_budget: float):
        if not time_budget > 0:
            msg = "time_budget must be positive"
            raise ConfigError(msg)
        self.time_budget = time_budget
        return self

    def set_variant(self, variant: str):
        self.config = replace(self.config, variant=variant)
        return self

    def set_debug(self, debug: bool):
        self.debug = debug
        return self

    def reset(self):
        self.previous = None
        self.bvp_cache = BvpCache()
        return self

    def plan(
        self,
        ego: EgoState,
        traffic: Sequence[TrafficVehicle],
        behavior: BehaviorState,
        v_desired: float,
        static_obstacles: Sequence = (),
    ) -> Trajectory:
        ctx = PlanContext(
            ego=ego,
            traffic=tuple(traffic),
            behavior=behavior,
            v_desired=v_desired,
            time_budget=self.time_budget,
            previous=self.previous,
            static_obstacles=static_obstacles,
        )
        trace: Dict[str, Any] = {}
        traj = plan_cycle(ctx, self.road, self.config, self.bvp_cache, trace)
        if self.debug:
            logger.debug(
                "cycle %.1f ms, %d candidates, cost %s",
                1000.0 * trace["wall_time"],
                trace["candidates"],
                trace["cost"].get("total"),
            )
        self.previous = traj
        self.last_trace = trace
        return traj
