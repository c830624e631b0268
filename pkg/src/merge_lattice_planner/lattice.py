"""Conformal spatiotemporal lattice.

Stations are sampled perpendicular to the reference path at look-ahead
layers, joined by curvature polynomial segments, and extended in time by
sampling an acceleration per edge and smoothing the speed with a cubic in
time.
"""

import collections
import logging
import math
import time
from dataclasses import dataclass
from dataclasses import field
from functools import cached_property
from typing import Dict
from typing import Iterator
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from .config import LatticeConfig
from .config import PlannerConfig
from .costing import curvature_rate_within_bounds
from .costing import curvature_within_bounds
from .costing import check_static_collision
from .curvature_spline import PathSegment
from .curvature_spline import SplineParams
from .curvature_spline import integrate_path
from .curvature_spline import solve_bvp
from .errors import BvpFailure
from .errors import DegenerateProfileError
from .errors import EmptyLatticeError
from .errors import OffsetSingularityError
from .path_geometry import Lane
from .path_geometry import RoadModel
from .path_geometry import StaticState
from .path_geometry import lane_membership
from .path_geometry import lateral_offset_state
from .path_geometry import project_many
from .prediction import EgoSweep

logger = logging.getLogger(__name__)

PATH_STEP = 1.0
# footprint clearance from the lane edges for outermost stations
STATION_CLEARANCE = 0.3


@dataclass(frozen=True)
class LatticeNode:
    static: StaticState
    t: float
    v: float
    a: float
    layer: int
    station: int = -1
    lane: Lane = Lane.MERGE
    # distance travelled from the root
    arc: float = 0.0
    accel_index: int = -1

    def __post_init__(self):
        if self.v < 0 or self.t < 0:
            msg = "lattice nodes need v >= 0 and t >= 0"
            raise ValueError(msg)

    @property
    def key(self) -> Tuple[int, int, int]:
        return self.layer, self.station, self.accel_index


@dataclass(frozen=True)
class VelocityProfile:
    """v(t) = v0 + a0 t + c2 t^2 + c3 t^3 on [0, T]."""

    v0: float
    a0: float
    c2: float
    c3: float
    T: float

    def speed(self, t):
        t = np.asarray(t, dtype=float)
        return self.v0 + t * (self.a0 + t * (self.c2 + t * self.c3))

    def accel(self, t):
        t = np.asarray(t, dtype=float)
        return self.a0 + t * (2.0 * self.c2 + t * 3.0 * self.c3)

    def jerk(self, t):
        return 2.0 * self.c2 + 6.0 * self.c3 * np.asarray(t, dtype=float)

    def distance(self, t):
        t = np.asarray(t, dtype=float)
        return t * (self.v0 + t * (self.a0 / 2.0 + t * (self.c2 / 3.0 + t * self.c3 / 4.0)))

    @property
    def v_end(self) -> float:
        return float(self.speed(self.T))

    @property
    def a_end(self) -> float:
        return float(self.accel(self.T))

    @property
    def length(self) -> float:
        return float(self.distance(self.T))

    def min_speed(self) -> float:
        candidates = [0.0, self.T]
        # stationary points of v(t)
        for r in np.roots([3.0 * self.c3, 2.0 * self.c2, self.a0]):
            if abs(r.imag) < 1e-12 and 0.0 < r.real < self.T:
                candidates.append(r.real)
        return float(np.min(self.speed(np.array(candidates))))

    def time_at_distance(self, d):
        """Invert the travelled distance; the profile never reverses."""
        d = np.clip(np.asarray(d, dtype=float), 0.0, self.length)
        grid = np.linspace(0.0, self.T, 33)
        t = np.interp(d, self.distance(grid), grid)
        for _ in range(3):
            v = self.speed(t)
            step = np.where(v > 1e-6, (self.distance(t) - d) / np.maximum(v, 1e-6), 0.0)
            t = np.clip(t - step, 0.0, self.T)
        return t


def velocity_profile(v0: float, a0: float, a_edge: float, s_f: float, a_end: Optional[float] = None) -> VelocityProfile:
    """Acceleration-continuous cubic speed profile over an edge of length s_f.

    The end speed follows constant-acceleration kinematics. The duration
    is chosen so the cubic covers exactly s_f: for a cubic Hermite speed
    profile the distance is T (v0 + vT) / 2 + T^2 (a0 - aT) / 12.
    """
    if v0 < 0 or s_f <= 0:
        msg = "velocity profile needs v0 >= 0 and s_f > 0"
        raise DegenerateProfileError(msg)
    if v0 <= 0.0 and a_edge <= 0.0:
        msg = "edge has no motion"
        raise DegenerateProfileError(msg)
    v_raw_sq = v0 * v0 + 2.0 * a_edge * s_f
    v_end = math.sqrt(max(v_raw_sq, 0.0))
    if a_end is None:
        a_end = a_edge if v_end > 0.0 else 0.0

    quad = (a0 - a_end) / 12.0
    lin = 0.5 * (v0 + v_end)
    if lin <= 0.0:
        msg = "edge has no motion"
        raise DegenerateProfileError(msg)
    if abs(quad) < 1e-12:
        T = s_f / lin
    else:
        disc = lin * lin + 4.0 * quad * s_f
        if disc < 0.0:
            msg = "no duration covers the edge length"
            raise DegenerateProfileError(msg)
        roots = [(-lin + sgn * math.sqrt(disc)) / (2.0 * quad) for sgn in (1.0, -1.0)]
        positive = [r for r in roots if r > 0.0]
        if not positive:
            msg = "no positive duration covers the edge length"
            raise DegenerateProfileError(msg)
        T = min(positive)

    # v(T) = v_end, v'(T) = a_end
    r1 = v_end - v0 - a0 * T
    r2 = a_end - a0
    c3 = (r2 * T - 2.0 * r1) / T**3
    c2 = (r1 - c3 * T**3) / T**2
    profile = VelocityProfile(v0=v0, a0=a0, c2=c2, c3=c3, T=T)
    if profile.min_speed() < -1e-9:
        msg = "speed profile goes negative"
        raise DegenerateProfileError(msg)
    return profile


def lookahead_distance(v: float, config: LatticeConfig) -> float:
    return min(max(v * config.t_horizon, config.d_min), config.d_max)


@dataclass(frozen=True)
class LatticeStation:
    index: int
    state: StaticState
    lane: Lane


def _lanes_at(road: RoadModel, s_layer: float):
    lanes = []
    if s_layer < road.s_ramp_end:
        lanes.append((Lane.MERGE, 0.0, road.w_merge))
    lanes.append((Lane.MAIN, road.w_merge, road.w_merge + road.w_main))
    return lanes


def sample_layer_states(road: RoadModel, s_layer: float, config: PlannerConfig) -> List[LatticeStation]:
    """Stations across every lane present at s_layer, headings tangent to
    the reference and kept inside the lane by the lateral margin."""
    lat = config.lattice
    margin = lat.lateral_margin if lat.lateral_margin is not None else 0.5 * config.vehicle.width + STATION_CLEARANCE
    stations = []
    for lane, lo, hi in _lanes_at(road, s_layer):
        a, b = lo + margin, hi - margin
        if lat.stations_per_lane == 1 or b <= a:
            offsets = np.array([0.5 * (lo + hi)])
        else:
            offsets = np.linspace(a, b, lat.stations_per_lane)
        for l in offsets:  # noqa: E741
            if lane_membership(road, s_layer, float(l)) != lane:
                continue
            try:
                state = lateral_offset_state(road.reference, s_layer, float(l))
            except OffsetSingularityError:
                continue
            stations.append(LatticeStation(len(stations), state, lane))
    return stations


def sample_accelerations(v_node: float, v_desired: float, config: LatticeConfig, s_f: Optional[float] = None) -> List[Tuple[int, float]]:
    """Candidate edge accelerations as ``(grid index, value)`` pairs.

    Decelerations are dropped when the vehicle is slower than desired and
    accelerations when faster; zero is always kept.
    """
    if config.accel_samples == 1:
        grid = np.array([0.5 * (config.accel_min + config.accel_max)])
    else:
        grid = np.linspace(config.accel_min, config.accel_max, config.accel_samples)
    out = []
    for i, a in enumerate(grid):
        a = float(a)
        if abs(a) < 1e-12:
            a = 0.0
        if v_desired > v_node + 1e-9 and a < 0.0:
            continue
        if v_desired < v_node - 1e-9 and a > 0.0:
            continue
        if s_f is not None and v_node * v_node + 2.0 * a * s_f < 0.0:
            continue
        if s_f is None and v_node <= 0.0 and a < 0.0:
            continue
        out.append((i, a))
    return out


@dataclass(eq=False)
class SpatialEdge:
    layer: int
    i_from: int
    i_to: int
    path: PathSegment
    s_ref: np.ndarray
    l_ref: np.ndarray
    lane_from: Lane
    lane_to: Lane
    # per-cycle memo of speed independent cost terms
    memo: Dict[str, object] = field(default_factory=dict)

    @property
    def key(self) -> Tuple[int, int, int]:
        return self.layer, self.i_from, self.i_to


@dataclass(frozen=True, eq=False)
class LatticeEdge:
    from_node: LatticeNode
    to_node: LatticeNode
    path: PathSegment
    profile: VelocityProfile
    spatial: SpatialEdge

    @cached_property
    def _times(self) -> np.ndarray:
        return self.profile.time_at_distance(self.path.s)

    def times(self) -> np.ndarray:
        """Edge-relative time at each path sample."""
        return self._times

    def speeds(self) -> np.ndarray:
        return self.profile.speed(self.times())

    def sweep(self) -> EgoSweep:
        return self._sweep

    @cached_property
    def _sweep(self) -> EgoSweep:
        p = self.path
        return EgoSweep(
            x=p.x,
            y=p.y,
            theta=p.theta,
            s_ref=self.spatial.s_ref,
            l_ref=self.spatial.l_ref,
            arc=self.from_node.arc + p.s,
            t=self.from_node.t + self.times(),
        )


class BvpCache:
    """Memo of boundary value solutions.

    Solutions are memoized on the boundary conditions expressed in the start
    frame, so identical relative geometry is solved once. Solutions from the
    previous cycle seed Newton for the same station pair.
    """

    def __init__(self, max_entries: int = 50000):
        self.max_entries = max_entries
        self._memo: Dict[tuple, Optional[SplineParams]] = {}
        self._warm: Dict[tuple, SplineParams] = {}
        self._current: Dict[tuple, SplineParams] = {}
        self.hits = 0
        self.solves = 0

    def new_cycle(self):
        self._warm = self._current
        self._current = {}

    @staticmethod
    def _local_key(x0: StaticState, xf: StaticState) -> tuple:
        c, s = math.cos(x0.theta), math.sin(x0.theta)
        dx, dy = xf.x - x0.x, xf.y - x0.y
        dth = math.remainder(xf.theta - x0.theta, 2.0 * math.pi)
        return (
            round(x0.kappa, 9),
            round(c * dx + s * dy, 7),
            round(-s * dx + c * dy, 7),
            round(dth, 9),
            round(xf.kappa, 9),
        )

    def solve(self, pair: tuple, x0: StaticState, xf: StaticState) -> SplineParams:
        key = self._local_key(x0, xf)
        if key in self._memo:
            self.hits += 1
            params = self._memo[key]
        else:
            self.solves += 1
            try:
                params = solve_bvp(x0, xf, init=self._warm.get(pair))
            except BvpFailure:
                params = None
            if len(self._memo) >= self.max_entries:
                self._memo.clear()
            self._memo[key] = params
        if params is None:
            msg = f"no segment joins station pair {pair}"
            raise BvpFailure(msg)
        self._current[pair] = params
        return params


@dataclass(eq=False)
class Lattice:
    root: LatticeNode
    road: RoadModel
    layers: List[List[LatticeStation]]
    spatial: Dict[Tuple[int, int, int], SpatialEdge]
    v_desired: float
    config: PlannerConfig
    pruned: collections.Counter = field(default_factory=collections.Counter)
    _adjacency: Optional[dict] = field(default=None, repr=False)
    _adjacency_src: dict = field(default_factory=dict, repr=False)

    @property
    def n_layers(self) -> int:
        return len(self.layers) - 1

    def successors(self, layer: int, station: int) -> List[SpatialEdge]:
        if self._adjacency is None or len(self._adjacency_src) != len(self.spatial):
            adj = collections.defaultdict(list)
            for (k, i, _), e in self.spatial.items():
                adj[(k, i)].append(e)
            self._adjacency, self._adjacency_src = adj, dict(self.spatial)
        return self._adjacency.get((layer, station), [])

    def expand(self, node: LatticeNode, edges: Optional[Sequence[SpatialEdge]] = None) -> Iterator[LatticeEdge]:
        """Kinematic edges leaving ``node``, one per surviving acceleration."""
        vehicle = self.config.vehicle
        for sp in edges if edges is not None else self.successors(node.layer, node.station):
            for idx, a in sample_accelerations(node.v, self.v_desired, self.config.lattice, sp.path.length):
                try:
                    profile = velocity_profile(node.v, node.a, a, sp.path.length)
                except DegenerateProfileError:
                    self.pruned["profile"] += 1
                    continue
                speeds = profile.speed(profile.time_at_distance(sp.path.s))
                if not curvature_rate_within_bounds(sp.path, speeds, vehicle):
                    self.pruned["curvature_rate"] += 1
                    continue
                station = self.layers[sp.layer + 1][sp.i_to]
                to_node = LatticeNode(
                    static=station.state,
                    t=node.t + profile.T,
                    v=max(profile.v_end, 0.0),
                    a=profile.a_end,
                    layer=sp.layer + 1,
                    station=sp.i_to,
                    lane=station.lane,
                    arc=node.arc + sp.path.length,
                    accel_index=idx,
                )
                yield LatticeEdge(node, to_node, sp.path, profile, sp)


def _spatial_edge(road, layer, src: LatticeStation, dst: LatticeStation, bvp: BvpCache) -> SpatialEdge:
    params = bvp.solve((layer, src.index, dst.index), src.state, dst.state)
    path = integrate_path(params, src.state, PATH_STEP)
    frac = path.s / path.length
    s_guess = src.state.s + frac * (dst.state.s - src.state.s)
    s_ref, l_ref = project_many(road.reference, path.x, path.y, s_guess)
    return SpatialEdge(layer, src.index, dst.index, path, s_ref, l_ref, src.lane, dst.lane)


def build_lattice(
    ego: LatticeNode,
    road: RoadModel,
    v_desired: float,
    config: PlannerConfig,
    static_obstacles: Sequence = (),
    bvp_cache: Optional[BvpCache] = None,
    deadline: Optional[float] = None,
) -> Lattice:
    """Layers at equal arc-length spacing out to the look-ahead distance,
    joined by every solvable, curvature-bounded and collision-free segment
    between consecutive layers.

    When ``deadline`` (a ``time.perf_counter`` value) passes, construction
    stops after the current layer pair.
    """
    bvp = bvp_cache if bvp_cache is not None else BvpCache()
    lat = config.lattice
    vehicle = config.vehicle
    dims = (vehicle.length, vehicle.width)
    reach = lookahead_distance(ego.v, lat)
    spacing = reach / lat.n_layers

    root_station = LatticeStation(-1, ego.static, ego.lane)
    layers: List[List[LatticeStation]] = [[root_station]]
    for k in range(1, lat.n_layers + 1):
        s_k = ego.static.s + k * spacing
        if s_k > road.total_length - 1e-6:
            break
        stations = sample_layer_states(road, s_k, config)
        if not stations:
            break
        layers.append(stations)

    lattice = Lattice(root=ego, road=road, layers=layers, spatial={}, v_desired=v_desired, config=config)
    if len(layers) < 2:
        msg = "no look-ahead layer fits on the road"
        raise EmptyLatticeError(msg)

    for k in range(len(layers) - 1):
        if deadline is not None and k > 0 and time.perf_counter() > deadline:
            lattice.layers = layers[: k + 1]
            break
        for src in layers[k]:
            for dst in layers[k + 1]:
                # no crossing into the main lane before the soft nose
                if src.lane == Lane.MERGE and dst.lane == Lane.MAIN and src.state.s < road.s_soft_nose:
                    lattice.pruned["lane_rule"] += 1
                    continue
                try:
                    sp = _spatial_edge(road, k, src, dst, bvp)
                except BvpFailure:
                    lattice.pruned["bvp"] += 1
                    continue
                if not curvature_within_bounds(sp.path, vehicle):
                    lattice.pruned["curvature"] += 1
                    continue
                if not check_static_collision(sp.path, static_obstacles, dims):
                    lattice.pruned["static_collision"] += 1
                    continue
                lattice.spatial[sp.key] = sp

    if not any(key[0] == 0 for key in lattice.spatial):
        msg = "no feasible edge leaves the root"
        raise EmptyLatticeError(msg)
    logger.debug(
        "lattice: %d layers, %d spatial edges, pruned %s",
        lattice.n_layers,
        len(lattice.spatial),
        dict(lattice.pruned),
    )
    return lattice
