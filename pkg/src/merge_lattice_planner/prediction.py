"""Traffic prediction and footprint geometry.

Traffic vehicles keep their lane and are predicted with a constant speed
model. Footprints are oriented rectangles tested with the separating axis
theorem.
"""

import logging
import math
from dataclasses import dataclass
from dataclasses import replace
from typing import NamedTuple
from typing import Optional
from typing import Tuple

import numpy as np

from .config import IdmParams
from .path_geometry import Lane
from .path_geometry import RoadModel
from .path_geometry import lateral_offset_xy

logger = logging.getLogger(__name__)

OBSTACLE_SWEEP_STEP = 0.5


@dataclass(frozen=True)
class TrafficVehicle:
    id: str
    lane: Lane
    # arc length along the reference path, measured at the vehicle center
    s: float
    v: float
    length: float = 4.8
    width: float = 1.9
    a: float = 0.0
    idm: Optional[IdmParams] = None

    def __post_init__(self):
        if self.v < 0:
            msg = f"vehicle {self.id} has negative speed"
            raise ValueError(msg)
        if self.length <= 0 or self.width <= 0:
            msg = f"vehicle {self.id} needs positive dimensions"
            raise ValueError(msg)

    def moved(self, s: float, v: float, a: float) -> "TrafficVehicle":
        return replace(self, s=s, v=v, a=a)


@dataclass(frozen=True)
class OrientedBox:
    x: float
    y: float
    theta: float
    length: float
    width: float

    def inflated(self, margin: float) -> "OrientedBox":
        return replace(self, length=self.length + 2.0 * margin, width=self.width + 2.0 * margin)

    def axes(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, s], [-s, c]])

    def corners(self) -> np.ndarray:
        u, n = self.axes()
        hl, hw = 0.5 * self.length, 0.5 * self.width
        center = np.array([self.x, self.y])
        return np.array([
            center + hl * u + hw * n,
            center - hl * u + hw * n,
            center - hl * u - hw * n,
            center + hl * u - hw * n,
        ])

    def contains(self, px, py) -> np.ndarray:
        u, n = self.axes()
        dx, dy = np.asarray(px) - self.x, np.asarray(py) - self.y
        along = dx * u[0] + dy * u[1]
        across = dx * n[0] + dy * n[1]
        return (np.abs(along) <= 0.5 * self.length) & (np.abs(across) <= 0.5 * self.width)


def boxes_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    """Separating axis test for two rectangles; touching counts as overlap."""
    ca, cb = a.corners(), b.corners()
    for axis in np.vstack((a.axes(), b.axes())):
        pa, pb = ca @ axis, cb @ axis
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def box_frames(x, y, theta, length, width) -> Tuple[np.ndarray, np.ndarray]:
    """Corners (N, 4, 2) and unit axes (N, 2, 2) of N oriented rectangles."""
    x, y, theta = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=float)) for v in (x, y, theta)))
    c, s = np.cos(theta), np.sin(theta)
    u = np.stack((c, s), axis=-1)
    n = np.stack((-s, c), axis=-1)
    center = np.stack((x, y), axis=-1)
    hl, hw = 0.5 * length, 0.5 * width
    signs = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
    corners = center[:, None, :] + signs[None, :, :1] * hl * u[:, None, :] + signs[None, :, 1:] * hw * n[:, None, :]
    return corners, np.stack((u, n), axis=1)


def boxes_overlap_many(a: Tuple[np.ndarray, np.ndarray], b: Tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Pairwise separating axis test of two equally long box arrays given as
    ``box_frames`` output; touching counts as overlap."""
    ca, aa = a
    cb, ab = b
    axes = np.concatenate((aa, ab), axis=1)
    pa = np.einsum("nkc,nac->nak", ca, axes)
    pb = np.einsum("nkc,nac->nak", cb, axes)
    separated = (pa.max(axis=-1) < pb.min(axis=-1)) | (pb.max(axis=-1) < pa.min(axis=-1))
    return ~separated.any(axis=-1)


def vehicle_box(road: RoadModel, vehicle: TrafficVehicle, s: Optional[float] = None, inflation: float = 0.0) -> OrientedBox:
    s = vehicle.s if s is None else s
    s = min(max(s, 0.0), road.total_length)
    x, y, theta = lateral_offset_xy(road.reference, s, road.lane_center(vehicle.lane))
    return OrientedBox(float(x), float(y), float(theta), vehicle.length, vehicle.width).inflated(inflation)


def predict_constant_velocity(vehicle: TrafficVehicle, horizon: float, dt: float) -> np.ndarray:
    """Rows of (t, s, v) from t = 0 to the horizon."""
    if horizon <= 0 or dt <= 0:
        msg = "horizon and dt must be positive"
        raise ValueError(msg)
    n = int(round(horizon / dt))
    t = dt * np.arange(n + 1)
    return np.column_stack((t, vehicle.s + vehicle.v * t, np.full_like(t, vehicle.v)))


def position_at(vehicle: TrafficVehicle, t):
    return vehicle.s + vehicle.v * np.asarray(t)


class EgoSweep(NamedTuple):
    """Ego samples along a candidate trajectory.

    ``arc`` is the distance travelled from the planning start and ``t`` the
    time since the planning start.
    """

    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    s_ref: np.ndarray
    l_ref: np.ndarray
    arc: np.ndarray
    t: np.ndarray


@dataclass(frozen=True)
class CollisionGeometry:
    exists: bool = False
    s_ego: float = math.nan
    s_obs: float = math.nan
    T_ego: float = math.nan
    T_obs: float = math.nan
    d_ego: float = math.nan
    d_obs: float = math.nan


NO_CONFLICT = CollisionGeometry()


class SweepExtents(NamedTuple):
    """Half extents of the ego footprint along and across the reference at
    each sweep sample."""

    along: np.ndarray
    across: np.ndarray


def sweep_extents(sweep: EgoSweep, road: RoadModel, ego_dims: Tuple[float, float]) -> SweepExtents:
    ego_len, ego_wid = ego_dims
    ref_theta = lateral_offset_xy(road.reference, np.clip(sweep.s_ref, 0.0, road.total_length), 0.0)[2]
    dth = sweep.theta - ref_theta
    c, s = np.abs(np.cos(dth)), np.abs(np.sin(dth))
    return SweepExtents(0.5 * (ego_len * c + ego_wid * s), 0.5 * (ego_len * s + ego_wid * c))


def in_corridor(
    sweep: EgoSweep,
    obstacle: TrafficVehicle,
    road: RoadModel,
    ego_dims: Tuple[float, float],
    inflation: float,
    extents: Optional[SweepExtents] = None,
) -> np.ndarray:
    """Mask of ego samples whose inflated footprint reaches laterally into
    the obstacle's inflated footprint band."""
    extents = extents if extents is not None else sweep_extents(sweep, road, ego_dims)
    l_c = road.lane_center(obstacle.lane)
    return np.abs(sweep.l_ref - l_c) <= extents.across + 0.5 * obstacle.width + 2.0 * inflation


def first_conflict(
    sweep: EgoSweep,
    obstacle: TrafficVehicle,
    road: RoadModel,
    ego_dims: Tuple[float, float],
    inflation: float,
    extents: Optional[SweepExtents] = None,
) -> Optional[Tuple[int, float]]:
    """Index of the first ego sample whose footprint meets the obstacle lane
    corridor, and the obstacle position of that overlap.

    Only obstacle positions at or downstream of its current position are
    swept, on a grid anchored at the current position.
    """
    ego_len, ego_wid = ego_dims
    near = np.flatnonzero(in_corridor(sweep, obstacle, road, ego_dims, inflation, extents))
    if not len(near):
        return None
    reach = 0.5 * (ego_len + obstacle.length) + 2.0 * inflation + OBSTACLE_SWEEP_STEP
    s_k = sweep.s_ref[near]
    j_lo = np.maximum(np.floor((s_k - reach - obstacle.s) / OBSTACLE_SWEEP_STEP), 0.0).astype(int)
    j_hi = np.ceil((s_k + reach - obstacle.s) / OBSTACLE_SWEEP_STEP).astype(int)
    if not np.any(j_hi >= j_lo):
        return None
    j = np.arange(j_lo.min(), j_hi.max() + 1)
    positions = obstacle.s + OBSTACLE_SWEEP_STEP * j
    keep = positions <= road.total_length
    j, positions = j[keep], positions[keep]
    # (ego sample, obstacle position) pairs inside each sample's window, row-major in sample order
    kk, jj = np.nonzero((j[None, :] >= j_lo[:, None]) & (j[None, :] <= j_hi[:, None]))
    if not len(kk):
        return None
    idx = near[kk]
    ego = box_frames(sweep.x[idx], sweep.y[idx], sweep.theta[idx], ego_len + 2.0 * inflation, ego_wid + 2.0 * inflation)
    ox, oy, oth = lateral_offset_xy(road.reference, np.clip(positions, 0.0, road.total_length), road.lane_center(obstacle.lane))
    obs = box_frames(ox[jj], oy[jj], oth[jj], obstacle.length + 2.0 * inflation, obstacle.width + 2.0 * inflation)
    hit = boxes_overlap_many(ego, obs)
    if not hit.any():
        return None
    first = kk[hit].min()
    k = int(near[first])
    hits = positions[jj[hit & (kk == first)]]
    best = min(hits, key=lambda p: (abs(p - sweep.s_ref[k]), p))
    return k, float(best)


def corridor_entry_time(
    sweep: EgoSweep,
    obstacle: TrafficVehicle,
    road: RoadModel,
    ego_dims: Tuple[float, float],
    inflation: float,
    extents: Optional[SweepExtents] = None,
) -> float:
    """Time of the first sample inside the obstacle's lateral band, inf when
    the sweep never gets there."""
    near = np.flatnonzero(in_corridor(sweep, obstacle, road, ego_dims, inflation, extents))
    return float(sweep.t[near[0]]) if len(near) else math.inf


def first_timed_overlap(
    sweep: EgoSweep,
    obstacle: TrafficVehicle,
    road: RoadModel,
    ego_dims: Tuple[float, float],
    inflation: float,
    t_max: float = math.inf,
    extents: Optional[SweepExtents] = None,
) -> Optional[int]:
    """Index of the first ego sample at or before ``t_max`` whose inflated
    footprint overlaps the obstacle's inflated footprint at its constant
    speed position at the same time."""
    ego_len, ego_wid = ego_dims
    extents = extents if extents is not None else sweep_extents(sweep, road, ego_dims)
    s_obs = obstacle.s + obstacle.v * sweep.t
    # along-reference prefilter, one metre of slack for lane curvature
    close = np.abs(sweep.s_ref - s_obs) <= extents.along + 0.5 * obstacle.length + 2.0 * inflation + 1.0
    idx = np.flatnonzero(close & (sweep.t <= t_max) & in_corridor(sweep, obstacle, road, ego_dims, inflation, extents))
    if not len(idx):
        return None
    ego = box_frames(sweep.x[idx], sweep.y[idx], sweep.theta[idx], ego_len + 2.0 * inflation, ego_wid + 2.0 * inflation)
    ox, oy, oth = lateral_offset_xy(road.reference, np.clip(s_obs[idx], 0.0, road.total_length), road.lane_center(obstacle.lane))
    hit = boxes_overlap_many(ego, box_frames(ox, oy, oth, obstacle.length + 2.0 * inflation, obstacle.width + 2.0 * inflation))
    return int(idx[hit][0]) if hit.any() else None


def conflict_geometry(sweep: EgoSweep, obstacle: TrafficVehicle, hit: Optional[Tuple[int, float]]) -> CollisionGeometry:
    if hit is None:
        return NO_CONFLICT
    k, s_obs = hit
    d_obs = max(s_obs - obstacle.s, 0.0)
    if d_obs == 0.0:
        t_obs = 0.0
    elif obstacle.v > 0.0:
        t_obs = d_obs / obstacle.v
    else:
        t_obs = math.inf
    return CollisionGeometry(
        exists=True,
        s_ego=float(sweep.arc[k]),
        s_obs=s_obs,
        T_ego=float(sweep.t[k]),
        T_obs=t_obs,
        d_ego=float(sweep.arc[k]),
        d_obs=d_obs,
    )


def find_collision_positions(
    ego_traj,
    obstacle: TrafficVehicle,
    road: RoadModel,
    ego_dims: Tuple[float, float],
    inflation: float = 0.2,
) -> CollisionGeometry:
    """Spatial conflict between a candidate trajectory and a lane-keeping
    obstacle, with each vehicle's arrival time at its own conflict position.

    ``ego_traj`` is anything with a ``sweep()`` method returning an
    :class:`EgoSweep`, or an ``EgoSweep`` itself.
    """
    sweep = ego_traj if isinstance(ego_traj, EgoSweep) else ego_traj.sweep()
    return conflict_geometry(sweep, obstacle, first_conflict(sweep, obstacle, road, ego_dims, inflation))
