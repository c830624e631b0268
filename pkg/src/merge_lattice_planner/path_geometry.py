"""Arc-length parameterized reference path and road model.

The reference path is the outer (right) boundary of the merge lane. Lateral
offsets l are positive to the left of the path tangent, so the merge lane
occupies l in [0, w_merge) and the main lane l in [w_merge, w_merge + w_main].
"""

import enum
import json
import logging
import math
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any
from typing import Dict
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError
from .errors import DegenerateGeometryError
from .errors import OffsetSingularityError
from .errors import OutOfRangeError
from .errors import ProjectionError

logger = logging.getLogger(__name__)

_S_TOL = 1e-9


class Lane(str, enum.Enum):
    MERGE = "merge"
    MAIN = "main"
    OFF_ROAD = "off-road"


def wrap_angle(a):
    """Wrap an angle (or array of angles) to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class StaticState:
    x: float
    y: float
    theta: float
    kappa: float
    s: float = 0.0
    l: float = 0.0  # noqa: E741


@dataclass(frozen=True, eq=False)
class ReferencePath:
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        for arr in (self.s, self.x, self.y, self.theta, self.kappa):
            arr.setflags(write=False)

    @property
    def total_length(self) -> float:
        return float(self.s[-1])

    @property
    def spacing(self) -> float:
        return float(self.s[1] - self.s[0])

    def __len__(self):
        return len(self.s)


def build_reference_path(centerline_points: Sequence[Tuple[float, float]], resample_spacing: float) -> ReferencePath:
    """Resample a polyline at uniform arc length.

    Heading comes from the tangent direction and curvature from finite
    differences of the unwrapped heading, one-sided at both ends.
    """
    pts = np.asarray(centerline_points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        msg = "a reference path needs at least two (x, y) points"
        raise DegenerateGeometryError(msg)
    if resample_spacing <= 0:
        msg = "resample_spacing must be positive"
        raise ValueError(msg)
    seg = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
    if np.any(seg <= 1e-12):
        i = int(np.argmax(seg <= 1e-12))
        msg = f"duplicate consecutive points at index {i}"
        raise DegenerateGeometryError(msg)

    chord = np.concatenate(([0.0], np.cumsum(seg)))
    total = chord[-1]
    n = max(1, int(round(total / resample_spacing)))
    s = np.linspace(0.0, total, n + 1)
    x = np.interp(s, chord, pts[:, 0])
    y = np.interp(s, chord, pts[:, 1])
    if n == 1:
        theta = np.full(2, math.atan2(y[1] - y[0], x[1] - x[0]))
        kappa = np.zeros(2)
    else:
        ds = s[1] - s[0]
        theta = np.unwrap(np.arctan2(np.gradient(y, ds), np.gradient(x, ds)))
        kappa = np.gradient(theta, ds)
    return ReferencePath(s=s, x=x, y=y, theta=theta, kappa=kappa)


def reference_path_from_arcs(
    start: Tuple[float, float, float],
    arcs: Sequence[Tuple[float, float]],
    resample_spacing: float,
) -> ReferencePath:
    """Sample a path made of constant-curvature pieces in closed form.

    ``arcs`` is a list of ``(length, kappa)``. Used for generated road
    templates where the curvature is known exactly.
    """
    if not arcs or any(length <= 0 for length, _ in arcs):
        msg = "arcs must be a non-empty list of positive lengths"
        raise DegenerateGeometryError(msg)
    total = float(sum(length for length, _ in arcs))
    n = max(1, int(round(total / resample_spacing)))
    s = np.linspace(0.0, total, n + 1)
    x = np.empty_like(s)
    y = np.empty_like(s)
    theta = np.empty_like(s)
    kappa = np.empty_like(s)

    x0, y0, th0 = (float(v) for v in start)
    s0 = 0.0
    for k, (length, kap) in enumerate(arcs):
        last = k == len(arcs) - 1
        mask = (s >= s0 - _S_TOL) & ((s <= s0 + length + _S_TOL) if last else (s < s0 + length))
        u = s[mask] - s0
        th = th0 + kap * u
        if abs(kap) < 1e-12:
            x[mask] = x0 + u * math.cos(th0)
            y[mask] = y0 + u * math.sin(th0)
        else:
            x[mask] = x0 + (np.sin(th) - math.sin(th0)) / kap
            y[mask] = y0 + (math.cos(th0) - np.cos(th)) / kap
        theta[mask] = th
        kappa[mask] = kap
        # advance the piece start pose in closed form
        th1 = th0 + kap * length
        if abs(kap) < 1e-12:
            x0 += length * math.cos(th0)
            y0 += length * math.sin(th0)
        else:
            x0 += (math.sin(th1) - math.sin(th0)) / kap
            y0 += (math.cos(th0) - math.cos(th1)) / kap
        th0 = th1
        s0 += length
    return ReferencePath(s=s, x=x, y=y, theta=theta, kappa=kappa)


def _interp(path: ReferencePath, s):
    s = np.asarray(s, dtype=float)
    if np.any(s < -_S_TOL) or np.any(s > path.total_length + _S_TOL):
        msg = f"arc length outside [0, {path.total_length:.3f}]"
        raise OutOfRangeError(msg)
    ds = path.spacing
    u = np.clip(s, 0.0, path.total_length) / ds
    i = np.clip(np.floor(u).astype(int), 0, len(path) - 2)
    f = u - i
    x = path.x[i] + f * (path.x[i + 1] - path.x[i])
    y = path.y[i] + f * (path.y[i + 1] - path.y[i])
    dth = wrap_angle(path.theta[i + 1] - path.theta[i])
    theta = path.theta[i] + f * dth
    kappa = path.kappa[i] + f * (path.kappa[i + 1] - path.kappa[i])
    return x, y, theta, kappa


def query_pose(path: ReferencePath, s: float) -> Tuple[float, float, float, float]:
    x, y, theta, kappa = _interp(path, s)
    return float(x), float(y), float(theta), float(kappa)


def query_poses(path: ReferencePath, s):
    """Vectorized ``query_pose`` over an array of arc lengths."""
    return _interp(path, s)


def lateral_offset_state(path: ReferencePath, s: float, l: float) -> StaticState:  # noqa: E741
    x, y, theta, kappa = query_pose(path, s)
    denom = 1.0 - l * kappa
    if denom <= 0.0:
        msg = f"offset l={l:.3f} crosses the center of curvature at s={s:.3f}"
        raise OffsetSingularityError(msg)
    return StaticState(
        x=x - l * math.sin(theta),
        y=y + l * math.cos(theta),
        theta=theta,
        kappa=kappa / denom,
        s=float(s),
        l=float(l),
    )


def lateral_offset_xy(path: ReferencePath, s, l):  # noqa: E741
    """Vectorized position part of ``lateral_offset_state``."""
    x, y, theta, _ = _interp(path, s)
    return x - l * np.sin(theta), y + l * np.cos(theta), theta


def _tangent_residual(path, px, py, s):
    x, y, theta, _ = query_pose(path, s)
    return (px - x) * math.cos(theta) + (py - y) * math.sin(theta)


def project_to_frenet(path: ReferencePath, x: float, y: float, corridor: Optional[float] = None) -> Tuple[float, float]:
    """Arc length and signed lateral offset of a point.

    A coarse search over samples is refined by root finding on the tangential
    residual, which is zero exactly where the point lies on the normal.
    """
    d2 = (path.x - x) ** 2 + (path.y - y) ** 2
    i = int(np.argmin(d2))
    if corridor is not None and math.sqrt(d2[i]) > corridor + path.spacing:
        msg = f"point ({x:.2f}, {y:.2f}) is outside the {corridor:.1f} m corridor"
        raise ProjectionError(msg)

    last = len(path) - 1
    lo, hi = max(i - 1, 0), min(i + 1, last)
    g_lo = _tangent_residual(path, x, y, path.s[lo])
    g_hi = _tangent_residual(path, x, y, path.s[hi])
    # widen the bracket a few samples when the nearest sample is off by one
    for _ in range(4):
        if g_lo * g_hi <= 0.0:
            break
        lo, hi = max(lo - 1, 0), min(hi + 1, last)
        g_lo = _tangent_residual(path, x, y, path.s[lo])
        g_hi = _tangent_residual(path, x, y, path.s[hi])

    if g_lo == 0.0:
        s = float(path.s[lo])
    elif g_hi == 0.0:
        s = float(path.s[hi])
    elif g_lo * g_hi < 0.0:
        s = brentq(lambda v: _tangent_residual(path, x, y, v), path.s[lo], path.s[hi], xtol=1e-12, rtol=1e-14)
    else:
        msg = f"point ({x:.2f}, {y:.2f}) projects beyond the path ends"
        raise ProjectionError(msg)

    px, py, theta, _ = query_pose(path, s)
    lat = -(x - px) * math.sin(theta) + (y - py) * math.cos(theta)
    if corridor is not None and abs(lat) > corridor:
        msg = f"point ({x:.2f}, {y:.2f}) is {lat:.2f} m off the path"
        raise ProjectionError(msg)
    return float(s), float(lat)


def project_many(path: ReferencePath, xs, ys, s_guess, iterations: int = 3):
    """Vectorized Frenet coordinates for points near known arc lengths.

    Newton iterations on the tangential residual starting from ``s_guess``;
    used for samples along lattice edges whose endpoints are known.
    """
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    s = np.clip(np.asarray(s_guess, dtype=float), 0.0, path.total_length)
    for _ in range(iterations):
        x, y, theta, kappa = _interp(path, s)
        dx, dy = xs - x, ys - y
        lat = -dx * np.sin(theta) + dy * np.cos(theta)
        g = dx * np.cos(theta) + dy * np.sin(theta)
        s = np.clip(s + g / np.maximum(1.0 - lat * kappa, 0.1), 0.0, path.total_length)
    x, y, theta, _ = _interp(path, s)
    lat = -(xs - x) * np.sin(theta) + (ys - y) * np.cos(theta)
    return s, lat


@dataclass(frozen=True, eq=False)
class RoadModel:
    reference: ReferencePath
    w_merge: float
    w_main: float
    s_hard_nose: float
    s_soft_nose: float
    s_ramp_end: float
    speed_limit: float
    geometry: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.s_hard_nose < self.s_soft_nose < self.s_ramp_end <= self.reference.total_length + _S_TOL:
            msg = "road requires 0 <= s_hard_nose < s_soft_nose < s_ramp_end <= total_length"
            raise ConfigError(msg)
        if self.w_merge <= 0 or self.w_main <= 0 or self.speed_limit <= 0:
            msg = "lane widths and speed limit must be positive"
            raise ConfigError(msg)

    @property
    def total_length(self) -> float:
        return self.reference.total_length

    @property
    def corridor(self) -> float:
        return 2.0 * (self.w_merge + self.w_main)

    @property
    def l_merge_center(self) -> float:
        return 0.5 * self.w_merge

    @property
    def l_main_center(self) -> float:
        return self.w_merge + 0.5 * self.w_main

    def lane_center(self, lane: Lane) -> float:
        if lane == Lane.MERGE:
            return self.l_merge_center
        if lane == Lane.MAIN:
            return self.l_main_center
        msg = "off-road has no centerline"
        raise ValueError(msg)

    def project(self, x: float, y: float) -> Tuple[float, float]:
        return project_to_frenet(self.reference, x, y, corridor=self.corridor)


def lane_membership(road: RoadModel, s: float, l: float) -> Lane:  # noqa: E741
    if 0.0 <= l < road.w_merge:
        return Lane.MERGE if s < road.s_ramp_end else Lane.OFF_ROAD
    if road.w_merge <= l <= road.w_merge + road.w_main:
        return Lane.MAIN
    return Lane.OFF_ROAD


def road_from_dict(data: Dict[str, Any]) -> RoadModel:
    """Build a road from its file form.

    Geometry is either ``centerline`` (a list of points) or ``arcs`` (a list of
    ``[length, kappa]`` with an optional ``start`` pose).
    """
    spacing = float(data.get("spacing", 0.5))
    try:
        if "arcs" in data:
            geometry = {"arcs": [list(a) for a in data["arcs"]], "start": list(data.get("start", [0.0, 0.0, 0.0]))}
            reference = reference_path_from_arcs(geometry["start"], geometry["arcs"], spacing)
        else:
            geometry = {"centerline": [list(p) for p in data["centerline"]]}
            reference = build_reference_path(geometry["centerline"], spacing)
        geometry["spacing"] = spacing
        return RoadModel(
            reference=reference,
            w_merge=float(data["w_merge"]),
            w_main=float(data["w_main"]),
            s_hard_nose=float(data["s_hard_nose"]),
            s_soft_nose=float(data["s_soft_nose"]),
            s_ramp_end=float(data["s_ramp_end"]),
            speed_limit=float(data["speed_limit"]),
            geometry=geometry,
        )
    except KeyError as e:
        msg = f"road definition is missing {e}"
        raise ConfigError(msg) from e


def road_to_dict(road: RoadModel) -> Dict[str, Any]:
    return {
        **road.geometry,
        "w_merge": road.w_merge,
        "w_main": road.w_main,
        "s_hard_nose": road.s_hard_nose,
        "s_soft_nose": road.s_soft_nose,
        "s_ramp_end": road.s_ramp_end,
        "speed_limit": road.speed_limit,
    }


def load_road(path) -> RoadModel:
    with Path(path).open() as f:
        return road_from_dict(json.load(f))
