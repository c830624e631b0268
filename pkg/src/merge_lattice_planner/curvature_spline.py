"""Cubic curvature polynomial path segments.

A segment is described by its curvature at four knots equally spaced along
the path (s = 0, s_f/3, 2 s_f/3, s_f) and its length s_f. Paths are obtained
by integrating the kinematic bicycle model in arc-length form, and segments
joining two lattice states are found with a Newton-Raphson shooting method.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional
from typing import Tuple

import numpy as np

from .errors import BvpFailure
from .path_geometry import StaticState
from .path_geometry import wrap_angle

logger = logging.getLogger(__name__)

POSITION_TOL = 1e-3
HEADING_TOL = 1e-4
MAX_ITERATIONS = 50
MAX_HALVINGS = 4
ITERATION_STEPS = 64
VERIFY_STEPS = 512
# perturbations for the central-difference Jacobian over (p1, p2, s_f)
JACOBIAN_STEP = np.array([1e-4, 1e-4, 1e-3])
# Newton keeps iterating below the acceptance tolerance until this tight one
_TIGHT_POSITION = 1e-9
_TIGHT_HEADING = 1e-10


@dataclass(frozen=True)
class SplineParams:
    p0: float
    p1: float
    p2: float
    p3: float
    s_f: float

    def __post_init__(self):
        if not self.s_f > 0:
            msg = f"s_f must be positive, got {self.s_f}"
            raise ValueError(msg)
        if not all(math.isfinite(p) for p in (self.p0, self.p1, self.p2, self.p3, self.s_f)):
            msg = "spline parameters must be finite"
            raise ValueError(msg)

    @property
    def knots(self) -> Tuple[float, float, float, float]:
        return self.p0, self.p1, self.p2, self.p3


@dataclass(frozen=True, eq=False)
class PathSegment:
    params: SplineParams
    start: StaticState
    # columns: s, x, y, theta, kappa
    poses: np.ndarray

    @property
    def s(self):
        return self.poses[:, 0]

    @property
    def x(self):
        return self.poses[:, 1]

    @property
    def y(self):
        return self.poses[:, 2]

    @property
    def theta(self):
        return self.poses[:, 3]

    @property
    def kappa(self):
        return self.poses[:, 4]

    @property
    def kappa_rate(self):
        return eval_curvature_rate(self.params, self.s)

    @property
    def length(self) -> float:
        return self.params.s_f

    def end_state(self) -> StaticState:
        _, x, y, th, k = self.poses[-1]
        return StaticState(x=float(x), y=float(y), theta=float(th), kappa=float(k))


def coeffs_from_knots(params: SplineParams) -> Tuple[float, float, float, float]:
    """Polynomial coefficients a0..a3 of kappa(s) interpolating the knots."""
    p0, p1, p2, p3 = params.knots
    sf = params.s_f
    a0 = p0
    a1 = -(11.0 * p0 - 18.0 * p1 + 9.0 * p2 - 2.0 * p3) / (2.0 * sf)
    a2 = 9.0 * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) / (2.0 * sf**2)
    a3 = -9.0 * (p0 - 3.0 * p1 + 3.0 * p2 - p3) / (2.0 * sf**3)
    return a0, a1, a2, a3


def eval_curvature(params: SplineParams, s):
    a0, a1, a2, a3 = coeffs_from_knots(params)
    s = np.asarray(s, dtype=float)
    return a0 + s * (a1 + s * (a2 + s * a3))


def eval_curvature_rate(params: SplineParams, s):
    _, a1, a2, a3 = coeffs_from_knots(params)
    s = np.asarray(s, dtype=float)
    return a1 + s * (2.0 * a2 + s * 3.0 * a3)


def _heading(coeffs, theta0, s):
    a0, a1, a2, a3 = coeffs
    return theta0 + s * (a0 + s * (a1 / 2.0 + s * (a2 / 3.0 + s * a3 / 4.0)))


def _rollout(params: SplineParams, x0, y0, theta0, n: int):
    """Fourth-order Runge-Kutta integration of dx/ds = cos(theta),
    dy/ds = sin(theta), dtheta/ds = kappa(s) on n equal steps.

    The right-hand side does not depend on (x, y), and the heading is a
    quartic in s, so each RK4 step is Simpson's rule on the exact heading.
    """
    coeffs = coeffs_from_knots(params)
    h = params.s_f / n
    s = np.linspace(0.0, params.s_f, n + 1)
    theta = _heading(coeffs, theta0, s)
    theta_mid = _heading(coeffs, theta0, s[:-1] + 0.5 * h)
    dx = h / 6.0 * (np.cos(theta[:-1]) + 4.0 * np.cos(theta_mid) + np.cos(theta[1:]))
    dy = h / 6.0 * (np.sin(theta[:-1]) + 4.0 * np.sin(theta_mid) + np.sin(theta[1:]))
    x = np.concatenate(([x0], x0 + np.cumsum(dx)))
    y = np.concatenate(([y0], y0 + np.cumsum(dy)))
    return s, x, y, theta


def integrate_path(params: SplineParams, start: StaticState, step: float) -> PathSegment:
    if step <= 0:
        msg = "integration step must be positive"
        raise ValueError(msg)
    step = min(step, params.s_f)
    n = max(1, int(math.ceil(params.s_f / step - 1e-9)))
    s, x, y, theta = _rollout(params, start.x, start.y, start.theta, n)
    kappa = eval_curvature(params, s)
    return PathSegment(params=params, start=start, poses=np.column_stack((s, x, y, theta, kappa)))


def _endpoint(params: SplineParams, n: int):
    _, x, y, theta = _rollout(params, 0.0, 0.0, 0.0, n)
    return x[-1], y[-1], theta[-1]


def _residual(q, k0, kf, target, n):
    if q[2] <= 0:
        msg = "path length driven non-positive"
        raise BvpFailure(msg)
    x, y, th = _endpoint(SplineParams(k0, q[0], q[1], kf, q[2]), n)
    return np.array([x - target[0], y - target[1], float(wrap_angle(th - target[2]))])


def _within(r, pos_tol, head_tol):
    return math.hypot(r[0], r[1]) < pos_tol and abs(r[2]) < head_tol


def _to_local(x0: StaticState, xf: StaticState):
    c, s = math.cos(x0.theta), math.sin(x0.theta)
    dx, dy = xf.x - x0.x, xf.y - x0.y
    return np.array([c * dx + s * dy, -s * dx + c * dy, float(wrap_angle(xf.theta - x0.theta))])


def initial_guess(x0: StaticState, xf: StaticState) -> SplineParams:
    target = _to_local(x0, xf)
    dist = math.hypot(target[0], target[1])
    s_f = dist * (1.0 + target[2] ** 2 / 5.0)
    return SplineParams(
        p0=x0.kappa,
        p1=x0.kappa + (xf.kappa - x0.kappa) / 3.0,
        p2=x0.kappa + 2.0 * (xf.kappa - x0.kappa) / 3.0,
        p3=xf.kappa,
        s_f=max(s_f, 1e-3),
    )


def solve_bvp(x0: StaticState, xf: StaticState, init: Optional[SplineParams] = None, max_iterations: int = MAX_ITERATIONS) -> SplineParams:
    """Find (p1, p2, s_f) so the segment from x0 ends at xf.

    p0 and p3 are pinned to the boundary curvatures. The problem is solved in
    the frame of x0, so the result does not depend on the global pose.
    """
    target = _to_local(x0, xf)
    k0, kf = x0.kappa, xf.kappa
    guess = init if init is not None and init.s_f > 0 else initial_guess(x0, xf)
    q = np.array([guess.p1, guess.p2, guess.s_f], dtype=float)

    r = _residual(q, k0, kf, target, ITERATION_STEPS)
    norm = float(np.linalg.norm(r))
    for it in range(max_iterations):
        if _within(r, _TIGHT_POSITION, _TIGHT_HEADING):
            break
        jac = np.empty((3, 3))
        for j in range(3):
            dq = np.zeros(3)
            dq[j] = JACOBIAN_STEP[j]
            jac[:, j] = (_residual(q + dq, k0, kf, target, ITERATION_STEPS) - _residual(q - dq, k0, kf, target, ITERATION_STEPS)) / (2.0 * JACOBIAN_STEP[j])
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as e:
            msg = f"singular Jacobian at iteration {it}"
            raise BvpFailure(msg) from e

        scale = 1.0
        q_new, r_new, norm_new = None, None, math.inf
        for _ in range(MAX_HALVINGS + 1):
            candidate = q + scale * step
            if candidate[2] > 0:
                r_try = _residual(candidate, k0, kf, target, ITERATION_STEPS)
                norm_try = float(np.linalg.norm(r_try))
                q_new, r_new, norm_new = candidate, r_try, norm_try
                if norm_try < norm:
                    break
            scale *= 0.5
        if q_new is None:
            msg = "path length driven non-positive"
            raise BvpFailure(msg)
        if norm_new >= norm and _within(r, POSITION_TOL, HEADING_TOL):
            # no further progress possible, already acceptable
            break
        q, r, norm = q_new, r_new, norm_new
    else:
        if not _within(r, POSITION_TOL, HEADING_TOL):
            msg = f"no convergence after {max_iterations} iterations (residual {norm:.2e})"
            raise BvpFailure(msg)

    params = SplineParams(k0, float(q[0]), float(q[1]), kf, float(q[2]))
    check = _residual(q, k0, kf, target, VERIFY_STEPS)
    if not _within(check, POSITION_TOL, HEADING_TOL):
        msg = f"endpoint residual {np.linalg.norm(check):.2e} fails verification"
        raise BvpFailure(msg)
    return params
