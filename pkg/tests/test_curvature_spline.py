"""Tests for cubic curvature segments and the boundary value solver."""

import math
import unittest

import numpy as np

from merge_lattice_planner.curvature_spline import SplineParams
from merge_lattice_planner.curvature_spline import coeffs_from_knots
from merge_lattice_planner.curvature_spline import eval_curvature
from merge_lattice_planner.curvature_spline import integrate_path
from merge_lattice_planner.curvature_spline import solve_bvp
from merge_lattice_planner.errors import BvpFailure
from merge_lattice_planner.path_geometry import StaticState

ORIGIN = StaticState(0.0, 0.0, 0.0, 0.0)


def euler_endpoint(params, h=1e-5):
    n = int(round(params.s_f / h))
    s = np.arange(n) * h
    theta = np.concatenate(([0.0], np.cumsum(h * eval_curvature(params, s))[:-1]))
    return float(np.sum(h * np.cos(theta))), float(np.sum(h * np.sin(theta)))


class TestCoefficients(unittest.TestCase):
    def test_constant(self):
        np.testing.assert_allclose(coeffs_from_knots(SplineParams(0.1, 0.1, 0.1, 0.1, 7.0)), (0.1, 0, 0, 0), atol=1e-15)

    def test_linear(self):
        np.testing.assert_allclose(coeffs_from_knots(SplineParams(0.0, 1 / 3, 2 / 3, 1.0, 1.0)), (0, 1, 0, 0), atol=1e-12)

    def test_interpolates_knots(self):
        params = SplineParams(0.0, 1.0, 0.0, 0.0, 3.0)
        np.testing.assert_allclose(eval_curvature(params, [0.0, 1.0, 2.0, 3.0]), params.knots, atol=1e-12)


class TestIntegratePath(unittest.TestCase):
    def test_straight(self):
        seg = integrate_path(SplineParams(0, 0, 0, 0, 10.0), ORIGIN, 1.0)
        np.testing.assert_allclose(seg.poses[-1], (10.0, 10.0, 0.0, 0.0, 0.0), atol=1e-12)

    def test_half_circle(self):
        start = StaticState(0.0, 0.0, 0.0, 0.1)
        seg = integrate_path(SplineParams(0.1, 0.1, 0.1, 0.1, 10.0 * math.pi), start, 0.1)
        assert seg.s[-1] == 10.0 * math.pi
        end = seg.end_state()
        self.assertAlmostEqual(end.x, 0.0, places=6)
        self.assertAlmostEqual(end.y, 20.0, places=6)
        self.assertAlmostEqual(end.theta, math.pi, places=9)
        self.assertAlmostEqual(end.kappa, 0.1, places=12)

    def test_matches_fine_euler(self):
        params = SplineParams(0.0, 0.05, 0.05, 0.0, 20.0)
        seg = integrate_path(params, ORIGIN, 1.0)
        x, y = euler_endpoint(params)
        assert math.hypot(seg.x[-1] - x, seg.y[-1] - y) < 1e-4

    def test_final_sample_at_length(self):
        seg = integrate_path(SplineParams(0.0, 0.01, -0.01, 0.0, 12.3), ORIGIN, 1.0)
        assert seg.s[-1] == 12.3
        assert len(seg.s) == 14


class TestSolveBvp(unittest.TestCase):
    def test_straight(self):
        p = solve_bvp(ORIGIN, StaticState(10.0, 0.0, 0.0, 0.0))
        np.testing.assert_allclose(p.knots, 0.0, atol=1e-6)
        self.assertAlmostEqual(p.s_f, 10.0, places=6)

    def test_quarter_circle(self):
        p = solve_bvp(StaticState(0.0, 0.0, 0.0, 0.1), StaticState(10.0, 10.0, 0.5 * math.pi, 0.1))
        assert abs(p.s_f - 5.0 * math.pi) < 1e-3
        np.testing.assert_allclose(p.knots, 0.1, atol=1e-3)

    def test_recovers_forward_integration(self):
        truth = SplineParams(0.0, 0.04, -0.02, 0.0, 25.0)
        end = integrate_path(truth, ORIGIN, 0.5).end_state()
        p = solve_bvp(ORIGIN, end)
        got = integrate_path(p, ORIGIN, 0.05).end_state()
        assert math.hypot(got.x - end.x, got.y - end.y) < 1e-3
        assert abs(got.theta - end.theta) < 1e-4

    def test_boundary_curvatures_pinned(self):
        x0 = StaticState(0.0, 0.0, 0.0, 0.01)
        xf = StaticState(20.0, 2.0, 0.05, -0.01)
        p = solve_bvp(x0, xf)
        assert p.p0 == 0.01
        assert p.p3 == -0.01

    def test_frame_independent(self):
        a = solve_bvp(ORIGIN, StaticState(20.0, 3.0, 0.0, 0.0))
        th = 0.7
        x0 = StaticState(5.0, -2.0, th, 0.0)
        xf = StaticState(5.0 + 20.0 * math.cos(th) - 3.0 * math.sin(th), -2.0 + 20.0 * math.sin(th) + 3.0 * math.cos(th), th, 0.0)
        b = solve_bvp(x0, xf)
        self.assertAlmostEqual(a.s_f, b.s_f, places=4)

    def test_no_iterations_left(self):
        with self.assertRaises(BvpFailure):
            solve_bvp(ORIGIN, StaticState(10.0, 3.0, 0.0, 0.0), max_iterations=0)
