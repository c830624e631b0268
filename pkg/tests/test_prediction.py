"""Tests for traffic prediction and footprint overlap."""

import math
import unittest

import numpy as np

from merge_lattice_planner.prediction import EgoSweep
from merge_lattice_planner.prediction import OrientedBox
from merge_lattice_planner.prediction import box_frames
from merge_lattice_planner.prediction import boxes_overlap
from merge_lattice_planner.prediction import boxes_overlap_many
from merge_lattice_planner.prediction import corridor_entry_time
from merge_lattice_planner.prediction import find_collision_positions
from merge_lattice_planner.prediction import first_conflict
from merge_lattice_planner.prediction import first_timed_overlap
from merge_lattice_planner.prediction import predict_constant_velocity
from merge_lattice_planner.prediction import vehicle_box

from .fixtures import main_vehicle
from .fixtures import straight_road

GRID = 0.05


def sampled_overlap(a, b):
    """Point-sampling oracle: some grid point of ``a`` lies inside ``b``."""
    along = np.linspace(-0.5 * a.length, 0.5 * a.length, int(math.ceil(a.length / GRID)) + 1)
    across = np.linspace(-0.5 * a.width, 0.5 * a.width, int(math.ceil(a.width / GRID)) + 1)
    u, v = np.meshgrid(along, across)
    c, s = math.cos(a.theta), math.sin(a.theta)
    px = a.x + u * c - v * s
    py = a.y + u * s + v * c
    return bool(np.any(b.contains(px, py)))


def merge_sweep(v_ego):
    """Straight lane change from the merge lane center to the main lane
    center between x=160 and x=200, then straight on."""
    x = np.arange(160.0, 240.5, 0.5)
    y = np.where(x < 200.0, 1.75 + (x - 160.0) * 3.5 / 40.0, 5.25)
    theta = np.where(x < 200.0, math.atan2(3.5, 40.0), 0.0)
    arc = np.concatenate(([0.0], np.cumsum(np.hypot(np.diff(x), np.diff(y)))))
    return EgoSweep(x=x, y=y, theta=theta, s_ref=x, l_ref=y, arc=arc, t=arc / v_ego)


class TestConstantVelocity(unittest.TestCase):
    def test_linear_motion(self):
        rows = predict_constant_velocity(main_vehicle("a", 0.0, 20.0), 5.0, 1.0)
        np.testing.assert_allclose(rows[:, 0], [0, 1, 2, 3, 4, 5])
        np.testing.assert_allclose(rows[:, 1], [0, 20, 40, 60, 80, 100])
        np.testing.assert_allclose(rows[:, 2], 20.0)

    def test_parked(self):
        rows = predict_constant_velocity(main_vehicle("a", 42.0, 0.0), 3.0, 0.5)
        np.testing.assert_allclose(rows[:, 1], 42.0)

    def test_bad_horizon(self):
        with self.assertRaises(ValueError):
            predict_constant_velocity(main_vehicle("a", 0.0, 1.0), 0.0, 0.1)


class TestBoxes(unittest.TestCase):
    def test_agrees_with_point_sampling(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            a, b = (
                OrientedBox(*rng.uniform(-4.0, 4.0, 2), rng.uniform(-math.pi, math.pi), rng.uniform(1.0, 5.0), rng.uniform(0.5, 2.0))
                for _ in range(2)
            )
            got = boxes_overlap(a, b)
            assert got == boxes_overlap(b, a)
            if sampled_overlap(a, b) or sampled_overlap(b, a):
                assert got
            if got:
                assert sampled_overlap(a.inflated(2 * GRID), b.inflated(2 * GRID))

    def test_touching_counts(self):
        a = OrientedBox(0.0, 0.0, 0.0, 2.0, 2.0)
        assert boxes_overlap(a, OrientedBox(2.0, 0.0, 0.0, 2.0, 2.0))
        assert not boxes_overlap(a, OrientedBox(2.01, 0.0, 0.0, 2.0, 2.0))


class TestCollisionPositions(unittest.TestCase):
    def setUp(self):
        self.road = straight_road()
        self.dims = (4.8, 1.9)

    def test_conflict_geometry_independent_of_timing(self):
        slow_ego = find_collision_positions(merge_sweep(10.0), main_vehicle("m", 150.0, 30.0), self.road, self.dims)
        fast_ego = find_collision_positions(merge_sweep(30.0), main_vehicle("m", 150.0, 10.0), self.road, self.dims)
        assert slow_ego.exists
        assert fast_ego.exists
        assert slow_ego.s_ego == fast_ego.s_ego
        assert slow_ego.s_obs == fast_ego.s_obs
        assert slow_ego.T_ego > slow_ego.T_obs
        assert fast_ego.T_ego < fast_ego.T_obs

    def test_arrival_times(self):
        g = find_collision_positions(merge_sweep(10.0), main_vehicle("m", 150.0, 20.0), self.road, self.dims)
        self.assertAlmostEqual(g.T_ego, g.d_ego / 10.0)
        self.assertAlmostEqual(g.T_obs, g.d_obs / 20.0)
        assert 160.0 < g.s_obs < 200.0

    def test_disjoint_corridors(self):
        x = np.arange(160.0, 240.5, 0.5)
        y = np.full_like(x, 1.75)
        sweep = EgoSweep(x, y, np.zeros_like(x), x, y, x - 160.0, (x - 160.0) / 15.0)
        g = find_collision_positions(sweep, main_vehicle("m", 150.0, 20.0), self.road, self.dims)
        assert not g.exists

    def test_upstream_obstacle_has_longer_distance(self):
        near = find_collision_positions(merge_sweep(15.0), main_vehicle("m", 150.0, 20.0), self.road, self.dims)
        far = find_collision_positions(merge_sweep(15.0), main_vehicle("m", 120.0, 20.0), self.road, self.dims)
        assert far.d_obs >= near.d_obs

    def test_matches_pairwise_box_scan(self):
        # one box per obstacle grid position, tested one by one
        for s0, v_ego in ((150.0, 15.0), (171.3, 12.0), (120.0, 20.0)):
            sweep = merge_sweep(v_ego)
            obstacle = main_vehicle("m", s0, 15.0)
            expected = None
            for k in range(len(sweep.x)):
                ego = OrientedBox(sweep.x[k], sweep.y[k], sweep.theta[k], 4.8, 1.9).inflated(0.2)
                positions = s0 + 0.5 * np.arange(0, int((sweep.s_ref[k] + 6.0 - s0) / 0.5) + 2)
                hits = [p for p in positions if abs(p - sweep.s_ref[k]) <= 6.0 and boxes_overlap(ego, vehicle_box(self.road, obstacle, p, 0.2))]
                if hits:
                    expected = (k, min(hits, key=lambda p: (abs(p - sweep.s_ref[k]), p)))
                    break
            got = first_conflict(sweep, obstacle, self.road, self.dims, 0.2)
            assert got is not None
            assert got[0] == expected[0]
            self.assertAlmostEqual(got[1], expected[1])


class TestBoxArrays(unittest.TestCase):
    def test_agrees_with_single_pair_test(self):
        rng = np.random.default_rng(11)
        n = 500
        a = (rng.uniform(-4.0, 4.0, n), rng.uniform(-4.0, 4.0, n), rng.uniform(-math.pi, math.pi, n))
        b = (rng.uniform(-4.0, 4.0, n), rng.uniform(-4.0, 4.0, n), rng.uniform(-math.pi, math.pi, n))
        got = boxes_overlap_many(box_frames(*a, 4.8, 1.9), box_frames(*b, 3.0, 1.5))
        for i in range(n):
            single = boxes_overlap(OrientedBox(a[0][i], a[1][i], a[2][i], 4.8, 1.9), OrientedBox(b[0][i], b[1][i], b[2][i], 3.0, 1.5))
            assert bool(got[i]) == single


class TestTimedOverlap(unittest.TestCase):
    def setUp(self):
        self.road = straight_road()
        self.dims = (4.8, 1.9)

    def test_same_slot_overlaps(self):
        # alongside at the same speed: the ego ends up on top of the vehicle
        assert first_timed_overlap(merge_sweep(15.0), main_vehicle("m", 160.0, 15.0), self.road, self.dims, 0.2) is not None

    def test_gap_held_behind(self):
        assert first_timed_overlap(merge_sweep(15.0), main_vehicle("m", 140.0, 15.0), self.road, self.dims, 0.2) is None

    def test_timing_decides_not_geometry(self):
        # the lane change crosses this vehicle's path, but it is far ahead by then
        sweep = merge_sweep(15.0)
        obstacle = main_vehicle("m", 165.0, 25.0)
        assert find_collision_positions(sweep, obstacle, self.road, self.dims).exists
        assert first_timed_overlap(sweep, obstacle, self.road, self.dims, 0.2) is None

    def test_window_limits_faster_follower(self):
        sweep = merge_sweep(15.0)
        follower = main_vehicle("m", 140.0, 25.0)
        entry = corridor_entry_time(sweep, follower, self.road, self.dims, 0.2)
        # first sample reaching the band is x = 171.5
        self.assertAlmostEqual(entry, sweep.t[23])
        assert first_timed_overlap(sweep, follower, self.road, self.dims, 0.2) is not None
        assert first_timed_overlap(sweep, follower, self.road, self.dims, 0.2, t_max=entry + 0.3) is None

    def test_lane_keeping_sweep_never_enters(self):
        x = np.arange(160.0, 240.5, 0.5)
        y = np.full_like(x, 1.75)
        sweep = EgoSweep(x, y, np.zeros_like(x), x, y, x - 160.0, (x - 160.0) / 15.0)
        follower = main_vehicle("m", 150.0, 15.0)
        assert math.isinf(corridor_entry_time(sweep, follower, self.road, self.dims, 0.2))
        assert first_timed_overlap(sweep, main_vehicle("m", 160.0, 15.0), self.road, self.dims, 0.2) is None
