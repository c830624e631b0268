"""Tests for the per-cycle planning loop."""

import itertools
import math
import unittest
from dataclasses import replace
from unittest import mock

import numpy as np

from merge_lattice_planner.behavior import BehaviorState
from merge_lattice_planner.config import LatticeConfig
from merge_lattice_planner.config import PlannerConfig
from merge_lattice_planner.errors import ConfigError
from merge_lattice_planner.planner import EgoState
from merge_lattice_planner.planner import MergePlanner
from merge_lattice_planner.planner import PlanContext
from merge_lattice_planner.planner import cost_context
from merge_lattice_planner.planner import enumerate_candidates
from merge_lattice_planner.planner import plan_cycle
from merge_lattice_planner.planner import stop_trajectory
from merge_lattice_planner.prediction import OrientedBox

from .fixtures import ego_at
from .fixtures import main_vehicle
from .fixtures import straight_road

POST = BehaviorState.POST_MERGE_LANE_FOLLOW
INITIATION = BehaviorState.MERGE_INITIATION


class TestPlanCycle(unittest.TestCase):
    def setUp(self):
        self.road = straight_road()
        self.config = PlannerConfig()

    def test_open_road_holds_lane(self):
        ctx = PlanContext(ego=ego_at(self.road, 350.0, 5.25, 20.0), behavior=POST, v_desired=20.0, time_budget=60.0)
        trace = {}
        traj = plan_cycle(ctx, self.road, self.config, trace=trace)
        assert not traj.fallback
        assert len(traj.segments) == 3
        assert traj.breakdown.terms["velocity"] < 1e-9
        assert traj.breakdown.total < 1e-6
        np.testing.assert_allclose([w.y for w in traj.waypoints], 5.25, atol=1e-6)
        np.testing.assert_allclose([w.v for w in traj.waypoints], 20.0, atol=1e-9)
        assert trace["candidates"] > 0
        assert trace["fallback"] is False
        assert trace["cost"]["infeasible"] is False

    def test_waypoints_are_uniform_in_time(self):
        ctx = PlanContext(ego=ego_at(self.road, 350.0, 5.25, 10.0), behavior=POST, v_desired=10.0, time_budget=60.0)
        traj = plan_cycle(ctx, self.road, self.config)
        wps = traj.waypoints
        assert len(wps) == 51
        np.testing.assert_allclose([w.t for w in wps], 0.1 * np.arange(51), atol=1e-9)
        xy = np.array([(w.x, w.y) for w in wps])
        np.testing.assert_allclose(np.hypot(*np.diff(xy, axis=0).T), 1.0, atol=1e-6)

    def test_waypoint_speeds_match_travel(self):
        ctx = PlanContext(ego=ego_at(self.road, 350.0, 5.25, 10.0), behavior=POST, v_desired=18.0, time_budget=60.0)
        traj = plan_cycle(ctx, self.road, self.config)
        wps = traj.waypoints
        assert wps[-1].v > wps[0].v
        xy = np.array([(w.x, w.y) for w in wps])
        step = np.hypot(*np.diff(xy, axis=0).T)
        v = np.array([w.v for w in wps])
        np.testing.assert_allclose(step, 0.05 * (v[1:] + v[:-1]), atol=0.02)

    def test_search_matches_enumeration(self):
        config = PlannerConfig(lattice=LatticeConfig(n_layers=2, stations_per_lane=3, accel_samples=3))
        ctx = PlanContext(
            ego=ego_at(self.road, 160.0, 1.75, 15.0),
            traffic=(main_vehicle("m", 140.0, 16.0),),
            behavior=INITIATION,
            v_desired=18.0,
            time_budget=60.0,
        )
        traj = plan_cycle(ctx, self.road, config)
        complete = [c for edges, c in enumerate_candidates(ctx, self.road, config) if len(edges) == 2 and not c.infeasible]
        assert complete
        self.assertAlmostEqual(traj.breakdown.total, min(c.total for c in complete), places=6)

    def test_candidate_limit(self):
        ctx = PlanContext(ego=ego_at(self.road, 350.0, 5.25, 15.0), behavior=POST, v_desired=15.0, time_budget=60.0)
        assert len(enumerate_candidates(ctx, self.road, self.config, limit=7)) == 7

    def test_expired_budget_completes_greedily(self):
        ctx = PlanContext(ego=ego_at(self.road, 350.0, 5.25, 15.0), behavior=POST, v_desired=15.0, time_budget=1e-9)
        trace = {}
        traj = plan_cycle(ctx, self.road, self.config, trace=trace)
        assert trace["interrupted"]
        assert not traj.fallback
        assert len(traj.segments) >= 1
        assert traj.waypoints

    def test_blocked_road_falls_back_to_stop(self):
        wall = OrientedBox(x=166.0, y=3.5, theta=0.0, length=2.0, width=30.0)
        ctx = PlanContext(ego=ego_at(self.road, 160.0, 1.75, 5.0), behavior=INITIATION, v_desired=5.0, static_obstacles=(wall,))
        trace = {}
        traj = plan_cycle(ctx, self.road, self.config, trace=trace)
        assert traj.fallback
        assert "error" in trace
        assert trace["cost"]["reason"] == "no_feasible_candidate"

    def test_bad_budget(self):
        with self.assertRaises(ConfigError):
            PlanContext(ego=ego_at(self.road, 100.0, 1.75, 10.0), time_budget=0.0)


class TestCostContext(unittest.TestCase):
    def setUp(self):
        self.road = straight_road(speed_limit=25.0)
        self.ctx = PlanContext(ego=ego_at(self.road, 160.0, 1.75, 10.0), behavior=INITIATION, v_desired=12.0)

    def test_full(self):
        context = cost_context(self.ctx, self.road, PlannerConfig(), 160.0)
        assert context.v_desired == 12.0
        assert context.l_d == 5.25
        assert context.merge_branch
        assert context.use_obs

    def test_variants(self):
        assert cost_context(self.ctx, self.road, PlannerConfig(variant="ablation-A"), 160.0).v_desired == 25.0
        assert not cost_context(self.ctx, self.road, PlannerConfig(variant="ablation-B"), 160.0).merge_branch
        assert not cost_context(self.ctx, self.road, PlannerConfig(variant="no-obs"), 160.0).use_obs


class TestStopTrajectory(unittest.TestCase):
    def setUp(self):
        self.road = straight_road()
        self.config = PlannerConfig()

    def test_straight_stop(self):
        ego = ego_at(self.road, 100.0, 1.75, 10.0)
        traj = stop_trajectory(ego, None, self.config)
        assert traj.fallback
        assert traj.breakdown.infeasible
        assert len(traj.waypoints) == 51
        v = [w.v for w in traj.waypoints]
        assert all(b <= a for a, b in zip(v, v[1:]))
        assert v[-1] == 0.0
        # 10 m/s braking at 2 m/s^2 covers 25 m
        self.assertAlmostEqual(traj.waypoints[-1].x - ego.x, 25.0)
        self.assertAlmostEqual(traj.waypoints[-1].y, 1.75)

    def test_follows_previous_path(self):
        ctx = PlanContext(ego=ego_at(self.road, 350.0, 5.25, 20.0), behavior=POST, v_desired=20.0, time_budget=60.0)
        previous = plan_cycle(ctx, self.road, self.config)
        traj = stop_trajectory(ego_at(self.road, 352.0, 5.25, 20.0), previous, self.config)
        np.testing.assert_allclose([w.y for w in traj.waypoints], 5.25, atol=1e-6)
        # 20 m/s braking at 2 m/s^2 for 5 s covers 75 m
        self.assertAlmostEqual(traj.waypoints[-1].x, 352.0 + 75.0, places=6)

    def test_state_after_stop_holds(self):
        traj = stop_trajectory(ego_at(self.road, 100.0, 1.75, 4.0), None, self.config)
        x, y, theta, v, a = traj.state_at(10.0)
        self.assertAlmostEqual(x, 104.0)
        assert v == 0.0
        assert a == 0.0
        assert theta == 0.0


class TestMergePlanner(unittest.TestCase):
    def setUp(self):
        self.road = straight_road()

    def test_fluent_setters(self):
        planner = MergePlanner(self.road)
        assert planner.set_time_budget(0.5).set_variant("no-obs").set_debug(True) is planner
        assert planner.config.variant == "no-obs"
        assert planner.time_budget == 0.5

    def test_rejects_bad_settings(self):
        planner = MergePlanner(self.road)
        with self.assertRaises(ConfigError):
            planner.set_time_budget(-1.0)
        with self.assertRaises(ConfigError):
            planner.set_variant("bogus")

    def test_keeps_previous_plan(self):
        planner = MergePlanner(self.road).set_time_budget(60.0)
        ego = ego_at(self.road, 350.0, 5.25, 20.0)
        first = planner.plan(ego, [], POST, 20.0)
        assert planner.previous is first
        assert planner.last_trace["candidates"] > 0
        second = planner.plan(ego_at(self.road, 352.0, 5.25, 20.0), [], POST, 20.0)
        assert second.breakdown.terms["consistency"] < 1e-6
        assert planner.bvp_cache.hits > 0
        planner.reset()
        assert planner.previous is None
        assert math.isfinite(second.breakdown.total)


class TestAnytime(unittest.TestCase):
    def setUp(self):
        self.road = straight_road()
        self.config = PlannerConfig(lattice=LatticeConfig(stations_per_lane=3, accel_samples=3))

    def _ctx(self, budget, **kwargs):
        return PlanContext(
            ego=ego_at(self.road, 160.0, 1.75, 15.0),
            traffic=(main_vehicle("m", 130.0, 16.0), main_vehicle("n", 185.0, 14.0)),
            behavior=INITIATION,
            v_desired=16.0,
            time_budget=budget,
            **kwargs,
        )

    def test_unlimited_budget_is_repeatable(self):
        first = plan_cycle(self._ctx(math.inf), self.road, self.config)
        second = plan_cycle(self._ctx(math.inf), self.road, self.config)
        assert not first.fallback
        np.testing.assert_array_equal(np.array(first.waypoints), np.array(second.waypoints))
        assert first.breakdown.total == second.breakdown.total

    def test_larger_budget_never_costs_more(self):
        # one clock tick per deadline check makes the budget a count of checks
        totals = []
        for budget in (3.5, 4.5, 6.5, 10.5, 20.5, 40.5, 80.5, math.inf):
            trace = {}
            with mock.patch("time.perf_counter", side_effect=itertools.count().__next__):
                traj = plan_cycle(self._ctx(budget), self.road, self.config, trace=trace)
            assert not traj.fallback
            assert len(traj.segments) == self.config.lattice.n_layers
            totals.append(traj.breakdown.total)
        assert trace["interrupted"] is False
        assert all(later <= earlier + 1e-9 for earlier, later in zip(totals, totals[1:])), totals
        self.assertAlmostEqual(totals[-1], plan_cycle(self._ctx(math.inf), self.road, self.config).breakdown.total)

    def test_replan_starts_on_previous_plan(self):
        planner = MergePlanner(self.road, self.config).set_time_budget(math.inf)
        traffic = self._ctx(math.inf).traffic
        first = planner.plan(ego_at(self.road, 160.0, 1.75, 15.0), traffic, INITIATION, 16.0)
        x, y, theta, v, a = first.state_at(0.5)
        ego = EgoState(x, y, theta, v, a, first.curvature_at(0.5))
        moved = tuple(replace(veh, s=veh.s + 0.5 * veh.v) for veh in traffic)
        second = planner.plan(ego, moved, INITIATION, 16.0)
        for w in second.waypoints:
            if w.t > 0.2 + 1e-9:
                break
            px, py = first.state_at(0.5 + w.t)[:2]
            assert math.hypot(w.x - px, w.y - py) < 0.1, w
