"""Tests for episode metrics and suite tables."""

import csv
import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from merge_lattice_planner.metrics import COLUMNS
from merge_lattice_planner.metrics import EpisodeRecord
from merge_lattice_planner.metrics import MetricsTable
from merge_lattice_planner.metrics import aggregate
from merge_lattice_planner.metrics import central_difference
from merge_lattice_planner.metrics import compute_episode_metrics
from merge_lattice_planner.metrics import read_trace
from merge_lattice_planner.metrics import trace_summary


def cycle(t, v=10.0, a=0.0, kappa=0.0):
    return {"type": "cycle", "t": t, "ego": {"v": v, "a": a, "kappa": kappa}}


class TestCentralDifference(unittest.TestCase):
    def test_quadratic_is_exact(self):
        t = np.arange(5.0)
        np.testing.assert_allclose(central_difference(t**2, t), [2.0, 4.0, 6.0])

    def test_short_series(self):
        assert len(central_difference([1.0, 2.0], [0.0, 1.0])) == 0


class TestEpisodeMetrics(unittest.TestCase):
    def test_lateral_acceleration(self):
        trace = [cycle(0.1 * i, v=20.0, kappa=0.0025) for i in range(5)]
        self.assertAlmostEqual(compute_episode_metrics(trace)["max_lat_accel"], 1.0)

    def test_longitudinal(self):
        t = 0.1 * np.arange(51)
        a = 2.4 * t - 0.48 * t**2
        m = compute_episode_metrics([cycle(ti, a=ai) for ti, ai in zip(t, a)])
        self.assertAlmostEqual(m["max_long_accel"], 3.0)
        self.assertAlmostEqual(m["max_long_decel"], 0.0)
        # jerk 2.4 - 0.96 t is largest at the first interior sample
        self.assertAlmostEqual(m["max_long_jerk"], 2.304)
        jerk = central_difference(a, t)
        self.assertAlmostEqual(jerk[24], 0.0)
        assert m["max_lat_jerk"] == 0.0

    def test_deceleration_is_a_magnitude(self):
        m = compute_episode_metrics([cycle(0.0, a=-1.5), cycle(0.1, a=0.5)])
        assert m["max_long_decel"] == 1.5
        assert m["max_long_accel"] == 0.5

    def test_too_few_cycles_for_jerk(self):
        m = compute_episode_metrics([cycle(0.0), cycle(0.1), {"type": "summary"}])
        assert m["max_long_jerk"] is None
        assert m["max_lat_jerk"] is None
        assert m["max_lat_accel"] == 0.0

    def test_empty(self):
        assert all(v is None for v in compute_episode_metrics([]).values())


class TestTables(unittest.TestCase):
    def setUp(self):
        self.episodes = [
            EpisodeRecord("a", "full", "success", "merged", 10.0, {"max_long_accel": 1.0, "max_long_jerk": None}),
            EpisodeRecord("b", "full", "success", "merged", 14.0, {"max_long_accel": 2.0, "max_long_jerk": 3.0}),
            EpisodeRecord("c", "full", "failure", "collision", None, {"max_long_accel": 2.5}),
            EpisodeRecord("d", "full", "failure", "timeout", None, {"max_long_accel": 0.5}),
            EpisodeRecord("a", "no-obs", "failure", "collision", None, {}),
        ]

    def test_aggregate(self):
        row = aggregate(self.episodes[:4])
        assert row["success_rate"] == 50.0
        assert row["avg_merge_time"] == 12.0
        assert row["max_long_accel"] == 2.5
        assert row["max_long_jerk"] == 3.0
        assert row["max_lat_accel"] is None

    def test_failed_variant_has_no_merge_time(self):
        table = MetricsTable.from_episodes(self.episodes)
        assert list(table.rows) == ["full", "no-obs"]
        assert table.rows["no-obs"]["success_rate"] == 0.0
        assert table.rows["no-obs"]["avg_merge_time"] is None

    def test_csv(self):
        table = MetricsTable.from_episodes(self.episodes)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "table.csv"
            table.write_csv(path)
            with path.open() as f:
                rows = list(csv.reader(f))
        assert rows[0] == ["Planner", *COLUMNS.values()]
        assert rows[0][1] == "Success Rate (%)"
        assert rows[1][:3] == ["full", "50.0000", "12.0000"]
        assert rows[2][2] == ""

    def test_record_dict(self):
        d = self.episodes[0].as_dict()
        assert d["variant"] == "full"
        assert d["max_long_accel"] == 1.0
        assert d["max_lat_accel"] is None
        assert "diagnostic" not in d


class TestTraceFiles(unittest.TestCase):
    def test_read_and_summary(self):
        records = [cycle(0.0), cycle(0.1), {"type": "summary", "outcome": "success"}]
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "trace.jsonl"
            path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
            loaded = read_trace(path)
        assert loaded == records
        assert trace_summary(loaded)["outcome"] == "success"
        assert trace_summary(records[:2]) is None
