"""Episode metrics and suite tables.

Per-episode maxima come from the ego state recorded at each planning cycle.
Suite tables aggregate the maxima over all episodes of a planner variant.
"""

import csv
import json
import math
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any
from typing import Dict
from typing import Iterable
from typing import List
from typing import Optional
from typing import Sequence

import numpy as np

METRIC_KEYS = (
    "max_long_accel",
    "max_long_decel",
    "max_lat_accel",
    "max_long_jerk",
    "max_lat_jerk",
)

COLUMNS = {
    "success_rate": "Success Rate (%)",
    "avg_merge_time": "Avg. Merge Time (s)",
    "max_long_accel": "Max. Longit. Acceleration (m/s^2)",
    "max_long_decel": "Max. Longit. Deceleration (m/s^2)",
    "max_lat_accel": "Max. Lat. Acceleration (m/s^2)",
    "max_long_jerk": "Max. Longit. Jerk (m/s^3)",
    "max_lat_jerk": "Max. Lat. Jerk (m/s^3)",
}


def central_difference(values: Sequence[float], t: Sequence[float]) -> np.ndarray:
    """Derivative at the interior samples; empty below three samples."""
    values, t = np.asarray(values, dtype=float), np.asarray(t, dtype=float)
    if len(values) < 3:
        return np.empty(0)
    return (values[2:] - values[:-2]) / (t[2:] - t[:-2])


def _max_or_none(values: np.ndarray) -> Optional[float]:
    return float(np.max(values)) if len(values) else None


def compute_episode_metrics(trace: Iterable[Dict[str, Any]]) -> Dict[str, Any]:
    """Maxima of longitudinal and lateral motion over the cycle records.

    Lateral acceleration is v^2 kappa. Jerks are central differences of the
    accelerations and are ``None`` when fewer than three cycles exist.
    """
    cycles = [r for r in trace if r.get("type") == "cycle"]
    if not cycles:
        return dict.fromkeys(METRIC_KEYS)
    t = np.array([r["t"] for r in cycles], dtype=float)
    v = np.array([r["ego"]["v"] for r in cycles], dtype=float)
    a = np.array([r["ego"]["a"] for r in cycles], dtype=float)
    kappa = np.array([r["ego"]["kappa"] for r in cycles], dtype=float)
    a_lat = v * v * kappa
    return {
        "max_long_accel": max(float(np.max(a)), 0.0),
        # reported as a magnitude
        "max_long_decel": max(float(np.max(-a)), 0.0),
        "max_lat_accel": float(np.max(np.abs(a_lat))),
        "max_long_jerk": _max_or_none(np.abs(central_difference(a, t))),
        "max_lat_jerk": _max_or_none(np.abs(central_difference(a_lat, t))),
    }


def read_trace(path) -> List[Dict[str, Any]]:
    with Path(path).open() as f:
        return [json.loads(line) for line in f if line.strip()]


def trace_summary(trace: Sequence[Dict[str, Any]]) -> Optional[Dict[str, Any]]:
    return next((r for r in reversed(trace) if r.get("type") == "summary"), None)


@dataclass
class EpisodeRecord:
    label: str
    variant: str
    outcome: str
    reason: str
    merge_time: Optional[float] = None
    metrics: Dict[str, Any] = field(default_factory=dict)
    diagnostic: str = ""

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    def as_dict(self) -> Dict[str, Any]:
        out = {
            "label": self.label,
            "variant": self.variant,
            "outcome": self.outcome,
            "reason": self.reason,
            "merge_time": self.merge_time,
            **{k: self.metrics.get(k) for k in METRIC_KEYS},
        }
        if self.diagnostic:
            out["diagnostic"] = self.diagnostic
        return out


@dataclass
class MetricsTable:
    """Suite-level results per planner variant.

    Merge times average successful episodes only, timed from the episode
    start. Maxima are taken over every episode of the variant.
    """

    rows: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)

    @classmethod
    def from_episodes(cls, episodes: Iterable[EpisodeRecord]) -> "MetricsTable":
        by_variant: Dict[str, List[EpisodeRecord]] = {}
        for ep in episodes:
            by_variant.setdefault(ep.variant, []).append(ep)
        table = cls()
        for variant in sorted(by_variant):
            table.rows[variant] = aggregate(by_variant[variant])
        return table

    def write_csv(self, path):
        with Path(path).open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["Planner", *COLUMNS.values()])
            for variant, row in self.rows.items():
                writer.writerow([variant, *("" if row[k] is None else f"{row[k]:.4f}" for k in COLUMNS)])

    def write_json(self, path):
        Path(path).write_text(json.dumps({"merge_time_clock": "episode start", "rows": self.rows}, indent=2))


def aggregate(episodes: Sequence[EpisodeRecord]) -> Dict[str, Optional[float]]:
    n = len(episodes)
    successes = [ep for ep in episodes if ep.success]
    row: Dict[str, Optional[float]] = {
        "success_rate": 100.0 * len(successes) / n if n else None,
        "avg_merge_time": math.fsum(ep.merge_time for ep in successes) / len(successes) if successes else None,
    }
    for key in METRIC_KEYS:
        values = [ep.metrics.get(key) for ep in episodes]
        values = [v for v in values if v is not None]
        row[key] = max(values) if values else None
    return row
