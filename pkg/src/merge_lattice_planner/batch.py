"""Batch evaluation of scenario suites under planner variants."""

import json
import logging
import math
from dataclasses import replace
from pathlib import Path
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

from joblib import Parallel
from joblib import delayed

from .config import VARIANTS
from .config import PlannerConfig
from .config import SimConfig
from .errors import ConfigError
from .metrics import EpisodeRecord
from .metrics import MetricsTable
from .scenarios import Scenario
from .simulator import run_episode

logger = logging.getLogger(__name__)


def _run_one(
    scenario: Scenario,
    variant: str,
    planner_config: PlannerConfig,
    sim_config: SimConfig,
    time_budget: float,
    trace_dir: Optional[Path],
) -> EpisodeRecord:
    try:
        result = run_episode(scenario, replace(planner_config, variant=variant), sim_config, time_budget)
    except Exception as e:  # noqa: BLE001
        logger.exception("episode %s crashed under %s", scenario.label, variant)
        return EpisodeRecord(scenario.label, variant, "failure", "error", diagnostic=f"{type(e).__name__}: {e}")
    if trace_dir is not None:
        result.write_trace(trace_dir / f"{scenario.label}.{variant}.jsonl")
    return EpisodeRecord(scenario.label, variant, result.outcome, result.reason, result.merge_time, result.metrics)


def run_batch(
    scenarios: Sequence[Scenario],
    variants: Sequence[str] = ("full",),
    planner_config: Optional[PlannerConfig] = None,
    sim_config: Optional[SimConfig] = None,
    threads: int = 1,
    time_budget: float = math.inf,
    trace_dir=None,
) -> Tuple[MetricsTable, List[EpisodeRecord]]:
    """Every scenario under every variant.

    Episodes run on ``threads`` joblib workers, one process each; results
    keep the scenario order. With the default unbounded time budget the
    numbers do not depend on the worker count.
    """
    for v in variants:
        if v not in VARIANTS:
            msg = f"unknown variant {v!r}, expected one of {VARIANTS}"
            raise ConfigError(msg)
    if threads < 1:
        msg = "threads must be >= 1"
        raise ConfigError(msg)
    planner_config = planner_config or PlannerConfig()
    sim_config = sim_config or SimConfig()
    trace_dir = Path(trace_dir) if trace_dir is not None else None
    if trace_dir is not None:
        trace_dir.mkdir(parents=True, exist_ok=True)

    jobs = [(sc, v) for v in variants for sc in scenarios]
    args = (planner_config, sim_config, time_budget, trace_dir)
    logger.info("running %d episodes on %d worker(s)", len(jobs), threads)
    episodes = Parallel(n_jobs=threads)(delayed(_run_one)(sc, v, *args) for sc, v in jobs)
    return MetricsTable.from_episodes(episodes), episodes


def write_batch(table: MetricsTable, episodes: Sequence[EpisodeRecord], out_dir) -> Path:
    """``metrics.csv``, ``metrics.json`` and ``episodes.jsonl`` under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.write_csv(out_dir / "metrics.csv")
    table.write_json(out_dir / "metrics.json")
    with (out_dir / "episodes.jsonl").open("w") as f:
        for ep in episodes:
            f.write(json.dumps(ep.as_dict()) + "\n")
    return out_dir
