"""Console script for merge_lattice_planner."""

import functools
import json
import logging
import math
from dataclasses import replace
from pathlib import Path

import click

from .batch import run_batch
from .batch import write_batch
from .behavior import BehaviorState
from .behavior import desired_speed
from .behavior import select_vehicles_of_interest
from .behavior import update_behavior
from .config import VARIANTS
from .config import load_planner_config
from .config import load_sim_config
from .config import read_config_file
from .errors import MergePlannerError
from .export import trace_to_svg
from .lattice import lookahead_distance
from .metrics import compute_episode_metrics
from .metrics import read_trace
from .metrics import trace_summary
from .planner import PlanContext
from .planner import enumerate_candidates
from .planner import plan_cycle
from .scenarios import BUILTIN_SUITES
from .scenarios import SuiteDistributions
from .scenarios import builtin_suite
from .scenarios import generate_random_suite
from .scenarios import load_scenario
from .scenarios import load_suite
from .scenarios import write_suite
from .simulator import initial_world
from .simulator import run_episode


def handle_errors(f):
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except MergePlannerError as e:
            raise click.ClickException(str(e)) from e

    return wrapper


def _budget(ctx, realtime: bool) -> float:
    return ctx.obj["planner"].time_budget if realtime else math.inf


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Planner and sim config (JSON or TOML).")
@click.option("-v", "--verbose", count=True, help="Repeat for more log output.")
@click.pass_context
@handle_errors
def main(ctx, config_path, verbose):
    """Lattice planner for forced highway on-ramp merges."""
    logging.basicConfig()
    logging.getLogger().setLevel(logging.WARNING - 10 * min(verbose, 2))
    ctx.ensure_object(dict)
    ctx.obj["planner"] = load_planner_config(config_path)
    ctx.obj["sim"] = load_sim_config(config_path)


@main.command()
@click.option("--suite", type=click.Choice(BUILTIN_SUITES), default="headway_sweep", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--count", type=int, default=None, help="Number of scenarios (suite default when omitted).")
@click.option("--distributions", type=click.Path(exists=True, dir_okay=False), help="Sampling ranges for the random suite.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@handle_errors
def gen(suite, seed, count, distributions, out):
    """Write a scenario suite and its manifest."""
    if distributions is not None:
        dist = SuiteDistributions.from_dict(read_config_file(distributions))
        scenarios = generate_random_suite(dist, seed=seed, count=count or 160)
    else:
        scenarios = builtin_suite(suite, seed=seed, count=count)
    manifest = write_suite(scenarios, out, suite, seed)
    click.echo(str(manifest))


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), help="Write the JSON here instead of stdout.")
@click.option("--max-candidates", type=int, default=5000, show_default=True)
@click.option("--realtime/--no-realtime", default=False, help="Apply the configured time budget.")
@click.pass_context
@handle_errors
def plan(ctx, scenario_path, out, max_candidates, realtime):
    """Plan one cycle from the scenario's initial state and dump every
    candidate with its cost breakdown."""
    config = ctx.obj["planner"]
    scenario = load_scenario(scenario_path)
    road = scenario.road
    world = initial_world(scenario)
    behavior = update_behavior((world.ego_s, world.ego_l), road, BehaviorState.PRE_MERGE_BEFORE_HARD_NOSE)
    voi = select_vehicles_of_interest(world.ego_s, world.traffic, behavior)
    reach = lookahead_distance(world.ego.v, config.lattice)
    v_d = desired_speed(world.ego_s, world.ego.v, voi, road, config.weights, config.vehicle.length, reach)
    plan_ctx = PlanContext(world.ego, world.traffic, behavior, v_d, _budget(ctx, realtime))
    trace = {}
    selected = plan_cycle(plan_ctx, road, config, trace=trace)
    candidates = [
        {"nodes": [list(e.to_node.key) for e in edges], **cost.as_dict()}
        for edges, cost in enumerate_candidates(plan_ctx, road, config, limit=max_candidates)
    ]
    doc = {
        "behavior": behavior.label,
        "v_desired": v_d,
        "selected": {**selected.breakdown.as_dict(), "nodes": [list(e.to_node.key) for e in selected.segments]},
        "trace": trace,
        "candidates": candidates,
    }
    text = json.dumps(doc, indent=2)
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text)


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), help="Episode trace (JSON lines).")
@click.option("--variant", type=click.Choice(VARIANTS), default=None)
@click.option("--realtime/--no-realtime", default=False, help="Apply the configured time budget.")
@click.pass_context
@handle_errors
def sim(ctx, scenario_path, trace_path, variant, realtime):
    """Run one closed-loop episode."""
    config = ctx.obj["planner"]
    if variant is not None:
        config = replace(config, variant=variant)
    result = run_episode(load_scenario(scenario_path), config, ctx.obj["sim"], _budget(ctx, realtime))
    if trace_path:
        result.write_trace(trace_path)
    click.echo(json.dumps(result.summary()))


@main.command()
@click.option("--suite", required=True, help="Built-in suite name or path to a manifest.json.")
@click.option("--variant", "variants", multiple=True, type=click.Choice(VARIANTS), default=("full",), show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--count", type=int, default=None)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--traces/--no-traces", default=False, help="Keep one trace per episode under OUT/traces.")
@click.option("--realtime/--no-realtime", default=False, help="Apply the configured time budget.")
@click.pass_context
@handle_errors
def batch(ctx, suite, variants, seed, count, threads, out, traces, realtime):
    """Run a suite under planner variants and write the metrics table."""
    if suite in BUILTIN_SUITES:
        scenarios = builtin_suite(suite, seed=seed, count=count)
    elif Path(suite).is_file():
        scenarios = load_suite(suite)
    else:
        raise click.BadParameter(f"{suite!r} is neither a built-in suite nor a manifest", param_hint="--suite")
    table, episodes = run_batch(
        scenarios,
        variants,
        ctx.obj["planner"],
        ctx.obj["sim"],
        threads=threads,
        time_budget=_budget(ctx, realtime),
        trace_dir=Path(out) / "traces" if traces else None,
    )
    write_batch(table, episodes, out)
    for variant, row in table.rows.items():
        click.echo(f"{variant}: success {row['success_rate']:.1f}%")


@main.command()
@click.argument("traces", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@handle_errors
def replay(traces):
    """Recompute episode metrics from recorded traces; prints the same
    summary line ``sim`` does."""
    for path in traces:
        records = read_trace(path)
        summary = trace_summary(records)
        if summary is None:
            raise click.ClickException(f"{path}: no summary record")
        click.echo(json.dumps({**summary, "metrics": compute_episode_metrics(records)}))


@main.command("trace-svg")
@click.argument("trace", type=click.Path(exists=True, dir_okay=False))
@click.option("--scenario", "scenario_path", type=click.Path(exists=True, dir_okay=False), help="Draw lanes and traffic from this scenario's road.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@handle_errors
def trace_svg(trace, scenario_path, out):
    """Export an episode trace as a static SVG."""
    road = load_scenario(scenario_path).road if scenario_path else None
    Path(out).write_text(trace_to_svg(read_trace(trace), road))


if __name__ == "__main__":
    main()
