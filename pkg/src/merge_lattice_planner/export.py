"""Static SVG rendering of an episode trace."""

import io
from typing import Any
from typing import Dict
from typing import Optional
from typing import Sequence

import numpy as np
from matplotlib.figure import Figure

from .path_geometry import Lane
from .path_geometry import RoadModel
from .path_geometry import lateral_offset_xy

EDGE_STYLE = {"color": "#888888", "linewidth": 0.6}


def _draw_lane_edges(ax, road: RoadModel) -> None:
    s = road.reference.s
    ramp = s <= road.s_ramp_end
    full = np.ones_like(s, dtype=bool)
    for i, (l, mask, style) in enumerate((  # noqa: E741
        (0.0, ramp, "-"),
        (road.w_merge, full, "--"),
        (road.w_merge + road.w_main, full, "-"),
    )):
        x, y, _ = lateral_offset_xy(road.reference, s[mask], l)
        ax.plot(x, y, linestyle=style, gid=f"lane-edge-{i}", **EDGE_STYLE)


def trace_to_svg(trace: Sequence[Dict[str, Any]], road: Optional[RoadModel] = None) -> str:
    """Ego path, lane edges when the road is known, and traffic positions at
    the last cycle.

    Each drawn element carries an SVG group id: ``lane-edge-<i>``,
    ``ego-path`` and ``traffic-<vehicle id>``.
    """
    cycles = [r for r in trace if r.get("type") == "cycle"]
    ego = np.array([(r["ego"]["x"], r["ego"]["y"]) for r in cycles], dtype=float).reshape(-1, 2)

    fig = Figure(figsize=(12, 3))
    ax = fig.add_subplot()
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if road is not None:
        _draw_lane_edges(ax, road)
        if cycles:
            for veh in cycles[-1]["traffic"]:
                s = min(max(veh["s"], 0.0), road.total_length)
                x, y, _ = lateral_offset_xy(road.reference, s, road.lane_center(Lane(veh["lane"])))
                ax.plot([float(x)], [float(y)], "o", color="#1f77b4", markersize=3, gid=f"traffic-{veh['id']}")
    if len(ego) > 1:
        ax.plot(ego[:, 0], ego[:, 1], color="#d62728", linewidth=1.2, gid="ego-path")

    buf = io.StringIO()
    fig.savefig(buf, format="svg", bbox_inches="tight")
    return buf.getvalue()
