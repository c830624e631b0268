"""Roads, vehicles and scenarios shared by the tests."""

from merge_lattice_planner.path_geometry import Lane
from merge_lattice_planner.path_geometry import lateral_offset_state
from merge_lattice_planner.path_geometry import road_from_dict
from merge_lattice_planner.planner import EgoState
from merge_lattice_planner.prediction import TrafficVehicle


def straight_road(length=600.0, s_hard_nose=100.0, s_soft_nose=150.0, s_ramp_end=300.0, speed_limit=25.0, spacing=0.5):
    return road_from_dict({
        "arcs": [[length, 0.0]],
        "spacing": spacing,
        "w_merge": 3.5,
        "w_main": 3.5,
        "s_hard_nose": s_hard_nose,
        "s_soft_nose": s_soft_nose,
        "s_ramp_end": s_ramp_end,
        "speed_limit": speed_limit,
    })


def ego_at(road, s, l, v, a=0.0):  # noqa: E741
    state = lateral_offset_state(road.reference, s, l)
    return EgoState(state.x, state.y, state.theta, v, a, state.kappa)


def main_vehicle(vid, s, v, **kwargs):
    return TrafficVehicle(vid, Lane.MAIN, s, v, **kwargs)


def merge_vehicle(vid, s, v, **kwargs):
    return TrafficVehicle(vid, Lane.MERGE, s, v, **kwargs)
