import itertools
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from loraloc.errors import StateMachineError
from loraloc.geo import LocalPoint
from loraloc.multilat import PositionEstimate
from loraloc.planner import (
    MissionConfig,
    MissionState,
    Mode,
    Phase,
    RadiusStep,
    assign_drones,
    bearing,
    default_schedule,
    next_iteration,
    plan_discrete_waypoints,
    plan_iteration,
    plan_orbit,
    start_mission,
    transition,
)

ORIGIN = LocalPoint(0.0, 0.0, 0.0)
coords = st.floats(-500, 500)
points = st.builds(LocalPoint, coords, coords, st.just(10.0))


def est_at(p):
    return PositionEstimate(p, 1.0, 10, 5, True)


def test_three_waypoints_at_compass_bearings():
    wps = plan_discrete_waypoints(ORIGIN, 100.0, 3, 0.0)
    assert [round(bearing(ORIGIN, w), 9) % 360 for w in wps] == [0.0, 120.0, 240.0]
    for w in wps:
        assert w.horizontal_distance(ORIGIN) == pytest.approx(100.0, rel=1e-12)
    assert wps[0].north == pytest.approx(100.0) and wps[0].east == pytest.approx(0.0, abs=1e-12)


def test_chord_length():
    wps = plan_discrete_waypoints(ORIGIN, 100.0, 3)
    for a, b in itertools.combinations(wps, 2):
        assert a.distance(b) == pytest.approx(100.0 * math.sqrt(3), abs=1e-9)
        assert a.distance(b) == pytest.approx(173.2, abs=0.01)


def test_phase_rotates_set():
    base = plan_discrete_waypoints(ORIGIN, 100.0, 3, 0.0)
    rot = plan_discrete_waypoints(ORIGIN, 100.0, 3, 90.0)
    for b, r in zip(base, rot):
        # rotating a compass bearing by +90 deg maps (e, n) -> (n, -e)
        assert r.east == pytest.approx(b.north, abs=1e-9)
        assert r.north == pytest.approx(-b.east, abs=1e-9)


@given(points, st.floats(1.0, 400.0), st.integers(3, 12), st.floats(0, 360))
def test_waypoints_exactly_on_circle(center, radius, n, phase):
    for w in plan_discrete_waypoints(center, radius, n, phase):
        assert w.horizontal_distance(center) == pytest.approx(radius, rel=1e-9)


def test_waypoint_validation():
    with pytest.raises(ValueError):
        plan_discrete_waypoints(ORIGIN, 0.0)
    with pytest.raises(ValueError):
        plan_discrete_waypoints(ORIGIN, 10.0, 2)


def test_orbit_geometry():
    m = plan_discrete_waypoints(ORIGIN, 80.0, 3)[0]
    o = plan_orbit(m, 70.0, 360.0, 10.0)
    assert o.center.horizontal_distance(ORIGIN) == pytest.approx(80.0)
    assert o.radius == 70.0
    assert o.path_length == pytest.approx(2 * math.pi * 70.0)
    assert o.point_at(90.0).horizontal_distance(o.center) == pytest.approx(70.0)
    with pytest.raises(ValueError):
        plan_orbit(m, -1.0)


def test_continuous_three_drone_preset_geometry():
    cfg = MissionConfig(
        mode=Mode.CONTINUOUS, n_drones=3, radius_schedule=(RadiusStep(80, 70), RadiusStep(50, 30))
    )
    tasks = plan_iteration(cfg, 0, ORIGIN, ["a", "b", "c"])
    assert all(t.orbit.radius == 70.0 for t in tasks)
    assert all(t.orbit.center.horizontal_distance(ORIGIN) == pytest.approx(80.0) for t in tasks)
    tasks = plan_iteration(cfg, 1, ORIGIN, ["a", "b", "c"])
    assert all(t.orbit.radius == 30.0 for t in tasks)
    assert all(t.orbit.center.horizontal_distance(ORIGIN) == pytest.approx(50.0) for t in tasks)


def test_assign_identity_when_on_waypoints():
    wps = plan_discrete_waypoints(ORIGIN, 100.0, 3)
    assert assign_drones(wps, wps) == (0, 1, 2)
    assert assign_drones(wps, [wps[2], wps[0], wps[1]]) == (2, 0, 1)


def test_assign_ties_to_lowest_index():
    wps = plan_discrete_waypoints(ORIGIN, 100.0, 3)
    assert assign_drones(wps, [ORIGIN] * 3) == (0, 1, 2)


@given(st.lists(points, min_size=3, max_size=3), st.lists(points, min_size=3, max_size=3))
def test_assign_matches_brute_force(wps, drones):
    got = assign_drones(wps, drones)
    cost = sum(drones[i].distance(wps[got[i]]) for i in range(3))
    best = min(sum(drones[i].distance(wps[p[i]]) for i in range(3)) for p in itertools.permutations(range(3)))
    assert cost == pytest.approx(best, abs=1e-6)
    assert sorted(got) == [0, 1, 2]


def test_assign_size_mismatch():
    with pytest.raises(ValueError):
        assign_drones([ORIGIN] * 3, [ORIGIN] * 2)


def test_fsm_legal_path_and_rejections():
    s = MissionState()
    for ph in (Phase.PLANNING, Phase.NAVIGATING, Phase.MEASURING, Phase.ESTIMATING, Phase.PLANNING):
        s = transition(s, ph)
    s = transition(transition(transition(transition(s, Phase.NAVIGATING), Phase.MEASURING), Phase.ESTIMATING), Phase.DONE)
    assert s.phase is Phase.DONE
    with pytest.raises(StateMachineError):
        transition(s, Phase.PLANNING)
    with pytest.raises(StateMachineError):
        transition(MissionState(), Phase.MEASURING)


@given(st.sampled_from(list(Phase)), st.sampled_from(list(Phase)))
def test_fsm_only_listed_transitions(a, b):
    legal = {
        (Phase.IDLE, Phase.PLANNING),
        (Phase.PLANNING, Phase.NAVIGATING),
        (Phase.NAVIGATING, Phase.MEASURING),
        (Phase.MEASURING, Phase.ESTIMATING),
        (Phase.ESTIMATING, Phase.PLANNING),
        (Phase.ESTIMATING, Phase.DONE),
    }
    if (a, b) in legal:
        assert transition(MissionState(phase=a), b).phase is b
    else:
        with pytest.raises(StateMachineError):
            transition(MissionState(phase=a), b)


def test_config_validation():
    with pytest.raises(ValueError):
        MissionConfig(radius_schedule=(RadiusStep(50), RadiusStep(80)))
    with pytest.raises(ValueError):
        MissionConfig(radius_schedule=(RadiusStep(50), RadiusStep(50)))
    with pytest.raises(ValueError):
        MissionConfig(n_drones=2)
    with pytest.raises(ValueError):
        MissionConfig(radius_schedule=())
    cfg = MissionConfig(measurements_per_point=3, hover_time_per_measurement=4.0, hover_margin=2.0)
    assert cfg.hover_time == 14.0
    assert MissionConfig().drone_speed == 5.0
    assert MissionConfig(mode="continuous").drone_speed == 3.0


def test_default_schedule():
    s = default_schedule(3)
    assert [r.center_circle_radius for r in s] == [150.0, 75.0, 37.5]


def test_first_phase_points_at_drone():
    cfg = MissionConfig()
    drone = LocalPoint(500.0, 0.0, 10.0)
    (task,) = plan_iteration(cfg, 0, ORIGIN, ["d"], [drone])
    assert bearing(ORIGIN, task.waypoints[0]) == pytest.approx(90.0)


def test_mission_iterations_and_termination():
    cfg = MissionConfig(radius_schedule=(RadiusStep(150), RadiusStep(75)))
    s = start_mission(cfg, ORIGIN, ["drone0"])
    assert s.phase is Phase.NAVIGATING
    assert all(w.horizontal_distance(ORIGIN) == pytest.approx(150.0) for w in s.pending_waypoints[0].waypoints)
    s = transition(transition(s, Phase.MEASURING), Phase.ESTIMATING)
    new_center = LocalPoint(20.0, -10.0, 0.0)
    s = next_iteration(s, est_at(new_center), cfg)
    assert s.iteration == 1 and s.phase is Phase.NAVIGATING
    assert s.current_estimate == new_center
    assert all(w.horizontal_distance(new_center) == pytest.approx(75.0) for w in s.pending_waypoints[0].waypoints)
    s = transition(transition(s, Phase.MEASURING), Phase.ESTIMATING)
    s = next_iteration(s, est_at(new_center), cfg)
    assert s.phase is Phase.DONE
    assert s.pending_waypoints == ()
    assert len(s.estimates) == 2
    with pytest.raises(StateMachineError):
        next_iteration(s, est_at(new_center), cfg)


def test_same_estimate_same_geometry_smaller_radius():
    cfg = MissionConfig(radius_schedule=(RadiusStep(150), RadiusStep(75)))
    s = start_mission(cfg, ORIGIN, ["drone0"])
    s = transition(transition(s, Phase.MEASURING), Phase.ESTIMATING)
    s2 = next_iteration(s, est_at(ORIGIN), cfg)
    first = s.pending_waypoints[0].waypoints
    second = s2.pending_waypoints[0].waypoints
    for a, b in zip(first, second):
        assert b.east == pytest.approx(a.east / 2) and b.north == pytest.approx(a.north / 2)


def test_three_drone_discrete_one_waypoint_each():
    cfg = MissionConfig(n_drones=3)
    tasks = plan_iteration(cfg, 0, ORIGIN, ["a", "b", "c"])
    assert [len(t.waypoints) for t in tasks] == [1, 1, 1]
    targets = {t.waypoints[0] for t in tasks}
    assert len(targets) == 3


def test_single_continuous_drone_orbits_center():
    cfg = MissionConfig(mode=Mode.CONTINUOUS, radius_schedule=(RadiusStep(120), RadiusStep(60)))
    (task,) = plan_iteration(cfg, 1, LocalPoint(5.0, 5.0), ["d"])
    assert task.orbit.radius == 60.0
    assert task.orbit.center.horizontal_distance(LocalPoint(5.0, 5.0)) == 0.0
