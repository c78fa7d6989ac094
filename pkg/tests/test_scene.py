import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from directslam.scene import (SPEED_OF_LIGHT, AnchorSet, FloorPlan, ScenarioError, Segment, bundled_scenario,
                              enumerate_paths, load_scenario, mirror_point, parse_scenario, specular_path,
                              visible_anchor_positions)

C = SPEED_OF_LIGHT
coord = st.floats(-50, 50, allow_nan=False)


def wall(a, b, i=1):
    return Segment(a, b, i)


def plan_of(*segs, bounds=(-20, -20, 20, 20)):
    return FloorPlan(tuple(segs), bounds)


# --- mirror_point -------------------------------------------------------------

def test_mirror_across_x_axis():
    np.testing.assert_allclose(mirror_point((1, 1), wall((0, 0), (10, 0))), (1, -1))


def test_mirror_point_on_line_is_fixed():
    np.testing.assert_allclose(mirror_point((3, 0), wall((0, 0), (10, 0))), (3, 0), atol=1e-15)


def test_mirror_across_diagonal_swaps_coordinates():
    np.testing.assert_allclose(mirror_point((2, 3), wall((0, 0), (4, 4))), (3, 2), atol=1e-14)


def test_degenerate_segment_rejected():
    with pytest.raises(ValueError):
        Segment((1, 1), (1, 1), 0)


@settings(max_examples=200, deadline=None)
@given(coord, coord, coord, coord, coord, coord)
def test_mirror_involution_and_distance(px, py, ax, ay, bx, by):
    if math.hypot(bx - ax, by - ay) < 1e-3:
        return
    s = wall((ax, ay), (bx, by))
    p = np.array([px, py])
    q = mirror_point(p, s)
    np.testing.assert_allclose(mirror_point(q, s), p, atol=1e-12 * (1 + np.abs(p).max() + 50))
    d = np.array([bx - ax, by - ay]) / math.hypot(bx - ax, by - ay)
    n = np.array([-d[1], d[0]])
    assert abs(abs((p - (ax, ay)) @ n) - abs((q - (ax, ay)) @ n)) < 1e-9


# --- specular_path ------------------------------------------------------------

def test_symmetric_specular_path():
    s = wall((0, 0), (10, 0))
    path = specular_path((2, 2), (6, 2), s, plan_of(s))
    assert path is not None and path.bounce == 1 and path.segment_id == 1
    np.testing.assert_allclose(path.reflection_point, (4, 0), atol=1e-12)
    assert path.delay == pytest.approx(math.sqrt(32) / C, rel=1e-14)


def test_reflection_point_outside_segment():
    s = wall((0, 0), (1, 0))
    assert specular_path((2, 2), (6, 2), s, plan_of(s)) is None


def test_occluded_leg_blocks_path():
    # the agent leg (2,2)->(4,0) crosses y = 0.5 at x = 3.5, inside the occluder
    s = wall((0, 0), (10, 0))
    occ = wall((3, 0.5), (5, 0.5), 2)
    assert specular_path((2, 2), (6, 2), s, plan_of(s, occ)) is None


def test_ray_grazing_endpoint_counts_as_blocked():
    occ = wall((1, 1), (1, 3), 2)
    plan = plan_of(occ)
    # the LOS from (0, 0) to (2, 2) passes exactly through the endpoint (1, 1)
    assert enumerate_paths((0, 0), 0, plan, AnchorSet([[2, 2]])) == []


# --- enumerate_paths ----------------------------------------------------------

def test_empty_plan_single_los():
    paths = enumerate_paths((0, 0), 0, plan_of(), AnchorSet([[3, 4]]))
    assert len(paths) == 1 and paths[0].bounce == 0 and paths[0].segment_id is None
    assert paths[0].delay == pytest.approx(5 / C, rel=1e-15)


def test_single_wall_scene_has_los_and_one_va():
    plan, anchors, traj = load_scenario(bundled_scenario("single_wall"))
    va = mirror_point(anchors.pa_positions[0], plan.segments[0])
    for p in traj.positions:
        paths = enumerate_paths(p, 0, plan, anchors)
        assert [q.bounce for q in paths] == [0, 1]
        np.testing.assert_allclose(paths[1].anchor_pos, va)


def test_agent_behind_wall_sees_nothing():
    plan = plan_of(wall((-5, 1), (5, 1)))
    assert enumerate_paths((0, 0), 0, plan, AnchorSet([[0, 2]])) == []


def test_bad_pa_index():
    with pytest.raises(IndexError):
        enumerate_paths((0, 0), 1, plan_of(), AnchorSet([[1, 1]]))


def test_path_length_identity_and_delay_bounds_demo():
    plan, anchors, traj = load_scenario(bundled_scenario("demo_fig4"))
    dmax = 3 * plan.diagonal / C
    for p in traj.positions[::7]:
        for j in range(len(anchors)):
            paths = enumerate_paths(p, j, plan, anchors)
            delays = [q.delay for q in paths]
            assert all(0 < d <= dmax for d in delays)
            keys = [q.segment_id for q in paths]
            assert len(set(keys)) == len(keys)
            pa = anchors.pa_positions[j]
            for q in paths:
                if q.bounce:
                    rp = np.array(q.reflection_point)
                    lhs = np.linalg.norm(p - rp) + np.linalg.norm(rp - pa)
                    assert abs(lhs - np.linalg.norm(p - np.array(q.anchor_pos))) < 1e-9


def test_visible_anchor_sets():
    s = wall((-5, 0), (15, 0))
    plan = plan_of(s)
    anchors = AnchorSet([[2, 1.5]])
    np.testing.assert_allclose(visible_anchor_positions((4, 2.5), 0, plan, anchors), [[2, 1.5], [2, -1.5]])
    np.testing.assert_allclose(visible_anchor_positions((40, 2.5), 0, plan_of(s, bounds=(-50, -50, 50, 50)),
                                                        anchors, gated=False), [[2, 1.5], [2, -1.5]])


# --- scenario files -------------------------------------------------------------

MINIMAL = """
bounds: [0, 0, 10, 10]
segments:
  - {id: 1, a: [0, 0], b: [10, 0]}
pas:
  - [5, 5]
trajectory:
  - [1, 1]
  - [1.5, 1]
"""


def test_minimal_scenario_parses():
    plan, anchors, traj = parse_scenario(MINIMAL)
    assert len(plan.segments) == 1 and len(anchors) == 1 and len(traj) == 2


def test_duplicate_segment_id_rejected():
    text = MINIMAL.replace("pas:", "  - {id: 1, a: [0, 10], b: [10, 10]}\npas:")
    with pytest.raises(ScenarioError, match="duplicate"):
        parse_scenario(text)


def test_parse_error_reports_line():
    with pytest.raises(ScenarioError, match="line"):
        parse_scenario("bounds: [0, 0, 1\npas: [")


def test_missing_field_named():
    with pytest.raises(ScenarioError, match="trajectory"):
        parse_scenario("bounds: [0, 0, 1, 1]\npas: [[0.5, 0.5]]\n")


def test_too_fast_trajectory_rejected():
    with pytest.raises(ScenarioError, match="max step"):
        parse_scenario(MINIMAL.replace("[1.5, 1]", "[3, 1]"))


def test_pa_outside_bounds_rejected():
    with pytest.raises(ScenarioError, match="pas"):
        parse_scenario(MINIMAL.replace("[5, 5]", "[50, 5]"))


def test_bundled_demo_dimensions():
    plan, anchors, traj = load_scenario(bundled_scenario("demo_fig4"))
    assert len(traj) == 679 and len(anchors) == 2


def test_missing_file(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "nope.yaml")
