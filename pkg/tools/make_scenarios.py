"""Regenerate the bundled scenario files in src/directslam/data/."""
from pathlib import Path

import numpy as np

from directslam.scene import AnchorSet, FloorPlan, Segment, Trajectory, dump_scenario

OUT = Path(__file__).resolve().parents[1] / "src" / "directslam" / "data"


def single_wall():
    # The upper bound y = 5 keeps the mirror image of the VA across the path
    # line, (2, 6.5), outside the region. With one PA, a straight path that
    # never crosses the PA-VA line leaves no mirror solution for the agent.
    plan = FloorPlan((Segment((-5.0, 0.0), (15.0, 0.0), 1),), (-8.0, -8.0, 16.0, 5.0))
    anchors = AnchorSet([[2.0, 1.5]])
    traj = np.column_stack([np.linspace(3.0, 9.0, 50), np.full(50, 2.5)])
    header = ("Single reflecting wall along y = 0, one PA, 50-step straight path.\n"
              "Desk-scale acceptance scene: the LOS path and one VA at (2, -1.5).")
    return dump_scenario(plan, anchors, Trajectory(traj), header)


def demo_fig4():
    # 12 m x 8 m room with a 3 m x 2 m alcove on the north wall; coordinates are
    # an approximation, the original floor plan is not published numerically.
    walls = [
        ((0, 0), (12, 0)), ((12, 0), (12, 8)), ((12, 8), (8, 8)), ((8, 8), (8, 10)),
        ((8, 10), (5, 10)), ((5, 10), (5, 8)), ((5, 8), (0, 8)), ((0, 8), (0, 0)),
    ]
    plan = FloorPlan(tuple(Segment(a, b, i + 1) for i, (a, b) in enumerate(walls)),
                     (-14.0, -12.0, 26.0, 22.0))
    anchors = AnchorSet([[1.5, 6.5], [10.5, 1.5]])
    # closed loop through the room and into the alcove, 679 samples
    way = np.array([[2.5, 2.0], [9.5, 2.0], [9.5, 6.0], [7.0, 6.5], [6.5, 9.0],
                    [6.0, 6.5], [2.5, 6.0], [2.5, 2.5]])
    seg = np.linalg.norm(np.diff(way, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    t = np.linspace(0.0, s[-1], 679)
    traj = np.column_stack([np.interp(t, s, way[:, 0]), np.interp(t, s, way[:, 1])])
    header = ("Approximation of the indoor simulation floor plan: rectangular room with\n"
              "an alcove, J = 2 PAs, 679-step trajectory. Wall coordinates are not the\n"
              "original ones (those are not published); geometry is illustrative.")
    return dump_scenario(plan, anchors, Trajectory(traj), header)


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "single_wall.yaml").write_text(single_wall())
    (OUT / "demo_fig4.yaml").write_text(demo_fig4())
    print("wrote", sorted(p.name for p in OUT.glob("*.yaml")))
