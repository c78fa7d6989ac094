"""Floor-plan geometry, virtual anchors and single-bounce ray tracing.

Virtual anchors (VAs) are mirror images of a physical anchor (PA) across the
line through a wall segment. A specular path via segment ``s`` exists iff the
straight line from the agent to the VA crosses ``s`` strictly inside its
extent and both legs of the bounced ray are unobstructed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

SPEED_OF_LIGHT = 299_792_458.0
GRAZE_TOL = 1e-9


class ScenarioError(ValueError):
    """Raised for malformed or inconsistent scenario files."""


@dataclass(frozen=True)
class Segment:
    a: tuple[float, float]
    b: tuple[float, float]
    id: int

    def __post_init__(self):
        a = (float(self.a[0]), float(self.a[1]))
        b = (float(self.b[0]), float(self.b[1]))
        if a == b:
            raise ValueError(f"segment {self.id} is degenerate: a == b == {a}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def length(self) -> float:
        return float(np.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1]))


@dataclass(frozen=True)
class FloorPlan:
    segments: tuple[Segment, ...]
    bounds: tuple[float, float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        xmin, ymin, xmax, ymax = (float(v) for v in self.bounds)
        object.__setattr__(self, "bounds", (xmin, ymin, xmax, ymax))
        if not (xmax > xmin and ymax > ymin):
            raise ScenarioError(f"bounds: rectangle must have positive area, got {self.bounds}")
        ids = [s.id for s in self.segments]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ScenarioError(f"segments: duplicate segment id(s) {dup}")
        for s in self.segments:
            for pt in (s.a, s.b):
                if not self.contains(pt):
                    raise ScenarioError(f"segments: endpoint {pt} of segment {s.id} outside bounds")

    def contains(self, p) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= p[0] <= xmax and ymin <= p[1] <= ymax

    @property
    def diagonal(self) -> float:
        xmin, ymin, xmax, ymax = self.bounds
        return float(np.hypot(xmax - xmin, ymax - ymin))


@dataclass(frozen=True)
class AnchorSet:
    pa_positions: np.ndarray

    def __post_init__(self):
        pas = np.atleast_2d(np.asarray(self.pa_positions, dtype=float))
        if pas.size == 0 or pas.shape[1] != 2:
            raise ScenarioError("pas: need at least one 2-D anchor position")
        pas.setflags(write=False)
        object.__setattr__(self, "pa_positions", pas)

    def __len__(self):
        return len(self.pa_positions)


@dataclass(frozen=True)
class Trajectory:
    positions: np.ndarray
    max_step: float = 1.0

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.size == 0 or pos.shape[1] != 2:
            raise ScenarioError("trajectory: need at least one 2-D waypoint")
        if len(pos) > 1:
            steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
            worst = int(np.argmax(steps))
            if steps[worst] >= self.max_step:
                raise ScenarioError(
                    f"trajectory: displacement {steps[worst]:.3f} m between waypoints "
                    f"{worst} and {worst + 1} exceeds max step {self.max_step} m"
                )
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True)
class PropagationPath:
    anchor_pos: tuple[float, float]
    delay: float
    bounce: int
    pa_index: int
    segment_id: Optional[int] = None
    reflection_point: Optional[tuple[float, float]] = field(default=None, compare=False)

    def __post_init__(self):
        if (self.bounce == 0) != (self.segment_id is None):
            raise ValueError("bounce=0 iff segment_id is None")

    @property
    def length(self) -> float:
        return self.delay * SPEED_OF_LIGHT


def _cross(u, v) -> float:
    return u[0] * v[1] - u[1] * v[0]


def mirror_point(p, s: Segment) -> np.ndarray:
    """Reflect ``p`` across the infinite line through segment ``s``."""
    a = np.asarray(s.a, dtype=float)
    d = np.asarray(s.b, dtype=float) - a
    norm = np.hypot(d[0], d[1])
    if norm == 0.0:
        raise ValueError("cannot mirror across a degenerate segment")
    n = np.array([-d[1], d[0]]) / norm
    p = np.asarray(p, dtype=float)
    return p - 2.0 * np.dot(p - a, n) * n


def _blocked_by(p, q, s: Segment) -> bool:
    """True if the closed segment p->q touches wall ``s``.

    Touching a wall endpoint within GRAZE_TOL counts as blocked.
    """
    p = np.asarray(p, dtype=float)
    r = np.asarray(q, dtype=float) - p
    a = np.asarray(s.a)
    e = np.asarray(s.b) - a
    denom = _cross(r, e)
    ap = a - p
    elen = np.hypot(e[0], e[1])
    rlen = np.hypot(r[0], r[1])
    if rlen == 0.0:
        return False
    if abs(denom) <= 1e-15 * rlen * elen:
        # parallel: blocked only when collinear and overlapping
        if abs(_cross(ap, r)) / rlen > GRAZE_TOL:
            return False
        t0 = np.dot(ap, r) / rlen**2
        t1 = np.dot(ap + e, r) / rlen**2
        lo, hi = min(t0, t1), max(t0, t1)
        return hi >= 0.0 and lo <= 1.0
    t = _cross(ap, e) / denom
    u = _cross(ap, r) / denom
    utol = GRAZE_TOL / elen
    return 0.0 <= t <= 1.0 and -utol <= u <= 1.0 + utol


def line_of_sight(p, q, plan: FloorPlan, exclude: Optional[int] = None) -> bool:
    return not any(_blocked_by(p, q, s) for s in plan.segments if s.id != exclude)


def specular_path(agent, pa, s: Segment, plan: FloorPlan, pa_index: int = 0) -> Optional[PropagationPath]:
    """Single-bounce path agent -> s -> pa, or ``None`` if invalid or occluded."""
    agent = np.asarray(agent, dtype=float)
    va = mirror_point(pa, s)
    r = va - agent
    a = np.asarray(s.a)
    e = np.asarray(s.b) - a
    denom = _cross(r, e)
    if abs(denom) < 1e-15:
        return None
    ap = a - agent
    t = _cross(ap, e) / denom
    u = _cross(ap, r) / denom
    utol = GRAZE_TOL / s.length
    if not (0.0 < t < 1.0 and utol < u < 1.0 - utol):
        return None
    rp = a + u * e
    # the reflecting wall only meets either leg at rp itself
    if not line_of_sight(agent, rp, plan, exclude=s.id):
        return None
    if not line_of_sight(rp, pa, plan, exclude=s.id):
        return None
    dist = float(np.hypot(r[0], r[1]))
    return PropagationPath(
        anchor_pos=(float(va[0]), float(va[1])),
        delay=dist / SPEED_OF_LIGHT,
        bounce=1,
        pa_index=pa_index,
        segment_id=s.id,
        reflection_point=(float(rp[0]), float(rp[1])),
    )


def enumerate_paths(agent, pa_index: int, plan: FloorPlan, anchors: AnchorSet) -> list[PropagationPath]:
    """LOS path (if unobstructed) followed by valid single-bounce paths in segment order."""
    if not 0 <= pa_index < len(anchors):
        raise IndexError(f"pa_index {pa_index} out of range for {len(anchors)} anchors")
    pa = anchors.pa_positions[pa_index]
    agent = np.asarray(agent, dtype=float)
    paths = []
    if line_of_sight(agent, pa, plan):
        d = float(np.hypot(*(agent - pa)))
        if d > 0.0:
            paths.append(PropagationPath((float(pa[0]), float(pa[1])), d / SPEED_OF_LIGHT, 0, pa_index))
    for s in plan.segments:
        path = specular_path(agent, pa, s, plan, pa_index)
        if path is not None:
            paths.append(path)
    return paths


def visible_anchor_positions(agent, pa_index: int, plan: FloorPlan, anchors: AnchorSet,
                             gated: bool = True) -> np.ndarray:
    """Ground-truth feature set for one PA: PA plus VAs, visibility-gated or static."""
    if gated:
        pts = [p.anchor_pos for p in enumerate_paths(agent, pa_index, plan, anchors)]
    else:
        pa = anchors.pa_positions[pa_index]
        pts = [tuple(pa)] + [tuple(mirror_point(pa, s)) for s in plan.segments]
    return np.asarray(pts, dtype=float).reshape(-1, 2)


# --- scenario files -------------------------------------------------------

def _parse_segments(raw) -> list[Segment]:
    if not isinstance(raw, list):
        raise ScenarioError("segments: expected a list")
    segs = []
    for i, item in enumerate(raw):
        try:
            if isinstance(item, dict):
                a, b, sid = item["a"], item["b"], int(item["id"])
            else:
                if len(item) != 4:
                    raise ScenarioError(f"segments[{i}]: expected [ax, ay, bx, by], got {item!r}")
                a, b, sid = item[:2], item[2:], i + 1
            segs.append(Segment(tuple(map(float, a)), tuple(map(float, b)), sid))
        except ScenarioError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"segments[{i}]: {exc}") from exc
    return segs


def _float_array(raw, name: str, width: int) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{name}: {exc}") from exc
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ScenarioError(f"{name}: expected a list of {width}-element rows")
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{name}: non-finite value")
    return arr


def parse_scenario(text: str, max_step: float = 1.0) -> tuple[FloorPlan, AnchorSet, Trajectory]:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ScenarioError(f"parse error{where}: {getattr(exc, 'problem', exc)}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario: top level must be a mapping")
    for key in ("bounds", "pas", "trajectory"):
        if key not in doc:
            raise ScenarioError(f"{key}: missing required field")
    bounds = np.asarray(doc["bounds"], dtype=float).ravel()
    if bounds.shape != (4,):
        raise ScenarioError("bounds: expected [xmin, ymin, xmax, ymax]")
    plan = FloorPlan(tuple(_parse_segments(doc.get("segments") or [])), tuple(bounds))
    anchors = AnchorSet(_float_array(doc["pas"], "pas", 2))
    for j, pa in enumerate(anchors.pa_positions):
        if not plan.contains(pa):
            raise ScenarioError(f"pas[{j}]: position {tuple(pa)} outside bounds")
    traj = Trajectory(_float_array(doc["trajectory"], "trajectory", 2), max_step=max_step)
    for k, p in enumerate(traj.positions):
        if not plan.contains(p):
            raise ScenarioError(f"trajectory[{k}]: position {tuple(p)} outside bounds")
    return plan, anchors, traj


def load_scenario(path, max_step: float = 1.0) -> tuple[FloorPlan, AnchorSet, Trajectory]:
    """Read and validate a YAML scenario file (see README for the grammar)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    try:
        return parse_scenario(text, max_step=max_step)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def dump_scenario(plan: FloorPlan, anchors: AnchorSet, traj: Trajectory, header: str = "") -> str:
    lines = [f"# {ln}" for ln in header.splitlines()]
    lines.append("bounds: [%s]" % ", ".join(f"{v:g}" for v in plan.bounds))
    lines.append("segments:")
    for s in plan.segments:
        lines.append(f"  - {{id: {s.id}, a: [{s.a[0]:g}, {s.a[1]:g}], b: [{s.b[0]:g}, {s.b[1]:g}]}}")
    if not plan.segments:
        lines[-1] = "segments: []"
    lines.append("pas:")
    lines.extend(f"  - [{p[0]:g}, {p[1]:g}]" for p in anchors.pa_positions)
    lines.append("trajectory:")
    lines.extend(f"  - [{p[0]:.4f}, {p[1]:.4f}]" for p in traj.positions)
    return "\n".join(lines) + "\n"


def bundled_scenario(name: str) -> Path:
    """Path of a scenario file shipped with the package (``demo_fig4`` or ``single_wall``)."""
    from importlib import resources
    return Path(str(resources.files("directslam") / "data" / f"{name}.yaml"))


def path_delays(paths: Sequence[PropagationPath]) -> np.ndarray:
    return np.array([p.delay for p in paths], dtype=float)
