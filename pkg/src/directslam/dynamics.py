"""State-transition, survival and birth models.

All samplers are vectorised over a leading particle axis and take an explicit
``numpy.random.Generator``. Time is measured in steps of unit duration.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .scene import SPEED_OF_LIGHT


class DegenerateCellError(RuntimeError):
    """A birth cell does not intersect the surveillance region."""


@dataclass(frozen=True)
class AgentState:
    p: tuple[float, float]
    v: tuple[float, float] = (0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([*self.p, *self.v], dtype=float)

    @classmethod
    def from_array(cls, x) -> "AgentState":
        x = np.asarray(x, dtype=float)
        return cls((x[0], x[1]), (x[2], x[3]))


@dataclass(frozen=True)
class FeatureKinematicState:
    p: tuple[float, float]
    gamma: float

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")


@dataclass(frozen=True)
class TransitionParams:
    """Motion and survival parameters; defaults are the simulation values.

    ``sigma_qx`` is the acceleration std (variance 1e-4 per axis) and
    ``sigma_q_phi`` the per-component random-walk std for (x, y, gamma).
    """

    sigma_qx: float = 1e-2
    sigma_q_phi: tuple[float, float, float] = (1e-4, 1e-4, 1e-2)
    p_s: float = 0.999
    c_eps: float = 10.0

    def __post_init__(self):
        if not 0 < self.p_s <= 1:
            raise ValueError("p_s must lie in (0, 1]")
        if self.sigma_qx < 0 or min(self.sigma_q_phi) < 0:
            raise ValueError("standard deviations must be nonnegative")
        if not self.c_eps > 0:
            raise ValueError("c_eps must be positive")
        object.__setattr__(self, "sigma_q_phi", tuple(float(s) for s in self.sigma_q_phi))

    @property
    def F(self) -> np.ndarray:
        F = np.eye(4)
        F[0, 2] = F[1, 3] = 1.0
        return F

    @property
    def W(self) -> np.ndarray:
        return np.vstack([0.5 * np.eye(2), np.eye(2)])


@dataclass(frozen=True)
class BirthModel:
    """Per-cell Bernoulli birth derived from a Poisson birth process.

    With ``p_birth`` set, every new PF gets that probability. Otherwise
    ``mu_b`` is spread uniformly over the surveillance region. Intensities are
    drawn log-uniformly from ``gamma_prior`` (absolute units; callers usually
    scale it by the measured per-bin power).
    """

    cell_width: float = SPEED_OF_LIGHT / 400e6
    p_birth: Optional[float] = 1e-4
    mu_b: Optional[float] = None
    gamma_prior: tuple[float, float] = (1e-3, 1e1)

    def __post_init__(self):
        if not self.cell_width > 0:
            raise ValueError("cell_width must be positive")
        if self.p_birth is None and self.mu_b is None:
            raise ValueError("need either p_birth or mu_b")
        if self.p_birth is not None and not 0 < self.p_birth < 1:
            raise ValueError("p_birth must lie in (0, 1)")
        lo, hi = self.gamma_prior
        if not 0 < lo <= hi:
            raise ValueError("gamma_prior must satisfy 0 < min <= max")


def agent_transition_sample(x, params: TransitionParams, rng: np.random.Generator) -> np.ndarray:
    """Constant-velocity step ``x' = F x + W q`` with ``q ~ N(0, sigma_qx^2 I)``."""
    x = np.asarray(x, dtype=float)
    q = params.sigma_qx * rng.standard_normal(x.shape[:-1] + (2,))
    out = np.empty_like(x)
    out[..., :2] = x[..., :2] + x[..., 2:] + 0.5 * q
    out[..., 2:] = x[..., 2:] + q
    return out


def feature_transition_sample(phi, r, params: TransitionParams, rng: np.random.Generator):
    """Random walk with survival for feature states ``phi = (x, y, gamma)``.

    Dead features stay dead. The intensity is reflected at zero.
    """
    phi = np.asarray(phi, dtype=float)
    r = np.asarray(r, dtype=bool)
    survive = r & (rng.random(r.shape) < params.p_s)
    noise = rng.standard_normal(phi.shape) * np.asarray(params.sigma_q_phi)
    out = phi + noise
    out[..., 2] = np.abs(out[..., 2])
    return out, survive


def noise_var_transition_sample(sigma2, c_eps: float, rng: np.random.Generator):
    """Gamma walk with shape ``sigma2 / c_eps`` and scale ``c_eps`` (mean preserving)."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(~(sigma2 > 0)):
        raise ValueError("noise variance must be positive")
    out = rng.gamma(sigma2 / c_eps, c_eps)
    # shape << 1 can underflow to exactly zero
    return np.maximum(out, np.finfo(float).tiny)


def birth_cell(p, agent, model: BirthModel):
    """1-based index ``m`` with ``(m-1) w <= |p - agent| < m w``."""
    d = np.asarray(p, dtype=float) - np.asarray(agent, dtype=float)
    rng_ = np.hypot(d[..., 0], d[..., 1])
    m = np.floor(rng_ / model.cell_width).astype(int) + 1
    return int(m) if np.ndim(m) == 0 else m


def _in_bounds(p, bounds) -> np.ndarray:
    xmin, ymin, xmax, ymax = bounds
    return (p[..., 0] >= xmin) & (p[..., 0] <= xmax) & (p[..., 1] >= ymin) & (p[..., 1] <= ymax)


def _annulus_meets_rect(centres, r0, r1, bounds) -> np.ndarray:
    xmin, ymin, xmax, ymax = bounds
    cx, cy = centres[:, 0], centres[:, 1]
    dx = np.maximum.reduce([xmin - cx, np.zeros_like(cx), cx - xmax])
    dy = np.maximum.reduce([ymin - cy, np.zeros_like(cy), cy - ymax])
    dmin = np.hypot(dx, dy)
    dmax = np.hypot(np.maximum(np.abs(cx - xmin), np.abs(cx - xmax)),
                    np.maximum(np.abs(cy - ymin), np.abs(cy - ymax)))
    return (r1 > dmin) & (r0 < dmax)


def _feasible_angle_bins(cbar, spread, r0, r1, bounds, nbins=720) -> np.ndarray:
    """Indices of angle bins that may contain annulus points inside ``bounds``.

    Conservative for every centre within ``spread`` of ``cbar``: a bin is kept
    when some point of its central radial segment lies within
    ``spread`` plus the discretisation slack of the rectangle.
    """
    xmin, ymin, xmax, ymax = bounds
    theta = (np.arange(nbins) + 0.5) * (2 * np.pi / nbins)
    nr = max(2, int(np.ceil((r1 - r0) / 0.05)) + 1)
    radii = np.linspace(r0, r1, nr)
    px = cbar[0] + radii[None, :] * np.cos(theta)[:, None]
    py = cbar[1] + radii[None, :] * np.sin(theta)[:, None]
    dx = np.maximum(np.maximum(xmin - px, px - xmax), 0.0)
    dy = np.maximum(np.maximum(ymin - py, py - ymax), 0.0)
    slack = spread + r1 * np.pi / nbins + (r1 - r0) / (nr - 1) + 1e-9
    return np.flatnonzero((np.hypot(dx, dy) <= slack).any(axis=1))


def sample_birth(m: int, agent, model: BirthModel, bounds, rng: np.random.Generator,
                 n: int = 1, gamma_range: Optional[tuple[float, float]] = None,
                 max_tries: int = 10_000) -> np.ndarray:
    """Draw ``n`` birth states ``(x, y, gamma)`` for cell ``m``.

    Positions are area-uniform over the annulus of cell ``m`` intersected
    with ``bounds``. ``agent`` is either one position or an array of
    candidate centres (e.g. agent particles), from which each sample picks one
    uniformly. Intensities are log-uniform over ``gamma_range`` (defaults to
    ``model.gamma_prior``).
    """
    if m < 1:
        raise ValueError("cell index starts at 1")
    agent = np.asarray(agent, dtype=float)
    shared = agent.ndim == 1
    lo, hi = gamma_range if gamma_range is not None else model.gamma_prior
    r0, r1 = (m - 1) * model.cell_width, m * model.cell_width

    centres = np.broadcast_to(agent, (n, 2)).copy() if shared else agent.copy()
    feasible = _annulus_meets_rect(centres, r0, r1, bounds)
    if not feasible.any():
        raise DegenerateCellError(f"cell {m} does not intersect the surveillance region")
    centres = centres[feasible]
    cbar = centres.mean(axis=0)
    spread = float(np.max(np.hypot(*(centres - cbar).T)))
    bins = _feasible_angle_bins(cbar, spread, r0, r1, bounds)
    bin_width = 2 * np.pi / 720

    out = np.empty((n, 3))
    filled = accepted = rejected = 0
    while filled < n:
        rate = accepted / (accepted + rejected) if accepted else (1.0 if not rejected else 1e-3)
        batch = int(min(1.2 * (n - filled) / rate + 16, 200_000))
        c = centres[rng.integers(0, len(centres), batch)]
        rad = np.sqrt(rng.uniform(r0 * r0, r1 * r1, batch))
        ang = (bins[rng.integers(0, bins.size, batch)] + rng.random(batch)) * bin_width
        pos = c + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
        ok = _in_bounds(pos, bounds)
        good = pos[ok][: n - filled]
        out[filled:filled + len(good), :2] = good
        filled += len(good)
        accepted += int(ok.sum())
        rejected += int(batch - ok.sum())
        if not accepted and rejected >= max_tries:
            raise DegenerateCellError(f"cell {m}: no sample inside the surveillance region "
                                      f"after {rejected} rejections")
    out[:, 2] = np.exp(rng.uniform(np.log(lo), np.log(hi), n))
    return out


def sample_birth_cells(cells, centres, weights, model: BirthModel, bounds, rng: np.random.Generator,
                       n: int, gamma_range: Optional[tuple[float, float]] = None,
                       min_acceptance: float = 5e-3, max_rounds: int = 20):
    """Vectorised :func:`sample_birth` for several cells sharing one agent belief.

    Every candidate picks a centre from ``centres`` with probability
    ``weights`` and a point uniformly in the annulus of its cell around it;
    candidates outside ``bounds`` are rejected together with their centre.
    The accepted points therefore follow the agent-averaged annulus density
    truncated to the region.
    Returns ``(states, ok)`` with ``states`` of shape ``(len(cells), n, 3)``;
    ``ok[c]`` is False for cells that do not meet the surveillance region
    or whose pilot acceptance rate is below ``min_acceptance`` (far-corner
    slivers whose birth mass is negligible).
    """
    cells = np.asarray(cells, dtype=int)
    if np.any(cells < 1):
        raise ValueError("cell index starts at 1")
    centres = np.asarray(centres, dtype=float)
    weights = np.asarray(weights, dtype=float)
    lo, hi = gamma_range if gamma_range is not None else model.gamma_prior
    C = len(cells)
    r0 = (cells - 1) * model.cell_width
    r1 = cells * model.cell_width
    live = weights > 0
    meets = np.stack([_annulus_meets_rect(centres[live], a, b, bounds) for a, b in zip(r0, r1)])
    ok = meets.any(axis=1)
    # no centre reaches a point of the region beyond its farthest corner, so
    # truncating the radial proposal there leaves the accepted law unchanged
    xmin, ymin, xmax, ymax = bounds
    cx, cy = centres[live, 0], centres[live, 1]
    far = np.max(np.hypot(np.maximum(np.abs(cx - xmin), np.abs(cx - xmax)),
                          np.maximum(np.abs(cy - ymin), np.abs(cy - ymax))))
    r1 = np.minimum(r1, far)

    cdf = np.cumsum(weights / weights.sum())
    cdf[-1] = 1.0
    cbar = weights @ centres / weights.sum()
    spread = float(np.max(np.hypot(*(centres[live] - cbar).T)))
    nbins = 720
    bin_width = 2 * np.pi / nbins
    bins = [_feasible_angle_bins(cbar, spread, a, b, bounds, nbins) if f else np.zeros(0, int)
            for a, b, f in zip(r0, r1, ok)]
    counts = np.array([len(b) for b in bins])
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    flat_bins = np.concatenate(bins) if counts.sum() else np.zeros(0, int)

    uniform = np.ptp(weights) == 0

    def propose(cc):
        if uniform:
            c = centres[rng.integers(0, len(centres), cc.size)]
        else:
            c = centres[np.searchsorted(cdf, rng.random(cc.size), side="right")]
        rr0, rr1 = r0[cc], r1[cc]
        rad = np.sqrt(rng.uniform(rr0 * rr0, rr1 * rr1))
        b = flat_bins[starts[cc] + (rng.random(cc.size) * counts[cc]).astype(int)]
        ang = (b + rng.random(cc.size)) * bin_width
        pos = c + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
        return pos, _in_bounds(pos, bounds)

    # pilot run: cells the region barely touches carry negligible birth mass
    pilot = 500
    _, acc = propose(np.repeat(np.flatnonzero(ok), pilot))
    rate = np.zeros(C)
    rate[ok] = acc.reshape(-1, pilot).mean(axis=1)
    ok &= rate >= min_acceptance

    out = np.zeros((C, n, 3))
    cell_of = np.repeat(np.flatnonzero(ok), n)
    slot_of = np.tile(np.arange(n), int(ok.sum()))
    for rnd in range(max_rounds):
        if not cell_of.size:
            break
        # each open slot draws k i.i.d. candidates and keeps the first accepted one
        k = np.ceil(1.5 / rate[cell_of]).astype(int) * 2 ** rnd
        seg = np.repeat(np.arange(cell_of.size), k)
        pos, acc = propose(cell_of[seg])
        hit_seg, first = np.unique(seg[acc], return_index=True)
        pick = np.flatnonzero(acc)[first]
        out[cell_of[hit_seg], slot_of[hit_seg], :2] = pos[pick]
        miss = np.ones(cell_of.size, bool)
        miss[hit_seg] = False
        cell_of, slot_of = cell_of[miss], slot_of[miss]
    if cell_of.size:
        bad = np.unique(cell_of)
        raise DegenerateCellError(f"cells {cells[bad].tolist()}: rejection sampling did not finish")
    out[ok, :, 2] = np.exp(rng.uniform(np.log(lo), np.log(hi), (int(ok.sum()), n)))
    return out, ok


def annulus_area_fraction(m: int, agent, model: BirthModel, bounds, rng: np.random.Generator,
                          n: int = 10_000) -> float:
    """Monte Carlo estimate of area(cell m ∩ bounds) / area(bounds)."""
    agent = np.asarray(agent, dtype=float)
    r0, r1 = (m - 1) * model.cell_width, m * model.cell_width
    rad = np.sqrt(rng.uniform(r0 * r0, r1 * r1, n))
    ang = rng.uniform(0.0, 2 * np.pi, n)
    pos = agent + np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1)
    frac_in = _in_bounds(pos, bounds).mean()
    xmin, ymin, xmax, ymax = bounds
    return float(frac_in * np.pi * (r1 * r1 - r0 * r0) / ((xmax - xmin) * (ymax - ymin)))


def birth_probability(m: int, agent, model: BirthModel, bounds=None,
                      rng: Optional[np.random.Generator] = None, n_mc: int = 10_000) -> float:
    """``mu / (mu + 1)`` for the Poisson mean of cell ``m``, or the fixed override."""
    if model.p_birth is not None:
        return float(model.p_birth)
    if bounds is None:
        raise ValueError("bounds required to integrate the spatial birth density")
    rng = np.random.default_rng(0) if rng is None else rng
    mu = model.mu_b * annulus_area_fraction(m, agent, model, bounds, rng, n=max(n_mc, 10_000))
    return mu / (mu + 1.0)


def poisson_to_bernoulli(mu: float) -> float:
    return mu / (mu + 1.0)
