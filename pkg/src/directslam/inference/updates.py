"""Prediction, birth and moment-matched measurement updates.

Measurement messages are replaced by single zero-mean complex Gaussians over
``z`` whose covariance is the expectation of the model covariance under the
beliefs of the marginalised variables:

* agent message, per agent particle ``x``:
  ``E[sigma2] I + sum_n expected_load(n, x)``
* feature message, per feature particle:
  ``C_base + gamma h h^H`` with ``C_base`` averaging the other features and the
  noise over a thinned agent subset
* noise message, per variance particle ``s``:
  ``s I + sum_n expected_load(n)`` averaged over the thinned agents.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular, toeplitz
from scipy.special import logsumexp

from ..dynamics import (BirthModel, DegenerateCellError, TransitionParams, agent_transition_sample,
                        birth_probability, feature_transition_sample, noise_var_transition_sample,
                        sample_birth_cells)
from ..scene import SPEED_OF_LIGHT
from ..signal_model import (ModelCovariance, NotPositiveDefiniteError, PulseSpec, Snapshot,
                            cholesky_jitter, delays, loglik, steering_vector)
from . import kernels
from .beliefs import (AgentBelief, DegenerateUpdateError, FeatureBelief, Hypers, NoiseBelief,
                      normalize_log, resample_systematic)

LOG_PI = np.log(np.pi)


@dataclass(frozen=True)
class Models:
    """Everything the filter needs besides beliefs and data."""

    pulse: PulseSpec
    transition: TransitionParams
    birth: BirthModel
    bounds: tuple
    hypers: Hypers


def _dphase(pulse: PulseSpec) -> float:
    return -2.0 * np.pi * pulse.delta / SPEED_OF_LIGHT


def _zvec(z) -> np.ndarray:
    return z.z if isinstance(z, Snapshot) else np.asarray(z, dtype=complex)


def load_dense(cols: np.ndarray, pulse: PulseSpec) -> np.ndarray:
    """Dense Hermitian matrix ``D T D^H`` from a Toeplitz first column."""
    T = toeplitz(cols, np.conj(cols))
    h = pulse.h_spectrum
    return h[:, None] * T * np.conj(h)[None, :]


def _compress(f: FeatureBelief, n: int):
    """At most ``n`` (position, amplitude) points with the same total load mass.

    The load is linear in ``w * gamma``, so positions are drawn by
    deterministic systematic sampling from ``w * gamma`` and share the total
    mass; repeated picks are merged.
    """
    amp = f.existence * f.weights * f.gammas
    total = amp.sum()
    if len(f) <= n or total <= 0:
        return f.positions, amp
    cdf = np.cumsum(amp / total)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, (np.arange(n) + 0.5) / n, side="right")
    idx, counts = np.unique(idx, return_counts=True)
    return f.positions[idx], counts * (total / n)


def _feature_amps(features: Sequence[FeatureBelief], max_points: Optional[int] = None):
    """Flattened (positions, r * w * gamma, owner index) over all particles.

    With ``max_points`` each feature is first compressed by :func:`_compress`.
    """
    if not features:
        return np.zeros((0, 2)), np.zeros(0), np.zeros(0, dtype=np.int64)
    if max_points is None:
        parts = [(f.positions, f.existence * f.weights * f.gammas) for f in features]
    else:
        parts = [_compress(f, max_points) for f in features]
    pos = np.concatenate([p for p, _ in parts])
    amp = np.concatenate([a for _, a in parts])
    owner = np.concatenate([np.full(len(a), i, dtype=np.int64) for i, (_, a) in enumerate(parts)])
    return np.ascontiguousarray(pos), np.ascontiguousarray(amp), owner


def feature_columns(features: Sequence[FeatureBelief], agents: np.ndarray, pulse: PulseSpec) -> np.ndarray:
    """Per-feature Toeplitz columns of the expected load, averaged over ``agents``."""
    pos, amp, owner = _feature_amps(features)
    agents = np.ascontiguousarray(np.atleast_2d(agents)[:, :2], dtype=float)
    return kernels.owner_columns(agents, pos, amp, owner, len(features), _dphase(pulse), pulse.M)


def expected_load(feature: FeatureBelief, agent_pos, pulse: PulseSpec) -> np.ndarray:
    """``E[r gamma h h^H]`` under the feature belief with the agent held fixed."""
    cols = feature_columns([feature], np.asarray(agent_pos, dtype=float).reshape(1, 2), pulse)[0]
    return load_dense(cols, pulse)


def agent_message_covariance(agent_pos, features: Sequence[FeatureBelief], noise: NoiseBelief,
                             pulse: PulseSpec) -> np.ndarray:
    """Moment-matched covariance of the agent message at one agent position."""
    C = noise.mean() * np.eye(pulse.M, dtype=complex)
    if features:
        cols = feature_columns(features, np.asarray(agent_pos, dtype=float).reshape(1, 2), pulse).sum(axis=0)
        C += load_dense(cols, pulse)
    return C


# --- prediction and birth --------------------------------------------------

def predict_agent(belief: AgentBelief, params: TransitionParams, rng) -> AgentBelief:
    if len(belief) == 0:
        raise ValueError("empty agent particle set")
    return AgentBelief(agent_transition_sample(belief.states, params, rng), belief.weights.copy())


def predict_feature(feature: FeatureBelief, params: TransitionParams, rng) -> FeatureBelief:
    """Random-walk the particles; existence becomes ``p_s * existence``.

    Particles carry only the surviving branch, so the survival draw is not
    applied per particle.
    """
    if len(feature) == 0:
        raise ValueError(f"PF {feature.pf_id} has no particles")
    alive = np.ones(len(feature), dtype=bool)
    states, _ = feature_transition_sample(feature.states, alive, TransitionParams(
        params.sigma_qx, params.sigma_q_phi, 1.0, params.c_eps), rng)
    return feature.copy(states=states, existence=params.p_s * feature.existence, is_new=False)


def predict_noise(belief: NoiseBelief, params: TransitionParams, rng) -> NoiseBelief:
    if len(belief) == 0:
        raise ValueError("empty noise particle set")
    return NoiseBelief(noise_var_transition_sample(belief.sigma2, params.c_eps, rng), belief.weights.copy())


def median_bin_power(z) -> float:
    return float(np.median(np.abs(_zvec(z)) ** 2))


def spawn_births(agent: AgentBelief, z, pa_index: int, models: Models, rng, first_id: int,
                 step: int, n_particles: Optional[int] = None) -> list[FeatureBelief]:
    """One new PF per frequency bin / range cell.

    Each birth particle picks an agent particle proportionally to its weight
    and is placed uniformly in the cell annulus around it. The intensity prior
    is scaled by the median per-bin power of ``z``.
    """
    hy = models.hypers
    n = n_particles if n_particles is not None else hy.P_f * hy.birth_oversample
    scale = median_bin_power(z)
    lo, hi = models.birth.gamma_prior
    grange = (lo * scale, hi * scale)
    mean_pos = agent.mean()[:2]
    cells = np.arange(1, models.pulse.M + 1)
    states, ok = sample_birth_cells(cells, agent.positions, agent.weights, models.birth, models.bounds,
                                    rng, n, gamma_range=grange)
    births = []
    for c, m in enumerate(cells):
        if ok[c]:
            pb = birth_probability(int(m), mean_pos, models.birth, models.bounds, rng)
            st = states[c]
        else:
            st = np.column_stack([np.repeat(mean_pos[None], n, axis=0), np.zeros(n)])
            pb = 0.0
        births.append(FeatureBelief(first_id + c, pa_index, pb, st, origin_step=step, is_new=True))
    return births


def refresh_birth_angles(states: np.ndarray, centre, bounds, rng, roughening: float = 0.0,
                         max_tries: int = 100) -> np.ndarray:
    """Redraw the bearing of birth particles about ``centre``.

    A new PF is weighted with the agent fixed at ``centre``, so its weights
    depend only on range and intensity. Resampling a narrow range ring
    collapses onto a few bearings; drawing fresh bearings restores the
    ring. Range and ``log gamma`` get the usual roughening. Particles whose
    new position falls outside ``bounds`` are redrawn; after ``max_tries``
    rounds the remaining ones keep their old position.
    """
    centre = np.asarray(centre, dtype=float)
    n = len(states)
    out = states.copy()
    d = states[:, :2] - centre
    rad = np.hypot(d[:, 0], d[:, 1])
    lg = np.log(np.maximum(states[:, 2], 1e-300))
    if roughening > 0 and n > 1:
        scale = roughening * n ** (-1.0 / 3.0)
        rad = np.abs(rad + rng.standard_normal(n) * scale * np.ptp(rad))
        lg = lg + rng.standard_normal(n) * scale * np.ptp(lg)
    out[:, 2] = np.exp(lg)
    todo = np.arange(n)
    for _ in range(max_tries):
        ang = rng.uniform(0.0, 2 * np.pi, todo.size)
        pos = centre + rad[todo, None] * np.column_stack([np.cos(ang), np.sin(ang)])
        xmin, ymin, xmax, ymax = bounds
        ok = (pos[:, 0] >= xmin) & (pos[:, 0] <= xmax) & (pos[:, 1] >= ymin) & (pos[:, 1] <= ymax)
        out[todo[ok], :2] = pos[ok]
        todo = todo[~ok]
        if not todo.size:
            break
    return out


# --- measurement updates ---------------------------------------------------

def agent_logliks(agent_states: np.ndarray, features: Sequence[FeatureBelief], sigma2_mean: float,
                  z, pulse: PulseSpec, fixed_load: Optional[np.ndarray] = None,
                  max_points: Optional[int] = None) -> np.ndarray:
    """Per-particle ``log CN(z; 0, C_iota(x))``.

    ``max_points`` caps the number of particles per feature used for the
    expected loads (see :func:`_compress`).
    """
    pos, amp, _ = _feature_amps([f for f in features if f.existence > 0], max_points)
    agents = np.ascontiguousarray(agent_states[:, :2])
    cols = kernels.toeplitz_columns(agents, pos, amp, _dphase(pulse), pulse.M)
    base = sigma2_mean * np.eye(pulse.M, dtype=complex)
    if fixed_load is not None:
        base = base + fixed_load
    return kernels.toeplitz_loglik(cols, pulse.h_spectrum, base, _zvec(z))


def update_agent(agent: AgentBelief, features_per_pa: Sequence[Sequence[FeatureBelief]],
                 noise_per_pa: Sequence[NoiseBelief], snapshots: Sequence, pulse: PulseSpec,
                 fixed_features_per_pa: Optional[Sequence[Sequence[FeatureBelief]]] = None,
                 max_points: Optional[int] = None) -> AgentBelief:
    """Multiply the agent belief by one moment-matched message per PA.

    ``fixed_features_per_pa`` (typically the new PFs) enter with their load
    evaluated once at the agent's weighted mean position instead of per
    particle.
    """
    logw = np.log(np.maximum(agent.weights, 1e-300))
    logw[agent.weights == 0] = -np.inf
    mean_pos = agent.mean()[:2]
    for j, z in enumerate(snapshots):
        fixed = None
        if fixed_features_per_pa is not None and fixed_features_per_pa[j]:
            cols = feature_columns(fixed_features_per_pa[j], mean_pos[None], pulse).sum(axis=0)
            fixed = load_dense(cols, pulse)
        logw = logw + agent_logliks(agent.states, features_per_pa[j], noise_per_pa[j].mean(), z, pulse,
                                    fixed, max_points)
    logw[np.isnan(logw)] = -np.inf
    return AgentBelief(agent.states, normalize_log(logw))


def thin_agents(agent: AgentBelief, size: int, rng) -> np.ndarray:
    """Weight-proportional subset of agent positions drawn without replacement."""
    nz = int(np.count_nonzero(agent.weights))
    size = min(size, nz)
    idx = rng.choice(len(agent), size=size, replace=False, p=agent.weights)
    return agent.positions[np.sort(idx)]


@dataclass
class KappaResult:
    weights: np.ndarray
    existence: float
    loglik0: float
    loglik1: np.ndarray
    log_lr: float


EXACT_PAIRS = 8192
RANGE_GRID_STEP = 5e-3  # m; cubic Hermite keeps loglik errors near 1e-5 at 200 MHz


def _rank_one_logliks(L, w, l0, pos, agents, g, pulse: PulseSpec) -> np.ndarray:
    """``log CN(z; 0, C + g_i h h^H)`` per particle, averaged over the agent positions.

    Small problems are solved exactly. Larger ones tabulate the two scalars
    of the Sherman-Morrison update and their range derivatives on a fine
    range grid and interpolate.
    """
    if len(pos) * len(agents) <= EXACT_PAIRS:
        ranges = np.linalg.norm(pos[:, None, :] - agents[None, :, :], axis=-1)
        U = solve_triangular(L, steering_vector(ranges.ravel() / SPEED_OF_LIGHT, pulse).T, lower=True,
                             check_finite=False)
        a = np.einsum("ij,ij->j", U.conj(), U).real.reshape(ranges.shape)
        b = (U.conj().T @ w).reshape(ranges.shape)
        denom = 1.0 + g[:, None] * a
        l1a = l0 - np.log(denom) + g[:, None] * np.abs(b) ** 2 / denom
        return l1a[:, 0] if l1a.shape[1] == 1 else logsumexp(l1a, axis=1) - np.log(l1a.shape[1])
    pos = np.ascontiguousarray(pos)
    agents = np.ascontiguousarray(agents)
    lo, hi = kernels.range_extent(pos, agents)
    n = max(2, int(np.ceil((hi - lo) / RANGE_GRID_STEP)) + 1)
    step = max((hi - lo) / (n - 1), 1e-12)
    grid = lo + step * np.arange(n)
    H = steering_vector(grid / SPEED_OF_LIGHT, pulse)
    dH = H * (-2j * np.pi / SPEED_OF_LIGHT * pulse.freqs)
    U = solve_triangular(L, np.concatenate([H, dH]).T, lower=True, check_finite=False)
    U, dU = U[:, :n], U[:, n:]
    ag = np.einsum("ij,ij->j", U.conj(), U).real
    dag = 2.0 * np.einsum("ij,ij->j", U.conj(), dU).real
    bg = U.conj().T @ w
    dbg = dU.conj().T @ w
    return kernels.grid_rank_one_loglik(pos, agents, np.ascontiguousarray(g, dtype=float), lo, step,
                                        ag, dag, np.ascontiguousarray(bg), np.ascontiguousarray(dbg),
                                        float(l0))


def kappa_update(feature: FeatureBelief, C_base: np.ndarray, xbar, z, pulse: PulseSpec,
                 full_recompute: bool = False, chol: Optional[np.ndarray] = None) -> KappaResult:
    """Weights and existence of one PF given the covariance of everything else.

    ``loglik1[i]`` uses ``C_base + gamma_i h_i h_i^H``. With a single agent
    position ``xbar`` the steering vector is evaluated there. With an array of
    agent positions the particle likelihood is averaged over them, which keeps
    feature weights from being sharper than the agent belief allows.
    Rank-one algebra unless ``full_recompute``.
    """
    z = _zvec(z)
    M = pulse.M
    agents = np.atleast_2d(np.asarray(xbar, dtype=float))
    g = feature.gammas
    if full_recompute:
        ranges = np.linalg.norm(feature.positions[:, None, :] - agents[None, :, :], axis=-1)
        l0 = loglik(z, ModelCovariance(C_base))
        l1a = np.empty(ranges.shape)
        for i, gi in enumerate(g):
            for k, r in enumerate(ranges[i]):
                h = steering_vector(r / SPEED_OF_LIGHT, pulse)
                l1a[i, k] = loglik(z, ModelCovariance(C_base + gi * np.outer(h, h.conj())))
        l1 = l1a[:, 0] if l1a.shape[1] == 1 else logsumexp(l1a, axis=1) - np.log(l1a.shape[1])
    else:
        L = cholesky_jitter(C_base) if chol is None else chol
        w = solve_triangular(L, z, lower=True, check_finite=False)
        logdet = 2.0 * np.sum(np.log(np.diag(L).real))
        quad = np.vdot(w, w).real
        l0 = float(-M * LOG_PI - logdet - quad)
        l1 = _rank_one_logliks(L, w, l0, feature.positions, agents, g, pulse)
    logw = np.log(np.maximum(feature.weights, 1e-300)) + l1
    logw[feature.weights == 0] = -np.inf
    log_l1 = logsumexp(logw)
    p = feature.existence
    if p <= 0.0:
        existence = 0.0
    elif p >= 1.0:
        existence = 1.0
    else:
        # p L1 / (p L1 + (1-p) L0) with a shared log offset
        a1 = np.log(p) + log_l1
        a0 = np.log1p(-p) + l0
        existence = float(np.exp(a1 - np.logaddexp(a1, a0)))
    return KappaResult(normalize_log(logw), existence, float(l0), l1, float(log_l1 - l0))


def _base_covariance(others: Sequence[FeatureBelief], thin: np.ndarray, sigma2_mean: float,
                     pulse: PulseSpec) -> np.ndarray:
    C = sigma2_mean * np.eye(pulse.M, dtype=complex)
    if others:
        C += load_dense(feature_columns(others, thin, pulse).sum(axis=0), pulse)
    return C


def update_feature(feature: FeatureBelief, agent: AgentBelief, others: Sequence[FeatureBelief],
                   noise: NoiseBelief, z, pulse: PulseSpec, hypers: Hypers, rng,
                   full_recompute: bool = False) -> FeatureBelief:
    """Belief of one PF after its moment-matched measurement message."""
    thin = thin_agents(agent, hypers.agent_thin, rng)
    C_base = _base_covariance(others, thin, noise.mean(), pulse)
    at = thin if hypers.kappa_agent_average else thin.mean(axis=0)
    res = kappa_update(feature, C_base, at, z, pulse, full_recompute=full_recompute)
    return feature.copy(weights=res.weights, existence=res.existence)


def noise_logliks(sigma2: np.ndarray, S: np.ndarray, z) -> np.ndarray:
    """``log CN(z; 0, s I + S)`` for every ``s`` via one eigendecomposition of ``S``."""
    z = _zvec(z)
    lam, V = np.linalg.eigh(S)
    lam = np.maximum(lam, 0.0)
    p = np.abs(V.conj().T @ z) ** 2
    D = sigma2[:, None] + lam[None, :]
    return -len(z) * LOG_PI - np.log(D).sum(axis=1) - (p[None, :] / D).sum(axis=1)


def update_noise(noise: NoiseBelief, agent: AgentBelief, features: Sequence[FeatureBelief], z,
                 pulse: PulseSpec, hypers: Optional[Hypers] = None, rng=None,
                 thin: Optional[np.ndarray] = None) -> NoiseBelief:
    if thin is None:
        thin = thin_agents(agent, (hypers or Hypers()).agent_thin, rng or np.random.default_rng(0))
    S = np.zeros((pulse.M, pulse.M), dtype=complex)
    if features:
        S = load_dense(feature_columns(features, thin, pulse).sum(axis=0), pulse)
    logw = np.log(np.maximum(noise.weights, 1e-300)) + noise_logliks(noise.sigma2, S, z)
    return NoiseBelief(noise.sigma2, normalize_log(logw))


# --- declaration, estimation ----------------------------------------------

def declare_and_prune(features: Sequence[FeatureBelief], hypers: Hypers):
    declared = [f for f in features if f.existence > hypers.T_dec]
    surviving = [f for f in features if f.existence >= hypers.T_pru]
    return declared, surviving


def estimate(agent: AgentBelief, declared: Sequence[FeatureBelief] = ()):
    """MMSE agent position and declared-feature positions ``[(pf_id, pos), ...]``."""
    return agent.mean()[:2], [(f.pf_id, f.position_estimate()) for f in declared]
