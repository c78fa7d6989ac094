"""Particle representations of the agent, feature and noise beliefs."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import logsumexp

MIN_AGENT_PARTICLES = 100
MIN_FEATURE_PARTICLES = 50


class DegenerateUpdateError(RuntimeError):
    """All particle weights vanished in a measurement update."""


def normalize_log(logw: np.ndarray) -> np.ndarray:
    lse = logsumexp(logw)
    if not np.isfinite(lse):
        raise DegenerateUpdateError("all particle weights are zero")
    return np.exp(logw - lse)


def ess(weights: np.ndarray) -> float:
    return 1.0 / float(np.sum(weights ** 2))


@dataclass
class AgentBelief:
    """Weighted particles over ``[px, py, vx, vy]``."""

    states: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        n = len(self.states)
        if n == 0:
            raise ValueError("empty agent particle set")
        if self.weights is None:
            self.weights = np.full(n, 1.0 / n)

    def __len__(self):
        return len(self.states)

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    def mean(self) -> np.ndarray:
        return self.weights @ self.states

    def copy(self) -> "AgentBelief":
        return AgentBelief(self.states.copy(), self.weights.copy())


@dataclass
class FeatureBelief:
    """Potential feature: existence probability plus particles over ``[px, py, gamma]``."""

    pf_id: int
    pa_index: int
    existence: float
    states: np.ndarray
    weights: np.ndarray = None
    origin_step: int = 0
    is_new: bool = False

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.weights is None:
            n = len(self.states)
            self.weights = np.full(n, 1.0 / n) if n else np.zeros(0)
        if not 0.0 <= self.existence <= 1.0:
            raise ValueError(f"existence {self.existence} outside [0, 1]")

    def __len__(self):
        return len(self.states)

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    @property
    def gammas(self) -> np.ndarray:
        return self.states[:, 2]

    def position_estimate(self) -> np.ndarray:
        return self.weights @ self.positions

    def position_spread(self) -> float:
        """RMS distance of the particles from their weighted mean."""
        d = self.positions - self.position_estimate()
        return float(np.sqrt(self.weights @ np.einsum("ij,ij->i", d, d)))

    def copy(self, **changes) -> "FeatureBelief":
        out = replace(self, states=self.states.copy(), weights=self.weights.copy())
        for k, v in changes.items():
            setattr(out, k, v)
        return out


@dataclass
class NoiseBelief:
    sigma2: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        self.sigma2 = np.asarray(self.sigma2, dtype=float)
        if np.any(self.sigma2 <= 0):
            raise ValueError("noise variance particles must be positive")
        if self.weights is None:
            self.weights = np.full(len(self.sigma2), 1.0 / len(self.sigma2))

    def __len__(self):
        return len(self.sigma2)

    def mean(self) -> float:
        return float(self.weights @ self.sigma2)

    def copy(self) -> "NoiseBelief":
        return NoiseBelief(self.sigma2.copy(), self.weights.copy())


@dataclass
class Hypers:
    """Filter tuning knobs.

    ``birth_oversample`` multiplies the particle count used to represent a new
    PF's birth message; survivors are resampled down to ``P_f``.
    ``roughening`` is the constant of the post-resampling jitter applied to
    feature particles (0 disables it); ``roughening_max_pos`` caps the
    position jitter std in metres. With ``kappa_agent_average`` the feature
    likelihood is averaged over the thinned agent particles instead of being
    evaluated at their mean. PFs whose position spread exceeds
    ``agent_info_spread`` (m) are held fixed at the agent mean in the agent
    update, like new PFs. ``agent_load_points`` caps the particles per PF
    used for the per-agent-particle loads.
    """

    T_dec: float = 0.5
    T_pru: float = 1e-2
    P_a: int = 2000
    P_f: int = 1000
    P_sigma: int = 100
    ess_frac: float = 0.5
    agent_thin: int = 16
    birth_oversample: int = 2
    roughening: float = 0.2
    roughening_max_pos: float = 0.02
    sequential_births: bool = True
    kappa_agent_average: bool = True
    agent_info_spread: float = 0.5
    agent_load_points: int = 64

    def __post_init__(self):
        if not 0 < self.T_pru < self.T_dec < 1:
            raise ValueError("need 0 < T_pru < T_dec < 1")
        if self.P_a < MIN_AGENT_PARTICLES or self.P_f < MIN_FEATURE_PARTICLES or self.P_sigma < 1:
            raise ValueError(f"particle counts below minimum (P_a >= {MIN_AGENT_PARTICLES}, "
                             f"P_f >= {MIN_FEATURE_PARTICLES})")
        if not 0 < self.ess_frac <= 1 or self.agent_thin < 1 or self.birth_oversample < 1:
            raise ValueError("invalid resampling / thinning settings")


@dataclass
class SlamBeliefs:
    """Complete filter state after ``step`` measurement updates."""

    agent: AgentBelief
    features: list  # per PA: list[FeatureBelief]
    noise: list  # per PA: NoiseBelief
    next_id: int = 0
    step: int = 0

    @property
    def n_pa(self) -> int:
        return len(self.features)

    def copy(self) -> "SlamBeliefs":
        return SlamBeliefs(self.agent.copy(), [[f.copy() for f in fs] for fs in self.features],
                           [n.copy() for n in self.noise], self.next_id, self.step)


def systematic_indices(weights: np.ndarray, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
    """Systematic resampling: one uniform offset, ``n`` evenly spaced pointers."""
    n = len(weights) if n is None else n
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    u = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cdf, u, side="right")


def roughen(states: np.ndarray, rng: np.random.Generator, k: float,
           max_pos_std: float = np.inf) -> np.ndarray:
    """Gordon-style roughening of resampled feature particles.

    Jitter std per dimension is ``k * spread * n^(-1/3)``; position jitter is
    additive and capped at ``max_pos_std``, intensity jitter acts on
    ``log gamma``. The cap matters for multimodal sets, whose spread says
    nothing about the width of each mode.
    """
    if k <= 0 or len(states) < 2:
        return states
    n = len(states)
    scale = k * n ** (-1.0 / 3.0)
    out = states.copy()
    pos_std = np.minimum(scale * np.ptp(states[:, :2], axis=0), max_pos_std)
    out[:, :2] += rng.standard_normal((n, 2)) * pos_std
    lg = np.log(np.maximum(states[:, 2], 1e-300))
    out[:, 2] = np.exp(lg + rng.standard_normal(n) * (scale * np.ptp(lg)))
    return out


def resample_systematic(belief, rng: np.random.Generator, n: Optional[int] = None, roughening: float = 0.0,
                        max_pos_std: float = np.inf):
    """Equal-weight copy of ``belief`` drawn by systematic resampling."""
    idx = systematic_indices(belief.weights, rng, n)
    m = len(idx)
    w = np.full(m, 1.0 / m)
    if isinstance(belief, AgentBelief):
        return AgentBelief(belief.states[idx], w)
    if isinstance(belief, NoiseBelief):
        return NoiseBelief(belief.sigma2[idx], w)
    states = roughen(belief.states[idx], rng, roughening, max_pos_std)
    return belief.copy(states=states, weights=w)


def maybe_resample(belief, rng: np.random.Generator, ess_frac: float, roughening: float = 0.0,
                   max_pos_std: float = np.inf):
    if ess(belief.weights) < ess_frac * len(belief.weights):
        return resample_systematic(belief, rng, roughening=roughening, max_pos_std=max_pos_std)
    return belief


def beliefs_to_dict(beliefs: SlamBeliefs, particles: bool = False) -> dict:
    """JSON-ready diagnostic summary; particle arrays only when ``particles``."""

    def arr(a):
        return np.asarray(a).tolist()

    out = {
        "step": beliefs.step,
        "agent_mean": arr(beliefs.agent.mean()),
        "agent_ess": ess(beliefs.agent.weights),
        "noise_mean": [n.mean() for n in beliefs.noise],
        "features": [
            [
                {
                    "pf_id": f.pf_id,
                    "existence": f.existence,
                    "position": arr(f.position_estimate()),
                    "gamma": float(f.weights @ f.gammas),
                    "origin_step": f.origin_step,
                    **({"states": arr(f.states), "weights": arr(f.weights)} if particles else {}),
                }
                for f in fs
            ]
            for fs in beliefs.features
        ],
    }
    if particles:
        out["agent_states"] = arr(beliefs.agent.states)
        out["agent_weights"] = arr(beliefs.agent.weights)
    return out


def dump_beliefs(beliefs: SlamBeliefs, path, particles: bool = False) -> None:
    with open(path, "w") as fh:
        json.dump(beliefs_to_dict(beliefs, particles), fh)
