"""One filter step: predict, spawn births, update, resample, declare, estimate."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .beliefs import (AgentBelief, DegenerateUpdateError, FeatureBelief, NoiseBelief, SlamBeliefs,
                      maybe_resample, resample_systematic)
from .updates import (Models, _base_covariance, feature_columns, kappa_update, load_dense,
                      median_bin_power, noise_logliks, normalize_log, predict_agent, predict_feature,
                      predict_noise, refresh_birth_angles, spawn_births, thin_agents, update_agent, declare_and_prune, estimate)
from ..signal_model import NotPositiveDefiniteError, cholesky_jitter

log = logging.getLogger(__name__)


class StepError(RuntimeError):
    pass


@dataclass
class InitConfig:
    """Prior at the first step: Gaussian agent, one PF per PA, log-uniform noise."""

    sigma_pos: float = 0.1
    sigma_vel: float = 0.05
    noise_prior: tuple = (1e-3, 1.0)  # times the median per-bin power of the first snapshot
    pa_gamma_prior: tuple = (1e-3, 1e1)  # idem


@dataclass
class StepEstimate:
    step: int
    agent_pos: np.ndarray
    declared: list  # per PA: list of (pf_id, position, existence)
    sigma2: list  # per PA
    n_pf: list  # per PA, after pruning
    degenerate: bool = False


def _log_uniform(rng, lo, hi, n):
    return np.exp(rng.uniform(np.log(lo), np.log(hi), n))


def init_beliefs(start_state, pa_positions, first_snapshots: Sequence, models: Models, rng,
                 init: InitConfig = InitConfig()) -> SlamBeliefs:
    hy = models.hypers
    start_state = np.asarray(start_state, dtype=float)
    sd = np.array([init.sigma_pos] * 2 + [init.sigma_vel] * 2)
    agent = AgentBelief(start_state + rng.standard_normal((hy.P_a, 4)) * sd)
    features, noise = [], []
    next_id = 0
    for j, pa in enumerate(np.atleast_2d(pa_positions)):
        scale = median_bin_power(first_snapshots[j])
        g = _log_uniform(rng, init.pa_gamma_prior[0] * scale, init.pa_gamma_prior[1] * scale, hy.P_f)
        states = np.column_stack([np.repeat(np.asarray(pa, float)[None], hy.P_f, axis=0), g])
        features.append([FeatureBelief(next_id, j, 1.0, states, origin_step=0)])
        next_id += 1
        s2 = _log_uniform(rng, init.noise_prior[0] * scale, init.noise_prior[1] * scale, hy.P_sigma)
        noise.append(NoiseBelief(s2))
    return SlamBeliefs(agent, features, noise, next_id=next_id, step=0)


def predict(beliefs: SlamBeliefs, models: Models, rng) -> SlamBeliefs:
    tp = models.transition
    return SlamBeliefs(
        predict_agent(beliefs.agent, tp, rng),
        [[predict_feature(f, tp, rng) for f in fs] for fs in beliefs.features],
        [predict_noise(n, tp, rng) for n in beliefs.noise],
        beliefs.next_id,
        beliefs.step,
    )


def _update_features_pa(legacy: list, births: list, agent: AgentBelief, noise: NoiseBelief, z,
                        models: Models, rng):
    """Measurement update of all PFs and the noise belief of one PA.

    Legacy PFs are updated jointly against the predicted beliefs of all other
    PFs. New PFs are then processed greedily in order of decreasing likelihood
    ratio, each one seeing the updated beliefs of the PFs accepted before it.
    """
    hy = models.hypers
    pulse = models.pulse
    thin = thin_agents(agent, hy.agent_thin, rng)
    xbar = thin.mean(axis=0)
    at = thin if hy.kappa_agent_average else xbar
    s2 = noise.mean()
    eye = np.eye(pulse.M, dtype=complex)

    leg_cols = feature_columns(legacy, thin, pulse) if legacy else np.zeros((0, pulse.M), complex)
    # new PFs carry no information back to the agent, so their loads are taken at xbar
    new_cols = feature_columns(births, xbar[None], pulse) if births else np.zeros((0, pulse.M), complex)
    total_cols = leg_cols.sum(axis=0) + new_cols.sum(axis=0)
    C_total = s2 * eye + load_dense(total_cols, pulse)

    # noise message uses predicted beliefs only
    S = C_total - s2 * eye
    logw = np.log(np.maximum(noise.weights, 1e-300)) + noise_logliks(noise.sigma2, S, z)
    try:
        noise_post = NoiseBelief(noise.sigma2, normalize_log(logw))
    except DegenerateUpdateError:
        log.warning("degenerate noise update; keeping prediction")
        noise_post = noise

    def base_for(cols_self, others_fn):
        C = C_total_now - load_dense(cols_self, pulse)
        try:
            return C, cholesky_jitter(C)
        except NotPositiveDefiniteError:
            C = _base_covariance(others_fn(), thin, s2, pulse)
            return C, cholesky_jitter(C)

    C_total_now = C_total
    updated_legacy = []
    for i, f in enumerate(legacy):
        C_base, L = base_for(leg_cols[i], lambda: legacy[:i] + legacy[i + 1:] + births)
        res = kappa_update(f, C_base, at, z, pulse, chol=L)
        updated_legacy.append(f.copy(weights=res.weights, existence=res.existence))

    if not births:
        return updated_legacy, [], noise_post, xbar

    if hy.sequential_births and updated_legacy:
        post_cols = feature_columns(updated_legacy, thin, pulse).sum(axis=0)
        C_total_now = s2 * eye + load_dense(post_cols + new_cols.sum(axis=0), pulse)

    def evaluate(idx):
        out = {}
        for b in idx:
            others = lambda: updated_legacy + [births[k] for k in range(len(births)) if k != b]
            C_base, L = base_for(new_cols[b], others)
            out[b] = kappa_update(births[b], C_base, at, z, pulse, chol=L)
        return out

    results = evaluate(range(len(births)))
    if hy.sequential_births:
        pending = set(range(len(births)))
        while pending:
            best = max(pending, key=lambda b: (results[b].log_lr, -b))
            pending.discard(best)
            if results[best].existence < hy.T_pru:
                break
            # replace the accepted PF's prior load by its posterior load
            acc = births[best].copy(weights=results[best].weights, existence=results[best].existence)
            delta = feature_columns([acc], xbar[None], pulse)[0] - new_cols[best]
            C_total_now = C_total_now + load_dense(delta, pulse)
            live = [b for b in pending if results[b].existence >= hy.T_pru]
            results.update(evaluate(sorted(live)))
    updated_births = [b.copy(weights=results[i].weights, existence=results[i].existence)
                      for i, b in enumerate(births)]
    return updated_legacy, updated_births, noise_post, xbar


def step(beliefs: SlamBeliefs, snapshots: Sequence, models: Models, rng,
         do_predict: bool = True) -> tuple[SlamBeliefs, StepEstimate]:
    """Advance the filter by one time step using one snapshot per PA."""
    hy = models.hypers
    k = beliefs.step + 1
    if len(snapshots) != beliefs.n_pa:
        raise StepError(f"step {k}: got {len(snapshots)} snapshots for {beliefs.n_pa} PAs")
    pred = predict(beliefs, models, rng) if do_predict else beliefs.copy()

    next_id = pred.next_id
    births = []
    for j, z in enumerate(snapshots):
        births.append(spawn_births(pred.agent, z, j, models, rng, next_id, k))
        next_id += models.pulse.M

    degenerate = False
    try:
        # a diffuse PF (e.g. a fresh range ring) has a moment-matched load that
        # favours spurious agent displacements; it enters at the agent mean
        sharp, fixed = [], []
        for fs, bs in zip(pred.features, births):
            spread = [f.position_spread() for f in fs]
            sharp.append([f for f, s in zip(fs, spread) if s <= hy.agent_info_spread])
            fixed.append([f for f, s in zip(fs, spread) if s > hy.agent_info_spread] + bs)
        agent = update_agent(pred.agent, sharp, pred.noise, snapshots, models.pulse,
                             fixed_features_per_pa=fixed, max_points=hy.agent_load_points)
    except DegenerateUpdateError:
        log.warning("step %d: degenerate agent update; keeping prediction", k)
        agent, degenerate = pred.agent, True

    features, noise = [], []
    for j, z in enumerate(snapshots):
        try:
            leg, new, nz, xbar = _update_features_pa(pred.features[j], births[j], pred.agent, pred.noise[j],
                                               z, models, rng)
        except (DegenerateUpdateError, NotPositiveDefiniteError) as exc:
            raise StepError(f"step {k}, PA {j}: {exc}") from exc
        # births were oversampled; survivors are brought down to P_f
        new = [resample_systematic(b, rng, n=hy.P_f) for b in new if b.existence >= hy.T_pru]
        for b in new:
            b.states = refresh_birth_angles(b.states, xbar, models.bounds, rng, hy.roughening)
        leg = [maybe_resample(f, rng, hy.ess_frac, hy.roughening, hy.roughening_max_pos) for f in leg]
        features.append(leg + new)
        noise.append(maybe_resample(nz, rng, hy.ess_frac))
    agent = maybe_resample(agent, rng, hy.ess_frac)

    declared_all, surviving_all = [], []
    for fs in features:
        declared, surviving = declare_and_prune(fs, hy)
        for f in surviving:
            f.is_new = False
        declared_all.append(declared)
        surviving_all.append(surviving)

    agent_pos, _ = estimate(agent)
    est = StepEstimate(
        step=k,
        agent_pos=agent_pos,
        declared=[[(f.pf_id, f.position_estimate(), f.existence) for f in d] for d in declared_all],
        sigma2=[n.mean() for n in noise],
        n_pf=[len(s) for s in surviving_all],
        degenerate=degenerate,
    )
    return SlamBeliefs(agent, surviving_all, noise, next_id=next_id, step=k), est


def run_filter(snapshots: np.ndarray, start_state, pa_positions, models: Models, rng,
               init: InitConfig = InitConfig(), n_steps: Optional[int] = None, callback=None):
    """Run the filter over a ``K x J x M`` snapshot array; returns per-step estimates."""
    K = snapshots.shape[0] if n_steps is None else min(n_steps, snapshots.shape[0])
    beliefs = init_beliefs(start_state, pa_positions, snapshots[0], models, rng, init)
    out = []
    for k in range(K):
        beliefs, est = step(beliefs, list(snapshots[k]), models, rng, do_predict=k > 0)
        out.append(est)
        if callback is not None:
            callback(beliefs, est)
    return out, beliefs
