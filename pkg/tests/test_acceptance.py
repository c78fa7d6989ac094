"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import math
import os
import time

import numpy as np
import pytest

from directslam.dynamics import TransitionParams, feature_transition_sample, noise_var_transition_sample
from directslam.harness import load_config
from directslam.harness.cli import main
from directslam.harness.runner import execute, load_logs
from directslam.inference import FeatureBelief, NoiseBelief, agent_message_covariance, kappa_update
from directslam.metrics import GospaParams, gospa
from directslam.scene import SPEED_OF_LIGHT, AnchorSet, FloorPlan, Segment, mirror_point, specular_path
from directslam.signal_model import (ModelCovariance, PathAmplitudeModel, PulseSpec, crandn,
                                     loglik_rank_one_delta, model_covariance, steering_vector,
                                     synthesize_snapshot)
from directslam.scene import PropagationPath
from oracles import dense_loglik, gospa_bruteforce

PULSE = PulseSpec(41, 10e6)


@pytest.fixture
def report(capsys):
    def _report(n, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {title}" + (f" ({detail})" if detail else ""))
        assert ok, f"criterion {n} failed: {detail}"
    return _report


def test_c01_geometry_oracle(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst_len = worst_inv = 0.0
    n_paths = 0
    for _ in range(10_000):
        a, b = rng.uniform(-10, 10, (2, 2))
        while np.allclose(a, b):
            b = rng.uniform(-10, 10, 2)
        s = Segment(a, b, 1)
        plan = FloorPlan((s,), (-10, -10, 10, 10))
        agent, pa = rng.uniform(-10, 10, (2, 2))
        va = mirror_point(pa, s)
        worst_inv = max(worst_inv, float(np.abs(mirror_point(va, s) - pa).max()))
        path = specular_path(agent, pa, s, plan)
        if path is None:
            continue
        n_paths += 1
        rp = np.array(path.reflection_point)
        lhs = np.linalg.norm(agent - rp) + np.linalg.norm(rp - pa)
        worst_len = max(worst_len, abs(lhs - np.linalg.norm(agent - va)),
                        abs(path.delay * SPEED_OF_LIGHT - np.linalg.norm(agent - va)))
    dt = time.perf_counter() - t0
    ok = worst_len <= 1e-9 and worst_inv <= 1e-12 and dt < 5.0 and n_paths > 1000
    report(1, "geometry oracle", ok,
           f"{n_paths} bounce paths, max length error {worst_len:.2e} m, max involution error "
           f"{worst_inv:.2e} m, {dt:.2f} s")


def test_c02_swerling_statistics(report):
    rng = np.random.default_rng(102)
    amp = PathAmplitudeModel()
    paths = [PropagationPath((0.0, 0.0), 4.0 / SPEED_OF_LIGHT, 0, 0),
             PropagationPath((0.0, 0.0), 6.5 / SPEED_OF_LIGHT, 1, 0, 1)]
    gam = [3.0, 1.5]
    sigma2 = 0.7
    n = 100_000
    t0 = time.perf_counter()
    Z = np.array([synthesize_snapshot(paths, amp, sigma2, PULSE, rng, gammas=gam).z for _ in range(n)])
    dt = time.perf_counter() - t0
    C = model_covariance((0.0, 0.0), [((4.0, 0.0), gam[0], True), ((6.5, 0.0), gam[1], True)], sigma2,
                         PULSE).C
    S = Z.T @ Z.conj() / n
    # for circular Gaussian z, Var Re(z_i z_j*) = (C_ii C_jj + Re C_ij^2) / 2, Im likewise with minus
    d = np.real(np.diag(C))
    cc = np.outer(d, d)
    se_re = np.sqrt((cc + np.real(C ** 2)) / 2 / n)
    se_im = np.sqrt(np.maximum(cc - np.real(C ** 2), 1e-30) / 2 / n)
    z_re = np.abs(S.real - C.real) / se_re
    z_im = np.abs(S.imag - C.imag) / se_im
    off = ~np.eye(41, dtype=bool)
    worst = max(z_re.max(), z_im[off].max())
    ok = worst <= 5.0 and dt < 30.0
    report(2, "Swerling-1 statistics", ok, f"worst deviation {worst:.2f} SE over 41x41 entries, {dt:.1f} s")


def test_c03_rank_one_vs_dense(report):
    rng = np.random.default_rng(103)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(1000):
        C = rng.uniform(0.2, 5.0) * np.eye(41, dtype=complex)
        for _ in range(rng.integers(0, 4)):
            h = steering_vector(rng.uniform(0, 1e-7), PULSE)
            C += rng.uniform(0, 100) * np.outer(h, h.conj())
        u = steering_vector(rng.uniform(0, 1e-7), PULSE) if i % 2 else (
            rng.standard_normal(41) + 1j * rng.standard_normal(41))
        g = rng.uniform(0, 50)
        z = crandn(rng, 41, rng.uniform(0.1, 10))
        uu = g * np.outer(u, u.conj())
        if i % 4 < 2:
            val = loglik_rank_one_delta(z, ModelCovariance(C), u, g, +1)
            ref = dense_loglik(z, C + uu)
        else:
            val = loglik_rank_one_delta(z, ModelCovariance(C + uu), u, g, -1)
            ref = dense_loglik(z, C)
        worst = max(worst, abs(val - ref))
    dt = time.perf_counter() - t0
    report(3, "rank-one update/downdate vs dense", worst <= 1e-9 and dt < 10.0,
           f"max |difference| {worst:.2e} over 1000 cases, {dt:.2f} s")


def test_c04_moment_matching(report):
    rng = np.random.default_rng(104)
    agent = np.array([0.4, -0.3])
    sigma2 = 0.8
    feats = []
    for n_part, ex in ((20, 0.9), (15, 0.5), (8, 0.25)):
        st = np.column_stack([rng.uniform(-3, 3, (n_part, 2)), rng.uniform(0.5, 5.0, n_part)])
        feats.append(FeatureBelief(len(feats), 0, ex, st, rng.dirichlet(np.ones(n_part))))
    C_iota = agent_message_covariance(agent, feats, NoiseBelief(np.array([sigma2])), PULSE)
    n = 100_000
    Z = crandn(rng, (n, 41), sigma2)
    for f in feats:
        r = rng.random(n) < f.existence
        idx = rng.choice(len(f), n, p=f.weights)
        tau = np.linalg.norm(f.positions[idx] - agent, axis=1) / SPEED_OF_LIGHT
        rho = crandn(rng, n, f.gammas[idx]) * r
        Z += rho[:, None] * steering_vector(tau, PULSE)
    prod = Z[:, :, None] * Z.conj()[:, None, :]
    S = prod.mean(axis=0)
    se_re = prod.real.std(axis=0) / math.sqrt(n)
    se_im = np.maximum(prod.imag.std(axis=0), 1e-30) / math.sqrt(n)
    off = ~np.eye(41, dtype=bool)
    worst = max((np.abs(S.real - C_iota.real) / se_re).max(),
                (np.abs(S.imag - C_iota.imag) / se_im)[off].max())
    report(4, "moment-matched agent message covariance", worst <= 5.0,
           f"worst deviation {worst:.2f} SE over 41x41 entries, 3 features, 1e5 draws")


def test_c05_existence_bayes(report):
    rng = np.random.default_rng(105)
    worst = 0.0
    for _ in range(1000):
        agent = rng.uniform(-2, 2, 2)
        pos = rng.uniform(-5, 5, 2)
        g = 10 ** rng.uniform(-1, 1.5)
        p = rng.uniform(0.01, 0.99)
        f = FeatureBelief(0, 0, p, np.array([[pos[0], pos[1], g]]))
        C_base = rng.uniform(0.5, 3) * np.eye(41, dtype=complex)
        h_other = steering_vector(rng.uniform(0, 5e-8), PULSE)
        C_base += rng.uniform(0, 10) * np.outer(h_other, h_other.conj())
        z = crandn(rng, 41, 1.0) * rng.uniform(0.5, 2)
        res = kappa_update(f, C_base, agent, z, PULSE)
        h = steering_vector(np.linalg.norm(pos - agent) / SPEED_OF_LIGHT, PULSE)
        l1 = dense_loglik(z, C_base + g * np.outer(h, h.conj()))
        l0 = dense_loglik(z, C_base)
        # p e^l1 / (p e^l1 + (1-p) e^l0) with a shared offset
        m = max(l0, l1)
        num = p * math.exp(l1 - m)
        expect = num / (num + (1 - p) * math.exp(l0 - m))
        worst = max(worst, abs(res.existence - expect))
    report(5, "existence update equals Bernoulli Bayes", worst <= 1e-12,
           f"max |difference| {worst:.2e} over 1000 fuzz cases")


def test_c06_gospa_oracle(report):
    rng = np.random.default_rng(106)
    worst = 0.0
    for i in range(1000):
        n, m = divmod(i % 25, 5)
        X = rng.uniform(-2, 2, (n, 2))
        Y = rng.uniform(-2, 2, (m, 2))
        worst = max(worst, abs(gospa(X, Y, GospaParams(2.0, 1.0)).total - gospa_bruteforce(X, Y, 2.0, 1.0)))
    miss = gospa(np.zeros((0, 2)), [(1.0, 1.0)], GospaParams(2.0, 1.0)).total
    report(6, "GOSPA vs exhaustive enumeration", worst <= 1e-12 and miss == 1.0,
           f"max |difference| {worst:.2e} over 1000 instances up to 4x4, singleton miss {miss}")


def test_c07_transition_statistics(report):
    rng = np.random.default_rng(107)
    tp = TransitionParams()
    _, r = feature_transition_sample(np.zeros((1_000_000, 3)), np.ones(1_000_000, bool), tp, rng)
    freq = r.mean()
    s = noise_var_transition_sample(np.full(1_000_000, 10.0), tp.c_eps, rng)
    one = s.mean()
    for _ in range(9):
        s = noise_var_transition_sample(s, tp.c_eps, rng)
    ten = s.mean()
    ok = 0.9987 <= freq <= 0.9993 and abs(one / 10 - 1) <= 0.01 and abs(ten / 10 - 1) <= 0.01
    report(7, "transition statistics", ok,
           f"survival {freq:.5f}, Gamma mean after 1 step {one:.4f}, after 10 steps {ten:.4f} (start 10)")


def test_c08_end_to_end_desk(report, tmp_path):
    cfg = load_config("desk")
    assert cfg.scenario == "single_wall" and cfg.n_runs == 20
    plan, anchors, traj = cfg.load_scene()
    assert len(traj) == 50 and len(anchors) == 1
    t0 = time.perf_counter()
    execute(cfg, tmp_path, jobs=int(os.environ.get("DIRECTSLAM_JOBS", "1")))
    dt = time.perf_counter() - t0
    logs = load_logs(tmp_path)
    pa = anchors.pa_positions[0]
    va = mirror_point(pa, plan.segments[0])
    tail = np.concatenate([lg.errors[-25:] for lg in logs])
    med = float(np.median(tail))
    found = []
    for lg in logs:
        dec = lg.declared[-1][0]
        hit = lambda p: len(dec) > 0 and np.min(np.linalg.norm(dec - p, axis=1)) <= 0.5
        found.append(hit(pa) and hit(va))
    frac = float(np.mean(found))
    worst_seed = max(float(np.median(lg.errors[-25:])) for lg in logs)
    ok = med <= 0.75 and frac >= 0.8 and dt <= 600
    report(8, "end-to-end single-wall scene", ok,
           f"median error last 25 steps {med:.3f} m (worst seed {worst_seed:.3f} m), PA and VA within 0.5 m "
           f"in {frac:.0%} of 20 seeds, {dt:.0f} s")


@pytest.mark.paper_scale
def test_c09_paper_scale_smoke(report, tmp_path):
    cfg = load_config("paper")
    t0 = time.perf_counter()
    rc = main(["full", "--config", "paper", "--output", str(tmp_path),
               "--jobs", os.environ.get("DIRECTSLAM_JOBS", "1")])
    dt = time.perf_counter() - t0
    logs = load_logs(tmp_path)
    csvs = all((tmp_path / f).exists() for f in ("rmse.csv", "cdf.csv", "gospa_pa1.csv", "gospa_pa2.csv"))
    bounded = np.mean([lg.errors.max() < 5.0 for lg in logs])
    ok = rc == 0 and csvs and len(logs) == cfg.n_runs and all(len(lg) == 679 for lg in logs) and bounded >= 0.95
    report(9, "paper-scale smoke run", ok, f"{len(logs)} runs, {bounded:.0%} with error < 5 m throughout, "
                                           f"{dt / 3600:.1f} h")


def test_c10_determinism(report, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("scenario: single_wall\nn_runs: 3\nsteps: 6\nbase_seed: 11\n")
    outs = []
    for name, jobs in (("a", "1"), ("b", "1"), ("c", "2")):
        assert main(["full", "--config", str(cfg), "--output", str(tmp_path / name), "--jobs", jobs]) == 0
        outs.append(tmp_path / name)
    files = ("rmse.csv", "cdf.csv", "gospa_pa1.csv")
    same = all((outs[0] / f).read_bytes() == (o / f).read_bytes() for o in outs[1:] for f in files)
    report(10, "byte-identical metric CSVs across invocations and --jobs", same,
           "3 runs, --jobs 1, 1 and 2")
