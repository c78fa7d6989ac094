"""Monte Carlo orchestration: simulate, filter, evaluate, persist.

Output directory layout::

    config.yaml              resolved config echo
    seeds.csv                run,seed
    snapshots/run_NNNN.dsnap K x J x M snapshots (see signal_model.save_snapshots)
    truth/run_NNNN.json      true paths, intensities and noise variance per step
    logs/run_NNNN.json       per-step estimates (RunLog)
    rmse.csv, cdf.csv, gospa_pa<J>.csv

Runs are independent; each derives its random streams from
``run_seed(base_seed, run_index)`` only, so results do not depend on how runs
are scheduled across worker processes.
"""
from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from multiprocessing import get_context
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..inference import run_filter
from ..metrics import GospaParams, RunLog, error_cdf, gospa, rmse_series
from ..scene import enumerate_paths, visible_anchor_positions
from ..signal_model import load_snapshots, path_intensities, save_snapshots, synthesize_snapshot
from .config import RunConfig

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1


class DataError(RuntimeError):
    """Missing, corrupt or mismatched data files (CLI exit code 3)."""


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def run_seed(base_seed: int, run_index: int) -> int:
    """Per-run seed: ``splitmix64(splitmix64(base_seed) ^ run_index)``."""
    return splitmix64(splitmix64(base_seed & MASK64) ^ run_index)


def _rng(seed: int, stream: int) -> np.random.Generator:
    # stream 0 drives the channel simulation, stream 1 the filter
    return np.random.default_rng([seed & 0xFFFFFFFF, seed >> 32, stream])


def atomic_write(path: Path, data) -> None:
    """Write ``data`` (str or bytes) to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _name(run_index: int, ext: str) -> str:
    return f"run_{run_index:04d}.{ext}"


# --- simulation -------------------------------------------------------------

def simulate_run(cfg: RunConfig, scene, run_index: int):
    """Snapshots ``(K, J, M)`` and the ground-truth record of one run."""
    plan, anchors, traj = scene
    pulse = cfg.pulse.build()
    amp = cfg.amplitude.build()
    seed = run_seed(cfg.base_seed, run_index)
    rng = _rng(seed, 0)
    K, J = len(traj), len(anchors)
    Z = np.empty((K, J, pulse.M), dtype=complex)
    steps = []
    for k, p in enumerate(traj.positions):
        per_pa = []
        for j in range(J):
            paths = enumerate_paths(p, j, plan, anchors)
            Z[k, j] = synthesize_snapshot(paths, amp, cfg.amplitude.sigma2, pulse, rng).z
            gam = path_intensities(paths, amp)
            per_pa.append([{"anchor": list(map(float, q.anchor_pos)), "delay": q.delay, "bounce": q.bounce,
                            "segment_id": q.segment_id, "gamma": float(g)} for q, g in zip(paths, gam)])
        steps.append({"k": k + 1, "agent": list(map(float, p)), "paths": per_pa})
    truth = {"run": run_index, "seed": seed, "sigma2": cfg.amplitude.sigma2, "steps": steps}
    return Z, truth


def snapshot_meta(cfg: RunConfig, run_index: int) -> dict:
    pulse = cfg.pulse.build()
    return {"M": pulse.M, "delta": pulse.delta, "bandwidth": pulse.bandwidth,
            "seed": run_seed(cfg.base_seed, run_index), "run": run_index}


def write_simulation(cfg: RunConfig, scene, run_index: int, out: Path) -> None:
    Z, truth = simulate_run(cfg, scene, run_index)
    atomic_write(out / "truth" / _name(run_index, "json"), json.dumps(truth))
    path = out / "snapshots" / _name(run_index, "dsnap")
    tmp = path.with_name(f".{path.name}.tmp")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_snapshots(tmp, Z, snapshot_meta(cfg, run_index))
    os.replace(tmp, path)


def read_snapshots(cfg: RunConfig, run_index: int, out: Path) -> np.ndarray:
    path = out / "snapshots" / _name(run_index, "dsnap")
    try:
        Z, meta = load_snapshots(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"run {run_index}: {exc}") from exc
    pulse = cfg.pulse.build()
    if meta.get("M") != pulse.M or meta.get("delta") != pulse.delta or Z.shape[2] != pulse.M:
        raise DataError(f"run {run_index}: snapshot metadata (M={meta.get('M')}, delta={meta.get('delta')}) "
                        f"does not match the config (M={pulse.M}, delta={pulse.delta})")
    return Z


# --- filtering ----------------------------------------------------------------

def filter_run(cfg: RunConfig, scene, run_index: int, Z: np.ndarray, callback=None) -> RunLog:
    """Run the filter over one run's snapshots and collect its RunLog."""
    plan, anchors, traj = scene
    K = min(len(traj), len(Z))
    if Z.shape[1] != len(anchors):
        raise DataError(f"run {run_index}: snapshots have {Z.shape[1]} PAs, scenario has {len(anchors)}")
    pos = traj.positions
    v0 = pos[1] - pos[0] if len(pos) > 1 else np.zeros(2)
    start = np.r_[pos[0], v0]
    seed = run_seed(cfg.base_seed, run_index)
    models = cfg.models(plan.bounds)
    t0 = time.perf_counter()
    ests, _ = run_filter(Z[:K], start, anchors.pa_positions, models, _rng(seed, 1), init=cfg.init,
                         callback=callback)
    elapsed = time.perf_counter() - t0
    gated = cfg.metrics.visibility_gated
    declared, truth_anchors, existence, ids, sigma2 = [], [], [], [], []
    for k, e in enumerate(ests):
        declared.append([np.array([p for _, p, _ in d]).reshape(-1, 2) for d in e.declared])
        existence.append([[x for _, _, x in d] for d in e.declared])
        ids.append([[i for i, _, _ in d] for d in e.declared])
        sigma2.append(list(e.sigma2))
        truth_anchors.append([visible_anchor_positions(pos[k], j, plan, anchors, gated)
                              for j in range(len(anchors))])
    extras = {"existence": existence, "pf_ids": ids, "sigma2": sigma2,
              "degenerate_steps": [e.step for e in ests if e.degenerate]}
    log.info("run %d: %d steps in %.1f s", run_index, K, elapsed)
    return RunLog(pos[:K], np.array([e.agent_pos for e in ests]), declared, truth_anchors,
                  run_index=run_index, seed=seed, extras=extras)


def runlog_to_dict(rl: RunLog) -> dict:
    return {
        "run": rl.run_index,
        "seed": rl.seed,
        "true_pos": rl.true_pos.tolist(),
        "est_pos": rl.est_pos.tolist(),
        "declared": [[np.asarray(a).tolist() for a in step] for step in rl.declared],
        "truth_anchors": [[np.asarray(a).tolist() for a in step] for step in rl.truth_anchors],
        **rl.extras,
    }


def runlog_from_dict(d: dict) -> RunLog:
    try:
        extras = {k: v for k, v in d.items()
                  if k not in ("run", "seed", "true_pos", "est_pos", "declared", "truth_anchors")}
        arrs = lambda steps: [[np.asarray(a, dtype=float).reshape(-1, 2) for a in s] for s in steps]
        return RunLog(d["true_pos"], d["est_pos"], arrs(d["declared"]), arrs(d["truth_anchors"]),
                      run_index=d["run"], seed=d["seed"], extras=extras)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed run log: {exc}") from exc


def read_runlog(path: Path) -> RunLog:
    try:
        return runlog_from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from exc


# --- evaluation ---------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _csv(header: Sequence[str], rows) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def gospa_series(logs: Sequence[RunLog], pa_index: int, params: GospaParams) -> list:
    """Per-step GOSPA components for one PA, averaged over runs."""
    K = len(logs[0])
    rows = []
    for k in range(K):
        res = np.array([gospa(lg.declared[k][pa_index], lg.truth_anchors[k][pa_index], params) for lg in logs],
                       dtype=float)
        m = res.mean(axis=0)
        rows.append((k + 1, *map(float, m)))
    return rows


def evaluate(logs: Sequence[RunLog], out: Path, params: GospaParams = GospaParams()) -> list[Path]:
    """Write rmse.csv, cdf.csv and one gospa_pa<J>.csv per PA; returns the paths."""
    if not logs:
        raise DataError("no run logs to evaluate")
    logs = sorted(logs, key=lambda lg: lg.run_index)
    written = []
    rm = rmse_series(logs)
    atomic_write(out / "rmse.csv", _csv(("k", "rmse"), ((int(k), float(r)) for k, r in rm)))
    written.append(out / "rmse.csv")
    cdf = error_cdf(logs)
    atomic_write(out / "cdf.csv", _csv(("error", "fraction"), ((float(e), float(f)) for e, f in cdf)))
    written.append(out / "cdf.csv")
    n_pa = len(logs[0].declared[0]) if logs[0].declared else 0
    for j in range(n_pa):
        path = out / f"gospa_pa{j + 1}.csv"
        atomic_write(path, _csv(("k", "total", "loc", "missed", "false"), gospa_series(logs, j, params)))
        written.append(path)
    return written


def gospa_params(cfg: RunConfig) -> GospaParams:
    return GospaParams(cfg.metrics.gospa_c, cfg.metrics.gospa_p)


# --- orchestration --------------------------------------------------------------

def write_run_header(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "config.yaml", cfg.dump())
    rows = [(i, run_seed(cfg.base_seed, i)) for i in range(cfg.n_runs)]
    atomic_write(out / "seeds.csv", _csv(("run", "seed"), rows))


def _job(cfg: RunConfig, run_index: int, out: Path, simulate: bool, run: bool, resume: bool):
    logging.getLogger().setLevel(logging.WARNING)
    scene = cfg.load_scene()
    log_path = out / "logs" / _name(run_index, "json")
    snap_path = out / "snapshots" / _name(run_index, "dsnap")
    if resume and (log_path.exists() if run else snap_path.exists()):
        return run_index, "skipped"
    if simulate and not (resume and snap_path.exists()):
        write_simulation(cfg, scene, run_index, out)
    if run:
        rl = filter_run(cfg, scene, run_index, read_snapshots(cfg, run_index, out))
        atomic_write(log_path, json.dumps(runlog_to_dict(rl)))
    return run_index, "done"


def execute(cfg: RunConfig, out: Path, simulate: bool = True, run: bool = True, jobs: int = 1,
            resume: bool = False, runs: Optional[Sequence[int]] = None) -> list:
    """Simulate and/or filter the requested runs, ``jobs`` at a time.

    Failures are collected and re-raised together as a DataError naming the
    run indices, after all other runs have finished.
    """
    out = Path(out)
    runs = list(range(cfg.n_runs)) if runs is None else list(runs)
    results, errors = [], []
    if jobs <= 1 or len(runs) <= 1:
        for i in runs:
            try:
                results.append(_job(cfg, i, out, simulate, run, resume))
            except Exception as exc:  # noqa: BLE001 - aggregated below
                errors.append((i, exc))
    else:
        with ProcessPoolExecutor(max_workers=jobs, mp_context=get_context("spawn")) as pool:
            futs = {i: pool.submit(_job, cfg, i, out, simulate, run, resume) for i in runs}
            for i, fut in futs.items():
                try:
                    results.append(fut.result())
                except Exception as exc:  # noqa: BLE001
                    errors.append((i, exc))
    if errors:
        msg = "; ".join(f"run {i}: {type(e).__name__}: {e}" for i, e in errors)
        raise DataError(f"{len(errors)} run(s) failed: {msg}")
    return results


def load_logs(out: Path, n_runs: Optional[int] = None) -> list[RunLog]:
    files = sorted((Path(out) / "logs").glob("run_*.json"))
    if n_runs is not None:
        files = [f for f in files if int(f.stem.split("_")[1]) < n_runs]
    if not files:
        raise DataError(f"{out}: no run logs found")
    return [read_runlog(f) for f in files]
