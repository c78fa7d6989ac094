"""Localization and mapping error metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist


@dataclass
class RunLog:
    """Per-step record of one Monte Carlo run.

    ``declared[k][j]`` and ``truth_anchors[k][j]`` are (n, 2) arrays of
    feature positions for PA ``j`` at step ``k``.
    """

    true_pos: np.ndarray
    est_pos: np.ndarray
    declared: list = field(default_factory=list)
    truth_anchors: list = field(default_factory=list)
    run_index: int = 0
    seed: int = 0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.true_pos = np.asarray(self.true_pos, dtype=float).reshape(-1, 2)
        self.est_pos = np.asarray(self.est_pos, dtype=float).reshape(-1, 2)
        n = len(self.true_pos)
        if len(self.est_pos) != n:
            raise ValueError("true and estimated trajectories differ in length")
        for name in ("declared", "truth_anchors"):
            seq = getattr(self, name)
            if seq and len(seq) != n:
                raise ValueError(f"{name} has {len(seq)} steps, expected {n}")

    def __len__(self):
        return len(self.true_pos)

    @property
    def errors(self) -> np.ndarray:
        return np.linalg.norm(self.est_pos - self.true_pos, axis=1)


@dataclass(frozen=True)
class GospaParams:
    c: float = 2.0
    p: float = 1.0
    alpha: int = 2

    def __post_init__(self):
        if not self.c > 0 or self.p < 1:
            raise ValueError("need c > 0 and p >= 1")
        if self.alpha != 2:
            raise ValueError("only alpha = 2 is supported")


class GospaResult(NamedTuple):
    total: float
    localization: float
    missed: int
    false: int


def rmse_series(logs: Sequence[RunLog]) -> np.ndarray:
    """Rows of ``(k, rmse)`` with k starting at 1."""
    if not logs:
        raise ValueError("no run logs")
    lengths = {len(lg) for lg in logs}
    if len(lengths) != 1:
        raise ValueError(f"run logs differ in length: {sorted(lengths)}")
    sq = np.stack([lg.errors ** 2 for lg in logs])
    rmse = np.sqrt(sq.mean(axis=0))
    return np.column_stack([np.arange(1, rmse.size + 1), rmse])


def error_cdf(logs: Sequence[RunLog]) -> np.ndarray:
    """Empirical CDF of all per-step, per-run position errors as ``(error, fraction)`` rows."""
    err = np.sort(np.concatenate([lg.errors for lg in logs]))
    if err.size == 0:
        raise ValueError("no errors to summarise")
    frac = np.arange(1, err.size + 1) / err.size
    return np.column_stack([err, frac])


def gospa(estimates, truth, params: GospaParams = GospaParams()) -> GospaResult:
    """GOSPA distance (alpha = 2) with its localization / missed / false split."""
    X = np.asarray(estimates, dtype=float).reshape(-1, 2)
    Y = np.asarray(truth, dtype=float).reshape(-1, 2)
    c, p = params.c, params.p
    n, m = len(X), len(Y)
    if n == 0 or m == 0:
        total = (c ** p / 2 * (n + m)) ** (1 / p)
        return GospaResult(float(total), 0.0, m, n)
    d = cdist(X, Y)
    cost = np.minimum(d, c) ** p
    # padded square problem: dummy rows/cols cost c^p/2 (unassigned element)
    size = n + m
    big = np.full((size, size), c ** p / 2)
    big[:n, :m] = cost
    big[n:, m:] = 0.0
    rows, cols = linear_sum_assignment(big)
    loc = 0.0
    paired = 0
    for i, j in zip(rows, cols):
        if i < n and j < m and d[i, j] < c:
            loc += d[i, j] ** p
            paired += 1
    missed = m - paired
    false = n - paired
    total = (loc + c ** p / 2 * (missed + false)) ** (1 / p)
    return GospaResult(float(total), float(loc ** (1 / p)), int(missed), int(false))
