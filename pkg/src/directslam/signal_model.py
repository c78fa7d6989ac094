"""Frequency-domain snapshot model and complex-Gaussian likelihoods.

A snapshot is ``z = sum_l rho_l h(tau_l) + eps`` with Swerling-1 amplitudes
``rho_l ~ CN(0, gamma_l)`` and white noise ``eps ~ CN(0, sigma2 I)``, so that
``z ~ CN(0, C)`` with ``C = sigma2 I + sum_l gamma_l h_l h_l^H``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .scene import SPEED_OF_LIGHT, PropagationPath


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class PulseSpec:
    """Sampled transmit spectrum on ``M`` bins symmetric about DC."""

    M: int
    delta: float
    h_spectrum: np.ndarray = None

    def __post_init__(self):
        if self.M < 3 or self.M % 2 == 0:
            raise ValueError(f"M must be odd and >= 3, got {self.M}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        h = np.ones(self.M, dtype=complex) if self.h_spectrum is None else np.asarray(self.h_spectrum, dtype=complex)
        if h.shape != (self.M,):
            raise ValueError(f"h_spectrum must have length M={self.M}")
        h = h.copy()
        h.setflags(write=False)
        object.__setattr__(self, "h_spectrum", h)

    @property
    def freqs(self) -> np.ndarray:
        return (np.arange(1, self.M + 1) - (self.M + 1) / 2) * self.delta

    @property
    def bandwidth(self) -> float:
        return (self.M - 1) * self.delta

    @property
    def is_flat(self) -> bool:
        return bool(np.all(self.h_spectrum == 1.0))

    @property
    def range_resolution(self) -> float:
        return SPEED_OF_LIGHT / self.bandwidth


@dataclass(frozen=True)
class Snapshot:
    z: np.ndarray
    pa_index: int = 0
    step: int = 0

    def __post_init__(self):
        z = np.asarray(self.z, dtype=complex)
        if not np.all(np.isfinite(z)):
            raise ValueError("snapshot contains non-finite entries")
        object.__setattr__(self, "z", z)


@dataclass(frozen=True)
class PathAmplitudeModel:
    """Free-space inverse-square intensity with a fixed loss per bounce."""

    gamma_ref: float = 1.0e6
    d_ref: float = 1.0
    reflection_loss_db: float = 3.0

    def __post_init__(self):
        if not (self.gamma_ref > 0 and self.d_ref > 0 and self.reflection_loss_db >= 0):
            raise ValueError("need gamma_ref > 0, d_ref > 0, reflection_loss_db >= 0")

    def intensity(self, path: PropagationPath) -> float:
        d = path.delay * SPEED_OF_LIGHT
        return self.gamma_ref * (self.d_ref / d) ** 2 * 10.0 ** (-path.bounce * self.reflection_loss_db / 10.0)


@dataclass
class ModelCovariance:
    C: np.ndarray
    chol: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=complex)
        if self.chol is None:
            self.chol = cholesky_jitter(self.C)

    @property
    def M(self) -> int:
        return self.C.shape[0]

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol).real)))


def cholesky_jitter(C: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; retries once with 1e-12 * trace/M diagonal loading."""
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        M = C.shape[-1]
        jitter = 1e-12 * np.trace(C).real / M
        try:
            return np.linalg.cholesky(C + jitter * np.eye(M))
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("covariance is not positive definite") from exc


def steering_vector(tau, pulse: PulseSpec) -> np.ndarray:
    """``H(f_m) exp(-j 2 pi f_m tau)``; vectorised over leading dims of ``tau``."""
    tau = np.asarray(tau, dtype=float)
    return pulse.h_spectrum * np.exp(-2j * np.pi * tau[..., None] * pulse.freqs)


def delays(agent_pos, positions) -> np.ndarray:
    d = np.asarray(positions, dtype=float) - np.asarray(agent_pos, dtype=float)
    return np.hypot(d[..., 0], d[..., 1]) / SPEED_OF_LIGHT


def path_intensities(paths: Sequence[PropagationPath], amp: PathAmplitudeModel) -> np.ndarray:
    return np.array([amp.intensity(p) for p in paths], dtype=float)


def crandn(rng: np.random.Generator, size, var=1.0) -> np.ndarray:
    """Circular complex Gaussian draws with variance ``var``."""
    scale = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def synthesize_snapshot(paths: Sequence[PropagationPath], amp: PathAmplitudeModel, sigma2: float,
                        pulse: PulseSpec, rng: np.random.Generator,
                        pa_index: int = 0, step: int = 0,
                        gammas: Optional[np.ndarray] = None) -> Snapshot:
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    z = crandn(rng, pulse.M, sigma2)
    if len(paths):
        g = path_intensities(paths, amp) if gammas is None else np.asarray(gammas, dtype=float)
        rho = crandn(rng, len(paths), g)
        H = steering_vector([p.delay for p in paths], pulse)
        z = z + rho @ H
    return Snapshot(z, pa_index=pa_index, step=step)


def model_covariance(agent_pos, features, sigma2: float, pulse: PulseSpec) -> ModelCovariance:
    """``sigma2 I + sum over existing features of gamma h h^H``.

    ``features`` is an iterable of ``(position, intensity, exists)``.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    C = sigma2 * np.eye(pulse.M, dtype=complex)
    for pos, gamma, exists in features:
        if gamma < 0:
            raise ValueError("intensities must be nonnegative")
        if exists:
            h = steering_vector(delays(agent_pos, pos), pulse)
            C += gamma * np.outer(h, h.conj())
    try:
        return ModelCovariance(C)
    except NotPositiveDefiniteError as exc:
        raise RuntimeError("model covariance not positive definite") from exc


def _z(z) -> np.ndarray:
    z = z.z if isinstance(z, Snapshot) else np.asarray(z, dtype=complex)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite measurement")
    return z


def loglik(z, cov: ModelCovariance) -> float:
    """Log density of ``CN(z; 0, C)`` via the cached Cholesky factor."""
    z = _z(z)
    w = solve_triangular(cov.chol, z, lower=True)
    M = z.shape[0]
    return float(-M * np.log(np.pi) - cov.logdet() - np.vdot(w, w).real)


def loglik_rank_one_delta(z, cov: ModelCovariance, u, gamma: float, sign: int = 1) -> float:
    """Log density under ``C + sign * gamma u u^H`` without refactorising.

    Uses the matrix determinant lemma and Sherman-Morrison on top of the
    cached factor of ``C``.
    """
    z = _z(z)
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    M = z.shape[0]
    w = solve_triangular(cov.chol, z, lower=True)
    v = solve_triangular(cov.chol, np.asarray(u, dtype=complex), lower=True)
    a = np.vdot(v, v).real
    b = np.vdot(v, w)
    g = sign * gamma
    denom = 1.0 + g * a
    if denom <= 0.0:
        raise NotPositiveDefiniteError("rank-one downdate leaves a non-PD matrix")
    quad = np.vdot(w, w).real - g * abs(b) ** 2 / denom
    return float(-M * np.log(np.pi) - cov.logdet() - np.log(denom) - quad)


# --- snapshot persistence -------------------------------------------------
# Layout: 8-byte magic b"DSNAP01\n", uint32 LE header length, UTF-8 JSON header
# (sorted keys), then K*J*M complex128 little-endian values in C order.

_MAGIC = b"DSNAP01\n"


def save_snapshots(path, z: np.ndarray, meta: dict) -> None:
    import json
    import struct

    z = np.ascontiguousarray(z, dtype="<c16")
    if z.ndim != 3:
        raise ValueError("expected a K x J x M array")
    header = dict(meta, shape=list(z.shape))
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(z.tobytes())


def load_snapshots(path) -> tuple[np.ndarray, dict]:
    import json
    import struct

    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a snapshot file")
        (n,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(n).decode())
        data = fh.read()
    shape = tuple(meta.pop("shape"))
    z = np.frombuffer(data, dtype="<c16")
    if z.size != int(np.prod(shape)):
        raise ValueError(f"{path}: truncated snapshot data")
    return z.reshape(shape).astype(complex), meta
