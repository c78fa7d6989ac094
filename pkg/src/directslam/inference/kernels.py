"""Compiled inner loops.

Every covariance contribution ``gamma h(tau) h(tau)^H`` is Hermitian Toeplitz
up to the diagonal scaling by the pulse spectrum, so a sum of them is stored
as its first column ``t[d] = sum_q a_q exp(-j 2 pi d Delta tau_q)``.
"""
import math

import numpy as np
from numba import njit

LOG_PI = math.log(math.pi)


@njit(cache=True)
def toeplitz_columns(agents, pos, amp, dphase, M):
    """First Toeplitz column per agent position, summed over all points.

    ``dphase`` is ``-2 pi Delta / c`` so the per-bin phase step is
    ``dphase * range``.
    """
    A = agents.shape[0]
    Q = pos.shape[0]
    out = np.zeros((A, M), np.complex128)
    for a in range(A):
        ax = agents[a, 0]
        ay = agents[a, 1]
        for q in range(Q):
            if amp[q] == 0.0:
                continue
            dx = ax - pos[q, 0]
            dy = ay - pos[q, 1]
            ph = dphase * math.sqrt(dx * dx + dy * dy)
            wr = math.cos(ph)
            wi = math.sin(ph)
            cr = amp[q]
            ci = 0.0
            for d in range(M):
                out[a, d] += complex(cr, ci)
                cr, ci = cr * wr - ci * wi, cr * wi + ci * wr
    return out


@njit(cache=True)
def owner_columns(agents, pos, amp, owner, n_owner, dphase, M):
    """Toeplitz columns per owner (feature), averaged over ``agents``."""
    A = agents.shape[0]
    Q = pos.shape[0]
    out = np.zeros((n_owner, M), np.complex128)
    for a in range(A):
        ax = agents[a, 0]
        ay = agents[a, 1]
        for q in range(Q):
            if amp[q] == 0.0:
                continue
            dx = ax - pos[q, 0]
            dy = ay - pos[q, 1]
            ph = dphase * math.sqrt(dx * dx + dy * dy)
            wr = math.cos(ph)
            wi = math.sin(ph)
            cr = amp[q]
            ci = 0.0
            o = owner[q]
            for d in range(M):
                out[o, d] += complex(cr, ci)
                cr, ci = cr * wr - ci * wi, cr * wi + ci * wr
    return out / A


@njit(cache=True)
def toeplitz_loglik(cols, hspec, base, z):
    """``log CN(z; 0, base + D T_a D^H)`` for each row ``T_a`` of ``cols``.

    ``D = diag(hspec)``; returns ``-inf`` where the matrix is not PD.
    """
    A, M = cols.shape
    out = np.empty(A)
    L = np.empty((M, M), np.complex128)
    w = np.empty(M, np.complex128)
    for a in range(A):
        for i in range(M):
            for j in range(i + 1):
                L[i, j] = base[i, j] + hspec[i] * cols[a, i - j] * np.conj(hspec[j])
        logdet = 0.0
        ok = True
        for j in range(M):
            s = L[j, j].real
            for k in range(j):
                s -= L[j, k].real ** 2 + L[j, k].imag ** 2
            if s <= 0.0:
                ok = False
                break
            ljj = math.sqrt(s)
            L[j, j] = ljj
            logdet += 2.0 * math.log(ljj)
            for i in range(j + 1, M):
                acc = L[i, j]
                for k in range(j):
                    acc -= L[i, k] * np.conj(L[j, k])
                L[i, j] = acc / ljj
        if not ok:
            out[a] = -np.inf
            continue
        quad = 0.0
        for i in range(M):
            acc = z[i]
            for k in range(i):
                acc -= L[i, k] * w[k]
            w[i] = acc / L[i, i].real
            quad += w[i].real ** 2 + w[i].imag ** 2
        out[a] = -M * LOG_PI - logdet - quad
    return out


@njit(cache=True)
def range_extent(pos, agents):
    lo = np.inf
    hi = 0.0
    for i in range(pos.shape[0]):
        for k in range(agents.shape[0]):
            dx = pos[i, 0] - agents[k, 0]
            dy = pos[i, 1] - agents[k, 1]
            r = math.sqrt(dx * dx + dy * dy)
            lo = min(lo, r)
            hi = max(hi, r)
    return lo, hi


@njit(cache=True)
def grid_rank_one_loglik(pos, agents, gam, lo, step, ag, dag, bg, dbg, l0):
    """Agent-averaged ``log CN(z; 0, C + gamma h h^H)`` per feature particle.

    ``ag``/``bg`` hold ``h^H C^-1 h`` and ``h^H C^-1 z`` on the range grid
    ``lo + step * g`` and ``dag``/``dbg`` their range derivatives; values in
    between come from cubic Hermite interpolation.
    """
    P = pos.shape[0]
    A = agents.shape[0]
    G = ag.shape[0]
    out = np.empty(P)
    tmp = np.empty(A)
    for i in range(P):
        g = gam[i]
        mx = -np.inf
        for k in range(A):
            dx = pos[i, 0] - agents[k, 0]
            dy = pos[i, 1] - agents[k, 1]
            x = (math.sqrt(dx * dx + dy * dy) - lo) / step
            j = int(x)
            if j < 0:
                j = 0
            elif j > G - 2:
                j = G - 2
            t = x - j
            t2 = t * t
            t3 = t2 * t
            h00 = 2.0 * t3 - 3.0 * t2 + 1.0
            h10 = (t3 - 2.0 * t2 + t) * step
            h01 = 3.0 * t2 - 2.0 * t3
            h11 = (t3 - t2) * step
            a = h00 * ag[j] + h10 * dag[j] + h01 * ag[j + 1] + h11 * dag[j + 1]
            b = h00 * bg[j] + h10 * dbg[j] + h01 * bg[j + 1] + h11 * dbg[j + 1]
            d = 1.0 + g * a
            v = l0 - math.log(d) + g * (b.real * b.real + b.imag * b.imag) / d
            tmp[k] = v
            if v > mx:
                mx = v
        s = 0.0
        for k in range(A):
            s += math.exp(tmp[k] - mx)
        out[i] = mx + math.log(s / A)
    return out
