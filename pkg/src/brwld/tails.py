"""Tail of the maximum of a branching random walk with i.i.d. Gaussian steps.

``prob(j, x)`` is P(M_j >= x) for a walk started from one particle at 0.
It solves

    v_0(x) = 1{x <= 0},   v_j(x) = 1 - f(1 - E v_{j-1}(x - d)),

with f the offspring generating function and d one child's displacement,
on a uniform grid.  The expectation is a discrete Gaussian convolution done
by direct summation with edge padding (FFT round-off gets amplified by the
mean offspring number at every level).  Each level is stored trimmed to the window where
it is neither saturated at its left plateau nor negligible (below 1e-40).
"""
from __future__ import annotations

import math

import numpy as np

from .reproduction import MixedGaussianLaw, PoissonGaussianLaw, ReproductionLaw, _GaussianLaw


def _norm_sf(z: np.ndarray) -> np.ndarray:
    from math import erfc, sqrt
    return np.vectorize(lambda t: 0.5 * erfc(t / sqrt(2.0)), otypes=[float])(z)


class SubtreeTail:
    def __init__(self, law: ReproductionLaw, max_depth: int, h: float = 0.02):
        if not isinstance(law, _GaussianLaw):
            raise TypeError("tail tables need a Gaussian-displacement law")
        self.law = law
        self.max_depth = int(max_depth)
        self.h = h * law.sd_d
        self._levels: list = [None]  # level j -> (x0_index, values, left_value)
        self._build()

    # offspring pgf in complementary form: 1 - f(1 - w), accurate for small w
    def _hit(self, w: np.ndarray) -> np.ndarray:
        law = self.law
        w = np.clip(w, 0.0, 1.0)
        if isinstance(law, PoissonGaussianLaw):
            return -np.expm1(-law.mu * w)
        out = np.zeros_like(w)
        with np.errstate(divide="ignore"):
            l1 = np.log1p(-w)
        for c, p in law.offspring_probs:
            if c == 0 or p == 0:
                continue
            out += float(p) * -np.expm1(c * l1)
        return out

    def _build(self):
        law, h, J = self.law, self.h, self.max_depth
        mu, s = law.mean_d, law.sd_d
        growth = max(0.0, float(np.log(float(law.mean_offspring()))))
        lo = -(abs(min(mu, 0.0)) * J + 10.0 * s * math.sqrt(max(J, 1)) + 10.0 * s)
        hi = max(mu, 0.0) * J + s * math.sqrt(2.0 * max(J, 1) * (max(J, 1) * growth + 70.0)) + 10.0 * s
        self.x_lo = math.floor(lo / h) * h
        m = int(math.ceil((hi - self.x_lo) / h)) + 1
        self.grid_size = m
        x = self.x_lo + h * np.arange(m)

        half = int(math.ceil((9.0 * s + abs(mu)) / h))
        offs = h * np.arange(-half, half + 1)
        ker = np.exp(-0.5 * ((offs - mu) / s) ** 2)
        ker /= ker.sum()

        if J == 0:
            return
        # level 1 from the exact one-step law: P(child >= x) = sf((x - mu)/s)
        v = self._hit(_norm_sf((x - mu) / s))
        v[v < self._zero] = 0.0
        i0, i1 = self._store(v)
        for _ in range(2, J + 1):
            left = v[0]
            a, b = max(i0 - 2 * half, 0), min(i1 + 2 * half, m)
            padded = np.concatenate([np.full(half, v[a] if a == 0 else left), v[a:b], np.zeros(half)])
            # direct summation keeps small tail values relatively accurate
            ev = np.convolve(padded, ker, mode="full")[2 * half: 2 * half + (b - a)]
            nv = np.zeros(m)
            nv[:a] = self._hit(np.array([left]))[0]
            nv[a:b] = self._hit(ev)
            nv[nv < self._zero] = 0.0
            v = nv
            i0, i1 = self._store(v)

    _zero = 1e-40

    def _store(self, v: np.ndarray):
        left = float(v[0])
        sat = np.nonzero(v < left * (1.0 - 1e-15))[0]
        i0 = max(int(sat[0]) - 2, 0) if sat.size else len(v) - 1
        alive = np.nonzero(v > 0)[0]
        i1 = min(int(alive[-1]) + 3, len(v)) if alive.size else i0 + 1
        i1 = max(i1, i0 + 1)
        self._levels.append((i0, v[i0:i1].copy(), left))
        return i0, i1

    def prob(self, j: int, x) -> np.ndarray:
        """P(M_j >= x), vectorized over ``x``; cubic interpolation between nodes."""
        x = np.asarray(x, dtype=np.float64)
        if j == 0:
            return (x <= 0).astype(np.float64)
        if j > self.max_depth:
            raise ValueError(f"depth {j} beyond table depth {self.max_depth}")
        i0, vals, left = self._levels[j]
        t = (x - self.x_lo) / self.h - i0
        ext = np.concatenate([[left, left], vals, [0.0, 0.0, 0.0]])
        k = np.clip(np.floor(t), -2, vals.size).astype(np.int64)
        f = np.clip(t - k, 0.0, 1.0)
        p0, p1, p2, p3 = (ext[k + 1], ext[k + 2], ext[k + 3], ext[k + 4])
        out = (p1 + 0.5 * f * (p2 - p0 + f * (2 * p0 - 5 * p1 + 4 * p2 - p3 + f * (3 * (p1 - p2) + p3 - p0))))
        lo_mask = t < -1
        out = np.where(lo_mask, left, out)
        out = np.where(t > vals.size + 1, 0.0, out)
        return np.clip(out, 0.0, 1.0)

    def survival(self, j: int) -> float:
        """P(Z_j(R) > 0) as the left plateau of level j."""
        if j == 0:
            return 1.0
        return self._levels[j][2]


def error_estimate(law: ReproductionLaw, depth: int, h: float = 0.02, probe=None) -> float:
    """Max absolute gap between tables at step ``h`` and ``2h`` over probe points."""
    fine = SubtreeTail(law, depth, h)
    coarse = SubtreeTail(law, depth, 2 * h)
    if probe is None:
        probe = np.linspace(-5.0, max(5.0, 2.0 * depth), 2001)
    gap = 0.0
    for j in range(1, depth + 1):
        gap = max(gap, float(np.max(np.abs(fine.prob(j, probe) - coarse.prob(j, probe)))))
    return gap
