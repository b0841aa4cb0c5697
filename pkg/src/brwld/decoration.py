"""Decoration of the maximum under the upper deviation, and related diagnostics.

The decoration is sampled by rejection from the auxiliary process: keep a
realization when it has no atom above 0 and no lexicographically smaller
tie at 0.  ``conditioned_extremal`` gives a spine-free second opinion by
conditioning forward runs directly.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .harness import DEFAULT_BLOCK, EstimateRecord, Partial, aggregate, derive_stream, run_blocks
from .measures import PointMeasure
from .reproduction import ReproductionLaw, tilted_cumulants
from .spine import (DEFAULT_PRUNE_DELTA, DEFAULT_SUBTREE_CAP, build_auxiliary_batch,
                    supports_conditional)
from .tree_sim import forward_batch

_TAG_DECOR, _TAG_OVERSHOOT, _TAG_FORWARD, _TAG_PROFILE, _TAG_PERM = 31, 32, 33, 34, 35


@dataclass(frozen=True)
class DecorationSample:
    atoms: PointMeasure  # in [-window, 0], atom at 0 included
    accepted_from: dict = field(default_factory=dict, compare=False)


@dataclass
class DecorationResult:
    samples: list
    acceptance: EstimateRecord  # acceptance rate as an estimate of C(theta)
    attempts: int
    window: float
    n_max: int
    flags: list = field(default_factory=list)

    @property
    def acceptance_rate(self) -> float:
        return self.acceptance.mean


def sample_decoration(law: ReproductionLaw, theta: float, n_max: int, target_accepted: int,
                      window: Optional[float] = None, seed: int = 0, *,
                      prune_delta: float = DEFAULT_PRUNE_DELTA, cap: int = DEFAULT_SUBTREE_CAP,
                      block: int = 256, max_attempts: int = 10 ** 6, min_rate: float = 1e-4) -> DecorationResult:
    """Rejection sampler: keep auxiliary realizations with no atom above 0 and no smaller tie.

    Blocks are processed in index order until ``target_accepted`` samples are
    in hand; samples are taken in replica order, so the output depends only
    on the seed.  The acceptance rate is computed over every processed block.
    """
    if theta <= 0:
        raise ValueError("theta must be > 0")
    if target_accepted < 1:
        raise ValueError("target_accepted must be >= 1")
    if window is None:
        window = 10.0 / theta
    flags = []
    if window == 0:
        flags.append("window too small to resolve decoration shape")
        warnings.warn(flags[-1])
    samples, parts = [], []
    attempts, index = 0, 0
    while len(samples) < target_accepted:
        if attempts >= max_attempts:
            rate = sum(p.mean * p.count for p in parts) / max(attempts, 1)
            if rate < min_rate:
                raise RuntimeError(f"acceptance rate {rate:.3g} below {min_rate:g} after {attempts} attempts "
                                   f"({len(samples)} accepted, n_max={n_max}, window={window})")
        rng = derive_stream(seed, (_TAG_DECOR, index))
        batch = build_auxiliary_batch(law, theta, n_max, block, rng, window=window, prune_delta=prune_delta,
                                      cap=cap, keep_atoms=True, keep_path=False)
        ok = ~batch.invalid
        accept = ok & (batch.count_above_zero == 0) & (batch.bar_count == 0)
        parts.append(Partial.from_values(index, accept[ok].astype(np.float64), batch.prune_bias[ok],
                                         invalid=int((~ok).sum())))
        attempts += int(ok.sum())
        if accept.any():
            order = np.argsort(batch.atom_owner, kind="stable")
            own, units = batch.atom_owner[order], batch.atom_units[order]
            bounds = np.searchsorted(own, np.arange(block + 1))
            zero = np.zeros(1, dtype=units.dtype)
            for r in np.nonzero(accept)[0]:
                atoms = PointMeasure.from_values(np.concatenate([zero, units[bounds[r]:bounds[r + 1]]]), law.denom)
                assert atoms.mass_above(0) == 0
                samples.append(DecorationSample(atoms, {"block": index, "replica": int(r), "n_max": n_max,
                                                        "window": window,
                                                        "prune_bias_bound": float(batch.prune_bias[r]),
                                                        "last_contrib": int(batch.last_contrib[r])}))
                if len(samples) == target_accepted:
                    break
        index += 1
    rec = aggregate(parts, seed=seed, diagnostics={"n_max": n_max, "window": window})
    return DecorationResult(samples, rec, attempts, window, n_max, flags)


def write_decoration_csv(samples: Sequence[DecorationSample], out=None) -> str:
    """One atom per line: sample_id, location, multiplicity.  Returns the text when ``out`` is None."""
    buf = io.StringIO() if out is None else out
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "location", "multiplicity"])
    for i, s in enumerate(samples):
        for loc, m in s.atoms.atoms():
            w.writerow([i, str(loc) if isinstance(loc, Fraction) else format(loc, ".17g"), m])
    return buf.getvalue() if out is None else ""


# ---------------------------------------------------------------------------
# overshoot of the maximum over n psi'


@dataclass
class OvershootResult:
    values: np.ndarray
    weights: np.ndarray
    ks_distance: float
    ks_critical: float  # bootstrap quantile at ``level``
    level: float
    mean: float
    mean_stderr: float
    replicas: int

    @property
    def rejected(self) -> bool:
        return self.ks_distance > self.ks_critical


def weighted_ks(values: np.ndarray, weights: np.ndarray, cdf) -> float:
    """sup |F_w - F| with F_w the weighted empirical CDF."""
    order = np.argsort(values, kind="stable")
    x, w = values[order], weights[order]
    cw = np.cumsum(w) / w.sum()
    f = cdf(x)
    below = np.concatenate([[0.0], cw[:-1]])
    return float(max(np.max(np.abs(cw - f)), np.max(np.abs(below - f))))


def _bootstrap_ks(values, weights, resamples, level, rng) -> float:
    """Quantile of sup |F*_w - F_w| under multinomial resampling of (value, weight) pairs."""
    order = np.argsort(values, kind="stable")
    w = weights[order]
    base = np.cumsum(w) / w.sum()
    n = w.size
    stats = np.empty(resamples)
    for b in range(resamples):
        counts = rng.multinomial(n, np.full(n, 1.0 / n))
        wb = w * counts
        cb = np.cumsum(wb) / wb.sum()
        stats[b] = np.max(np.abs(cb - base))
    return float(np.quantile(stats, level))


def conditioned_overshoot(law: ReproductionLaw, theta: float, n: int, replicas: int, seed: int = 0, *,
                          resamples: int = 1000, level: float = 0.99, prune_delta: float = DEFAULT_PRUNE_DELTA,
                          cap: int = DEFAULT_SUBTREE_CAP, block: int = DEFAULT_BLOCK,
                          mode: str = "auto") -> OvershootResult:
    """Weighted samples of M_n - n psi'(theta) given it is >= 0, compared with Exp(theta).

    On the accepted event the maximum sits at the spine tip, so each spinal
    replica contributes the value S_n - n psi' with weight
    e^{-theta (S_n - n psi')} / D_n({0}) times the no-atom-above-0 indicator
    (or its conditional probability in conditional mode).
    """
    from .estimators import _resolve_mode

    cum = tilted_cumulants(law, theta)
    cond = _resolve_mode(law, mode)
    thr = law.threshold_units(n * cum.psi_prime)

    def work(index, size, rng):
        batch = build_auxiliary_batch(law, theta, n, size, rng, prune_delta=prune_delta, cap=cap,
                                      active_threshold=thr, conditional=cond)
        ok = ~batch.invalid
        x = np.asarray(law.to_real(batch.s_n), dtype=np.float64) - n * cum.psi_prime
        hit = ok & (batch.s_n >= thr)
        w = np.exp(-theta * np.maximum(x, 0.0)) / batch.count_at_zero
        w = w * (np.exp(batch.log_clear) if cond else (batch.count_above_zero == 0))
        w = np.where(hit, w, 0.0)
        return x[ok], w[ok]

    out = run_blocks(work, replicas, seed, block, stream_tag=_TAG_OVERSHOOT)
    x = np.concatenate([o[0] for o in out])
    w = np.concatenate([o[1] for o in out])
    keep = w > 0
    if not keep.any():
        raise ValueError("no accepted samples")
    xs, ws = x[keep], w[keep]
    ks = weighted_ks(xs, ws, lambda t: -np.expm1(-theta * np.maximum(t, 0.0)))
    crit = _bootstrap_ks(xs, ws, resamples, level, derive_stream(seed, (_TAG_OVERSHOOT + 100, 0)))
    # ratio estimator over all replicas, delta-method stderr
    a, b = w * np.where(keep, x, 0.0), w
    ratio = math.fsum(a.tolist()) / math.fsum(b.tolist())
    resid = a - ratio * b
    se = math.sqrt(np.var(resid, ddof=1) / resid.size) / b.mean() if resid.size > 1 else 0.0
    return OvershootResult(xs, ws, ks, crit, level, ratio, se, int(x.size))


# ---------------------------------------------------------------------------
# Laplace functionals


@dataclass(frozen=True)
class BumpSpec:
    """Non-negative piecewise-linear function, zero outside its first and last breakpoints."""

    points: tuple  # ((x0, y0), (x1, y1), ...) with increasing x

    def __post_init__(self):
        pts = tuple((Fraction(x), Fraction(y)) for x, y in self.points)
        if len(pts) < 2:
            raise ValueError("need at least two breakpoints")
        if any(b[0] <= a[0] for a, b in zip(pts, pts[1:])):
            raise ValueError("breakpoints must increase")
        if any(y < 0 for _, y in pts):
            raise ValueError("bump must be non-negative")
        object.__setattr__(self, "points", pts)

    @classmethod
    def tent(cls, left, peak, right, height=1) -> "BumpSpec":
        return cls(((left, 0), (peak, height), (right, 0)))

    def __call__(self, x) -> np.ndarray:
        xs = np.array([float(p[0]) for p in self.points])
        ys = np.array([float(p[1]) for p in self.points])
        x = np.asarray(x, dtype=np.float64)
        return np.where((x >= xs[0]) & (x <= xs[-1]), np.interp(x, xs, ys), 0.0)

    def exact(self, x: Fraction) -> Fraction:
        pts = self.points
        if x < pts[0][0] or x > pts[-1][0]:
            return Fraction(0)
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            if x0 <= x <= x1:
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        return Fraction(0)

    def pair(self, mu: PointMeasure) -> float:
        """<mu, phi>; exact rational arithmetic for lattice measures."""
        if mu.denom is not None:
            return float(sum(self.exact(loc) * m for loc, m in mu.atoms()))
        return mu.integrate(self)


@dataclass(frozen=True)
class LaplaceReport:
    mean_a: float
    stderr_a: float
    mean_b: float
    stderr_b: float
    statistic: float
    p_value: float
    size_a: int
    size_b: int

    def rejects(self, alpha: float = 0.01) -> bool:
        return self.p_value < alpha


def laplace_compare(samples_a, samples_b, phi: BumpSpec, permutations: int = 2000, seed: int = 0) -> LaplaceReport:
    """Two-sample permutation test on exp(-<mu, phi>)."""
    def measures(xs):
        return [s.atoms if isinstance(s, DecorationSample) else s for s in xs]

    a, b = measures(samples_a), measures(samples_b)
    if not a or not b:
        raise ValueError("empty sample set")
    fa = np.exp(-np.array([phi.pair(m) for m in a]))
    fb = np.exp(-np.array([phi.pair(m) for m in b]))
    se = (lambda f: float(np.std(f, ddof=1) / math.sqrt(f.size)) if f.size > 1 else 0.0)
    stat = abs(fa.mean() - fb.mean())
    pooled = np.concatenate([fa, fb])
    rng = derive_stream(seed, (_TAG_PERM, 0))
    hits = 0
    for _ in range(permutations):
        perm = rng.permutation(pooled)
        if abs(perm[:fa.size].mean() - perm[fa.size:].mean()) >= stat - 1e-15:
            hits += 1
    p = (1 + hits) / (1 + permutations)
    return LaplaceReport(float(fa.mean()), se(fa), float(fb.mean()), se(fb), float(stat), p, fa.size, fb.size)


def conditioned_extremal(law: ReproductionLaw, theta: float, n: int, target: int, window: float,
                         seed: int = 0, block: int = 4096, max_runs: int = 10 ** 7,
                         max_rate: float = 0.4, max_n: int = 12) -> tuple[list, float]:
    """Extremal processes (restricted to [-window, 0]) of forward runs with M_n >= n psi'(theta).

    Plain rejection, so kept to small n and small rates.  Returns the
    measures and the empirical acceptance frequency.
    """
    cum = tilted_cumulants(law, theta)
    if n > max_n or cum.rate > max_rate:
        raise ValueError(f"naive conditioning limited to n <= {max_n} and rate <= {max_rate}")
    thr = law.threshold_units(n * cum.psi_prime)
    w_units = window * law.denom if law.denom is not None else window
    out, runs, index = [], 0, 0
    while len(out) < target and runs < max_runs:
        fb = forward_batch(law, n, block, derive_stream(seed, (_TAG_FORWARD, index)))
        mx, alive = fb.max_per_replica()
        good = alive & ~fb.capped & (mx >= thr)
        runs += int((~fb.capped).sum())
        for r, pos in fb.groups():
            if not good[r]:
                continue
            rel = pos - mx[r]
            out.append(PointMeasure.from_values(rel[rel >= -w_units], law.denom))
            if len(out) == target:
                break
        index += 1
    return out, len(out) / max(runs, 1)


def reweighted_laplace(law: ReproductionLaw, theta: float, n: int, window: float, bumps: Sequence[BumpSpec],
                       replicas: int, seed: int = 0, block: int = 20000,
                       prune_delta: float = DEFAULT_PRUNE_DELTA) -> list[tuple[float, float]]:
    """E(exp(-<E_n, phi>) | M_n >= n psi') from spinal replicas, one (value, stderr) per bump.

    On {S_n >= n psi', no atom above 0} the extremal process is the auxiliary
    process D_n, so the conditional law is D_n reweighted by
    e^{-theta (S_n - n psi')} / D_n({0}).  This is the finite-n law that
    ``conditioned_extremal`` samples by brute force.
    """
    cum = tilted_cumulants(law, theta)
    thr = law.threshold_units(n * cum.psi_prime)

    def work(index, size, rng):
        batch = build_auxiliary_batch(law, theta, n, size, rng, window=window, prune_delta=prune_delta,
                                      keep_atoms=True, active_threshold=thr)
        x = np.asarray(law.to_real(batch.s_n), dtype=np.float64) - n * cum.psi_prime
        ok = (batch.s_n >= thr) & (batch.count_above_zero == 0) & ~batch.invalid
        w = np.where(ok, np.exp(-theta * np.maximum(x, 0.0)) / batch.count_at_zero, 0.0)
        loc = np.asarray(law.to_real(batch.atom_units), dtype=np.float64)
        pairs = []
        for phi in bumps:
            pair = np.full(size, float(phi(0.0)))
            np.add.at(pair, batch.atom_owner, phi(loc))
            pairs.append(np.exp(-pair))
        return w, pairs

    out = run_blocks(work, replicas, seed, block, stream_tag=_TAG_FORWARD + 100)
    w = np.concatenate([o[0] for o in out])
    if not (w > 0).any():
        raise ValueError("no replica reached the threshold")
    res = []
    for i in range(len(bumps)):
        f = np.concatenate([o[1][i] for o in out])
        ratio = math.fsum((w * f).tolist()) / math.fsum(w.tolist())
        resid = w * f - ratio * w
        res.append((ratio, float(math.sqrt(np.var(resid, ddof=1) / w.size) / w.mean())))
    return res


# ---------------------------------------------------------------------------
# total atom counts


@dataclass(frozen=True)
class ProfileRow:
    n: int
    mean: float
    stderr: float
    median: float
    p99: float
    replicas: int
    invalid: int


def atom_count_profile(law: ReproductionLaw, theta: float, n_grid: Sequence[int], replicas: int,
                       seed: int = 0, cap: int = DEFAULT_SUBTREE_CAP, block: int = 512) -> list[ProfileRow]:
    """Distribution of the total mass of D_n over ``n_grid``, no window and no pruning."""
    if law.log_laplace(0.0) > 1e-12:
        raise ValueError("profile requires subcritical/critical subtrees")
    rows = []
    for n in n_grid:
        def work(index, size, rng, n=n):
            batch = build_auxiliary_batch(law, theta, n, size, rng, window=math.inf, prune_delta=0.0, cap=cap)
            ok = ~batch.invalid
            return batch.total_atoms[ok], int((~ok).sum())

        out = run_blocks(work, replicas, seed, block, stream_tag=_TAG_PROFILE * 100000 + int(n))
        tot = np.concatenate([o[0] for o in out]).astype(np.float64)
        bad = sum(o[1] for o in out)
        se = float(np.std(tot, ddof=1) / math.sqrt(tot.size)) if tot.size > 1 else 0.0
        rows.append(ProfileRow(int(n), math.fsum(tot.tolist()) / tot.size, se, float(np.median(tot)),
                               float(np.percentile(tot, 99)), int(tot.size), bad))
    return rows
