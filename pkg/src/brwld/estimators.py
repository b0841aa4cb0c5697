"""Estimators built on the spinal change of measure, plus exact and asymptotic references.

Every estimator here is a pure function of (law, parameters, replicas, seed):
replicas are split into blocks, block ``i`` draws from its own indexed stream,
and block partials are merged in index order.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .harness import DEFAULT_BLOCK, EstimateRecord, Partial, aggregate, run_blocks
from .reproduction import CumulantReport, ReproductionLaw, legendre, critical_speed, tilted_cumulants
from .spine import (DEFAULT_PRUNE_DELTA, DEFAULT_SUBTREE_CAP, build_auxiliary_batch,
                    supports_conditional, tail_error)

# stream tags keep different estimators on disjoint streams for the same seed
_TAG_SPINAL, _TAG_CTHETA, _TAG_PILOT, _TAG_COUNT, _TAG_LLT = 21, 22, 23, 24, 25

MODES = ("auto", "conditional", "explicit")


def _resolve_mode(law: ReproductionLaw, mode: str) -> bool:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "conditional" and not supports_conditional(law):
        raise ValueError("conditional mode needs a Gaussian-displacement law")
    return mode == "conditional" or (mode == "auto" and supports_conditional(law))


def _positive_theta(theta: float) -> None:
    if not theta > 0:
        raise ValueError("theta must be > 0")


# ---------------------------------------------------------------------------
# spinal tail estimator


def spinal_weights(law: ReproductionLaw, theta: float, n: int, y: float, batch, cum: CumulantReport,
                   conditional: bool):
    """Per-replica (value, bias) on the scale exp(-log_scale), log_scale = n(psi - theta psi') - theta y.

    value = e^{-theta(S_n - n psi' - y)} / D_n({0}) * 1{S_n - n psi' >= y, D_n((0,inf)) = 0},
    with the indicator replaced by its conditional probability in conditional mode.
    """
    thr = law.threshold_units(n * cum.psi_prime + y)
    s_real = np.asarray(law.to_real(batch.s_n), dtype=np.float64)
    hit = batch.s_n >= thr
    expo = np.where(hit, -theta * (s_real - n * cum.psi_prime - y), -np.inf)
    base = np.exp(np.minimum(expo, 0.0))
    if conditional:
        value = base * np.exp(batch.log_clear)
        err = tail_error(law, max(n - 1, 1)) if n > 1 else 0.0
        bias = base * batch.integrated * err
    else:
        value = base * (batch.count_above_zero == 0) / batch.count_at_zero
        bias = base * batch.prune_bias
    return value, bias


def spinal_tail(law: ReproductionLaw, theta: float, n: int, y: float, replicas: int, seed: int = 0, *,
                prune_delta: float = DEFAULT_PRUNE_DELTA, cap: int = DEFAULT_SUBTREE_CAP,
                block: int = DEFAULT_BLOCK, mode: str = "auto", config_digest: str = "") -> EstimateRecord:
    """Unbiased estimate of P(M_n >= n psi'(theta) + y) from spinal replicas.

    ``mode="conditional"`` (Gaussian laws) integrates every sibling subtree
    out through the exact subtree-maximum tail, which removes pruning and
    lowers the variance.  ``"explicit"`` grows subtrees and reports the
    pruning bound as ``bias_bound``.
    """
    _positive_theta(theta)
    if n < 0:
        raise ValueError("n must be >= 0")
    cum = tilted_cumulants(law, theta)
    cond = _resolve_mode(law, mode)
    thr = law.threshold_units(n * cum.psi_prime + y)

    def work(index, size, rng):
        batch = build_auxiliary_batch(law, theta, n, size, rng, window=0.0, prune_delta=prune_delta,
                                      cap=cap, active_threshold=thr, conditional=cond)
        value, bias = spinal_weights(law, theta, n, y, batch, cum, cond)
        ok = ~batch.invalid
        return Partial.from_values(index, value[ok], bias[ok], invalid=int((~ok).sum()))

    parts = run_blocks(work, replicas, seed, block, stream_tag=_TAG_SPINAL)
    log_scale = n * (cum.psi - theta * cum.psi_prime) - theta * y
    return aggregate(parts, seed=seed, config_digest=config_digest, log_scale=log_scale,
                     diagnostics={"mode": "conditional" if cond else "explicit", "n": n, "y": y})


# ---------------------------------------------------------------------------
# the constant C(theta)


def _last_quantiles(last: np.ndarray) -> dict:
    if last.size == 0:
        return {}
    q = np.percentile(last, [50, 99, 99.9])
    return {"last_contrib_p50": float(q[0]), "last_contrib_p99": float(q[1]),
            "last_contrib_p999": float(q[2]), "last_contrib_max": int(last.max())}


def choose_n_max(law: ReproductionLaw, theta: float, seed: int = 0, pilot: int = 2000,
                 start: int = 8, limit: int = 512, mode: str = "auto",
                 prune_delta: float = DEFAULT_PRUNE_DELTA, cap: int = DEFAULT_SUBTREE_CAP) -> int:
    """Smallest n on the doubling grid from ``start`` whose pilot 99.9th percentile
    of the last contributing generation is below n/2."""
    cond = _resolve_mode(law, mode)
    n = start
    while True:
        batch = build_auxiliary_batch(law, theta, n, pilot, _pilot_stream(seed, n), prune_delta=prune_delta,
                                      cap=cap, conditional=cond)
        last = batch.last_contrib[~batch.invalid]
        if last.size and np.percentile(last, 99.9) < n / 2:
            return n
        if n >= limit:
            warnings.warn(f"last contributing generation did not settle below n/2 by n={limit}")
            return n
        n *= 2


def _pilot_stream(seed: int, n: int):
    from .harness import derive_stream
    return derive_stream(seed, (_TAG_PILOT, n))


def c_theta(law: ReproductionLaw, theta: float, n_max: Optional[int] = None, replicas: int = 10000,
            variant: str = "weighted", seed: int = 0, *, prune_delta: float = DEFAULT_PRUNE_DELTA,
            cap: int = DEFAULT_SUBTREE_CAP, block: int = DEFAULT_BLOCK, mode: str = "auto",
            config_digest: str = "") -> EstimateRecord:
    """Estimate C(theta) from realizations of the auxiliary process built to ``n_max``.

    weighted:  mean of 1{no atom above 0} / (mass at 0)
    indicator: mean of 1{no atom above 0, no lexicographically smaller tie at 0}

    In conditional mode the weighted variant uses the conditional probability
    of no atom above 0 given the spine, while the indicator variant draws
    each subtree's event separately; the two share only the spine.
    """
    _positive_theta(theta)
    if variant not in ("weighted", "indicator"):
        raise ValueError(f"unknown variant {variant!r}")
    cum = tilted_cumulants(law, theta)
    if cum.rate <= 0 and law.prob_at_least_two() > 0:
        warnings.warn("theta*psi'(theta) <= psi(theta): auxiliary atoms do not drift away; "
                      "the estimate is not meaningful")
    cond = _resolve_mode(law, mode)
    chosen = n_max is None
    if chosen:
        n_max = choose_n_max(law, theta, seed, mode=mode, prune_delta=prune_delta, cap=cap)

    def work(index, size, rng):
        batch = build_auxiliary_batch(law, theta, n_max, size, rng, prune_delta=prune_delta, cap=cap,
                                      conditional=cond)
        ok = ~batch.invalid
        if variant == "indicator":
            value = ((batch.count_above_zero == 0) & (batch.bar_count == 0)).astype(np.float64)
            bias = batch.prune_bias
        elif cond:
            value = np.exp(batch.log_clear)
            bias = batch.integrated * (tail_error(law, max(n_max - 1, 1)) if n_max > 1 else 0.0)
        else:
            value = (batch.count_above_zero == 0) / batch.count_at_zero
            bias = batch.prune_bias
        return Partial.from_values(index, value[ok], bias[ok], invalid=int((~ok).sum())), batch.last_contrib[ok]

    out = run_blocks(work, replicas, seed, block, stream_tag=_TAG_CTHETA)
    last = np.concatenate([o[1] for o in out])
    diag = {"n_max": n_max, "n_max_chosen": chosen, "variant": variant,
            "mode": "conditional" if cond else "explicit", "rate": cum.rate}
    diag.update(_last_quantiles(last))
    return aggregate([o[0] for o in out], seed=seed, config_digest=config_digest, diagnostics=diag)


def c_theta_sweep(law: ReproductionLaw, thetas: Sequence[float], n_max: int, replicas: int, seed: int = 0,
                  variant: str = "weighted", mode: str = "auto") -> list[tuple[float, EstimateRecord]]:
    """C(theta) over a grid; each grid point gets its own seed offset."""
    return [(float(t), c_theta(law, float(t), n_max, replicas, variant, seed + i, mode=mode))
            for i, t in enumerate(thetas)]


def largest_jump(sweep: list[tuple[float, EstimateRecord]]) -> float:
    """Largest |difference| between adjacent estimates in units of combined stderr."""
    worst = 0.0
    for (_, a), (_, b) in zip(sweep, sweep[1:]):
        se = math.hypot(a.stderr, b.stderr)
        gap = abs(a.mean - b.mean)
        worst = max(worst, gap / se if se > 0 else (math.inf if gap > 0 else 0.0))
    return worst


# ---------------------------------------------------------------------------
# many-to-one


def mean_count(law: ReproductionLaw, theta: float, n: int, a: float, replicas: int, seed: int = 0,
               block: int = DEFAULT_BLOCK, config_digest: str = "") -> EstimateRecord:
    """E Z_n([a, inf)) = e^{n psi(theta)} E(e^{-theta S_n} 1{S_n >= a}) along the tilted walk."""
    _positive_theta(theta)
    cum = tilted_cumulants(law, theta)
    thr = law.threshold_units(a)
    # fixed reference point keeps the per-replica values of moderate size
    ref = max(float(a), n * cum.psi_prime - 8.0 * math.sqrt(cum.sigma2 * max(n, 1)) - 8.0)

    def work(index, size, rng):
        s = law.sample_tilted_sum(theta, n, size, rng)
        sr = np.asarray(law.to_real(s), dtype=np.float64)
        value = np.where(s >= thr, np.exp(-theta * (sr - ref)), 0.0)
        return Partial.from_values(index, value)

    parts = run_blocks(work, replicas, seed, block, stream_tag=_TAG_COUNT)
    return aggregate(parts, seed=seed, config_digest=config_digest, log_scale=n * cum.psi - theta * ref)


# ---------------------------------------------------------------------------
# asymptotics and rates


def log_asymptotic_tail(cum: CumulantReport, c_value: float, n: int, y: float) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 < c_value <= 1:
        raise ValueError("c_value must lie in (0, 1]")
    sigma = math.sqrt(cum.sigma2)
    return (math.log(c_value) - 0.5 * math.log(2 * math.pi * n) - math.log(sigma * cum.theta)
            - y * y / (2 * cum.sigma2 * n) - cum.theta * y - n * cum.rate)


def asymptotic_tail(cum: CumulantReport, c_value: float, n: int, y: float) -> float:
    """C/(sqrt(2 pi n) sigma theta) * exp(-y^2/(2 sigma^2 n) - theta y - n rate)."""
    return math.exp(log_asymptotic_tail(cum, c_value, n, y))


@dataclass(frozen=True)
class RateFit:
    slope: float
    psi_star: float
    theta: float
    n_grid: tuple
    log_tail: tuple
    records: tuple = field(default=(), compare=False)


def ldp_rate(law: ReproductionLaw, x: float, n_grid: Sequence[int], replicas: int, seed: int = 0,
             mode: str = "auto") -> RateFit:
    """Least-squares slope of -log P(M_n >= n x) against n, next to psi*(x)."""
    leg = legendre(law, x)
    if leg.boundary is not None:
        raise ValueError("x outside interior large-deviations regime")
    if law.log_laplace(0.0) > 0:
        speed = critical_speed(law).x_star
        if not x > speed:
            raise ValueError(f"x must exceed the critical speed {speed:.6g}")
    else:
        drift = law.mean_displacement_sum() / float(law.mean_offspring())
        if not x > drift:
            raise ValueError(f"x must exceed the mean displacement {drift:.6g}")
    theta = leg.theta_star
    cum = tilted_cumulants(law, theta)
    grid = [int(n) for n in n_grid]
    if len(grid) < 2:
        raise ValueError("need at least two values of n")
    recs, logs = [], []
    for i, n in enumerate(grid):
        # y absorbs the gap between n x and n psi'(theta) left by the solver
        rec = spinal_tail(law, theta, n, n * (x - cum.psi_prime), replicas, seed + i, mode=mode)
        recs.append(rec)
        logs.append(rec.log_mean)
    if not all(math.isfinite(v) for v in logs):
        raise ValueError("zero tail estimate on the grid; increase replicas")
    slope = -float(np.polyfit(np.asarray(grid, dtype=float), np.asarray(logs), 1)[0])
    return RateFit(slope, leg.psi_star, theta, tuple(grid), tuple(logs), tuple(recs))


def gw_survival(offspring_probs, n: int, exact_digits: int = 4000):
    """P(Y_n > 0) for a Galton-Watson process from one ancestor.

    Iterates s_k = 1 - f(1 - s_{k-1}) from s_0 = 1, which stays accurate when
    s_k is tiny.  Exact rationals while the numerator and denominator stay
    below ``exact_digits`` digits, then 60-digit decimals.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if isinstance(offspring_probs, dict):
        offspring_probs = sorted(offspring_probs.items())
    probs = [(int(c), Fraction(str(p)) if isinstance(p, float) else Fraction(p)) for c, p in offspring_probs]
    if any(c < 0 for c, _ in probs) or any(p < 0 for _, p in probs):
        raise ValueError("counts and probabilities must be non-negative")
    total = sum(p for _, p in probs)
    if total != 1:
        raise ValueError(f"probabilities sum to {float(total):g}")

    s = Fraction(1)
    k = 0
    while k < n:
        s = 1 - sum(p * (1 - s) ** c for c, p in probs)
        k += 1
        if max(s.numerator.bit_length(), s.denominator.bit_length()) * 0.30103 > exact_digits:
            break
    if k == n:
        return s
    with localcontext() as ctx:
        ctx.prec = 60
        d = Decimal(s.numerator) / Decimal(s.denominator)
        one = Decimal(1)
        dprobs = [(c, Decimal(p.numerator) / Decimal(p.denominator)) for c, p in probs]
        for _ in range(k, n):
            d = sum(p * _one_minus_power(d, c) for c, p in dprobs)
        return float(d)


def _one_minus_power(s, c):
    """1 - (1 - s)^c without cancellation when s is small."""
    if c == 0:
        return Decimal(0)
    if s > Decimal("0.5"):
        return 1 - (1 - s) ** c
    total, term = Decimal(0), Decimal(1)
    for j in range(1, c + 1):
        term = -term * (c - j + 1) / j * s
        if term == 0:
            break
        total -= term
    return total


# ---------------------------------------------------------------------------
# local limit check


@dataclass(frozen=True)
class LltResult:
    record: EstimateRecord
    limit: float


def llt_check(law: ReproductionLaw, theta: float, n: int, g_kind: str = "exp_tail", y: float = 0.0,
              replicas: int = 100000, seed: int = 0, h: float = 0.5, block: int = 1 << 16) -> LltResult:
    """sqrt(n) e^{y^2/(2 sigma^2 n)} E g(S_n - n psi' + y) along the tilted walk, with its limit.

    g_kind ``exp_tail``: g(x) = e^{-theta x} 1{x >= 0}, limit 1/(sqrt(2 pi) sigma theta).
    g_kind ``interval``: g = 1 on [0, h), limit h/(sqrt(2 pi) sigma).
    """
    _positive_theta(theta)
    if law.is_lattice():
        raise ValueError("law is lattice; the local limit needs a non-lattice law")
    cum = tilted_cumulants(law, theta)
    sigma = math.sqrt(cum.sigma2)
    if g_kind == "exp_tail":
        limit = 1.0 / (math.sqrt(2 * math.pi) * sigma * theta)
    elif g_kind == "interval":
        if not h > 0:
            raise ValueError("h must be > 0")
        limit = h / (math.sqrt(2 * math.pi) * sigma)
    else:
        raise ValueError(f"unknown g_kind {g_kind!r}")

    def work(index, size, rng):
        s = np.asarray(law.to_real(law.sample_tilted_sum(theta, n, size, rng)), dtype=np.float64)
        x = s - n * cum.psi_prime + y
        if g_kind == "exp_tail":
            g = np.where(x >= 0, np.exp(-theta * np.maximum(x, 0.0)), 0.0)
        else:
            g = ((x >= 0) & (x < h)).astype(np.float64)
        return Partial.from_values(index, g)

    parts = run_blocks(work, replicas, seed, block, stream_tag=_TAG_LLT)
    scale = 0.5 * math.log(n) + y * y / (2 * cum.sigma2 * n)
    rec = aggregate(parts, seed=seed, log_scale=scale, diagnostics={"g_kind": g_kind, "limit": limit})
    return LltResult(rec, limit)
