"""Size-biased spine and the point process seen backwards from the spine tip.

For spine generation ``k`` (counted backwards from the tip) the siblings of the
spine particle each start an ordinary branching random walk that runs for
``k - 1`` generations.  Its leaves, recentred by the spine endpoint ``S_k``,
are the atoms contributed at generation ``k``; together with an atom at 0 they
form the auxiliary process.  Siblings that precede the spine child in brood
order feed the lexicographic tie counter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .measures import PointMeasure
from .reproduction import ReproductionLaw, _GaussianLaw
from .tails import SubtreeTail

DEFAULT_PRUNE_DELTA = 1e-12
DEFAULT_SUBTREE_CAP = 10 ** 6


@dataclass(frozen=True)
class SizeBiasedBrood:
    displacements: tuple  # real (float or Fraction) in brood order
    spine_index: int  # 0-based position of the spine child


def sample_size_biased(law: ReproductionLaw, theta: float, stream: np.random.Generator) -> SizeBiasedBrood:
    if theta <= 0:
        raise ValueError("theta must be > 0")
    counts, disp, spine = law.sample_size_biased(theta, 1, stream)
    if law.denom is not None:
        from fractions import Fraction
        vals = tuple(Fraction(int(d), law.denom) for d in disp)
    else:
        vals = tuple(float(d) for d in disp)
    return SizeBiasedBrood(vals, int(spine[0]))


@dataclass
class AuxiliaryBatch:
    """Auxiliary-process summaries for ``size`` independent realizations.

    Positions are in law units (ticks for lattice laws).  Atoms below
    ``-window`` are discarded; ``total_atoms`` counts the rest, the atom at 0
    included.
    """

    size: int
    n: int
    window: float
    s_n: np.ndarray
    count_at_zero: np.ndarray
    count_above_zero: np.ndarray
    bar_count: np.ndarray
    total_atoms: np.ndarray
    prune_bias: np.ndarray
    last_contrib: np.ndarray
    invalid: np.ndarray
    built: np.ndarray  # replicas whose subtrees were grown
    log_clear: Optional[np.ndarray] = None  # conditional mode: log P(no atom >= 0 | spine)
    integrated: Optional[np.ndarray] = None  # conditional mode: subtrees integrated out per replica
    gen_max: Optional[np.ndarray] = None  # (size, n) real, -inf when nothing in window
    s_path: Optional[np.ndarray] = None  # (size, n) units
    atom_owner: Optional[np.ndarray] = None
    atom_units: Optional[np.ndarray] = None
    atom_gen: Optional[np.ndarray] = None


@dataclass(frozen=True)
class AuxiliaryRealization:
    n: int
    window: float
    atoms: PointMeasure
    s_n: object
    s_path: tuple
    count_at_zero: int
    count_above_zero: int
    bar_count: int
    prune_bias_bound: float
    last_contributing_generation: int
    gen_max: tuple = field(default=())
    invalid: bool = False


def _window_units(law: ReproductionLaw, window: float) -> float:
    if math.isinf(window):
        return math.inf
    return window * law.denom if law.denom is not None else window


_TAIL_CACHE: dict = {}


def subtree_tail(law: ReproductionLaw, depth: int) -> Optional[SubtreeTail]:
    """Cached tail table for Gaussian-displacement laws, None otherwise."""
    if not isinstance(law, _GaussianLaw):
        return None
    key = repr(law)
    tab = _TAIL_CACHE.get(key)
    if tab is None or tab.max_depth < depth:
        tab = SubtreeTail(law, max(depth, 16))
        _TAIL_CACHE[key] = tab
    return tab


_TAIL_ERROR: dict = {}


def tail_error(law: ReproductionLaw, depth: int) -> float:
    """Grid-error estimate of the cached tail table: gap to a table at twice the step."""
    key = (repr(law), depth)
    if key not in _TAIL_ERROR:
        fine = subtree_tail(law, depth)
        coarse = SubtreeTail(law, depth, h=2 * fine.h / law.sd_d)
        probe = np.linspace(-5.0 * law.sd_d, fine.x_lo + fine.h * fine.grid_size, 4001)
        gap = 0.0
        for j in range(1, depth + 1):
            gap = max(gap, float(np.max(np.abs(fine.prob(j, probe) - coarse.prob(j, probe)))))
        _TAIL_ERROR[key] = gap
    return _TAIL_ERROR[key]


def supports_conditional(law: ReproductionLaw) -> bool:
    return isinstance(law, _GaussianLaw)


def build_auxiliary_batch(law: ReproductionLaw, theta: float, n: int, size: int,
                          stream: np.random.Generator, window: float = 0.0,
                          prune_delta: float = DEFAULT_PRUNE_DELTA, cap: int = DEFAULT_SUBTREE_CAP,
                          active_threshold: Optional[float] = None, keep_atoms: bool = False,
                          record_gen_max: bool = False, keep_path: bool = False,
                          conditional: bool = False) -> AuxiliaryBatch:
    """Build ``size`` realizations of the auxiliary process up to spine generation ``n``.

    Spine broods come from one child stream, drawn generation by generation;
    the sibling subtrees of generation ``k`` use their own child stream ``k``.
    A realization built to ``n`` is therefore a restriction of the one built
    to ``n + 1`` from the same stream.

    ``active_threshold`` (position units) skips subtree growth for replicas
    whose spine endpoint ends below it; their summaries stay at the D_0 values
    and ``built`` is False for them.

    For Gaussian-displacement laws a particle is pruned when the exact
    probability that its subtree reaches ``-window`` is below ``prune_delta``,
    and that probability is added to ``prune_bias``.  Other laws use the
    law's Chernoff bound plus exact support pruning.

    ``conditional=True`` (Gaussian laws, window 0) grows no subtrees at all:
    each sibling subtree is replaced by its exact probability of leaving
    an atom at or above 0, accumulated in ``log_clear``.  Then
    ``exp(log_clear)`` is the conditional probability, given the spine, that
    the auxiliary process has no atom above 0.  In this mode
    ``count_above_zero`` counts subtrees drawn, each with its own probability,
    as reaching 0, and ``last_contrib`` is the last such generation; both
    have the law of their explicit counterparts' indicators.
    """
    if theta <= 0:
        raise ValueError("theta must be > 0")
    if n < 0 or window < 0:
        raise ValueError("need n >= 0 and window >= 0")
    if conditional and (window != 0 or not supports_conditional(law)):
        raise ValueError("conditional mode needs a Gaussian-displacement law and window 0")
    spine_rng, tree_parent = stream.spawn(2)
    tree_rngs = tree_parent.spawn(n) if n else []
    unit_dtype = np.int64 if law.denom is not None else np.float64
    w_units = _window_units(law, window)
    log_delta = math.log(prune_delta) if prune_delta > 0 else -math.inf
    do_prune = prune_delta > 0 and not math.isinf(window)
    tail = subtree_tail(law, max(n - 1, 1)) if (do_prune or conditional) else None

    S = np.zeros(size, dtype=unit_dtype)
    path = np.zeros((size, n), dtype=unit_dtype) if keep_path else None
    roots = []
    ids = np.arange(size, dtype=np.int64)
    for k in range(1, n + 1):
        counts, disp, spine_idx = law.sample_size_biased(theta, size, spine_rng)
        starts = np.cumsum(counts) - counts
        S = S + disp[starts + spine_idx]
        if path is not None:
            path[:, k - 1] = S
        owner = np.repeat(ids, counts)
        within = np.arange(disp.size) - np.repeat(starts, counts)
        spine_of = np.repeat(spine_idx, counts)
        sib = within != spine_of
        roots.append((owner[sib], disp[sib] - S[owner[sib]], within[sib] < spine_of[sib]))

    c0 = np.ones(size, dtype=np.int64)
    cplus = np.zeros(size, dtype=np.int64)
    bar = np.zeros(size, dtype=np.int64)
    total = np.ones(size, dtype=np.int64)
    bias = np.zeros(size, dtype=np.float64)
    last = np.zeros(size, dtype=np.int64)
    invalid = np.zeros(size, dtype=bool)
    built = np.ones(size, dtype=bool) if active_threshold is None else (S >= active_threshold)
    gen_max = np.full((size, n), -np.inf) if record_gen_max else None
    keep_o, keep_u, keep_g = ([], [], []) if keep_atoms else (None, None, None)

    if conditional:
        log_clear = np.zeros(size, dtype=np.float64)
        integrated = np.zeros(size, dtype=np.int64)
        for k in range(1, n + 1):
            own, pos, _ = roots[k - 1]
            sel = built[own]
            own, pos = own[sel], pos[sel]
            if pos.size == 0:
                continue
            hit = tail.prob(k - 1, -pos)
            with np.errstate(divide="ignore"):
                log_clear += np.bincount(own, weights=np.log1p(-hit), minlength=size)
            integrated += np.bincount(own, minlength=size)
            drawn = tree_rngs[k - 1].random(pos.size) < hit
            cplus += np.bincount(own[drawn], minlength=size)
            last[own[drawn]] = k
        return AuxiliaryBatch(size=size, n=n, window=window, s_n=S, count_at_zero=c0,
                              count_above_zero=cplus, bar_count=bar, total_atoms=total,
                              prune_bias=bias, last_contrib=last, invalid=invalid, built=built,
                              log_clear=log_clear, integrated=integrated, s_path=path)

    for k in range(1, n + 1):
        own, pos, lex = roots[k - 1]
        sel = built[own] & ~invalid[own]
        own, pos, lex = own[sel], pos[sel], lex[sel]
        rng = tree_rngs[k - 1]
        depth = k - 1
        for d in range(depth):
            if pos.size == 0:
                break
            remaining = depth - d
            if not math.isinf(w_units):
                drop = law.exact_unreachable(pos, remaining, w_units)
                if do_prune:
                    if tail is not None:
                        reach = tail.prob(remaining, -w_units - pos)
                        kill = (reach < prune_delta) & ~drop
                        if kill.any():
                            bias += np.bincount(own[kill], weights=reach[kill], minlength=size)
                    else:
                        logb = law.log_prune_bound(theta, pos, remaining, window)
                        kill = (logb < log_delta) & ~drop
                        if kill.any():
                            bias += np.bincount(own[kill], weights=np.exp(logb[kill]), minlength=size)
                    drop = drop | kill
                if drop.any():
                    keep = ~drop
                    own, pos, lex = own[keep], pos[keep], lex[keep]
                    if pos.size == 0:
                        break
            cnt, dsp = law.sample_offspring(pos.size, rng)
            pos = np.repeat(pos, cnt) + dsp
            own = np.repeat(own, cnt)
            lex = np.repeat(lex, cnt)
            if pos.size:
                pop = np.bincount(own, minlength=size)
                over = pop > cap
                if over.any():
                    invalid |= over
                    keep = ~over[own]
                    own, pos, lex = own[keep], pos[keep], lex[keep]
        if pos.size == 0:
            continue
        inw = pos >= -w_units
        if not inw.all():
            own, pos, lex = own[inw], pos[inw], lex[inw]
            if pos.size == 0:
                continue
        at0 = pos == 0
        total += np.bincount(own, minlength=size)
        c0 += np.bincount(own[at0], minlength=size)
        cplus += np.bincount(own[pos > 0], minlength=size)
        bar += np.bincount(own[at0 & lex], minlength=size)
        last[own] = k
        if gen_max is not None:
            col = np.full(size, -np.inf)
            np.maximum.at(col, own, law.to_real(pos).astype(np.float64))
            gen_max[:, k - 1] = col
        if keep_atoms:
            keep_o.append(own)
            keep_u.append(pos)
            keep_g.append(np.full(own.size, k, dtype=np.int64))

    batch = AuxiliaryBatch(size=size, n=n, window=window, s_n=S, count_at_zero=c0, count_above_zero=cplus,
                           bar_count=bar, total_atoms=total, prune_bias=bias, last_contrib=last,
                           invalid=invalid, built=built, gen_max=gen_max, s_path=path)
    if keep_atoms:
        cat = (lambda xs, dt: np.concatenate(xs) if xs else np.zeros(0, dtype=dt))
        batch.atom_owner = cat(keep_o, np.int64)
        batch.atom_units = cat(keep_u, unit_dtype)
        batch.atom_gen = cat(keep_g, np.int64)
    return batch


def realization(batch: AuxiliaryBatch, law: ReproductionLaw, r: int) -> AuxiliaryRealization:
    """Materialize replica ``r`` of a batch built with ``keep_atoms=True``."""
    if batch.atom_owner is None:
        raise ValueError("batch was built without keep_atoms")
    mine = batch.atom_units[batch.atom_owner == r]
    zero = np.zeros(1, dtype=mine.dtype)
    atoms = PointMeasure.from_values(np.concatenate([zero, mine]), law.denom)
    if law.denom is not None:
        from fractions import Fraction
        conv = (lambda u: Fraction(int(u), law.denom))
    else:
        conv = float
    path = tuple(conv(u) for u in batch.s_path[r]) if batch.s_path is not None else ()
    gm = tuple(float(x) for x in batch.gen_max[r]) if batch.gen_max is not None else ()
    return AuxiliaryRealization(
        n=batch.n, window=batch.window, atoms=atoms, s_n=conv(batch.s_n[r]), s_path=path,
        count_at_zero=int(batch.count_at_zero[r]), count_above_zero=int(batch.count_above_zero[r]),
        bar_count=int(batch.bar_count[r]), prune_bias_bound=float(batch.prune_bias[r]),
        last_contributing_generation=int(batch.last_contrib[r]), gen_max=gm,
        invalid=bool(batch.invalid[r]))


def build_auxiliary(law: ReproductionLaw, theta: float, n: int, window: float = 0.0,
                    prune_delta: float = DEFAULT_PRUNE_DELTA, cap: int = DEFAULT_SUBTREE_CAP,
                    stream: Optional[np.random.Generator] = None, seed: int = 0) -> AuxiliaryRealization:
    """One realization of the auxiliary process, atoms restricted to [-window, inf)."""
    if stream is None:
        from .harness import derive_stream
        stream = derive_stream(seed, 0)
    batch = build_auxiliary_batch(law, theta, n, 1, stream, window=window, prune_delta=prune_delta,
                                  cap=cap, keep_atoms=True, record_gen_max=True, keep_path=True)
    return realization(batch, law, 0)


def stabilization_fraction(realizations, burn_in: int, epsilon: float) -> float:
    """Share of realizations with every generation-l (l >= burn_in) sibling maximum below -epsilon*l.

    Accepts a sequence of AuxiliaryRealization or an AuxiliaryBatch built with
    ``record_gen_max=True``.
    """
    if isinstance(realizations, AuxiliaryBatch):
        gm, n, window = realizations.gen_max, realizations.n, realizations.window
        ok_rows = ~realizations.invalid
        if gm is None:
            raise ValueError("batch was built without record_gen_max")
    else:
        reals = list(realizations)
        if not reals:
            raise ValueError("no realizations")
        n, window = reals[0].n, min(r.window for r in reals)
        gm = np.array([r.gen_max for r in reals], dtype=np.float64).reshape(len(reals), n)
        ok_rows = ~np.array([r.invalid for r in reals])
    if window < epsilon * n:
        raise ValueError("A-event undecidable at this window")
    if n == 0 or burn_in > n:
        return 1.0
    ells = np.arange(1, n + 1, dtype=np.float64)
    cols = ells >= max(burn_in, 1)
    good = np.all(gm[:, cols] < -epsilon * ells[cols], axis=1)
    good = good[ok_rows]
    return float(good.mean()) if good.size else math.nan
