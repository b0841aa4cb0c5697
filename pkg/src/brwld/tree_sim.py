"""Forward simulation of the branching random walk under its original law."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .harness import DEFAULT_BLOCK, EstimateRecord, Partial, aggregate, derive_stream, run_blocks
from .measures import PointMeasure
from .reproduction import ReproductionLaw, TabulatedLaw

DEFAULT_CAP = 10 ** 6


@functools.total_ordering
class _NegInf:
    """Maximal displacement of an extinct population. Not a float."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NEG_INF"

    def __eq__(self, other):
        return other is self

    def __lt__(self, other):
        return other is not self

    def __hash__(self):
        return hash("NEG_INF")


NEG_INF = _NegInf()


@dataclass(frozen=True)
class GenerationSnapshot:
    n: int
    positions: PointMeasure
    m_n: object  # exact location, float, or NEG_INF
    population: int
    capped: bool = False


def _zeros(law: ReproductionLaw, size: int = 1) -> np.ndarray:
    return np.zeros(size, dtype=np.int64 if law.denom is not None else np.float64)


def _snapshot(law, k, pos, capped) -> GenerationSnapshot:
    pm = PointMeasure.from_values(pos, law.denom)
    m = pm.max() if len(pm) else NEG_INF
    return GenerationSnapshot(k, pm, m, int(pos.size), capped)


def run_forward(law: ReproductionLaw, n: int, cap: int = DEFAULT_CAP, seed: int = 0,
                stream: Optional[np.random.Generator] = None) -> list[GenerationSnapshot]:
    """Generations 0..n of one branching random walk started from a single particle at 0.

    Stops at the first generation whose population exceeds ``cap``; that
    snapshot is returned with ``capped=True`` and carries no positions.
    """
    if n < 0 or cap < 1:
        raise ValueError("need n >= 0 and cap >= 1")
    rng = stream if stream is not None else derive_stream(seed, 0)
    pos = _zeros(law)
    out = [_snapshot(law, 0, pos, False)]
    for k in range(1, n + 1):
        counts, disp = law.sample_offspring(pos.size, rng)
        total = int(counts.sum())
        if total > cap:
            out.append(GenerationSnapshot(k, PointMeasure.from_values(_zeros(law, 0), law.denom),
                                          None, total, True))
            break
        pos = np.repeat(pos, counts) + disp
        out.append(_snapshot(law, k, pos, False))
    return out


def extremal_process(snapshot: GenerationSnapshot) -> PointMeasure:
    """Positions seen from the rightmost particle."""
    if snapshot.population == 0 or len(snapshot.positions) == 0:
        raise ValueError("extremal process undefined on extinction")
    pm = snapshot.positions
    return pm.shifted(-pm.locs[-1])


def additive_martingale(snapshot: GenerationSnapshot, theta: float, psi_theta: float) -> float:
    if snapshot.capped:
        raise ValueError("capped snapshot has no positions")
    pm = snapshot.positions
    if len(pm) == 0:
        return 0.0
    logs = theta * pm.locations - snapshot.n * psi_theta + np.log(pm.mult)
    top = float(logs.max())
    return math.exp(top) * float(np.sum(np.exp(logs - top)))


# ---------------------------------------------------------------------------
# batched simulation over many independent replicas


@dataclass
class ForwardBatch:
    """Final-generation particles of ``size`` replicas, grouped by owner."""

    positions: np.ndarray  # position units
    owner: np.ndarray
    capped: np.ndarray  # per replica
    size: int
    survivors_by_gen: Optional[np.ndarray] = None  # (n+1, size) population counts

    def max_per_replica(self) -> tuple[np.ndarray, np.ndarray]:
        """(max position units, alive mask); max is meaningless where not alive."""
        alive = np.bincount(self.owner, minlength=self.size) > 0
        dtype = self.positions.dtype
        fill = np.iinfo(np.int64).min if dtype.kind == "i" else -np.inf
        mx = np.full(self.size, fill, dtype=dtype)
        np.maximum.at(mx, self.owner, self.positions)
        return mx, alive

    def groups(self):
        order = np.argsort(self.owner, kind="stable")
        own = self.owner[order]
        pos = self.positions[order]
        bounds = np.searchsorted(own, np.arange(self.size + 1))
        for r in range(self.size):
            yield r, pos[bounds[r]:bounds[r + 1]]


def forward_batch(law: ReproductionLaw, n: int, size: int, rng: np.random.Generator,
                  cap: int = DEFAULT_CAP, track_population: bool = False) -> ForwardBatch:
    pos = _zeros(law, size)
    owner = np.arange(size, dtype=np.int64)
    capped = np.zeros(size, dtype=bool)
    hist = np.zeros((n + 1, size), dtype=np.int64) if track_population else None
    if hist is not None:
        hist[0] = 1
    for k in range(1, n + 1):
        counts, disp = law.sample_offspring(pos.size, rng)
        pos = np.repeat(pos, counts) + disp
        owner = np.repeat(owner, counts)
        pop = np.bincount(owner, minlength=size)
        over = pop > cap
        if over.any():
            capped |= over
            keep = ~capped[owner]
            pos, owner = pos[keep], owner[keep]
            pop[over] = 0
        if hist is not None:
            hist[k] = pop
    return ForwardBatch(pos, owner, capped, size, hist)


# ---------------------------------------------------------------------------
# exact enumeration for tabulated rational laws


def enumerate_tail(law: TabulatedLaw, n: int, a, max_leaves: int = 10 ** 7) -> Fraction:
    """Exact P(M_n >= a) by recursion on the probability that a subtree stays below ``a``."""
    if not isinstance(law, TabulatedLaw):
        raise TypeError("enumeration needs a tabulated rational law")
    width = max(len(ds) for _, ds in law.rows)
    if width ** n > max_leaves:
        raise ValueError(f"outcome tree too large: up to {width}^{n} leaves > {max_leaves}")
    a = Fraction(a)
    rows = [(p, ds) for p, ds in law.rows if p > 0]

    @functools.lru_cache(maxsize=None)
    def below(x: Fraction, k: int) -> Fraction:
        # P(all generation-k descendants of a particle at x lie strictly below a)
        if k == 0:
            return Fraction(int(x < a))
        total = Fraction(0)
        for p, ds in rows:
            prod = Fraction(1)
            for d in ds:
                prod *= below(x + d, k - 1)
                if prod == 0:
                    break
            total += p * prod
        return total

    return 1 - below(Fraction(0), n)


def naive_tail(law: ReproductionLaw, n: int, a, replicas: int, seed: int = 0,
               cap: int = DEFAULT_CAP, block: int = DEFAULT_BLOCK,
               config_digest: str = "") -> EstimateRecord:
    """Empirical frequency of {M_n >= a}. Capped replicas are excluded and counted."""
    thr = law.threshold_units(a)

    def work(index, size, rng):
        fb = forward_batch(law, n, size, rng, cap)
        mx, alive = fb.max_per_replica()
        hit = (alive & (mx >= thr)).astype(np.float64)
        ok = ~fb.capped
        return Partial.from_values(index, hit[ok], invalid=int(fb.capped.sum()))

    parts = run_blocks(work, replicas, seed, block, stream_tag=11)
    return aggregate(parts, seed=seed, config_digest=config_digest)


def naive_tail_valid(rec: EstimateRecord) -> bool:
    """False when more than 0.1% of replicas hit the population cap."""
    total = rec.replicas + rec.invalid_replicas
    return rec.invalid_replicas <= 0.001 * total
