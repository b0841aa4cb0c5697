"""Reproduction laws of a branching random walk and their deterministic quantities.

A law describes the point process of children displacements produced by one
particle.  Four families are supported: an explicit finite table of joint
outcomes (rational, hence lattice) and three Gaussian-displacement families
that differ only in how the number of children is drawn.

Positions produced by a tabulated law are integer *ticks*: the displacement
``d`` is stored as ``d * law.denom``.  All comparisons on lattice laws are then
exact integer comparisons.  Continuous families use plain floats and have
``denom is None``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

KINDS = ("tabulated", "poisson_gaussian", "fixed_gaussian", "mixed_gaussian")


class LawError(ValueError):
    """Raised for malformed or invalid reproduction-law descriptions."""


def _logsumexp(a: np.ndarray) -> float:
    m = float(np.max(a))
    if not math.isfinite(m):
        return m
    return m + math.log(float(np.sum(np.exp(a - m))))


def _finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise OverflowError(f"{what} is not finite ({value!r})")
    return value


class ReproductionLaw:
    """Common interface.  Subclasses implement the family-specific pieces."""

    kind: str = ""
    denom: Optional[int] = None

    # deterministic quantities -------------------------------------------------
    def log_laplace(self, theta: float) -> float:
        raise NotImplementedError

    def psi_prime(self, theta: float) -> float:
        raise NotImplementedError

    def tilted_variance(self, theta: float) -> float:
        raise NotImplementedError

    def mean_offspring(self) -> Fraction | float:
        raise NotImplementedError

    def prob_at_least_two(self) -> float:
        raise NotImplementedError

    def prob_extinct(self) -> float:
        raise NotImplementedError

    def offspring_distribution(self) -> Optional[list[tuple[int, Fraction | float]]]:
        """Finite offspring law as (count, probability) pairs, or None if unbounded."""
        return None

    def support_max(self) -> float:
        return math.inf

    def mean_displacement_sum(self) -> float:
        """E(sum of children displacements)."""
        raise NotImplementedError

    def is_lattice(self) -> bool:
        return False

    # units -------------------------------------------------------------------
    def to_real(self, units):
        if self.denom is None:
            return units
        return np.asarray(units, dtype=np.float64) / self.denom

    def to_units(self, x):
        """Real position -> position units (ticks for lattice laws)."""
        if self.denom is None:
            return x
        return np.asarray(x, dtype=np.float64) * self.denom

    def threshold_units(self, a) -> float:
        """Threshold ``a`` in position units, so that ``pos >= a`` iff ``units >= result``.

        Float thresholds on lattice laws are snapped to the nearest tick when
        they are within 1e-9 of it; this absorbs rounding in ``n*psi' + y``.
        """
        if self.denom is None:
            return float(a)
        if isinstance(a, (int, Fraction)):
            return float(math.ceil(Fraction(a) * self.denom))
        scaled = float(a) * self.denom
        nearest = round(scaled)
        if abs(scaled - nearest) <= 1e-9 * max(1.0, abs(scaled)):
            return float(nearest)
        return float(math.ceil(scaled))

    # sampling ----------------------------------------------------------------
    def sample_offspring(self, size: int, rng: np.random.Generator):
        """Children of ``size`` ordinary particles: (counts, flat displacements)."""
        raise NotImplementedError

    def sample_size_biased(self, theta: float, size: int, rng: np.random.Generator):
        """``size`` independent size-biased broods: (counts, flat displacements, spine index)."""
        raise NotImplementedError

    def sample_tilted_steps(self, theta: float, size: int, rng: np.random.Generator):
        raise NotImplementedError

    def sample_tilted_sum(self, theta: float, n: int, size: int, rng: np.random.Generator):
        """Endpoints S_n of ``size`` tilted walks, in position units."""
        dtype = np.int64 if self.denom is not None else np.float64
        total = np.zeros(size, dtype=dtype)
        for _ in range(n):
            total += self.sample_tilted_steps(theta, size, rng)
        return total

    def log_prune_bound(self, theta: float, rel_units, remaining: int, window: float):
        """Log of an upper bound on the expected number of descendants, ``remaining``
        generations below particles at ``rel_units``, that land in ``[-window, inf)``."""
        rel = self.to_real(rel_units)
        return theta * (rel + window) + remaining * self.log_laplace(theta)

    def exact_unreachable(self, rel_units, remaining: int, window_units: float):
        """Particles whose descendants cannot reach the window at all."""
        return np.zeros(np.shape(rel_units), dtype=bool)


# ---------------------------------------------------------------------------
# tabulated (rational lattice) laws


@dataclass(frozen=True, eq=False)
class TabulatedLaw(ReproductionLaw):
    rows: tuple[tuple[Fraction, tuple[Fraction, ...]], ...]
    name: str = ""
    kind: str = field(default="tabulated", init=False)

    def __post_init__(self):
        rows = tuple((Fraction(p), tuple(Fraction(d) for d in ds)) for p, ds in self.rows)
        object.__setattr__(self, "rows", rows)
        if not rows:
            raise LawError("tabulated law needs at least one row")
        for p, _ in rows:
            if p < 0 or p > 1:
                raise LawError(f"row probability {p} outside [0, 1]")
        total = sum(p for p, _ in rows)
        if total != 1:
            raise LawError(f"probabilities sum to {float(total)!r}")
        if all(len(ds) == 0 for p, ds in rows if p > 0):
            raise LawError("law is extinct almost surely: P(Z1(R)=0) must be < 1")
        denoms = [d.denominator for _, ds in rows for d in ds] or [1]
        denom = reduce(lambda a, b: a * b // math.gcd(a, b), denoms, 1)
        object.__setattr__(self, "denom", denom)

        live = [(p, ds) for p, ds in rows if p > 0]
        probs = np.array([float(p) for p, _ in live])
        lens = np.array([len(ds) for _, ds in live], dtype=np.int64)
        width = max(1, int(lens.max()))
        ticks = np.zeros((len(live), width), dtype=np.int64)
        for j, (_, ds) in enumerate(live):
            for i, d in enumerate(ds):
                ticks[j, i] = int(d * denom)
        object.__setattr__(self, "_probs", probs)
        object.__setattr__(self, "_cum", np.cumsum(probs) / probs.sum())
        object.__setattr__(self, "_lens", lens)
        object.__setattr__(self, "_ticks", ticks)
        # flat (row, child) pairs
        pair_p = np.repeat(probs, lens)
        pair_d = np.concatenate([ticks[j, : lens[j]] for j in range(len(live))]) if lens.sum() else np.zeros(0, np.int64)
        object.__setattr__(self, "_pair_logp", np.log(pair_p))
        object.__setattr__(self, "_pair_ticks", pair_d)
        object.__setattr__(self, "_pair_real", pair_d / denom)
        object.__setattr__(self, "_max_ticks", int(pair_d.max()))

    # deterministic -----------------------------------------------------------
    def log_laplace(self, theta: float) -> float:
        return _finite(_logsumexp(self._pair_logp + theta * self._pair_real), "psi(theta)")

    def _tilt_weights(self, theta: float) -> np.ndarray:
        psi = self.log_laplace(theta)
        return np.exp(self._pair_logp + theta * self._pair_real - psi)

    def psi_prime(self, theta: float) -> float:
        return float(np.sum(self._tilt_weights(theta) * self._pair_real))

    def tilted_variance(self, theta: float) -> float:
        w = self._tilt_weights(theta)
        mean = float(np.sum(w * self._pair_real))
        return float(np.sum(w * (self._pair_real - mean) ** 2))

    def offspring_distribution(self):
        dist: dict[int, Fraction] = {}
        for p, ds in self.rows:
            if p > 0:
                dist[len(ds)] = dist.get(len(ds), Fraction(0)) + p
        return sorted(dist.items())

    def mean_offspring(self) -> Fraction:
        return sum((p * len(ds) for p, ds in self.rows), Fraction(0))

    def prob_at_least_two(self) -> float:
        return float(sum((p for p, ds in self.rows if len(ds) >= 2), Fraction(0)))

    def prob_extinct(self) -> float:
        return float(sum((p for p, ds in self.rows if len(ds) == 0), Fraction(0)))

    def support_max(self) -> float:
        return self._max_ticks / self.denom

    def mass_at_max(self) -> Fraction:
        """E(number of children at the largest possible displacement)."""
        top = max(d for p, ds in self.rows if p > 0 for d in ds)
        return sum((p * sum(1 for d in ds if d == top) for p, ds in self.rows), Fraction(0))

    def mean_displacement_sum(self) -> float:
        return float(sum((p * sum(ds, Fraction(0)) for p, ds in self.rows), Fraction(0)))

    def is_lattice(self) -> bool:
        return True

    def lattice_span(self) -> tuple[Fraction, Fraction]:
        """(a, b) with every displacement in a + bZ; b = 0 when all displacements coincide."""
        ds = sorted({d for p, row in self.rows if p > 0 for d in row})
        a = ds[0]
        b = Fraction(0)
        for d in ds[1:]:
            diff = d - a
            b = Fraction(math.gcd(b.numerator * diff.denominator, diff.numerator * b.denominator),
                         b.denominator * diff.denominator) if b else diff
        return a, b

    # sampling ----------------------------------------------------------------
    def sample_offspring(self, size, rng):
        rows = np.searchsorted(self._cum, rng.random(size), side="right")
        rows = np.minimum(rows, len(self._lens) - 1)
        counts = self._lens[rows]
        disp = _gather_rows(self._ticks, rows, counts)
        return counts, disp

    def sample_size_biased(self, theta, size, rng):
        psi = self.log_laplace(theta)
        e = np.exp(theta * self._ticks / self.denom)
        mask = np.arange(self._ticks.shape[1])[None, :] < self._lens[:, None]
        e = np.where(mask, e, 0.0)
        row_mass = e.sum(axis=1)
        row_w = self._probs * row_mass / math.exp(psi)
        row_cum = np.cumsum(row_w) / row_w.sum()
        rows = np.searchsorted(row_cum, rng.random(size), side="right")
        rows = np.minimum(rows, len(row_w) - 1)
        within = np.cumsum(e / np.where(row_mass > 0, row_mass, 1.0)[:, None], axis=1)
        u = rng.random(size)
        spine = (within[rows] <= u[:, None]).sum(axis=1)
        spine = np.minimum(spine, self._lens[rows] - 1)
        counts = self._lens[rows]
        disp = _gather_rows(self._ticks, rows, counts)
        return counts, disp, spine

    def sample_tilted_steps(self, theta, size, rng):
        w = self._tilt_weights(theta)
        cum = np.cumsum(w) / w.sum()
        idx = np.minimum(np.searchsorted(cum, rng.random(size), side="right"), len(w) - 1)
        return self._pair_ticks[idx]

    def exact_unreachable(self, rel_units, remaining, window_units):
        return rel_units + remaining * self._max_ticks < -window_units

    def describe(self) -> dict:
        return {"kind": self.kind,
                "rows": [[str(p), [str(d) for d in ds]] for p, ds in self.rows]}


def _gather_rows(table: np.ndarray, rows: np.ndarray, counts: np.ndarray) -> np.ndarray:
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=table.dtype)
    starts = np.cumsum(counts) - counts
    within = np.arange(total) - np.repeat(starts, counts)
    return table[np.repeat(rows, counts), within]


# ---------------------------------------------------------------------------
# Gaussian-displacement families


@dataclass(frozen=True, eq=False)
class _GaussianLaw(ReproductionLaw):
    mean_d: float = 0.0
    sd_d: float = 1.0

    def _check_gauss(self):
        if not (self.sd_d > 0 and math.isfinite(self.sd_d)):
            raise LawError("sd must be a positive real")
        if not math.isfinite(self.mean_d):
            raise LawError("mean must be finite")

    def _log_mean(self) -> float:
        return math.log(float(self.mean_offspring()))

    def log_laplace(self, theta):
        return _finite(self._log_mean() + theta * self.mean_d + 0.5 * theta * theta * self.sd_d ** 2,
                       "psi(theta)")

    def psi_prime(self, theta):
        return _finite(self.mean_d + theta * self.sd_d ** 2, "psi'(theta)")

    def tilted_variance(self, theta):
        return self.sd_d ** 2

    def mean_displacement_sum(self):
        return float(self.mean_offspring()) * self.mean_d

    def _draw_counts(self, size, rng):
        raise NotImplementedError

    def _draw_biased_counts(self, size, rng):
        raise NotImplementedError

    def sample_offspring(self, size, rng):
        counts = self._draw_counts(size, rng)
        disp = rng.normal(self.mean_d, self.sd_d, int(counts.sum()))
        return counts, disp

    def sample_size_biased(self, theta, size, rng):
        counts = self._draw_biased_counts(size, rng)
        spine = np.floor(rng.random(size) * counts).astype(np.int64)
        disp = rng.normal(self.mean_d, self.sd_d, int(counts.sum()))
        starts = np.cumsum(counts) - counts
        disp[starts + spine] += theta * self.sd_d ** 2
        return counts, disp, spine

    def sample_tilted_steps(self, theta, size, rng):
        return rng.normal(self.psi_prime(theta), self.sd_d, size)

    def sample_tilted_sum(self, theta, n, size, rng):
        # sum of n i.i.d. Normal steps is Normal; sampled exactly in one draw
        return rng.normal(n * self.psi_prime(theta), self.sd_d * math.sqrt(n), size)

    def log_prune_bound(self, theta, rel_units, remaining, window):
        # inf over tilts lam >= 0 of lam*(p + W) + remaining*psi(lam), closed form
        rel = np.asarray(rel_units, dtype=np.float64)
        j = remaining
        s2 = self.sd_d ** 2
        lam = np.maximum(0.0, -(rel + window + j * self.mean_d) / (j * s2))
        return lam * (rel + window) + j * (self._log_mean() + lam * self.mean_d + 0.5 * lam * lam * s2)


@dataclass(frozen=True, eq=False)
class PoissonGaussianLaw(_GaussianLaw):
    mu: float = 1.0
    kind: str = field(default="poisson_gaussian", init=False)

    def __post_init__(self):
        self._check_gauss()
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise LawError("mu must be a positive real")

    def mean_offspring(self):
        return self.mu

    def prob_at_least_two(self):
        return 1.0 - math.exp(-self.mu) * (1.0 + self.mu)

    def prob_extinct(self):
        return math.exp(-self.mu)

    def _draw_counts(self, size, rng):
        return rng.poisson(self.mu, size).astype(np.int64)

    def _draw_biased_counts(self, size, rng):
        # size-biased Poisson(mu) is 1 + Poisson(mu)
        return 1 + rng.poisson(self.mu, size).astype(np.int64)

    def describe(self):
        return {"kind": self.kind, "mu": self.mu, "mean": self.mean_d, "sd": self.sd_d}


@dataclass(frozen=True, eq=False)
class MixedGaussianLaw(_GaussianLaw):
    offspring_probs: tuple[tuple[int, Fraction], ...] = ((1, Fraction(1)),)
    kind: str = field(default="mixed_gaussian", init=False)

    def __post_init__(self):
        self._check_gauss()
        probs = tuple(sorted((int(c), Fraction(p)) for c, p in self.offspring_probs))
        object.__setattr__(self, "offspring_probs", probs)
        if any(c < 0 for c, _ in probs) or any(p < 0 for _, p in probs):
            raise LawError("offspring counts and probabilities must be non-negative")
        total = sum(p for _, p in probs)
        if total != 1:
            raise LawError(f"probabilities sum to {float(total)!r}")
        if all(c == 0 for c, p in probs if p > 0):
            raise LawError("law is extinct almost surely: P(Z1(R)=0) must be < 1")
        cs = np.array([c for c, _ in probs], dtype=np.int64)
        ps = np.array([float(p) for _, p in probs])
        object.__setattr__(self, "_counts", cs)
        object.__setattr__(self, "_cum", np.cumsum(ps) / ps.sum())
        bw = cs * ps
        object.__setattr__(self, "_bcum", np.cumsum(bw) / bw.sum())

    def offspring_distribution(self):
        return list(self.offspring_probs)

    def mean_offspring(self):
        return sum((c * p for c, p in self.offspring_probs), Fraction(0))

    def prob_at_least_two(self):
        return float(sum((p for c, p in self.offspring_probs if c >= 2), Fraction(0)))

    def prob_extinct(self):
        return float(sum((p for c, p in self.offspring_probs if c == 0), Fraction(0)))

    def _draw_counts(self, size, rng):
        idx = np.minimum(np.searchsorted(self._cum, rng.random(size), side="right"), len(self._counts) - 1)
        return self._counts[idx]

    def _draw_biased_counts(self, size, rng):
        idx = np.minimum(np.searchsorted(self._bcum, rng.random(size), side="right"), len(self._counts) - 1)
        return self._counts[idx]

    def describe(self):
        return {"kind": self.kind, "offspring": [[c, str(p)] for c, p in self.offspring_probs],
                "mean": self.mean_d, "sd": self.sd_d}


@dataclass(frozen=True, eq=False)
class FixedGaussianLaw(MixedGaussianLaw):
    b: int = 2
    kind: str = field(default="fixed_gaussian", init=False)

    def __post_init__(self):
        if int(self.b) != self.b or self.b < 1:
            raise LawError("b must be a positive integer")
        object.__setattr__(self, "offspring_probs", ((int(self.b), Fraction(1)),))
        super().__post_init__()

    def describe(self):
        return {"kind": self.kind, "b": self.b, "mean": self.mean_d, "sd": self.sd_d}


# ---------------------------------------------------------------------------
# constructors and presets


def tabulated(rows: Sequence[tuple], name: str = "") -> TabulatedLaw:
    return TabulatedLaw(tuple((Fraction(p), tuple(Fraction(d) for d in ds)) for p, ds in rows), name=name)


def fixed_gaussian(b: int, mean: float = 0.0, sd: float = 1.0) -> FixedGaussianLaw:
    return FixedGaussianLaw(mean_d=float(mean), sd_d=float(sd), b=b)


def poisson_gaussian(mu: float, mean: float = 0.0, sd: float = 1.0) -> PoissonGaussianLaw:
    return PoissonGaussianLaw(mean_d=float(mean), sd_d=float(sd), mu=float(mu))


def mixed_gaussian(offspring, mean: float = 0.0, sd: float = 1.0) -> MixedGaussianLaw:
    """``offspring`` maps count -> probability (dict or pairs)."""
    if isinstance(offspring, dict):
        offspring = sorted(offspring.items())
    return MixedGaussianLaw(mean_d=float(mean), sd_d=float(sd),
                            offspring_probs=tuple((int(c), Fraction(str(p)) if isinstance(p, float) else Fraction(p))
                                                  for c, p in offspring))


def c2pm1() -> TabulatedLaw:
    """Two children, both +1 / one each / both -1 with probabilities 1/4, 1/2, 1/4."""
    return tabulated([("1/4", (1, 1)), ("1/2", (1, -1)), ("1/4", (-1, -1))], name="C2PM1")


def single_child(d=1) -> TabulatedLaw:
    return tabulated([(1, (d,))], name="single_child")


PRESETS = {
    "c2pm1": c2pm1,
    "single_child": single_child,
    "binary_gauss": lambda: fixed_gaussian(2, 0.0, 1.0),
    "subcritical": lambda: mixed_gaussian([(0, "0.6"), (2, "0.4")]),
    "critical": lambda: mixed_gaussian([(0, "0.5"), (2, "0.5")]),
}


# ---------------------------------------------------------------------------
# law-file parsing

_KEY = re.compile(r"([A-Za-z_][A-Za-z_0-9]*)\s*=")


def _entries(text: str) -> list[tuple[str, str]]:
    out = []
    for raw in re.split(r"[\n;]", text):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = _KEY.split(line)
        if parts[0].strip():
            raise LawError(f"malformed entry {line!r}")
        for key, value in zip(parts[1::2], parts[2::2]):
            out.append((key.lower(), value.strip()))
    return out


def _number(text: str, key: str) -> Fraction:
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise LawError(f"bad numeric value for {key}: {text!r}") from None


def parse_law(spec: str) -> ReproductionLaw:
    """Parse a law from key = value text (file contents or a one-line inline form).

    >>> parse_law("kind=fixed_gaussian b=2 mean=0 sd=1").b
    2
    """
    entries = _entries(spec)
    if not entries:
        raise LawError("empty law specification")
    keys = [k for k, _ in entries]
    if "kind" not in keys:
        raise LawError("missing key 'kind'")
    single = {}
    rows = []
    for k, v in entries:
        if k == "row":
            rows.append(v)
        elif k in single:
            raise LawError(f"duplicate key {k!r}")
        else:
            single[k] = v
    kind = single.pop("kind").strip()
    if kind not in KINDS:
        raise LawError(f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}")

    def take(name, default=None):
        if name in single:
            return single.pop(name)
        if default is None:
            raise LawError(f"{kind} law requires key {name!r}")
        return default

    if kind == "tabulated":
        if not rows:
            raise LawError("tabulated law requires at least one 'row' entry")
        parsed = []
        for r in rows:
            if ":" not in r:
                raise LawError(f"row must read '<prob> : <d1> <d2> ...', got {r!r}")
            p, ds = r.split(":", 1)
            parsed.append((_number(p, "row probability"), tuple(_number(d, "displacement") for d in ds.split())))
        name = single.pop("name", "")
        law: ReproductionLaw = TabulatedLaw(tuple(parsed), name=name)
    else:
        if rows:
            raise LawError(f"'row' entries are only valid for tabulated laws")
        mean = float(_number(take("mean", "0"), "mean"))
        sd = float(_number(take("sd", "1"), "sd"))
        if kind == "poisson_gaussian":
            law = PoissonGaussianLaw(mean_d=mean, sd_d=sd, mu=float(_number(take("mu"), "mu")))
        elif kind == "fixed_gaussian":
            b = _number(take("b"), "b")
            if b.denominator != 1:
                raise LawError("b must be a positive integer")
            law = FixedGaussianLaw(mean_d=mean, sd_d=sd, b=int(b))
        else:
            pairs = []
            for tok in take("offspring").split():
                if ":" not in tok:
                    raise LawError(f"offspring entries read 'count:prob', got {tok!r}")
                c, p = tok.split(":", 1)
                cnt = _number(c, "offspring count")
                if cnt.denominator != 1:
                    raise LawError("offspring counts must be integers")
                pairs.append((int(cnt), _number(p, "offspring probability")))
            law = MixedGaussianLaw(mean_d=mean, sd_d=sd, offspring_probs=tuple(pairs))
    if single:
        raise LawError(f"unexpected keys for {kind}: {', '.join(sorted(single))}")
    return law


def load_law(ref: str) -> ReproductionLaw:
    """Resolve a preset name, a path to a law file, or inline law text."""
    if ref.lower() in PRESETS:
        return PRESETS[ref.lower()]()
    path = Path(ref)
    if "=" not in ref and path.exists():
        return parse_law(path.read_text())
    return parse_law(ref)


# ---------------------------------------------------------------------------
# deterministic quantities


@dataclass(frozen=True)
class CumulantReport:
    theta: float
    psi: float
    psi_prime: float
    sigma2: float
    rate: float


@dataclass(frozen=True)
class LegendreResult:
    psi_star: float
    theta_star: float
    boundary: Optional[str] = None  # None (interior), "zero" or "infinity"


@dataclass(frozen=True)
class CriticalSpeed:
    x_star: float
    solvable: bool
    theta_star: Optional[float] = None
    note: str = ""


@dataclass(frozen=True)
class AssumptionReport:
    asn: bool
    as1: bool
    as2: bool
    as3: bool
    as4: bool
    regime: str
    psi0: float
    lattice_span: Optional[tuple[Fraction, Fraction]] = None

    def all_hold(self) -> bool:
        return self.asn and self.as1 and self.as2 and self.as3 and self.as4


def log_laplace(law: ReproductionLaw, theta: float) -> float:
    if theta < 0:
        raise ValueError("theta must be >= 0")
    return law.log_laplace(theta)


def tilted_cumulants(law: ReproductionLaw, theta: float) -> CumulantReport:
    """psi, psi', tilted variance and the exponential rate theta*psi' - psi at ``theta``.

    The variance is that of the many-to-one step, i.e. normalised by e^{psi}.
    """
    if theta < 0:
        raise ValueError("theta must be >= 0")
    psi = law.log_laplace(theta)
    dpsi = law.psi_prime(theta)
    s2 = _finite(law.tilted_variance(theta), "sigma^2(theta)")
    rate = _finite(theta * dpsi - psi, "rate")
    return CumulantReport(theta=theta, psi=psi, psi_prime=dpsi, sigma2=s2, rate=rate)


def legendre(law: ReproductionLaw, x: float) -> LegendreResult:
    """sup over theta >= 0 of theta*x - psi(theta), with the maximizing tilt."""
    top = law.support_max()
    if x >= top:
        if x > top:
            return LegendreResult(math.inf, math.inf, "infinity")
        # theta*top - psi(theta) increases to -log E(#children at the top)
        return LegendreResult(-math.log(float(law.mass_at_max())) + 0.0, math.inf, "infinity")
    if law.psi_prime(0.0) >= x:
        return LegendreResult(-law.log_laplace(0.0), 0.0, "zero")
    hi = 1.0
    while law.psi_prime(hi) < x:
        hi *= 2.0
        if hi > 2.0 ** 200:
            return LegendreResult(math.inf, math.inf, "infinity")
    lo = 0.0 if hi == 1.0 else hi / 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if law.psi_prime(mid) < x:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * max(1.0, hi):
            break
    t = 0.5 * (lo + hi)
    return LegendreResult(t * x - law.log_laplace(t), t, None)


def critical_speed(law: ReproductionLaw) -> CriticalSpeed:
    """x* = inf over theta > 0 of psi(theta)/theta."""
    m = law.mean_offspring()
    if m < 1:
        return CriticalSpeed(-math.inf, False, None, "subcritical: psi(0) < 0, no front speed")
    if m == 1:
        return CriticalSpeed(law.psi_prime(0.0), False, 0.0,
                             "critical: infimum attained as theta -> 0; front-speed reading needs psi(0) > 0")

    def g(t):
        return t * law.psi_prime(t) - law.log_laplace(t)

    if isinstance(law, TabulatedLaw) and law.mass_at_max() <= 1:
        # theta*psi' - psi stays negative; infimum is the limit psi(theta)/theta -> max displacement
        return CriticalSpeed(law.support_max(), True, math.inf, "infimum attained as theta -> infinity")
    hi = 1.0
    while g(hi) < 0:
        hi *= 2.0
        if hi > 2.0 ** 200:
            raise ArithmeticError("critical speed bracket did not converge")
    lo = 0.0 if hi == 1.0 else hi / 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * max(1.0, hi):
            break
    t = 0.5 * (lo + hi)
    return CriticalSpeed(law.log_laplace(t) / t, True, t, "")


def check_assumptions(law: ReproductionLaw, theta: float) -> AssumptionReport:
    psi0 = law.log_laplace(0.0)
    m = law.mean_offspring()
    regime = "supercritical" if m > 1 else ("critical" if m == 1 else "subcritical")
    asn = law.prob_at_least_two() > 0
    try:
        c = tilted_cumulants(law, theta)
        as1 = theta > 0 and c.rate > 0
        as2 = 0 < c.sigma2 < math.inf
    except OverflowError:
        as1 = as2 = False
    # finite tabulated sums and Gaussian families have all exponential moments of
    # the intensity, which bounds sum e^{theta V} log+ sum e^{theta V} in L^1
    as3 = True
    span = law.lattice_span() if isinstance(law, TabulatedLaw) else None
    as4 = not law.is_lattice()
    return AssumptionReport(asn=asn, as1=as1, as2=as2, as3=as3, as4=as4, regime=regime,
                            psi0=psi0, lattice_span=span)
