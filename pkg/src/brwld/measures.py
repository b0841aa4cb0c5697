"""Finite point measures on the line with integer multiplicities."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np


@dataclass(frozen=True, eq=False)
class PointMeasure:
    """Sorted distinct locations with multiplicities.

    When ``denom`` is set, ``locs`` holds integer ticks and the true location
    of an atom is ``locs / denom`` (exact rational).
    """

    locs: np.ndarray
    mult: np.ndarray
    denom: Optional[int] = None

    @classmethod
    def from_values(cls, values, denom: Optional[int] = None) -> "PointMeasure":
        values = np.asarray(values)
        if values.size == 0:
            dtype = np.int64 if denom is not None else np.float64
            return cls(np.zeros(0, dtype=dtype), np.zeros(0, dtype=np.int64), denom)
        locs, mult = np.unique(values, return_counts=True)
        return cls(locs, mult.astype(np.int64), denom)

    @classmethod
    def from_atoms(cls, atoms) -> "PointMeasure":
        """Build from (location, multiplicity) pairs with float locations."""
        vals = [loc for loc, m in atoms for _ in range(int(m))]
        return cls.from_values(np.asarray(vals, dtype=np.float64))

    @property
    def locations(self) -> np.ndarray:
        if self.denom is None:
            return self.locs.astype(np.float64)
        return self.locs / self.denom

    def exact_locations(self) -> list:
        if self.denom is None:
            return [float(x) for x in self.locs]
        return [Fraction(int(x), self.denom) for x in self.locs]

    def atoms(self) -> list[tuple]:
        return list(zip(self.exact_locations(), (int(m) for m in self.mult)))

    @property
    def total_mass(self) -> int:
        return int(self.mult.sum())

    def __len__(self) -> int:
        return len(self.locs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointMeasure):
            return NotImplemented
        return self.atoms() == other.atoms()

    def __repr__(self) -> str:
        return f"PointMeasure({self.atoms()!r})"

    def max(self):
        if len(self.locs) == 0:
            raise ValueError("empty measure has no maximum")
        return self.exact_locations()[-1]

    def shifted(self, units) -> "PointMeasure":
        """Translate every atom by ``units`` (ticks when exact)."""
        return PointMeasure(self.locs + units, self.mult.copy(), self.denom)

    def mass_at(self, x_units) -> int:
        hit = self.locs == x_units
        return int(self.mult[hit].sum())

    def mass_above(self, x_units) -> int:
        return int(self.mult[self.locs > x_units].sum())

    def restricted(self, lower_units) -> "PointMeasure":
        keep = self.locs >= lower_units
        return PointMeasure(self.locs[keep], self.mult[keep], self.denom)

    def contains(self, other: "PointMeasure") -> bool:
        """Multiset inclusion of ``other`` in ``self``."""
        mine = dict(zip(self.locs.tolist(), self.mult.tolist()))
        return all(mine.get(loc, 0) >= m for loc, m in zip(other.locs.tolist(), other.mult.tolist()))

    def integrate(self, fn) -> float:
        """Sum of fn(location) * multiplicity."""
        if len(self.locs) == 0:
            return 0.0
        return float(np.sum(fn(self.locations) * self.mult))
