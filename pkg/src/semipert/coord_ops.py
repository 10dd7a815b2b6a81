"""Coordinate representations of bounded operators on l1(Z).

An operator is stored as an optional homogeneous nearest-neighbour band
(the generator of a walk with constant rates) with finitely many rows
replaced.  This keeps every entry ``A(x, y)`` for arbitrary integers
reachable without truncating the lattice.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

Site = int
Pair = tuple[int, int]


def _clean(entries: Mapping[Pair, float]) -> Mapping[Pair, float]:
    out = {(int(x), int(y)): float(v) for (x, y), v in entries.items() if v != 0.0}
    return MappingProxyType(dict(sorted(out.items())))


@dataclass(frozen=True)
class RateField:
    """Jump intensities of a walk on Z.

    Parameters
    ----------
    background_lambda, background_mu : float
        Intensity of +1 and -1 jumps away from the defects.
    defects : mapping
        ``site -> (lambda, mu)`` for the finitely many sites whose rates
        differ from the background.
    """

    background_lambda: float = 1.0
    background_mu: float = 1.0
    defects: Mapping[Site, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        rates = [self.background_lambda, self.background_mu]
        for lam_mu in self.defects.values():
            rates.extend(lam_mu)
        if any(not np.isfinite(r) or r < 0 for r in rates):
            raise ValueError("transition rates must be finite and nonnegative")
        cleaned = {int(s): (float(l), float(m)) for s, (l, m) in self.defects.items()}
        object.__setattr__(self, "defects", MappingProxyType(dict(sorted(cleaned.items()))))
        object.__setattr__(self, "background_lambda", float(self.background_lambda))
        object.__setattr__(self, "background_mu", float(self.background_mu))

    def rates_at(self, x: Site) -> tuple[float, float]:
        return self.defects.get(x, (self.background_lambda, self.background_mu))

    @property
    def background(self) -> tuple[float, float]:
        return (self.background_lambda, self.background_mu)

    @property
    def defect_radius(self) -> int:
        """Largest ``|site|`` among the defects (0 when there are none)."""
        return max((abs(s) for s in self.defects), default=0)


@dataclass(frozen=True)
class CoordOperator:
    """Bounded operator ``A(x, y)`` on l1(Z).

    Away from the rows listed in ``rows``, ``A`` equals a homogeneous band
    (present only when ``background = (lam, mu)``): ``lam`` on the first
    superdiagonal, ``mu`` on the first subdiagonal, ``-(lam + mu)`` on the
    diagonal.  A row listed in ``rows`` replaces the band entirely, so
    overridden entries are stored exactly as given.
    """

    rows: Mapping[Site, Mapping[Site, float]] = field(default_factory=dict)
    background: tuple[float, float] | None = None

    def __post_init__(self):
        rows = {
            int(x): MappingProxyType({int(y): float(v) for y, v in sorted(r.items()) if v != 0.0})
            for x, r in sorted(self.rows.items())
        }
        object.__setattr__(self, "rows", MappingProxyType(rows))
        if self.background is not None:
            lam, mu = self.background
            object.__setattr__(self, "background", (float(lam), float(mu)))

    @classmethod
    def from_entries(cls, entries: Mapping[Pair, float], background=None) -> "CoordOperator":
        rows: dict[Site, dict[Site, float]] = defaultdict(dict)
        for (x, y), v in entries.items():
            rows[x][y] = v
        return cls(rows, background)

    @property
    def entries(self) -> dict[Pair, float]:
        """Explicit nonzero entries of the overridden rows."""
        return {(x, y): v for x, r in self.rows.items() for y, v in r.items()}

    def band(self, x: Site, y: Site) -> float:
        if self.background is None:
            return 0.0
        lam, mu = self.background
        d = y - x
        if d == 1:
            return lam
        if d == -1:
            return mu
        if d == 0:
            return -(lam + mu)
        return 0.0

    def entry(self, x: Site, y: Site) -> float:
        if x in self.rows:
            return self.rows[x].get(y, 0.0)
        return self.band(x, y)

    def row_support(self, x: Site) -> list[Site]:
        """Columns ``y`` for which ``A(x, y)`` may be nonzero."""
        if x in self.rows:
            return list(self.rows[x])
        return [x - 1, x, x + 1] if self.background is not None else []

    def column_support(self, y: Site) -> list[Site]:
        """Rows ``x`` for which ``A(x, y)`` may be nonzero."""
        out = {x for x, r in self.rows.items() if y in r}
        if self.background is not None:
            out.update(x for x in (y - 1, y, y + 1) if x not in self.rows)
        return sorted(out)

    def dense(self, lo: Site, hi: Site) -> np.ndarray:
        """Dense block of ``A`` over sites ``lo..hi`` (inclusive)."""
        n = hi - lo + 1
        mat = np.zeros((n, n))
        if self.background is not None:
            lam, mu = self.background
            idx = np.arange(n)
            mat[idx, idx] = -(lam + mu)
            mat[idx[:-1], idx[:-1] + 1] = lam
            mat[idx[1:], idx[1:] - 1] = mu
        for x, r in self.rows.items():
            if lo <= x <= hi:
                mat[x - lo, :] = 0.0
                for y, v in r.items():
                    if lo <= y <= hi:
                        mat[x - lo, y - lo] = v
        return mat


@dataclass(frozen=True)
class Perturbation:
    """Finite-support operator ``D`` with its column support ``xi1`` and row support ``xi2``."""

    entries: Mapping[Pair, float]
    xi1: tuple[Site, ...]
    xi2: tuple[Site, ...]

    @classmethod
    def from_entries(cls, entries: Mapping[Pair, float]) -> "Perturbation":
        entries = _clean(entries)
        xi1 = tuple(sorted({y for (_, y) in entries}))
        xi2 = tuple(sorted({x for (x, _) in entries}))
        return cls(entries, xi1, xi2)

    def __bool__(self):
        return bool(self.entries)

    def entry(self, x: Site, y: Site) -> float:
        return self.entries.get((x, y), 0.0)

    def block(self, rows: Iterable[Site], cols: Iterable[Site]) -> np.ndarray:
        rows, cols = list(rows), list(cols)
        return np.array([[self.entry(x, y) for y in cols] for x in rows], dtype=float).reshape(
            len(rows), len(cols)
        )

    def as_operator(self) -> CoordOperator:
        return CoordOperator.from_entries(self.entries)


@dataclass(frozen=True)
class L1Vector:
    """Finitely supported element of l1(Z)."""

    values: Mapping[Site, float] = field(default_factory=dict)

    def __post_init__(self):
        vals = {int(k): float(v) for k, v in self.values.items() if v != 0.0}
        object.__setattr__(self, "values", MappingProxyType(dict(sorted(vals.items()))))

    @classmethod
    def delta(cls, site: Site, weight: float = 1.0) -> "L1Vector":
        return cls({site: weight})

    @property
    def window(self) -> tuple[Site, Site] | None:
        """Smallest ``(lo, hi)`` containing the support, ``None`` if empty."""
        if not self.values:
            return None
        keys = list(self.values)
        return keys[0], keys[-1]

    def __getitem__(self, site: Site) -> float:
        return self.values.get(site, 0.0)

    def norm1(self) -> float:
        return float(sum(abs(v) for v in self.values.values()))

    def to_array(self, lo: Site, hi: Site) -> np.ndarray:
        return np.array([self[s] for s in range(lo, hi + 1)])


def build_walk_generator(rates: RateField) -> CoordOperator:
    """Generator of the birth-death walk with intensities ``rates``.

    Row ``x`` holds ``lambda(x)`` at ``x + 1``, ``mu(x)`` at ``x - 1`` and
    ``-(lambda(x) + mu(x))`` on the diagonal.
    """
    rows = {
        x: {x - 1: mu, x: -(lam + mu), x + 1: lam}
        for x, (lam, mu) in rates.defects.items()
    }
    return CoordOperator(rows, background=rates.background)


def operator_norm(A: CoordOperator) -> float:
    """Supremum over columns of the absolute column sums."""
    best = 0.0
    if A.background is not None:
        lam, mu = A.background
        best = abs(lam) + abs(mu) + abs(lam + mu)
    touched = {y for r in A.rows.values() for y in r}
    if A.background is not None:
        touched.update(y for x in A.rows for y in (x - 1, x, x + 1))
    for y in sorted(touched):
        best = max(best, sum(abs(A.entry(x, y)) for x in A.column_support(y)))
    return float(best)


def perturbation_from(A1: CoordOperator, A0: CoordOperator) -> Perturbation:
    """Entrywise difference ``A1 - A0``; the bands must coincide."""
    if A1.background != A0.background:
        raise ValueError(
            f"backgrounds differ ({A1.background} vs {A0.background}); "
            "the difference would not have finite support"
        )
    diff = {}
    for x in sorted(set(A1.rows) | set(A0.rows)):
        for y in set(A1.row_support(x)) | set(A0.row_support(x)):
            diff[(x, y)] = A1.entry(x, y) - A0.entry(x, y)
    return Perturbation.from_entries(diff)


def apply(A: CoordOperator, q: L1Vector) -> L1Vector:
    """``(Aq)(x) = sum_y A(x, y) q(y)``."""
    out: dict[Site, float] = defaultdict(float)
    for y, qy in q.values.items():
        for x in A.column_support(y):
            out[x] += A.entry(x, y) * qy
    return L1Vector(out)


def apply_adjoint(p: L1Vector, A: CoordOperator) -> L1Vector:
    """``(pA)(y) = sum_x p(x) A(x, y)``."""
    out: dict[Site, float] = defaultdict(float)
    for x, px in p.values.items():
        for y in A.row_support(x):
            out[y] += px * A.entry(x, y)
    return L1Vector(out)
