"""Reference solutions from the truncated lattice.

The generator is cut down to the sites ``[-N, N]`` (plain truncation:
jumps out of the window are lost) and the resulting finite linear system
is integrated with classical RK4 under step-halving control.  Nothing here
uses Bessel functions or the perturbation equations.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .coord_ops import CoordOperator, RateField, build_walk_generator

DENSE_LIMIT = 200


class BoundaryLeakWarning(UserWarning):
    """Probability mass lost through the window edge exceeds the tolerance."""


@dataclass(frozen=True)
class TruncatedSystem:
    """Generator restricted to sites ``-radius..radius``.

    ``matrix`` is a dense ndarray for ``radius <= 200`` and a CSR matrix
    beyond that.
    """

    radius: int
    matrix: object
    style: str = "kill"

    @property
    def sites(self) -> np.ndarray:
        return np.arange(-self.radius, self.radius + 1)

    def index(self, site: int) -> int:
        if abs(site) > self.radius:
            raise ValueError(f"site {site} outside window of radius {self.radius}")
        return site + self.radius

    def norm(self) -> float:
        """Maximum absolute column sum."""
        m = self.matrix
        if scipy.sparse.issparse(m):
            return float(abs(m).sum(axis=0).max())
        return float(np.abs(m).sum(axis=0).max())


def truncate(A: CoordOperator, N: int) -> TruncatedSystem:
    """Restrict ``A`` to ``[-N, N]``, dropping entries that leave the window."""
    if N < 1:
        raise ValueError("window radius must be at least 1")
    mat = A.dense(-N, N) if N <= DENSE_LIMIT else _banded(A, N)
    return TruncatedSystem(N, mat)


def _banded(A: CoordOperator, N: int):
    n = 2 * N + 1
    lam, mu = A.background if A.background is not None else (0.0, 0.0)
    mat = scipy.sparse.diags(
        [np.full(n - 1, mu), np.full(n, -(lam + mu)), np.full(n - 1, lam)], [-1, 0, 1], format="lil"
    )
    for x, row in A.rows.items():
        if -N <= x <= N:
            mat[x + N, :] = 0.0
            for y, v in row.items():
                if -N <= y <= N:
                    mat[x + N, y + N] = v
    return mat.tocsr()


def _rk4(mat, q: np.ndarray, dt: float, steps: int) -> np.ndarray:
    for _ in range(steps):
        k1 = mat @ q
        k2 = mat @ (q + 0.5 * dt * k1)
        k3 = mat @ (q + 0.5 * dt * k2)
        k4 = mat @ (q + dt * k3)
        q = q + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return q


def _integrate(mat, q0: np.ndarray, times: np.ndarray, steps_per_unit: float) -> np.ndarray:
    out = np.empty((times.size,) + q0.shape)
    q, t_prev = q0, 0.0
    for i, t in enumerate(times):
        span = t - t_prev
        if span > 0:
            n = max(1, math.ceil(span * steps_per_unit))
            q = _rk4(mat, q, span / n, n)
        out[i] = q
        t_prev = t
    return out


def evolve_many(
    sys: TruncatedSystem,
    q0: np.ndarray,
    times,
    tol: float = 1e-10,
    transpose: bool = False,
    max_doublings: int = 20,
) -> np.ndarray:
    """Solutions of ``q' = A q`` (or ``p' = p A`` with ``transpose``) at sorted ``times``.

    The step is halved until the largest l1 change over all output times
    drops below ``tol``; the finer of the last two solutions is returned.
    ``q0`` may carry extra trailing columns, evolved together.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be nonnegative and sorted")
    q0 = np.asarray(q0, dtype=float)
    mat = sys.matrix.T if transpose else sys.matrix
    if scipy.sparse.issparse(mat):
        mat = mat.tocsr()
    # RK4 is stable for dt * norm < 2.78; start safely inside
    steps_per_unit = max(1.0, 1.5 * sys.norm())
    coarse = _integrate(mat, q0, times, steps_per_unit)
    for _ in range(max_doublings):
        steps_per_unit *= 2.0
        fine = _integrate(mat, q0, times, steps_per_unit)
        if not np.all(np.isfinite(fine)):
            raise FloatingPointError("non-finite values during integration")
        change = np.abs(fine - coarse).sum(axis=1).max() if times.size else 0.0
        if change < tol:
            return fine
        coarse = fine
    raise RuntimeError(f"step halving did not reach tol={tol}")


def evolve(sys: TruncatedSystem, q0, t: float, tol: float = 1e-10, transpose: bool = False) -> np.ndarray:
    """Solution of ``q' = A q`` at time ``t`` (``p' = p A`` with ``transpose``)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    q0 = np.asarray(q0, dtype=float)
    if t == 0:
        return q0.copy()
    return evolve_many(sys, q0, [t], tol, transpose)[0]


def oracle_paths(
    rates: RateField,
    pairs,
    times,
    N: int,
    tol: float = 1e-10,
    backward: bool = False,
) -> np.ndarray:
    """``G(x, y, t)`` for every pair and time, shape ``(len(pairs), len(times))``.

    The forward read evolves ``delta_x`` under ``p' = p A`` and reads site
    ``y``; the backward read evolves ``delta_y`` under ``q' = A q`` and
    reads site ``x``.  Warns with :class:`BoundaryLeakWarning` when the
    mass lost through the window edge exceeds ``tol``.
    """
    pairs = [tuple(p) for p in pairs]
    for x, y in pairs:
        if 2 * max(abs(x), abs(y)) > N:
            raise ValueError(f"pair {(x, y)} too close to the window edge for N={N}")
    times = np.asarray(times, dtype=float)
    sys = truncate(build_walk_generator(rates), N)
    start_sites = sorted({(y if backward else x) for x, y in pairs})
    q0 = np.zeros((2 * N + 1, len(start_sites)))
    for j, s in enumerate(start_sites):
        q0[sys.index(s), j] = 1.0
    sol = evolve_many(sys, q0, times, tol, transpose=not backward)
    if not backward:
        leak = float(np.max(np.abs(1.0 - sol.sum(axis=1)))) if times.size else 0.0
        if leak > tol:
            warnings.warn(
                f"boundary leak {leak:.3g} exceeds tol={tol:g}; widen the window",
                BoundaryLeakWarning,
                stacklevel=2,
            )
    out = np.empty((len(pairs), times.size))
    for p, (x, y) in enumerate(pairs):
        if backward:
            out[p] = sol[:, sys.index(x), start_sites.index(y)]
        else:
            out[p] = sol[:, sys.index(y), start_sites.index(x)]
    return out


def oracle_green(
    rates: RateField,
    x: int,
    y: int,
    t: float,
    N: int = 60,
    tol: float = 1e-10,
    backward: bool = False,
) -> float:
    """Transition probability ``G(x, y, t)`` from the truncated system."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return float(oracle_paths(rates, [(x, y)], [t], N, tol, backward)[0, 0])


def boundary_leak(rates: RateField, x: int, t: float, N: int, tol: float = 1e-10) -> float:
    """Mass of ``delta_x`` lost through the window edge by time ``t``."""
    sys = truncate(build_walk_generator(rates), N)
    q0 = np.zeros(2 * N + 1)
    q0[sys.index(x)] = 1.0
    return float(1.0 - evolve(sys, q0, t, tol, transpose=True).sum())
