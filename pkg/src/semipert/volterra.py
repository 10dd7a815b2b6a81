"""Time-domain solution of the coordinate perturbation equations.

With ``G`` the known Green's function of ``A0`` and ``D = A1 - A0`` of
finite support, the perturbed Green's function satisfies

    G1(x, y) = G(x, y) + sum_xi  (F(x, xi) * G1(xi, y))      (backward)
    G1(x, y) = G(x, y) + sum_eta (G1(x, eta) * H(eta, y))    (forward)

where ``*`` is convolution in time, ``F = G D`` and ``H = D G``.  ``F``
vanishes outside the columns ``xi1`` of ``D`` and ``H`` outside its rows
``xi2``, so each equation closes on a finite set of sites.  The closed
system is marched with the product trapezoidal rule; every other site is
then recovered from the same identity.

``green0`` arguments are callables ``green0(x, y, times) -> ndarray``,
e.g. :class:`semipert.bessel.FreeGreen` or :class:`PerturbedGreen`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg

from .coord_ops import Perturbation, Site

GreenFunction = Callable[[int, int, np.ndarray], np.ndarray]

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k h`` for ``k = 0..count``."""

    h: float
    count: int

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError("grid step must be positive")
        if self.count < 1:
            raise ValueError("grid needs at least one step")

    @classmethod
    def covering(cls, t_max: float, h: float) -> "TimeGrid":
        """Grid with step ``h`` whose last node is at or just past ``t_max``."""
        return cls(h, max(1, math.ceil(t_max / h - 1e-9)))

    @property
    def nodes(self) -> np.ndarray:
        return self.h * np.arange(self.count + 1)

    def index(self, t: float) -> int:
        k = int(round(t / self.h))
        if not 0 <= k <= self.count or abs(k * self.h - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"t={t} is not a grid node")
        return k


@dataclass(frozen=True)
class KernelPath:
    """Kernel samples ``samples[k, i, j] = K(rows[i], support[j], t_k)``."""

    rows: tuple[Site, ...]
    support: tuple[Site, ...]
    samples: np.ndarray


@dataclass(frozen=True)
class GreenPath:
    """Values ``values[p, k] = G(pairs[p], t_k)`` on ``times``."""

    pairs: tuple[tuple[Site, Site], ...]
    times: np.ndarray
    values: np.ndarray

    def __getitem__(self, pair: tuple[Site, Site]) -> np.ndarray:
        return self.values[self.pairs.index(tuple(pair))]


def green_block(green0: GreenFunction, rows: Sequence[Site], cols: Sequence[Site], times) -> np.ndarray:
    """``out[k, i, j] = green0(rows[i], cols[j], t_k)``."""
    times = np.asarray(times, dtype=float)
    out = np.empty((times.size, len(rows), len(cols)))
    for i, x in enumerate(rows):
        for j, y in enumerate(cols):
            out[:, i, j] = green0(x, y, times)
    return out


def trapezoid_convolution(kernel: np.ndarray, u: np.ndarray, h: float) -> np.ndarray:
    """Product-trapezoid approximation of ``int_0^t K(t - s) u(s) ds`` at every node.

    ``kernel`` has shape ``(K+1, R, n)`` and ``u`` shape ``(K+1, n, m)``;
    the result has shape ``(K+1, R, m)``.  Summation is direct so results
    are reproducible bit for bit.
    """
    n_t, n_r, n = kernel.shape
    m = u.shape[2]
    out = np.zeros((n_t, n_r, m))
    for a in range(n_r):
        for b in range(n):
            kab = kernel[:, a, b]
            if not np.any(kab):
                continue
            for c in range(m):
                out[:, a, c] += np.convolve(kab, u[:, b, c])[:n_t]
    out -= 0.5 * np.einsum("kab,bc->kac", kernel, u[0])
    out -= 0.5 * np.einsum("ab,kbc->kac", kernel[0], u)
    out[0] = 0.0
    return h * out


def _march(kernel: np.ndarray, forcing: np.ndarray, h: float) -> np.ndarray:
    """Solve ``u = forcing + trapezoid_convolution(kernel, u)`` step by step.

    Implicit only in the newest sample: each step solves
    ``(I - h/2 kernel[0]) u_k = explicit part`` with one LU factorisation.
    """
    n_t, n, _ = kernel.shape
    implicit = np.eye(n) - 0.5 * h * kernel[0]
    cond = np.linalg.cond(implicit)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise ValueError(
            f"implicit step matrix is singular (cond={cond:.3g}); reduce the grid step h"
        )
    lu = scipy.linalg.lu_factor(implicit)
    u = np.empty_like(forcing)
    u[0] = forcing[0]
    for k in range(1, n_t):
        rhs = forcing[k] + 0.5 * h * (kernel[k] @ u[0])
        if k > 1:
            rhs += h * np.tensordot(kernel[k - 1:0:-1], u[1:k], axes=([0, 2], [0, 1]))
        u[k] = scipy.linalg.lu_solve(lu, rhs)
    return u


def kernel_F(green0: GreenFunction, D: Perturbation, rows: Iterable[Site], grid: TimeGrid) -> KernelPath:
    """``F(x, xi, t) = sum_eta G(x, eta, t) D(eta, xi)`` for ``x`` in ``rows`` and ``xi`` in ``xi1``."""
    rows = tuple(rows)
    g = green_block(green0, rows, D.xi2, grid.nodes)
    samples = g @ D.block(D.xi2, D.xi1)
    return KernelPath(rows, D.xi1, samples)


def kernel_H(D: Perturbation, green0: GreenFunction, cols: Iterable[Site], grid: TimeGrid) -> KernelPath:
    """``H(eta, y, t) = sum_xi D(eta, xi) G(xi, y, t)``.

    Rows are ``xi2``; columns are ``cols``.  The returned ``support`` holds
    the columns.
    """
    cols = tuple(cols)
    g = green_block(green0, D.xi1, cols, grid.nodes)
    samples = D.block(D.xi2, D.xi1) @ g
    return KernelPath(D.xi2, cols, samples)


def _unique(seq):
    return tuple(sorted(set(seq)))


class BackwardSolver:
    """Backward-route solver for one ``(green0, D, grid)`` triple.

    Restricted solutions over ``xi1`` are cached per column ``y``, so the
    instance can be queried repeatedly (this is what :class:`PerturbedGreen`
    relies on).
    """

    def __init__(self, green0: GreenFunction, D: Perturbation, grid: TimeGrid):
        self.green0 = green0
        self.D = D
        self.grid = grid
        self._restricted: dict[Site, np.ndarray] = {}
        self._fr = kernel_F(green0, D, D.xi1, grid).samples if D else None

    def restricted(self, ys: Sequence[Site]) -> dict[Site, np.ndarray]:
        """``{y: array (K+1, |xi1|)}`` of ``G1(xi1, y, t_k)``."""
        todo = [y for y in _unique(ys) if y not in self._restricted]
        if todo:
            forcing = green_block(self.green0, self.D.xi1, todo, self.grid.nodes)
            u = _march(self._fr, forcing, self.grid.h)
            for j, y in enumerate(todo):
                self._restricted[y] = u[:, :, j]
        return {y: self._restricted[y] for y in ys}

    def values(self, pairs: Sequence[tuple[Site, Site]]) -> np.ndarray:
        times = self.grid.nodes
        out = np.empty((len(pairs), times.size))
        if not self.D:
            for p, (x, y) in enumerate(pairs):
                out[p] = self.green0(x, y, times)
            return out
        xi1 = self.D.xi1
        sol = self.restricted([y for _, y in pairs])
        by_x: dict[Site, list[int]] = {}
        for p, (x, y) in enumerate(pairs):
            if x in xi1:
                out[p] = sol[y][:, xi1.index(x)]
            else:
                by_x.setdefault(x, []).append(p)
        for x, idx in by_x.items():
            fx = kernel_F(self.green0, self.D, (x,), self.grid).samples
            ys = [pairs[p][1] for p in idx]
            u = np.stack([sol[y] for y in ys], axis=-1)
            conv = trapezoid_convolution(fx, u, self.grid.h)[:, 0, :]
            for j, p in enumerate(idx):
                out[p] = self.green0(x, ys[j], times) + conv[:, j]
        return out


class ForwardSolver:
    """Forward-route mirror of :class:`BackwardSolver`, closed over ``xi2`` per row ``x``."""

    def __init__(self, green0: GreenFunction, D: Perturbation, grid: TimeGrid):
        self.green0 = green0
        self.D = D
        self.grid = grid
        self._restricted: dict[Site, np.ndarray] = {}
        if D:
            hr = kernel_H(D, green0, D.xi2, grid).samples
            self._hr_t = np.ascontiguousarray(np.transpose(hr, (0, 2, 1)))

    def restricted(self, xs: Sequence[Site]) -> dict[Site, np.ndarray]:
        """``{x: array (K+1, |xi2|)}`` of ``G1(x, xi2, t_k)``."""
        todo = [x for x in _unique(xs) if x not in self._restricted]
        if todo:
            g = green_block(self.green0, todo, self.D.xi2, self.grid.nodes)
            v = _march(self._hr_t, np.transpose(g, (0, 2, 1)), self.grid.h)
            for i, x in enumerate(todo):
                self._restricted[x] = v[:, :, i]
        return {x: self._restricted[x] for x in xs}

    def values(self, pairs: Sequence[tuple[Site, Site]]) -> np.ndarray:
        times = self.grid.nodes
        out = np.empty((len(pairs), times.size))
        if not self.D:
            for p, (x, y) in enumerate(pairs):
                out[p] = self.green0(x, y, times)
            return out
        xi2 = self.D.xi2
        sol = self.restricted([x for x, _ in pairs])
        by_y: dict[Site, list[int]] = {}
        for p, (x, y) in enumerate(pairs):
            if y in xi2:
                out[p] = sol[x][:, xi2.index(y)]
            else:
                by_y.setdefault(y, []).append(p)
        for y, idx in by_y.items():
            hy = kernel_H(self.D, self.green0, (y,), self.grid).samples  # (K+1, |xi2|, 1)
            xs = [pairs[p][0] for p in idx]
            v = np.stack([sol[x] for x in xs], axis=-1)  # (K+1, |xi2|, m)
            conv = trapezoid_convolution(np.transpose(hy, (0, 2, 1)), v, self.grid.h)[:, 0, :]
            for j, p in enumerate(idx):
                out[p] = self.green0(xs[j], y, times) + conv[:, j]
        return out


def _path(pairs, grid, values) -> GreenPath:
    return GreenPath(tuple((int(x), int(y)) for x, y in pairs), grid.nodes, values)


def _solve(solver_cls, green0, D, targets, grid, extrapolate):
    targets = [tuple(p) for p in targets]
    coarse = solver_cls(green0, D, grid).values(targets)
    if not extrapolate:
        return _path(targets, grid, coarse)
    fine = solver_cls(green0, D, TimeGrid(grid.h / 2, 2 * grid.count)).values(targets)[:, ::2]
    return _path(targets, grid, (4.0 * fine - coarse) / 3.0)


def solve_backward(
    green0: GreenFunction, D: Perturbation, targets, grid: TimeGrid, extrapolate: bool = False
) -> GreenPath:
    """Perturbed Green's function from the backward equation closed over ``xi1``.

    Parameters
    ----------
    green0 : callable
        ``green0(x, y, times)`` for the unperturbed generator.
    D : Perturbation
        Finite-support difference of the generators.
    targets : iterable of (x, y)
        Pairs to report.
    grid : TimeGrid
    extrapolate : bool, optional
        Also solve on the grid of step ``h/2`` and return the Richardson
        combination ``(4 fine - coarse) / 3`` (fourth order in ``h``).

    Returns
    -------
    GreenPath
    """
    return _solve(BackwardSolver, green0, D, targets, grid, extrapolate)


def solve_forward(
    green0: GreenFunction, D: Perturbation, targets, grid: TimeGrid, extrapolate: bool = False
) -> GreenPath:
    """Perturbed Green's function from the forward equation closed over ``xi2``.

    Same arguments as :func:`solve_backward`.
    """
    return _solve(ForwardSolver, green0, D, targets, grid, extrapolate)


def picard_iterate(green0: GreenFunction, D: Perturbation, targets, grid: TimeGrid, iterations: int) -> GreenPath:
    """``m``-th successive approximation ``G^(j+1) = G + F * G^(j)`` of the backward equation."""
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    targets = [tuple(p) for p in targets]
    times = grid.nodes
    base = np.array([green0(x, y, times) for x, y in targets]).reshape(len(targets), times.size)
    if iterations == 0 or not D:
        return _path(targets, grid, base)
    ys = _unique(y for _, y in targets)
    fr = kernel_F(green0, D, D.xi1, grid).samples
    g = green_block(green0, D.xi1, ys, times)
    u = g
    for _ in range(iterations - 1):
        u = g + trapezoid_convolution(fr, u, grid.h)
    xs = _unique(x for x, _ in targets)
    fx = kernel_F(green0, D, xs, grid).samples
    full = trapezoid_convolution(fx, u, grid.h)
    out = base.copy()
    for p, (x, y) in enumerate(targets):
        out[p] += full[:, xs.index(x), ys.index(y)]
    return _path(targets, grid, out)


class PerturbedGreen:
    """Green's function of ``A0 + D`` as a callable usable as the next ``green0``.

    Only the nodes of ``grid`` can be requested.
    """

    def __init__(self, green0: GreenFunction, D: Perturbation, grid: TimeGrid):
        self.grid = grid
        self._solver = BackwardSolver(green0, D, grid)
        self._cache: dict[tuple[Site, Site], np.ndarray] = {}

    def __call__(self, x: int, y: int, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if times.shape != self.grid.nodes.shape or not np.array_equal(times, self.grid.nodes):
            raise ValueError("PerturbedGreen is only available on its own time grid")
        key = (int(x), int(y))
        if key not in self._cache:
            self._cache[key] = self._solver.values([key])[0]
        return self._cache[key]


def gronwall_bound(normB: float, W: float, t: float, with_time: bool = False) -> float:
    """Growth bound ``W exp(normB W)`` on the perturbed semigroup norm.

    With ``with_time=True`` returns ``W exp(normB W t)``, the form obtained
    by carrying the factor ``t`` from integrating ``exp(V (s - tau))``.
    """
    if normB < 0 or W < 0 or t < 0:
        raise ValueError("inputs must be nonnegative")
    exponent = normB * W * (t if with_time else 1.0)
    return W * math.exp(exponent)
