"""Convergence of semigroups along a sequence of generators.

The sequence is built by radius truncation of the defect table: ``A_n``
keeps the defects with ``|site| <= n`` and puts background rates
elsewhere, so ``B_n = A_n - A`` is bounded and vanishes once ``n``
reaches the defect radius.  Each ``Omega_n`` is computed by the
perturbation solver as a finite perturbation of the free walk; the limit
``Omega`` comes from the truncated-lattice oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.integrate import trapezoid

from .bessel import FreeGreen
from .coord_ops import (
    L1Vector,
    Perturbation,
    RateField,
    apply,
    apply_adjoint,
    build_walk_generator,
    operator_norm,
    perturbation_from,
)
from .oracle import evolve_many, truncate
from .volterra import BackwardSolver, ForwardSolver, PerturbedGreen, TimeGrid, gronwall_bound


def truncated_rates(rates: RateField, n: int) -> RateField:
    """Keep the defects with ``|site| <= n``; background rates elsewhere."""
    kept = {s: lm for s, lm in rates.defects.items() if abs(s) <= n}
    return RateField(rates.background_lambda, rates.background_mu, kept)


def bn_perturbation(rates: RateField, n: int) -> Perturbation:
    """``B_n = A_n - A`` as a finite perturbation."""
    return perturbation_from(
        build_walk_generator(truncated_rates(rates, n)), build_walk_generator(rates)
    )


def bn_norm(rates: RateField, n: int) -> float:
    """Operator norm (largest absolute column sum) of ``A_n - A``."""
    return operator_norm(bn_perturbation(rates, n).as_operator())


@dataclass
class ConvergenceRow:
    radius: int
    bn_norm: float
    error: float
    integral_bound: float
    W_n: float
    gronwall: float
    gronwall_t: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class ConvergenceReport:
    """One row per truncation radius.

    ``error`` is ``sup_{s <= t} ||Omega_n(s) q - Omega(s) q||_1``.
    ``integral_bound`` is ``W_n(t) int_0^t ||B_n g(tau)||_1 dtau`` with ``g`` the
    limit path and ``W_n`` the measured ``sup_s ||Omega_n(s) q||_1 / ||q||_1``.
    ``gronwall`` and ``gronwall_t`` are ``W exp(||B_n|| W)`` and
    ``W exp(||B_n|| W t)`` with ``W`` measured on the limit path.
    """

    t: float
    h: float
    action: str
    window: tuple[int, int]
    W: float
    rows: list[ConvergenceRow] = field(default_factory=list)

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.rows])

    def as_dict(self) -> dict:
        return {
            "t": self.t,
            "h": self.h,
            "action": self.action,
            "window": list(self.window),
            "W": self.W,
            "rows": [r.as_dict() for r in self.rows],
        }


def _window(rates: RateField, q0: L1Vector, t: float) -> tuple[int, int]:
    lo, hi = q0.window
    reach = math.ceil(4 * t + 20)
    return min(lo, -rates.defect_radius) - reach, max(hi, rates.defect_radius) + reach


def limit_path(rates: RateField, q0: L1Vector, grid: TimeGrid, window, action: str, tol: float = 1e-10):
    """Oracle path of the limit semigroup on ``window``, shape ``(K+1, width)``."""
    lo, hi = window
    N = 2 * max(abs(lo), abs(hi)) + 10
    sys = truncate(build_walk_generator(rates), N)
    q = np.zeros(2 * N + 1)
    for s, v in q0.values.items():
        q[sys.index(s)] = v
    sol = evolve_many(sys, q, grid.nodes, tol, transpose=(action == "forward"))
    return sol[:, lo + N: hi + N + 1]


def semigroup_path(green0, D: Perturbation, q0: L1Vector, grid: TimeGrid, window, action: str) -> np.ndarray:
    """``Omega_n(t_k) q`` (backward) or ``q Omega_n(t_k)`` (forward) on ``window``."""
    lo, hi = window
    sites = range(lo, hi + 1)
    out = np.zeros((grid.count + 1, hi - lo + 1))
    if action == "forward":
        solver = ForwardSolver(green0, D, grid)
        pairs = [(x, y) for x in q0.values for y in sites]
        vals = solver.values(pairs)
        for p, (x, y) in enumerate(pairs):
            out[:, y - lo] += q0[x] * vals[p]
    else:
        solver = BackwardSolver(green0, D, grid)
        pairs = [(x, y) for x in sites for y in q0.values]
        vals = solver.values(pairs)
        for p, (x, y) in enumerate(pairs):
            out[:, x - lo] += q0[y] * vals[p]
    return out


def _bound_integrand(B: Perturbation, path: np.ndarray, window, action: str) -> np.ndarray:
    lo = window[0]
    op = B.as_operator()
    out = np.empty(path.shape[0])
    for k, row in enumerate(path):
        vec = L1Vector({lo + i: v for i, v in enumerate(row) if v != 0.0})
        out[k] = (apply_adjoint(vec, op) if action == "forward" else apply(op, vec)).norm1()
    return out


def convergence_study(
    rates: RateField,
    q0: L1Vector,
    t: float,
    grid: TimeGrid,
    radii,
    action: str = "forward",
    tol: float = 1e-10,
) -> ConvergenceReport:
    """Measure ``Omega_n -> Omega`` along the truncation radii.

    ``action="forward"`` evolves ``q0`` as a distribution (``p -> p Omega``);
    ``"backward"`` applies the semigroup to ``q0`` as an element of l1.
    """
    radii = list(radii)
    if radii != sorted(radii):
        raise ValueError("radii must be sorted ascending")
    if action not in ("forward", "backward"):
        raise ValueError("action must be 'forward' or 'backward'")
    if not q0.values:
        raise ValueError("q0 must be nonzero")
    k_end = grid.index(t) if t < grid.nodes[-1] + 1e-12 else None
    if k_end is None:
        raise ValueError("t lies beyond the grid")
    window = _window(rates, q0, t)
    green0 = FreeGreen(rates.background)
    A0 = build_walk_generator(RateField(rates.background_lambda, rates.background_mu))
    limit = limit_path(rates, q0, grid, window, action, tol)[: k_end + 1]
    qn = q0.norm1()
    W = float(np.abs(limit).sum(axis=1).max() / qn)
    report = ConvergenceReport(t, grid.h, action, window, W)
    for n in radii:
        An = build_walk_generator(truncated_rates(rates, n))
        D = perturbation_from(An, A0)
        path = semigroup_path(green0, D, q0, grid, window, action)[: k_end + 1]
        err = float(np.abs(path - limit).sum(axis=1).max())
        Wn = float(np.abs(path).sum(axis=1).max() / qn)
        B = bn_perturbation(rates, n)
        integrand = _bound_integrand(B, limit, window, action)
        integral = float(trapezoid(integrand, dx=grid.h)) if k_end else 0.0
        nb = operator_norm(B.as_operator())
        report.rows.append(
            ConvergenceRow(
                radius=n,
                bn_norm=nb,
                error=err,
                integral_bound=Wn * integral,
                W_n=Wn,
                gronwall=gronwall_bound(nb, W, t),
                gronwall_t=gronwall_bound(nb, W, t, with_time=True),
            )
        )
    return report


def incremental_greens(rates: RateField, radii, grid: TimeGrid):
    """Chain ``G_n = G_{n-1} perturbed by A_n - A_{n-1}`` along ``radii``.

    Returns ``{radius: callable}`` usable like ``green0``; the first radius
    is perturbed from the free walk.
    """
    current = FreeGreen(rates.background)
    prev = build_walk_generator(RateField(rates.background_lambda, rates.background_mu))
    out = {}
    for n in sorted(radii):
        An = build_walk_generator(truncated_rates(rates, n))
        current = PerturbedGreen(current, perturbation_from(An, prev), grid)
        out[n] = current
        prev = An
    return out
