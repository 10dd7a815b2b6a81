"""Green's functions of finitely perturbed walks through the Laplace domain.

Transforming the backward perturbation equation turns every time
convolution into a product, so on the column support ``xi1`` of ``D`` it
becomes the linear system

    (I - Fhat(s)) Ghat1(., y, s) = g0hat(., y, s),   Fhat = g0hat D,

whose matrix does not depend on ``y``.  Any other ``x`` follows from the
same identity.  Time values come from numerical inversion (fixed Talbot
contour, with Gaver-Stehfest as an independent coarse check).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .bessel import g0_hat
from .coord_ops import CoordOperator, L1Vector, Perturbation, Site

_COND_LIMIT = 1e13


class SingularSystemError(ArithmeticError):
    """The restricted Laplace-domain system is numerically singular at this node."""


@dataclass(frozen=True)
class InversionScheme:
    """Numerical inverse Laplace transform settings.

    ``method`` is ``"talbot"`` (fixed contour, ``M >= 8``) or
    ``"stehfest"`` (Gaver-Stehfest, even ``M <= 18``).
    """

    method: str = "talbot"
    M: int = 32

    def __post_init__(self):
        method = self.method.lower().replace("-", "").replace("_", "")
        if method in ("gaverstehfest", "stehfest"):
            method = "stehfest"
        object.__setattr__(self, "method", method)
        if method == "talbot":
            if self.M < 8:
                raise ValueError("Talbot inversion needs M >= 8")
        elif method == "stehfest":
            if self.M % 2 or not 2 <= self.M <= 18:
                raise ValueError("Gaver-Stehfest needs an even M <= 18")
        else:
            raise ValueError(f"unknown inversion method {self.method!r}")


TALBOT = InversionScheme("talbot", 32)
STEHFEST = InversionScheme("stehfest", 16)


def stehfest_weights(M: int) -> np.ndarray:
    """Gaver-Stehfest coefficients ``V_1..V_M`` (computed exactly, then rounded)."""
    half = M // 2
    out = []
    for k in range(1, M + 1):
        acc = Fraction(0)
        for j in range((k + 1) // 2, min(k, half) + 1):
            acc += Fraction(
                j**half * math.factorial(2 * j),
                math.factorial(half - j)
                * math.factorial(j)
                * math.factorial(j - 1)
                * math.factorial(k - j)
                * math.factorial(2 * j - k),
            )
        out.append((-1) ** (k + half) * acc)
    return np.array([float(v) for v in out])


def _talbot_node(theta: float, r: float, t: float, M: int) -> tuple[complex, complex]:
    cot = math.cos(theta) / math.sin(theta)
    s = r * theta * complex(cot, 1.0)
    sigma = theta + (theta * cot - 1.0) * cot
    return s, (r / M) * np.exp(t * s) * complex(1.0, sigma)


def inversion_nodes(
    t: float, scheme: InversionScheme = TALBOT, shift: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Nodes ``s_k`` and weights ``w_k`` with ``f(t) ~ Re sum_k w_k fhat(s_k)``.

    ``shift`` rescales the contour (Talbot radius or Stehfest step) by
    ``1 + shift``; used to step around a singular node.
    """
    if not t > 0:
        raise ValueError("inversion needs t > 0")
    M = scheme.M
    if scheme.method == "stehfest":
        a = math.log(2.0) / t * (1.0 + shift)
        k = np.arange(1, M + 1)
        return (a * k).astype(complex), (a * stehfest_weights(M)).astype(complex)
    r = 2.0 * M / (5.0 * t) * (1.0 + shift)
    nodes = [complex(r)]
    weights = [0.5 * (r / M) * math.exp(r * t) + 0j]
    for k in range(1, M):
        s, w = _talbot_node(k * math.pi / M, r, t, M)
        nodes.append(s)
        weights.append(w)
    return np.array(nodes), np.array(weights)


# Talbot stays accurate for any radius near the standard one; Stehfest
# samples the original at t / (1 + shift), so it only moves a hair.
_SHIFTS = {"talbot": 1e-3, "stehfest": 1e-7}


def _with_retries(evaluate, t: float, scheme: InversionScheme, retries: int = 3):
    """Run ``evaluate(nodes, weights)``; rescale the contour when a node is singular."""
    for attempt in range(retries + 1):
        nodes, weights = inversion_nodes(t, scheme, _SHIFTS[scheme.method] * attempt)
        try:
            return evaluate(nodes, weights)
        except SingularSystemError:
            if attempt == retries:
                raise


def invert(fhat: Callable[[complex], complex], t: float, scheme: InversionScheme = TALBOT) -> float:
    """Approximate the original of ``fhat`` at ``t > 0``.

    If ``fhat`` raises :class:`SingularSystemError` at some node the whole
    contour is rescaled slightly and the sum is retried.
    """

    def evaluate(nodes, weights):
        total = 0.0
        for s, w in zip(nodes, weights):
            val = complex(fhat(s))
            if not (math.isfinite(val.real) and math.isfinite(val.imag)):
                raise FloatingPointError(f"non-finite transform value at s={s}")
            total += (w * val).real
        return total

    total = _with_retries(evaluate, t, scheme)
    if not math.isfinite(total):
        raise FloatingPointError(f"non-finite inversion result at t={t}")
    return total


class LaplaceSystem:
    """Restricted Laplace-domain system of ``D`` at one node ``s``.

    The matrix ``I - Fhat(xi1, xi1)`` is factorised once on construction and
    reused for every column ``y``.
    """

    def __init__(self, D: Perturbation, s: complex, background=(1.0, 1.0)):
        self.D = D
        self.s = complex(s)
        self.background = background
        self._lu = None
        if D:
            xi1 = np.array(D.xi1)
            n = len(xi1)
            self._d = D.block(D.xi2, D.xi1).astype(complex)
            mat = np.eye(n, dtype=complex) - self.fhat(D.xi1)
            cond = np.linalg.cond(mat)
            if not np.isfinite(cond) or cond > _COND_LIMIT:
                raise SingularSystemError(f"restricted system singular at s={self.s}")
            self._lu = scipy.linalg.lu_factor(mat)
        self._cache: dict[Site, np.ndarray] = {}

    def g0hat(self, xs: Sequence[Site], ys: Sequence[Site]) -> np.ndarray:
        d = np.subtract.outer(np.asarray(ys), np.asarray(xs)).T
        return np.asarray(g0_hat(d, self.s, self.background), dtype=complex)

    def fhat(self, xs: Sequence[Site]) -> np.ndarray:
        """``Fhat(x, xi) = sum_eta g0hat(x, eta) D(eta, xi)`` for ``xi`` in ``xi1``."""
        return self.g0hat(xs, self.D.xi2) @ self._d

    def restricted(self, y: Site) -> np.ndarray:
        """``Ghat1(xi1, y, s)``."""
        if y not in self._cache:
            rhs = self.g0hat(self.D.xi1, [y])[:, 0]
            self._cache[y] = scipy.linalg.lu_solve(self._lu, rhs)
        return self._cache[y]

    def evaluate(self, xs: Sequence[Site], y: Site) -> np.ndarray:
        """``Ghat1(x, y, s)`` for every ``x`` in ``xs``."""
        base = self.g0hat(xs, [y])[:, 0]
        if not self.D:
            return base
        return base + self.fhat(xs) @ self.restricted(y)


@dataclass(frozen=True)
class LaplaceSolution:
    """Solution for one column ``y`` at one node ``s``."""

    s: complex
    y: Site
    restricted: dict
    system: LaplaceSystem

    def evaluate(self, x: Site) -> complex:
        return complex(self.system.evaluate([x], self.y)[0])


def laplace_solve(D: Perturbation, y: Site, s: complex, background=(1.0, 1.0)) -> LaplaceSolution:
    """Solve the transformed backward equation for column ``y`` at ``Re s > 0``."""
    s = complex(s)
    if not s.real > 0:
        raise ValueError(f"Re s must be positive, got {s}")
    system = LaplaceSystem(D, s, background)
    restricted = dict(zip(D.xi1, system.restricted(y))) if D else {}
    return LaplaceSolution(s, y, restricted, system)


def greens_exact_many(
    D: Perturbation,
    pairs,
    times,
    scheme: InversionScheme = TALBOT,
    background=(1.0, 1.0),
) -> np.ndarray:
    """Perturbed ``G1(x, y, t)`` for all pairs and times, shape ``(len(pairs), len(times))``.

    One factorisation per contour node serves every pair.  The node sum is
    taken in a fixed order, so repeated calls are bitwise identical.
    """
    pairs = [(int(x), int(y)) for x, y in pairs]
    times = np.asarray(times, dtype=float)
    out = np.empty((len(pairs), times.size))
    ys = sorted({y for _, y in pairs})
    xs_for = {y: sorted({x for x, yy in pairs if yy == y}) for y in ys}
    for ti, t in enumerate(times):

        def evaluate(nodes, weights):
            acc = {p: 0.0 for p in pairs}
            for s, w in zip(nodes, weights):
                system = LaplaceSystem(D, s, background)
                for y in ys:
                    vals = system.evaluate(xs_for[y], y)
                    for x, v in zip(xs_for[y], vals):
                        acc[(x, y)] += (w * v).real
            return acc

        acc = _with_retries(evaluate, t, scheme)
        for p, pair in enumerate(pairs):
            out[p, ti] = acc[pair]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite inversion result")
    return out


def greens_exact(
    D: Perturbation,
    x: Site,
    y: Site,
    t: float,
    scheme: InversionScheme = TALBOT,
    background=(1.0, 1.0),
) -> float:
    """Perturbed transition probability ``G1(x, y, t)`` by Laplace inversion."""
    return float(greens_exact_many(D, [(x, y)], [t], scheme, background)[0, 0])


def resolvent_check(
    A0: CoordOperator,
    D: Perturbation,
    lam: float,
    q: L1Vector,
    margin: int = 60,
) -> float:
    """l1 residual of ``R1 q = R0 q + R0 D R1 q`` at ``s = lam``.

    Resolvents act as ``(R q)(x) = sum_y Ghat(x, y, lam) q(y)``.  The
    residual is summed over sites within ``margin`` of every support
    involved; beyond that both sides decay geometrically.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if A0.background is None:
        raise ValueError("A0 must be a walk generator with a homogeneous background")
    if not q.values:
        return 0.0
    background = A0.background
    system = LaplaceSystem(D, lam, background)
    sites = list(q.values) + list(D.xi1) + list(D.xi2)
    xs = list(range(min(sites) - margin, max(sites) + margin + 1))
    qv = np.array(list(q.values.values()), dtype=complex)
    qy = list(q.values)

    r1q = sum(system.evaluate(xs, y) * qv[j] for j, y in enumerate(qy))
    r0q = system.g0hat(xs, qy) @ qv
    if D:
        r1q_xi1 = sum(system.evaluate(list(D.xi1), y) * qv[j] for j, y in enumerate(qy))
        d_r1q = D.block(D.xi2, D.xi1) @ r1q_xi1
        rhs = r0q + system.g0hat(xs, D.xi2) @ d_r1q
    else:
        rhs = r0q
    return float(np.abs(r1q - rhs).sum())
