"""Exponentially scaled modified Bessel functions and the free-walk Green's function.

All values are returned in the scaled form ``exp(-x) I_n(x)``, which lies
in ``[0, 1]`` and never overflows.  Tables are produced by Miller's
backward recurrence normalised with ``I_0 + 2 sum_{n>=1} I_n = exp(x)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_RESCALE = 1e200


@dataclass(frozen=True)
class ScaledBesselTable:
    """``values[n] = exp(-x) I_n(x)`` for ``n = 0..n_max``."""

    argument: float
    values: np.ndarray

    @property
    def n_max(self) -> int:
        return len(self.values) - 1


def start_order(n_max: int, x: float) -> int:
    """Order at which the backward recurrence is seeded.

    The normalisation sum needs every order carrying non-negligible mass,
    i.e. a few standard deviations (about ``sqrt(x)``) past ``x`` itself.
    """
    base = n_max + math.ceil(10 + 2 * math.sqrt(n_max * x))
    mass = math.ceil(x + 12 * math.sqrt(x) + 30)
    return max(base, mass)


def scaled_bessel_table(n_max: int, x) -> np.ndarray:
    """Scaled values ``exp(-x) I_n(x)`` for ``n = 0..n_max``.

    Parameters
    ----------
    n_max : int
        Highest order wanted.
    x : float or array_like
        Nonnegative argument(s).

    Returns
    -------
    ndarray
        Shape ``(n_max + 1,)`` for scalar ``x``, otherwise
        ``x.shape + (n_max + 1,)``.
    """
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or not np.all(np.isfinite(xa)):
        raise ValueError("argument must be finite and nonnegative")
    flat = xa.reshape(-1)
    out = np.zeros((flat.size, n_max + 1))
    zero = flat == 0.0
    out[zero, 0] = 1.0
    pos = ~zero
    if np.any(pos):
        out[pos] = _miller(n_max, flat[pos])
    return out.reshape(xa.shape + (n_max + 1,))


def _miller(n_max: int, x: np.ndarray) -> np.ndarray:
    n_start = start_order(n_max, float(x.max()))
    vals = np.zeros((x.size, n_max + 1))
    f_next = np.zeros_like(x)
    f_cur = np.full_like(x, 1e-30)
    total = np.zeros_like(x)
    for k in range(n_start, 0, -1):
        # f_cur holds order k; step down to k - 1
        if k <= n_max:
            vals[:, k] = f_cur
        total += 2.0 * f_cur
        f_prev = (2.0 * k / x) * f_cur + f_next
        f_next, f_cur = f_cur, f_prev
        big = f_cur > _RESCALE
        if np.any(big):
            scale = np.where(big, 1.0 / _RESCALE, 1.0)
            f_cur *= scale
            f_next *= scale
            total *= scale
            vals *= scale[:, None]
    vals[:, 0] = f_cur
    total += f_cur
    return vals / total[:, None]


def scaled_bessel_i(n: int, x: float) -> float:
    """``exp(-x) I_n(x)`` for integer order ``n`` (``I_{-n} = I_n``)."""
    n = abs(int(n))
    return float(scaled_bessel_table(n, float(x))[n])


def _check_background(background) -> tuple[float, float]:
    lam, mu = (float(v) for v in background)
    if lam <= 0 or mu <= 0:
        raise ValueError("closed-form free Green's function needs positive background rates")
    return lam, mu


def g0(x: int, y: int, t: float, background=(1.0, 1.0)) -> float:
    """Transition probability of the homogeneous walk.

    For unit rates this is ``exp(-2t) I_{|x-y|}(2t)``.  A general constant
    background ``(lam, mu)`` gives
    ``(lam/mu)^{(y-x)/2} exp(-(lam+mu)t) I_{|x-y|}(2 sqrt(lam mu) t)``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    return float(g0_path(y - x, np.asarray([t], dtype=float), background)[0])


def g0_path(d: int, times: np.ndarray, background=(1.0, 1.0)) -> np.ndarray:
    """``G0`` at displacement ``d = y - x`` for every entry of ``times``."""
    lam, mu = _check_background(background)
    times = np.asarray(times, dtype=float)
    b = math.sqrt(lam * mu)
    n = abs(int(d))
    scaled = scaled_bessel_table(n, 2.0 * b * times)[..., n]
    return _asym_factor(d, lam, mu) * np.exp(-(lam + mu - 2.0 * b) * times) * scaled


def _asym_factor(d: int, lam: float, mu: float) -> float:
    return 1.0 if lam == mu else (lam / mu) ** (d / 2.0)


def g0_hat(d, s, background=(1.0, 1.0)):
    """Laplace transform of ``G0`` at displacement ``d`` without domain checks.

    Analytic off the real segment ``[-(lam+mu) - 2 sqrt(lam mu), -(lam+mu) + 2 sqrt(lam mu)]``,
    so it may be evaluated on inversion contours that enter ``Re s < 0``.
    """
    lam, mu = _check_background(background)
    b = math.sqrt(lam * mu)
    s = np.asarray(s, dtype=complex)
    p = s + (lam + mu)
    w = np.sqrt(p - 2.0 * b) * np.sqrt(p + 2.0 * b)
    zeta = 2.0 * b / (p + w)
    d = np.asarray(d)
    factor = np.ones(d.shape) if lam == mu else (lam / mu) ** (d / 2.0)
    return factor * zeta ** np.abs(d) / w


def g0_laplace(x: int, y: int, s: complex, background=(1.0, 1.0)) -> complex:
    """Laplace transform of ``g0(x, y, .)`` at ``s`` with ``Re s > 0``.

    For unit rates this is ``((s+2) - w)^{|x-y|} / (2^{|x-y|} w)`` with
    ``w = sqrt(s(s+4))``, ``Re w > 0``.
    """
    s = complex(s)
    if not s.real > 0:
        raise ValueError(f"Re s must be positive, got {s}")
    return complex(g0_hat(y - x, s, background))


class FreeGreen:
    """Callable ``(x, y, times) -> G0(x, y, times)`` sharing Bessel tables.

    Tables are cached per time grid and grown on demand to the largest
    displacement requested.
    """

    def __init__(self, background=(1.0, 1.0)):
        self.background = _check_background(background)
        self._key = None
        self._table = None

    def _scaled(self, n: int, times: np.ndarray) -> np.ndarray:
        key = (times.shape, times.tobytes())
        if self._key != key or self._table.shape[-1] <= n:
            lam, mu = self.background
            n_max = max(n, 16 if self._key != key else 2 * self._table.shape[-1])
            self._table = scaled_bessel_table(n_max, 2.0 * math.sqrt(lam * mu) * times)
            self._key = key
        return self._table[..., n]

    def __call__(self, x: int, y: int, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        lam, mu = self.background
        d = y - x
        damp = np.exp(-(lam + mu - 2.0 * math.sqrt(lam * mu)) * times)
        return _asym_factor(d, lam, mu) * damp * self._scaled(abs(d), times)

    def laplace(self, d, s):
        return g0_hat(d, s, self.background)
