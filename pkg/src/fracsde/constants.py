"""
The limit-variance constant and the exact combinatorics behind the cancellations.

``mu(k)`` is the covariance of the integrated increments of unit-step fGn,

    mu(k) = int_0^1 int_k^{k+1} <1_[k, v'], 1_[0, v]> dv' dv,

and ``c_H = sum_k mu(k)``. Small lags use the closed form built from the
antiderivatives of ``|x|^{2H}``; from ``|k| >= SERIES_FROM`` on, the
closed form loses digits to cancellation (its terms grow like
``|k|^{2H+2}`` while ``mu(k) ~ |k|^{2H-2}``), so an even-derivative
expansion in ``1/k`` is used instead. The same expansion sums the tail of
``c_H`` with Hurwitz zeta functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import zeta

from .fbm import validate_hurst

__all__ = [
    "CHResult",
    "MuTable",
    "cancellation_family",
    "cancellation_sum",
    "c_h",
    "family_sum",
    "hermite_coeff",
    "hermite_poly",
    "mu",
    "mu_table",
    "rho",
]

SERIES_FROM = 8
_SERIES_TERMS = 24
HERMITE_EXACT_MAX = 20


def rho(x):
    """``|x| v 1``."""
    return np.maximum(np.abs(x), 1.0)


def _g1(x, h):
    # antiderivative of |x|^{2H}
    return np.sign(x) * np.abs(x) ** (2 * h + 1) / (2 * h + 1)


def _phi(x, h):
    # antiderivative of _g1
    return np.abs(x) ** (2 * h + 2) / ((2 * h + 1) * (2 * h + 2))


def _mu_closed(k, h):
    k = np.asarray(k, dtype=float)
    # the four power terms of <1_[k,v'], 1_[0,v]>, integrated
    left = _g1(1 - k, h) - _g1(-k, h)            # int_0^1 |v - k|^{2H} dv
    right = _g1(k + 1, h) - _g1(k, h)            # int_k^{k+1} |v'|^{2H} dv'
    const = np.abs(k) ** (2 * h)
    # grouped so that k -> -k permutes operands of commutative ops only
    cross = (_phi(k + 1, h) + _phi(k - 1, h)) - 2 * _phi(k, h)
    return 0.5 * (left + right - const - cross)


def _series_coeffs(h: float, terms: int = _SERIES_TERMS) -> np.ndarray:
    """Coefficients of ``k^{2H-2j}``, j = 1..terms, in the large-lag expansion."""
    out = np.empty(terms)
    falling = 1.0
    for j in range(1, terms + 1):
        for i in (2 * j - 2, 2 * j - 1):
            falling *= 2 * h - i
        out[j - 1] = (1 / math.factorial(2 * j + 1) - 1 / math.factorial(2 * j + 2)) * falling
    return out


def _mu_series(k, h):
    k = np.abs(np.asarray(k, dtype=float))
    c = _series_coeffs(h)
    inv2 = k ** -2.0
    # Horner in 1/k^2
    acc = np.zeros_like(k)
    for cj in c[::-1]:
        acc = acc * inv2 + cj
    return acc * k ** (2 * h - 2)


def mu(k, h: float):
    """``mu(k)`` for integer lag(s) ``k``; requires ``H < 1/2``."""
    h = validate_hurst(h, rough=True)
    k = np.asarray(k)
    if not np.issubdtype(k.dtype, np.integer):
        if np.any(k != np.round(k)):
            raise ValueError("mu is defined on integer lags")
        k = k.astype(np.int64)
    out = np.where(np.abs(k) < SERIES_FROM, _mu_closed(k, h), _mu_series(np.maximum(np.abs(k), 1), h))
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class MuTable:
    h: float
    k_max: int
    values: np.ndarray = field(repr=False)

    def __getitem__(self, k: int) -> float:
        if abs(k) > self.k_max:
            raise IndexError(k)
        return float(self.values[k + self.k_max])

    @property
    def lags(self) -> np.ndarray:
        return np.arange(-self.k_max, self.k_max + 1)


def mu_table(h: float, k_max: int) -> MuTable:
    lags = np.arange(-k_max, k_max + 1)
    return MuTable(float(h), int(k_max), mu(lags, h))


@dataclass(frozen=True)
class CHResult:
    value: float
    k_max: int
    tail_bound: float
    h: float


def _symmetric_sum(h: float, K: int) -> float:
    ks = np.arange(1, K + 1)
    # smallest terms first
    return float(mu(0, h) + 2.0 * np.sum(mu(ks, h)[::-1]))


def c_h(
    h: float,
    tol: float = 1e-10,
    k_cap: int = 10**7,
    tail_correction: bool = True,
) -> CHResult:
    """``c_H = sum_k mu(k)``, summed symmetrically over ``|k| <= K``.

    With ``tail_correction`` (default) the lags beyond ``K`` are added through
    the large-lag expansion summed in Hurwitz zeta functions; ``tail_bound``
    is then a rigorous bound on the expansion terms left out.

    Without it the plain truncated sum is returned, with ``K`` doubled until
    ``2 C K^{2H-1} / (1 - 2H) < tol``, where ``C = max |mu(k)| / k^{2H-2}``
    over the last 10 lags. This converges like ``K^{2H-1}`` and fails with
    ``RuntimeError`` once ``K`` would exceed ``k_cap``.
    """
    h = validate_hurst(h, rough=True)
    if not tol > 0:
        raise ValueError("tol must be positive")

    if not tail_correction:
        K = 16
        while True:
            last = np.arange(K - 9, K + 1)
            C = float(np.max(np.abs(mu(last, h)) / last ** (2 * h - 2)))
            bound = 2 * C * K ** (2 * h - 1) / (1 - 2 * h)
            if bound < tol:
                break
            if 2 * K > k_cap:
                raise RuntimeError(
                    f"c_H truncation needs K > {k_cap} for tol={tol} at H={h} "
                    f"(current bound {bound:.3g} at K={K})"
                )
            K *= 2
        value = _symmetric_sum(h, K)
        if not value > 0:
            raise RuntimeError(f"non-positive c_H={value} at H={h}")
        return CHResult(value, K, bound, h)

    K = 16
    coeffs = _series_coeffs(h)
    q = K + 1
    for J in range(1, coeffs.size + 1):
        # |term_j(k)| <= k^{2H-2j} / (2j (2j+1)), geometric in k^-2 beyond J
        bound = 2 * zeta(2 * J + 2 - 2 * h, q) / ((2 * J + 2) * (2 * J + 3)) / (1 - q**-2.0)
        if bound < tol:
            break
    else:
        raise RuntimeError(f"tail expansion cannot reach tol={tol}")
    tail = sum(coeffs[j - 1] * zeta(2 * j - 2 * h, q) for j in range(J, 0, -1))
    value = _symmetric_sum(h, K) + 2.0 * tail
    if not value > 0:
        raise RuntimeError(f"non-positive c_H={value} at H={h}")
    return CHResult(float(value), K, float(bound), h)


# ------------------------------------------------------------------ #
# Hermite polynomials
# ------------------------------------------------------------------ #
def hermite_poly(k: int, x):
    """Probabilists' Hermite polynomial ``H_k(x)`` by the three-term recurrence.

    Float input is evaluated in float64. ``Fraction`` (or integer) scalars and
    object arrays of them are evaluated exactly, which sidesteps the loss of
    relative accuracy of float sums like ``sum_q a^i_{i-2q} H_{i-2q}(x)`` near
    ``x = 0``.
    """
    if k < 0:
        raise ValueError("order must be non-negative")
    exact = isinstance(x, (Fraction, int)) or (isinstance(x, np.ndarray) and x.dtype == object)
    if exact:
        x = np.asarray(x, dtype=object)
        prev, cur = np.full(x.shape, Fraction(1), dtype=object), x + Fraction(0)
    else:
        x = np.asarray(x, dtype=float)
        prev, cur = np.ones_like(x), x.copy()
    if k == 0:
        cur = prev
    for j in range(1, k):
        prev, cur = cur, x * cur - j * prev
    cur = np.asarray(cur, dtype=x.dtype)
    return cur[()] if cur.ndim == 0 else cur


def hermite_coeff(i: int, q: int) -> int:
    """``a^i_{i-2q} = i! / (2^q q! (i-2q)!)``, so that ``x^i = sum_q a^i_{i-2q} H_{i-2q}(x)``."""
    if i < 1 or not 0 <= q <= i // 2:
        raise ValueError(f"need i >= 1 and 0 <= q <= i // 2, got i={i}, q={q}")
    if i > HERMITE_EXACT_MAX:
        raise ValueError(f"exact coefficients are limited to i <= {HERMITE_EXACT_MAX}")
    num = math.factorial(i)
    den = 2**q * math.factorial(q) * math.factorial(i - 2 * q)
    assert num % den == 0
    return num // den


# ------------------------------------------------------------------ #
# cancellation identity
# ------------------------------------------------------------------ #
def cancellation_family(tau: int) -> list[tuple[int, int, int]]:
    """Index triples ``(i, q, j)`` with ``j = i - 2q`` and ``q + j = tau``."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    return [(tau + q, q, tau - q) for q in range(tau + 1)]


def family_sum(triples) -> Fraction:
    """``sum (-1)^j / (q! j!)`` over the given triples, in exact rationals."""
    return sum(
        (Fraction((-1) ** j, math.factorial(q) * math.factorial(j)) for _, q, j in triples),
        Fraction(0),
    )


def cancellation_sum(tau: int) -> Fraction:
    """``sum_{j=0}^{tau} (-1)^j / (j! (tau - j)!)``, which is ``(1 - 1)^tau / tau! = 0``."""
    return family_sum(cancellation_family(tau))
