"""GELU values, higher derivatives and closed-form Sobolev bounds.

Every derivative of order two or more is a Gaussian times a difference of
probabilist's Hermite polynomials, which is how they are evaluated here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

MAX_ORDER = 12

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
# below this point x * ndtr(x) underflows before the product is formed
_TAIL_SWITCH = -38.0


class CapacityError(ValueError):
    """Raised when a derivative order exceeds the configured table size."""


def normal_cdf(x):
    """Standard normal CDF, computed through the complementary error function."""
    return special.ndtr(x)


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def gelu(x):
    """GELU(x) = x * Phi(x).

    Far in the negative tail the product is formed in log space, so values
    that land in the subnormal range are not rounded twice.
    """
    x = np.asarray(x, dtype=float)
    out = x * special.ndtr(x)
    tail = x < _TAIL_SWITCH
    if np.any(tail):
        logs = np.log(np.maximum(-x, 1.0)) + special.log_ndtr(np.minimum(x, _TAIL_SWITCH))
        out = np.where(tail, -np.exp(logs), out)
    return out if np.ndim(out) else float(out)


def hermite_values(n_max: int, x) -> np.ndarray:
    """Probabilist's Hermite polynomials He_0..He_{n_max} at ``x``.

    Uses the three-term recurrence He_{n+1} = x He_n - n He_{n-1} on values.
    The result has shape ``(n_max + 1,) + x.shape``.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = x
    for n in range(1, n_max):
        out[n + 1] = x * out[n] - n * out[n - 1]
    return out


@dataclass(frozen=True)
class HermiteTable:
    """Integer coefficient lists of He_0..He_max_order, lowest degree first.

    Only used to check the recurrence symbolically; evaluation goes through
    :func:`hermite_values`.
    """

    max_order: int = MAX_ORDER
    coefficients: tuple = field(init=False)

    def __post_init__(self):
        rows = [[1.0], [0.0, 1.0]]
        for n in range(1, self.max_order):
            prev, cur = rows[n - 1], rows[n]
            nxt = [0.0] + list(cur)
            for i, c in enumerate(prev):
                nxt[i] -= n * c
            rows.append(nxt)
        object.__setattr__(
            self, "coefficients", tuple(tuple(r) for r in rows[: self.max_order + 1])
        )

    def evaluate(self, n: int, x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.coefficients[n])


def gelu_derivative(k: int, x, max_order: int = MAX_ORDER):
    """k-th derivative of GELU at ``x`` for 1 <= k <= max_order.

    For k >= 2 this is (-1)^k phi(x) (He_{k-2}(x) - He_k(x)).
    """
    if k < 1:
        raise ValueError(f"derivative order must be >= 1, got {k}")
    if k > max_order:
        raise CapacityError(f"derivative order {k} exceeds table capacity {max_order}")
    x = np.asarray(x, dtype=float)
    pdf = normal_pdf(x)
    if k == 1:
        out = special.ndtr(x) + x * pdf
    else:
        he = hermite_values(k, x)
        sign = 1.0 if k % 2 == 0 else -1.0
        out = sign * pdf * (he[k - 2] - he[k])
    return out if out.ndim else float(out)


def gelu_taylor(x, m: int) -> np.ndarray:
    """Derivatives of orders 0..m of GELU at ``x``, stacked on a new first axis."""
    if m > MAX_ORDER:
        raise CapacityError(f"derivative order {m} exceeds table capacity {MAX_ORDER}")
    x = np.asarray(x, dtype=float)
    out = np.empty((m + 1,) + x.shape)
    out[0] = gelu(x)
    if m >= 1:
        pdf = normal_pdf(x)
        out[1] = special.ndtr(x) + x * pdf
        if m >= 2:
            he = hermite_values(m, x)
            for k in range(2, m + 1):
                sign = 1.0 if k % 2 == 0 else -1.0
                out[k] = sign * pdf * (he[k - 2] - he[k])
    return out


def gelu_seminorm_bound(k: int) -> float:
    """Upper bound on sup |GELU^(k)| over the real line."""
    if k < 1:
        raise ValueError("seminorm bound is defined for k >= 1; use gelu_tail_bound for k = 0")
    if k == 1:
        return 1.0 + _INV_SQRT_2PI
    return (k + 1) * math.sqrt(math.factorial(k - 2) / (2.0 * math.pi))


def gelu_tail_bound(m: int, A: float) -> float:
    """Bound 2 exp(-A^2/4) sqrt(m!) on the GELU tails beyond |x| >= A."""
    if A < 0:
        raise ValueError("A must be nonnegative")
    return 2.0 * math.exp(-A * A / 4.0) * math.sqrt(math.factorial(m))
