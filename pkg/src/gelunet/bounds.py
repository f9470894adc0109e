"""Closed-form Sobolev calculus used to split error budgets.

All bounds are upper bounds on W^{n,inf} norms of products and compositions.
Large instances overflow binary64, so each bound also has a ``log_`` variant
returning ``(log_value, overflowed)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

_LOG_MAX = math.log(1.7976931348623157e308)


@dataclass(frozen=True)
class SobolevBudget:
    order: int
    domain_note: str
    value: float

    def __post_init__(self):
        if not (self.value >= 0 and math.isfinite(self.value)):
            raise ValueError("a Sobolev budget must be finite and nonnegative")


def log_factorial(n: int) -> float:
    if n < 0:
        raise ValueError("factorial of a negative integer")
    if n <= 20:
        return math.log(math.factorial(n))
    return math.lgamma(n + 1)


def _finish(log_value: float) -> tuple[float, bool]:
    return log_value, log_value > _LOG_MAX


def _exp_or_inf(log_value: float) -> float:
    if log_value == -math.inf:
        return 0.0
    return math.inf if log_value > _LOG_MAX else math.exp(log_value)


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def log_product_bound(k: int, nf: float, ng: float) -> tuple[float, bool]:
    return _finish(k * math.log(2.0) + _log(nf) + _log(ng))


def product_bound(k: int, nf: float, ng: float) -> float:
    """||f g||_{W^k} <= 2^k ||f||_{W^k} ||g||_{W^k}."""
    if nf < 0 or ng < 0:
        raise ValueError("norms must be nonnegative")
    return _direct(log_product_bound(k, nf, ng)[0], lambda: 2.0**k * nf * ng)


def _direct(log_value: float, compute) -> float:
    # plain arithmetic keeps exact small cases exact; log space only guards overflow
    if log_value == -math.inf:
        return 0.0
    if log_value > _LOG_MAX - 1.0:
        return _exp_or_inf(log_value)
    return compute()


def _max_power_value(norms: Sequence[float], power: int) -> float:
    return max([1.0] + [f**power for f in norms])


def _max_power(norms: Sequence[float], power: int) -> float:
    # log of max_i (norm_i^power v 1)
    return max([0.0] + [power * math.log(f) for f in norms if f > 0])


def log_composition_bound(n: int, m: int, d: int, g_norm: float, f_norms: Sequence[float]):
    base = 0.0 if n == 0 else n * (2.0 + 4.0 * math.log(n) + math.log(m) + 2.0 * math.log(d))
    return _finish(math.log(16.0) + base + _log(g_norm) + _max_power(f_norms, n))


def composition_bound(n: int, m: int, d: int, g_norm: float, f_norms: Sequence[float]) -> float:
    """||g o f||_{W^n} <= 16 (e^2 n^4 m d^2)^n ||g||_{W^n} max_i (||f_i||_{W^n}^n v 1).

    ``m`` is the number of inner outputs (components f_i) and ``d`` the
    number of inner inputs.
    """
    if g_norm < 0 or any(f < 0 for f in f_norms):
        raise ValueError("norms must be nonnegative")
    return _direct(
        log_composition_bound(n, m, d, g_norm, f_norms)[0],
        lambda: 16.0 * (math.e**2 * n**4 * m * d * d) ** n * g_norm * _max_power_value(f_norms, n),
    )


def log_composition_difference_bound(n, m, d, g_norm_np1, f_norms, ftilde_norms, delta):
    if delta == 0 or g_norm_np1 == 0:
        return -math.inf, False
    base = 0.0 if n == 0 else n * (2.0 + 5.0 * math.log(n) + 2.0 * math.log(m) + 2.0 * math.log(d))
    spread = max(_max_power(f_norms, 2 * n), _max_power(ftilde_norms, 2 * n))
    return _finish(math.log(32.0) + base + math.log(g_norm_np1) + math.log(delta) + spread)


def composition_difference_bound(n, m, d, g_norm_np1, f_norms, ftilde_norms, delta) -> float:
    """||g o f - g o f~||_{W^n} when max_i ||f_i - f~_i||_{W^n} <= delta.

    Equals 32 (e^2 n^5 m^2 d^2)^n ||g||_{W^{n+1}} delta max_i (1 v ||f_i||^{2n} v ||f~_i||^{2n}).
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    spread = max(_max_power_value(f_norms, 2 * n), _max_power_value(ftilde_norms, 2 * n))
    return _direct(
        log_composition_difference_bound(n, m, d, g_norm_np1, f_norms, ftilde_norms, delta)[0],
        lambda: 32.0 * (math.e**2 * n**5 * m * m * d * d) ** n * g_norm_np1 * delta * spread,
    )
