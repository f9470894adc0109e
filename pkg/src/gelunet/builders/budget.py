"""Requests, policies, certificates and the error-budget allocator.

Every proof-level accuracy symbol is tracked as log(1/eps) so that very small
budgets do not underflow before they are compared with the float floors.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from ..activation import gelu_seminorm_bound
from ..network import NetworkConfig

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
UNIT_ROUNDOFF = 2.0**-52

# Working budgets are clamped from below at these values. Below them the
# rounding noise of the primitive exceeds its truncation error, so a smaller
# parameter only makes the network worse in binary64.
FLOORS = {
    # square: R ~ 20/eps, noise ~ 5 u R |x|, truncation ~ 1.2 x^4 / R^2
    "square": 2e-4,
    # Heaviside half-width: derivative noise grows like u alpha^k / eps0
    "heaviside_eps0": 1e-3,
    # partition tails: a smaller budget only steepens the bumps
    "pou": 1e-12,
    # identity radius and clip steepness: tails are already below rounding
    "identity": 1e-20,
    "clip": 1e-30,
}

TARGETS = (
    "identity_shallow",
    "identity_deep",
    "heaviside",
    "partition_of_unity",
    "clip",
    "square",
    "mul2",
    "prod_d",
    "monomial",
    "polynomial",
    "exp",
    "reciprocal_naive",
    "reciprocal",
    "division",
)


class BudgetError(ValueError):
    """A sub-budget underflowed or a request parameter is out of range."""


class RefinementExhausted(RuntimeError):
    """The measured error still exceeds eps after every allowed backoff."""

    def __init__(self, message: str, last_error: float, diagnostics: dict | None = None):
        super().__init__(message)
        self.last_error = last_error
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class BudgetPolicy:
    asymptotic_constant: float = 1.0
    backoff_factor: float = 0.1
    max_refinements: int = 6

    def __post_init__(self):
        if not self.asymptotic_constant > 0:
            raise BudgetError("asymptotic_constant must be positive")
        if not 0 < self.backoff_factor < 1:
            raise BudgetError("backoff_factor must lie in (0, 1)")
        if self.max_refinements < 0:
            raise BudgetError("max_refinements must be nonnegative")


def _require(cond: bool, message: str):
    if not cond:
        raise BudgetError(message)


@dataclass(frozen=True)
class BuildRequest:
    target: str
    eps: float
    order: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        _require(self.target in TARGETS, f"unknown target {self.target!r}")
        _require(0 < self.eps < 1, f"eps must lie in (0, 1), got {self.eps}")
        _require(int(self.order) == self.order and self.order >= 1, "order must be an integer >= 1")
        p = dict(self.params)
        t = self.target
        if "K" in p:
            _require(p["K"] >= 1, "K must be >= 1")
        if t == "identity_deep":
            _require(int(p.get("L", 0)) >= 2, "identity_deep needs L >= 2")
            p.setdefault("K", 1.0)
        elif t == "heaviside":
            _require(0 < p.get("kappa", 0) < 1, "kappa must lie in (0, 1)")
        elif t in ("partition_of_unity", "reciprocal", "division"):
            _require(int(p.get("N", 0)) >= 3, "N must be >= 3")
        elif t == "clip":
            _require(p.get("A", 0) >= 1, "clip needs A >= 1")
        elif t == "prod_d":
            _require(int(p.get("d", 0)) >= 2, "prod_d needs d >= 2")
            p.setdefault("K", 1.0)
        elif t == "monomial":
            k = tuple(int(v) for v in p.get("k", ()))
            _require(len(k) >= 1 and all(v >= 0 for v in k), "monomial needs a multi-index")
            _require(sum(k) >= 2, "monomial degree |k| must be >= 2")
            p["k"] = k
            p.setdefault("K", 1.0)
        elif t == "polynomial":
            raw = p.get("coeffs", {})
            pairs = list(raw.items()) if isinstance(raw, dict) else list(raw)
            coeffs = {}
            for key, a in pairs:
                key = tuple(int(v) for v in key)
                _require(key not in coeffs, f"duplicate multi-index {key}")
                coeffs[key] = float(a)
            _require(all(abs(a) <= 1 for a in coeffs.values()), "polynomial coefficients need |a_k| <= 1")
            p["coeffs"] = coeffs
            p.setdefault("K", 1.0)
            if coeffs:
                dims = {len(k) for k in coeffs}
                _require(len(dims) == 1, "all multi-indices must have the same length")
                p.setdefault("I", dims.pop())
                p.setdefault("d", max(2, max(sum(k) for k in coeffs)))
            _require(int(p.get("I", 1)) >= 1, "polynomial needs I >= 1")
            _require(all(sum(k) <= p.get("d", 2) for k in coeffs), "a multi-index exceeds the degree d")
        elif t == "exp":
            _require(0 <= p.get("A", -1) <= 1, "exp needs 0 <= A <= 1")
        elif t == "reciprocal_naive":
            a, b = p.get("a", 0), p.get("b", 0)
            _require(0 < a <= b <= 2, "reciprocal_naive needs 0 < a <= b <= 2")
            _require(b / a >= 1.25 and a < 1, "reciprocal_naive needs b/a >= 5/4 and a < 1")
        if t in ("polynomial", "reciprocal_naive", "reciprocal", "division"):
            _require(self.order >= 3, f"{t} needs order m >= 3")
        object.__setattr__(self, "params", p)

    def as_dict(self) -> dict:
        params = {}
        for k, v in self.params.items():
            if k == "coeffs":
                v = {",".join(map(str, key)): a for key, a in v.items()}
            elif isinstance(v, tuple):
                v = list(v)
            params[k] = v
        return {"target": self.target, "eps": self.eps, "order": self.order, "params": params}


@dataclass(frozen=True)
class BuildCertificate:
    request: BuildRequest
    budgets: dict
    asymptotic_budgets: dict
    config: object
    noise_floor: float = 0.0
    claims: dict = field(default_factory=dict)
    refinements: int = 0
    verification: dict | None = None

    @property
    def passed(self) -> bool:
        return bool(self.verification and self.verification.get("pass"))

    def as_dict(self) -> dict:
        cfg = self.config
        if isinstance(cfg, NetworkConfig):
            cfg = cfg.as_dict()
        elif isinstance(cfg, (list, tuple)):
            cfg = [c.as_dict() if isinstance(c, NetworkConfig) else c for c in cfg]
        return {
            "request": self.request.as_dict(),
            "budgets": dict(self.budgets),
            "asymptotic_budgets_log10": dict(self.asymptotic_budgets),
            "config": cfg,
            "noise_floor": self.noise_floor,
            "claims": self.claims,
            "refinements": self.refinements,
            "verification": self.verification,
        }


# ---------------------------------------------------------------- closed forms


def identity_radius(eps: float, m: int) -> float:
    """R for the shallow identity; the range of k is 2..max(m, 2)."""
    r = 1.0
    for k in range(2, max(m, 2) + 1):
        r = max(r, (gelu_seminorm_bound(k) / (0.5 * eps)) ** (1.0 / (k - 1)))
    return r


def square_radius(eps: float, m: int) -> float:
    r = 10.0 * gelu_seminorm_bound(3) / (SQRT_2_OVER_PI * eps)
    for k in range(3, m + 1):
        term = 2 ** (k + 2) * k / SQRT_2_OVER_PI * math.sqrt(math.factorial(k - 2) / (2 * math.pi))
        r = max(r, term ** (1.0 / (k - 2)))
    return r


def _bisect_smallest(pred, lo: float, hi: float, tol: float = 1e-12) -> float:
    """Smallest x in [lo, hi] with pred(x) true, for pred monotone false -> true."""
    if pred(lo):
        return lo
    while not pred(hi):
        hi *= 2.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def clip_alpha(eps: float, m: int) -> float:
    """Smallest alpha >= max(1, sqrt(8m)) with 4 alpha^m exp(-alpha^2/16) <= eps.

    The left side decreases for alpha^2 >= 8m, so bisection is exact.
    """
    log_eps = math.log(eps)
    start = max(1.0, math.sqrt(8.0 * m))
    return _bisect_smallest(
        lambda a: math.log(4.0) + m * math.log(a) - a * a / 16.0 <= log_eps, start, start + 8.0
    )


def heaviside_asymptotic_log_eps0(log_inv_eps: float, m: int, kappa: float) -> float:
    """log(1/eps0) for eps0 = ((8 kappa^-2 m)^(m/2) (m+3) sqrt((m+1)!))^-1 eps."""
    return (
        log_inv_eps
        + 0.5 * m * math.log(8.0 * m / kappa**2)
        + math.log(m + 3)
        + 0.5 * math.lgamma(m + 2)
    )


def heaviside_parameters(eps: float, m: int, kappa: float) -> tuple[float, float]:
    """(alpha, eps0) from the proof's explicit tail inequality.

    alpha is the smallest value with alpha^m 2 exp(-alpha^2 kappa^2/4) sqrt((m+1)!) <= eps/2,
    and eps0 makes alpha^m eps0^2 (m+4) sqrt((m+1)!) / 6 <= eps/2.
    """
    half_fact = 0.5 * math.lgamma(m + 2)
    target = math.log(eps / 2.0)
    start = max(1.0, math.sqrt(2.0 * m) / kappa)
    alpha = _bisect_smallest(
        lambda a: m * math.log(a) + math.log(2.0) - (a * kappa) ** 2 / 4.0 + half_fact <= target,
        start,
        start + 8.0 / kappa,
    )
    log_eps0 = 0.5 * (math.log(3.0 * eps) - m * math.log(alpha) - math.log(m + 4) - half_fact)
    return alpha, min(0.5, math.exp(log_eps0))


# ---------------------------------------------------------------- asymptotic budgets


def reciprocal_asymptotic_r(eps: float, m: int, a: float, b: float) -> int:
    """Fixed point of r = ceil(m + (b/a) log(1/eps')), eps' = a/(4 m!) (a (b min 1)/(2r))^m eps."""
    r = m + 1
    for _ in range(100):
        log_inv = -(math.log(a / (4.0 * math.factorial(m))) + m * math.log(a * min(b, 1.0) / (2.0 * r)) + math.log(eps))
        nxt = math.ceil(m + (b / a) * log_inv)
        if nxt == r:
            break
        r = nxt
    return r


def prod_tree_log_budgets(log_inv_eps1: float, m: int, levels: int) -> dict:
    """log(1/eps_mul^(j)) for the binary product tree, plus gamma_j."""
    out = {"gamma_1": 0.0, "mul_1": log_inv_eps1}
    gamma = 0.0
    for j in range(2, levels + 1):
        out[f"mul_{j}"] = (
            log_inv_eps1
            + math.log(16.0)
            + m * (2.0 + 4.0 * math.log(m) + math.log(2.0) + (j - 1) * math.log(4.0))
            + (m + 1) * (gamma + 1.0) * math.log(2.0)
        )
        gamma = m + 3 + 2 * gamma
        out[f"gamma_{j}"] = gamma
    return out


def identity_deep_log_budgets(log_inv_eps: float, m: int, L: int, K: float, c: float) -> dict:
    prime = c * (log_inv_eps + m * math.log(m * K))
    id2 = prime + L * math.log(2.0 * (m + 3))
    idj = id2 + math.log(16.0) + m * (2.0 + 4.0 * math.log(m))
    return {"prime": prime, "clip": prime, "id_2": id2, "id_j": idj}


def _log_budgets(req: BuildRequest, c: float) -> dict:
    """Paper budgets as log(1/eps_symbol); explicit parameters are returned as-is
    under keys prefixed with '='."""
    m, p = req.order, req.params
    le = math.log(1.0 / req.eps)
    t = req.target
    if t == "identity_shallow":
        return {"=R": identity_radius(req.eps, m)}
    if t == "identity_deep":
        return identity_deep_log_budgets(le, m, int(p["L"]), p["K"], c)
    if t == "heaviside":
        return {"eps0": heaviside_asymptotic_log_eps0(le, m, p["kappa"])}
    if t == "partition_of_unity":
        kappa = 2.0 ** -int(p["N"])
        return {"heaviside": le + math.log(2.0), "eps0": heaviside_asymptotic_log_eps0(le + math.log(2.0), m, kappa)}
    if t == "clip":
        return {"=alpha": clip_alpha(req.eps, m)}
    if t == "square":
        return {"=R": square_radius(req.eps, m)}
    if t == "mul2":
        return {"square": le + math.log(4.0)}
    if t in ("prod_d", "monomial"):
        d = int(p["d"]) if t == "prod_d" else sum(p["k"])
        K = p["K"]
        mm = m + 1
        mul_d = c * (le + m * math.log(m * d * K))
        clip = c * (le + m * math.log(m * d * K) + d * math.log(K))
        levels = max(1, math.ceil(math.log2(d)))
        inner = mul_d + d * math.log(K)
        eps1 = inner + math.log(4.0 * (mm + 3) * d * d)
        out = {"mul_d": mul_d, "clip": clip, "eps_1": eps1}
        out.update(prod_tree_log_budgets(eps1, mm, levels))
        return out
    if t == "polynomial":
        d, I, K = int(p["d"]), int(p["I"]), p["K"]
        return {"term": c * (le + m * m * (d + I) * math.log(m * d * K * I))}
    if t == "exp":
        eps0 = c * (m * m * math.log(m) + m**3 * le)
        K = max(2.0, eps0)
        r = math.ceil(m + 4.0 * K * math.e**2 + 4.0 * p["A"] + eps0 + math.log(2.0))
        return {"eps0": eps0, "clip": c * (eps0 + m * math.log(m * K)), "=K": K, "=r": r}
    if t == "reciprocal_naive":
        a, b = p["a"], p["b"]
        return {
            "part": c * (le + m * math.log(1.0 / a)),
            "clip": c * (le + m * math.log(m / a)),
            "=r": reciprocal_asymptotic_r(req.eps, m, a, b),
        }
    if t == "reciprocal":
        N = int(p["N"])
        rec = c * (m * N + m * m * le)
        pou = c * (rec + m * m * N + m * m * math.log(m * N * rec))
        return {
            "rec": rec,
            "pou": pou,
            "id_phi": c * (rec + m * m * N + m * m * math.log(m)),
            "id_psi": c * (m * m * pou + m * m * N + m * m * math.log(m)),
            "mul": c * (m**3 * N + m**3 * math.log(m / req.eps)),
        }
    if t == "division":
        N = int(p["N"])
        return {"eps0": c * (m * m * N + m * m * math.log(m) + le)}
    raise BudgetError(f"no allocation rule for {t!r}")


def allocate_budgets(request: BuildRequest, policy: BudgetPolicy = BudgetPolicy()) -> dict:
    """Proof-level sub-budgets for ``request`` with the policy's constant.

    Accuracy symbols are returned as plain numbers (eps values); explicit
    parameters (R, alpha, K) keep their own names. Raises BudgetError when an
    accuracy symbol falls below 1e-300.
    """
    out = {}
    for name, value in _log_budgets(request, policy.asymptotic_constant).items():
        if name.startswith("="):
            out[name[1:]] = value
        elif name.startswith("gamma"):
            out[name] = value
        else:
            if value > 300 * math.log(10.0):
                raise BudgetError(
                    f"sub-budget {name} underflows: log10 = {-value / math.log(10.0):.1f} < -300"
                )
            out[name] = math.exp(-value)
    return out


def asymptotic_log10(request: BuildRequest, policy: BudgetPolicy) -> dict:
    """Like allocate_budgets but never underflows: accuracy symbols as log10."""
    out = {}
    for name, value in _log_budgets(request, policy.asymptotic_constant).items():
        if name.startswith("=") or name.startswith("gamma"):
            out[name.lstrip("=")] = value
        else:
            out[name] = -value / math.log(10.0)
    return out


def working(log_inv: float, floor: float | None = None, backoff: float = 1.0) -> float:
    """exp(-log_inv) clamped below at ``floor`` and then scaled by ``backoff``."""
    value = math.exp(-min(log_inv, 700.0))
    if floor is not None:
        value = max(value, floor)
    return value * backoff


def config_dict(cfg) -> dict:
    return asdict(cfg)
