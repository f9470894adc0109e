"""Grid-based Sobolev error estimation against closed-form oracles.

The network side uses exact Taylor jets; the oracle side uses closed-form
partial derivatives. Maxima over a dense grid are refined by three rounds of
local zoom around the worst points.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .network import Network, audit, derivatives, evaluate, multi_indices


class VerificationError(ValueError):
    """Bad oracle, grid or battery request."""


# ---------------------------------------------------------------- oracles


def _falling(x: np.ndarray, p: int, k: int) -> np.ndarray:
    """d^k/dx^k x^p."""
    if k > p:
        return np.zeros_like(x)
    coef = math.perm(p, k)
    return coef * x ** (p - k)


@dataclass(frozen=True)
class Oracle:
    """Closed-form target with all partial derivatives.

    ``fn(points, k)`` returns d^k f at each row of ``points`` for one
    multi-index ``k``.
    """

    name: str
    dim: int
    fn: Callable
    params: dict = field(default_factory=dict)

    def derivatives(self, points: np.ndarray, m: int) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, self.dim)
        idx = multi_indices(self.dim, m)
        return np.stack([np.asarray(self.fn(points, k), dtype=float) * np.ones(len(points)) for k in idx])


def _poly_fn(terms: dict, dim: int):
    def fn(p, k):
        out = np.zeros(len(p))
        for powers, a in terms.items():
            term = np.full(len(p), float(a))
            for i in range(dim):
                term = term * _falling(p[:, i], powers[i], k[i])
            out += term
        return out

    return fn


def make_oracle(name: str, **params) -> Oracle:
    """Oracle factory. Known names: identity, zero, constant, step, square,
    product, monomial, polynomial, exp_neg, reciprocal, division, clip."""
    if name == "identity":
        return Oracle(name, 1, lambda p, k: p[:, 0] if k[0] == 0 else (1.0 if k[0] == 1 else 0.0))
    if name in ("zero", "constant"):
        value = float(params.get("value", 0.0))
        dim = int(params.get("dim", 1))
        return Oracle(name, dim, lambda p, k: value if sum(k) == 0 else 0.0, {"value": value})
    if name == "step":
        # Heaviside step; only meaningful away from the origin
        def fn(p, k):
            if sum(k):
                return 0.0
            return (p[:, 0] > 0).astype(float)

        return Oracle(name, 1, fn)
    if name == "square":
        return Oracle(name, 1, _poly_fn({(2,): 1.0}, 1))
    if name == "product":
        d = int(params["dim"])
        return Oracle(name, d, _poly_fn({(1,) * d: 1.0}, d), {"dim": d})
    if name == "monomial":
        k_multi = tuple(int(v) for v in params["k"])
        return Oracle(name, len(k_multi), _poly_fn({k_multi: 1.0}, len(k_multi)), {"k": list(k_multi)})
    if name == "polynomial":
        terms = {tuple(int(v) for v in key): float(a) for key, a in dict(params["coeffs"]).items()}
        dim = int(params.get("dim") or len(next(iter(terms))))
        return Oracle(name, dim, _poly_fn(terms, dim), {"coeffs": {str(k): a for k, a in terms.items()}})
    if name == "exp_neg":
        return Oracle(name, 1, lambda p, k: (-1.0) ** k[0] * np.exp(-p[:, 0]))
    if name == "reciprocal":

        def fn(p, k):
            x = p[:, 0]
            if np.any(x == 0):
                raise VerificationError("reciprocal oracle is singular at 0")
            return (-1.0) ** k[0] * math.factorial(k[0]) / x ** (k[0] + 1)

        return Oracle(name, 1, fn)
    if name == "division":

        def fn(p, k):
            x, y = p[:, 0], p[:, 1]
            if np.any(y == 0):
                raise VerificationError("division oracle is singular at y = 0")
            inv = (-1.0) ** k[1] * math.factorial(k[1]) / y ** (k[1] + 1)
            if k[0] == 0:
                return x * inv
            return inv if k[0] == 1 else 0.0

        return Oracle(name, 2, fn)
    if name == "clip":
        A = float(params["A"])

        def fn(p, k):
            x = p[:, 0]
            inner = np.abs(x) <= A
            outer = np.abs(x) >= A + 1
            if not np.all(inner | outer):
                raise VerificationError("clip reference is undefined on A < |x| < A + 1")
            if k[0] == 0:
                return np.where(inner, x, np.sign(x) * (A + 0.5))
            if k[0] == 1:
                return inner.astype(float)
            return 0.0

        return Oracle(name, 1, fn, {"A": A})
    raise VerificationError(f"unknown oracle {name!r}")


# ---------------------------------------------------------------- grids


@dataclass(frozen=True)
class GridSpec:
    intervals: tuple
    points_per_dim: int = 2048
    probe_points: tuple = ()

    def __post_init__(self):
        ivs = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        if not ivs or any(not hi >= lo for lo, hi in ivs):
            raise VerificationError("grid intervals must be nonempty with lo <= hi")
        if self.points_per_dim < 2:
            raise VerificationError("points_per_dim must be at least 2")
        object.__setattr__(self, "intervals", ivs)
        object.__setattr__(self, "probe_points", tuple(tuple(map(float, p)) for p in self.probe_points))

    @property
    def dim(self) -> int:
        return len(self.intervals)

    def points(self) -> np.ndarray:
        axes = [np.linspace(lo, hi, self.points_per_dim) for lo, hi in self.intervals]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        if self.probe_points:
            mesh = np.vstack([mesh, np.array(self.probe_points)])
        return mesh

    def steps(self) -> np.ndarray:
        return np.array([(hi - lo) / (self.points_per_dim - 1) for lo, hi in self.intervals])

    def as_dict(self) -> dict:
        return {
            "intervals": [list(iv) for iv in self.intervals],
            "points_per_dim": self.points_per_dim,
            "probe_points": [list(p) for p in self.probe_points],
        }


def default_points(dim: int) -> int:
    return {1: 2048, 2: 64, 3: 20, 4: 12}.get(dim, 6)


# ---------------------------------------------------------------- reports


@dataclass(frozen=True)
class SobolevReport:
    target: str
    eps: float | None
    order: int
    grid: dict
    per_index: tuple
    overall: float
    noise_floor: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "target": self.target,
            "eps": self.eps,
            "order": self.order,
            "grid": self.grid,
            "per_index": [dict(e) for e in self.per_index],
            "overall": self.overall,
            "noise_floor": self.noise_floor,
            "pass": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def _errors(net: Network, oracle: Oracle, pts: np.ndarray, m: int, output: int, scale) -> np.ndarray:
    got = derivatives(net, pts, m)[:, output, :]
    want = oracle.derivatives(pts, m)
    err = np.abs(got - want)
    if scale is not None:
        err = err / scale(pts)[None, :]
    # non-finite network output is a failure, never a silent skip
    err[~np.isfinite(err)] = np.inf
    return err


def sobolev_error(
    net: Network,
    oracle: Oracle,
    grid: GridSpec,
    m: int,
    eps: float | None = None,
    noise_floor: float = 0.0,
    output: int = 0,
    target: str | None = None,
    zoom_rounds: int = 3,
) -> SobolevReport:
    """Estimate max_{|k| <= m} sup |d^k (net - oracle)| over the grid."""
    if oracle.dim != net.input_dim or grid.dim != net.input_dim:
        raise VerificationError(
            f"dimension mismatch: net {net.input_dim}, oracle {oracle.dim}, grid {grid.dim}"
        )
    idx = multi_indices(net.input_dim, m)
    pts = grid.points()
    err = _errors(net, oracle, pts, m, output, None)
    best = err.max(axis=1)
    where = pts[err.argmax(axis=1)]

    lo = np.array([iv[0] for iv in grid.intervals])
    hi = np.array([iv[1] for iv in grid.intervals])
    half = grid.steps()
    zoom_n = {1: 33, 2: 9, 3: 5}.get(net.input_dim, 3)
    for _ in range(zoom_rounds):
        if not np.any(half > 0):
            break
        centers = np.unique(where, axis=0)
        local = []
        for c in centers:
            axes = [
                np.linspace(max(lo[i], c[i] - half[i]), min(hi[i], c[i] + half[i]), zoom_n)
                for i in range(net.input_dim)
            ]
            local.append(np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, net.input_dim))
        zpts = np.vstack(local)
        zerr = _errors(net, oracle, zpts, m, output, None)
        zbest = zerr.max(axis=1)
        better = zbest > best
        best = np.where(better, zbest, best)
        where = np.where(better[:, None], zpts[zerr.argmax(axis=1)], where)
        half = half * 2.0 / (zoom_n - 1)

    per_index = tuple(
        {"k": list(k), "max_err": float(e), "argmax": [float(v) for v in w]}
        for k, e, w in zip(idx, best, where)
    )
    overall = float(best.max())
    passed = bool(eps is not None and overall <= eps + noise_floor)
    return SobolevReport(
        target or oracle.name, eps, m, grid.as_dict(), per_index, overall, float(noise_floor), passed
    )


# ---------------------------------------------------------------- finite differences


def _stencil(k: int) -> tuple[np.ndarray, np.ndarray]:
    """Offsets (in units of h) and weights of the central k-th difference."""
    if k == 0:
        return np.array([0.0]), np.array([1.0])
    j = np.arange(k + 1)
    offsets = k / 2.0 - j
    weights = np.array([(-1.0) ** i * math.comb(k, i) for i in j])
    return offsets, weights


def finite_difference_partial(f, x, k_multi) -> float:
    """Central finite-difference estimate of d^k f at ``x`` for |k| <= 4.

    Steps are h = eps_mach^(1/(|k|+2)) (1 + |x_i|) per coordinate; the stencil
    is the tensor product of central k_i-th differences (truncation order 2).
    ``f`` maps an (npts, n) array to npts values, or is a Network.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    k_multi = tuple(int(v) for v in k_multi)
    total = sum(k_multi)
    if total > 4:
        raise VerificationError("finite differences are limited to |k| <= 4")
    if len(k_multi) != len(x):
        raise VerificationError("multi-index length does not match the point")
    base = np.finfo(float).eps ** (1.0 / (total + 2))
    h = base * (1.0 + np.abs(x))
    # for odd orders the half-integer offsets make the effective spacing h
    stencils = [_stencil(k) for k in k_multi]
    offs = list(itertools.product(*[s[0] for s in stencils]))
    wts = [math.prod(w) for w in itertools.product(*[s[1] for s in stencils])]
    pts = np.array([x + np.array(o) * h for o in offs])
    if isinstance(f, Network):
        vals = evaluate(f, pts).reshape(len(pts), -1)[:, 0]
    else:
        vals = np.asarray(f(pts), dtype=float).reshape(-1)
    denom = math.prod(h[i] ** k_multi[i] for i in range(len(x)))
    return float(np.dot(wts, vals) / denom)


# ---------------------------------------------------------------- probes


FAR_COORDS = (-1e3, -1e2, 1e2, 1e3)


def far_probes(dim: int) -> np.ndarray:
    """Diagonal and axis probes at coordinates in {±1e2, ±1e3}."""
    pts = [np.full(dim, c) for c in FAR_COORDS]
    for c in FAR_COORDS:
        for i in range(dim):
            p = np.zeros(dim)
            p[i] = c
            pts.append(p)
    return np.unique(np.array(pts), axis=0)


def probe_finite(net: Network, m: int, points=None) -> dict:
    """Max |d^k net| over far probes, and whether all of them are finite."""
    pts = far_probes(net.input_dim) if points is None else np.asarray(points, dtype=float)
    d = derivatives(net, pts, m)
    return {
        "points": pts.tolist(),
        "finite": bool(np.all(np.isfinite(d))),
        "max_abs_value": float(np.max(np.abs(d[0]))),
        "max_abs_partial": float(np.max(np.abs(d))),
    }


def replace_verification(cert, summary: dict):
    return replace(cert, verification=summary)


# ---------------------------------------------------------------- certificate batteries


def _check(name: str, value: float, limit: float, **extra) -> dict:
    value = float(value)
    out = {"name": name, "value": value, "limit": float(limit), "pass": bool(value <= limit)}
    out.update(extra)
    return out


def _sobolev_check(name, net, oracle, intervals, m, limit, points=None, output=0) -> dict:
    grid = GridSpec(tuple(intervals), points or default_points(len(intervals)))
    rep = sobolev_error(net, oracle, grid, m, eps=limit, output=output, target=name)
    worst = max(rep.per_index, key=lambda e: e["max_err"])
    return _check(name, rep.overall, limit, worst_index=worst["k"], argmax=worst["argmax"])


def _config_checks(cfg, depth=None, width=None, nonzeros=None) -> list:
    out = []
    if depth is not None:
        out.append(_check("config.depth", abs(cfg.depth - depth), 0, measured=cfg.depth))
    if width is not None:
        out.append(_check("config.width", cfg.max_width, width))
    if nonzeros is not None:
        out.append(_check("config.nonzeros", cfg.nonzeros, nonzeros))
    return out


def _far_checks(net: Network, m: int, bound: float | None = None, extra=()) -> list:
    pts = far_probes(net.input_dim)
    if len(extra):
        pts = np.vstack([pts, np.asarray(extra, dtype=float).reshape(-1, net.input_dim)])
    probe = probe_finite(net, m, pts)
    out = [_check("far.finite", 0.0 if probe["finite"] else math.inf, 0.0)]
    if bound is not None:
        out.append(_check("far.value_bound", probe["max_abs_value"], bound))
    return out


def _battery_identity_shallow(net, cert, noise):
    e, m = cert.request.eps, cert.request.order
    out = [
        _sobolev_check(f"error.C={C}", net, make_oracle("identity"), [(-C, C)], m, C * C * e + noise)
        for C in cert.claims.get("C", (1, 2, 4))
    ]
    return out + _config_checks(audit(net), depth=2, width=1, nonzeros=3)


def _battery_identity_deep(net, cert, noise):
    r, p = cert.request, cert.request.params
    K = p["K"]
    out = [_sobolev_check("error.domain", net, make_oracle("identity"), [(-K, K)], r.order, r.eps + noise)]
    return out + _config_checks(audit(net), depth=int(p["L"]))


def _battery_heaviside(net, cert, noise):
    r = cert.request
    kappa = r.params["kappa"]
    return [
        _sobolev_check("tail.left", net, make_oracle("zero"), [(-10.0, -kappa)], r.order, r.eps + noise),
        _sobolev_check("tail.right", net, make_oracle("constant", value=1.0), [(kappa, 10.0)], r.order, r.eps + noise),
    ] + _config_checks(audit(net), depth=2, nonzeros=8)


def partition_sum_error(nets, lo=-2.0, hi=2.0, n=10_000) -> float:
    xs = np.linspace(lo, hi, n).reshape(-1, 1)
    total = sum(np.asarray(evaluate(psi, xs)).reshape(-1) for psi in nets)
    return float(np.max(np.abs(total - 1.0)))


def _battery_partition_of_unity(nets, cert, noise):
    r = cert.request
    N = int(r.params["N"])
    a = [2.0 ** (-N + i) for i in range(N + 1)]
    out = [
        _check("partition.sum", partition_sum_error(nets), 1e-12),
        _sobolev_check("tail.first", nets[0], make_oracle("zero"), [(a[2], 10.0)], r.order, r.eps + noise),
        _sobolev_check("tail.last", nets[-1], make_oracle("zero"), [(-10.0, a[N - 2])], r.order, r.eps + noise),
    ]
    for i, psi in enumerate(nets, start=1):
        out.append(_check(f"config.depth.psi_{i}", abs(psi.depth - 2), 0))
    return out


def _battery_clip(net, cert, noise):
    r = cert.request
    A, m, e = r.params["A"], r.order, r.eps + noise
    out = [
        _sobolev_check("error.interior", net, make_oracle("identity"), [(-A, A)], m, e),
        _sobolev_check("ray.right", net, make_oracle("constant", value=A + 0.5), [(A + 1.0, A + 20.0)], m, e),
        _sobolev_check("ray.left", net, make_oracle("constant", value=-A - 0.5), [(-A - 20.0, -A - 1.0)], m, e),
    ]
    xs = np.linspace(-A - 30.0, A + 30.0, 20_001).reshape(-1, 1)
    xs = np.vstack([xs, far_probes(1)])
    out.append(_check("sup.global", np.max(np.abs(evaluate(net, xs))), A + 2.5))
    return out + _config_checks(audit(net), depth=2, width=2, nonzeros=7)


def _battery_square(net, cert, noise):
    e, m = cert.request.eps, cert.request.order
    out = [
        _sobolev_check(f"error.C={C}", net, make_oracle("square"), [(-C, C)], m, C**3 * e + noise)
        for C in cert.claims.get("C", (1, 2, 4))
    ]
    return out + _config_checks(audit(net), depth=2, width=2, nonzeros=6)


def _battery_mul2(net, cert, noise):
    e, m = cert.request.eps, cert.request.order
    out = [
        _sobolev_check(f"error.C={C}", net, make_oracle("product", dim=2), [(-C, C)] * 2, m, C**3 * e + noise)
        for C in cert.claims.get("C", (1, 2, 4))
    ]
    xs = np.linspace(-10.0, 10.0, 1000)
    pts = np.stack([xs, np.zeros_like(xs)], axis=1)
    out.append(_check("polarization.zero", np.max(np.abs(evaluate(net, pts))), 1e-12))
    return out + _config_checks(audit(net), depth=2, width=4, nonzeros=12)


def _domain_battery(oracle_of):
    def battery(net, cert, noise):
        r = cert.request
        oracle = oracle_of(r)
        intervals = [tuple(iv) for iv in cert.claims["domain"]]
        points = cert.claims.get("grid_points")
        out = [_sobolev_check("error.domain", net, oracle, intervals, r.order, r.eps + noise, points=points)]
        out += _far_checks(net, r.order, cert.claims.get("global_bound"), cert.claims.get("extra_probes", ()))
        return out

    return battery


def _battery_reciprocal(net, cert, noise):
    out = _domain_battery(lambda r: make_oracle("reciprocal"))(net, cert, noise)
    from .builders.elementary import construct_partition_of_unity

    b = cert.budgets
    nets = construct_partition_of_unity(int(cert.request.params["N"]), b["alpha_pou"], b["eps_0_pou"])
    out.append(_check("partition.sum", partition_sum_error(nets), 1e-12))
    return out


def _polynomial_oracle(r):
    coeffs = r.params["coeffs"]
    if not coeffs:
        return make_oracle("zero", dim=int(r.params.get("I", 1)))
    return make_oracle("polynomial", coeffs=coeffs, dim=int(r.params["I"]))


BATTERIES = {
    "identity_shallow": _battery_identity_shallow,
    "identity_deep": _battery_identity_deep,
    "heaviside": _battery_heaviside,
    "partition_of_unity": _battery_partition_of_unity,
    "clip": _battery_clip,
    "square": _battery_square,
    "mul2": _battery_mul2,
    "prod_d": _domain_battery(lambda r: make_oracle("product", dim=int(r.params["d"]))),
    "monomial": _domain_battery(lambda r: make_oracle("monomial", k=r.params["k"])),
    "polynomial": _domain_battery(_polynomial_oracle),
    "exp": _domain_battery(lambda r: make_oracle("exp_neg")),
    "reciprocal_naive": _domain_battery(lambda r: make_oracle("reciprocal")),
    "reciprocal": _battery_reciprocal,
    "division": _domain_battery(lambda r: make_oracle("division")),
}


def check_certificate(net, certificate, policy=None):
    """Run the target's battery and return the certificate with a verification summary.

    ``net`` is a Network, or the list of members for a partition of unity.
    The policy is accepted for symmetry with the builders; batteries do not
    depend on it.
    """
    target = certificate.request.target
    battery = BATTERIES.get(target)
    if battery is None:
        raise VerificationError(f"no battery for target {target!r}")
    members = net if isinstance(net, (list, tuple)) else [net]
    cfg = certificate.config
    recorded = cfg if isinstance(cfg, (list, tuple)) else [cfg]
    consistent = len(recorded) == len(members) and all(audit(n) == c for n, c in zip(members, recorded))
    checks = [_check("config.matches_network", 0.0 if consistent else 1.0, 0.0)]
    checks += battery(net, certificate, certificate.noise_floor)
    summary = {
        "pass": all(c["pass"] for c in checks),
        "checks": checks,
        "failed": [c["name"] for c in checks if not c["pass"]],
    }
    return replace_verification(certificate, summary)
