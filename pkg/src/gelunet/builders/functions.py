"""Exponential, reciprocal and division networks."""

from __future__ import annotations

import math

import numpy as np

from ..activation import gelu_seminorm_bound
from ..network import affine, audit, compose, compose_all, parallel, weighted_sum
from .budget import (
    FLOORS,
    BudgetPolicy,
    BuildRequest,
    _bisect_smallest,
    clip_alpha,
    square_radius,
    working,
)
from .elementary import (
    certificate,
    clip_noise,
    construct_clip,
    construct_mul2,
    construct_partition_of_unity,
    construct_square,
    identity_deep_budgets,
    identity_deep_from_budgets,
    knots,
    partition_working,
    refine,
    rescale,
    shift_input,
    square_noise,
)
from .products import MUL2_FLOOR, construct_polynomial, polynomial_noise, polynomial_budgets, tree_levels

# sup |GELU'| is about 1.129 and inf GELU' about -0.129, so a difference of
# two first derivatives stays below this
_CLIP_FIRST_DERIVATIVE = 1.26


# ---------------------------------------------------------------- exp


def clip_derivative_bound(alpha: float, m: int) -> float:
    """Bound on max_{j <= m} |d^j (g o clip)| / sup |g^(i)|, over the whole line.

    It is the complete Bell polynomial in c_1 = 1.26 and
    c_k = 2 alpha^(k-1) sup|GELU^(k)|, the Faa di Bruno sum with every outer
    derivative bounded by one.
    """
    c = [0.0, _CLIP_FIRST_DERIVATIVE] + [2.0 * alpha ** (k - 1) * gelu_seminorm_bound(k) for k in range(2, m + 1)]
    bell = [1.0]
    for n in range(m):
        bell.append(sum(math.comb(n, i) * bell[n - i] * c[i + 1] for i in range(n + 1)))
    return max(bell[1:]) if m else 1.0


def exp_parameters(eps: float, m: int, A: float, k: int = 0, backoff: float = 0.1) -> dict:
    """Shifted clip and Taylor data for e^{-x} on [-A, infinity).

    The clip is the identity on [-A, K] and saturates at K + 1/2; the Taylor
    polynomial is expanded at the clip's center c0 = (K - A)/2 so that all its
    coefficients e^{-c0}/i! are at most one. Refinement k tightens the Taylor
    target first, then the clip, then K.
    """
    eps_r = eps / 4.0 * backoff**k
    eps_clip = eps * math.exp(-(A + 1.0)) / (4.0 * 2.0**m) * backoff ** max(0, k - 1)
    eps_K = eps / 4.0 * backoff ** max(0, k - 2)
    alpha = clip_alpha(eps_clip, m)
    B = clip_derivative_bound(alpha, m)
    K = _bisect_smallest(lambda K: math.exp(-K) * (2.0 * B + 1.0) <= eps_K, 2.0, 4.0, 1e-9)
    half = (K + A) / 2.0
    c0 = (K - A) / 2.0
    rho = half + 0.5
    Kp = half + 1.0
    log_target = math.log(eps_r) + c0 - max(rho, 0.0)
    n = 1
    while n * math.log(rho) - math.lgamma(n + 1) > log_target:
        n += 1
    r = n + m
    return {
        "eps_r": eps_r,
        "eps_clip": eps_clip,
        "eps_K": eps_K,
        "alpha": alpha,
        "K": K,
        "A_clip": half,
        "c0": c0,
        "K_poly": Kp,
        "r": r,
        "degree": r - 1,
        "J": tree_levels(max(2, r - 1)),
    }


def exp_coefficients(c0: float, degree: int) -> dict:
    """Taylor coefficients of e^{-(y + c0)} in y up to ``degree``."""
    return {(i,): math.exp(-c0 - math.lgamma(i + 1)) * (-1.0) ** i for i in range(degree + 1)}


def construct_exp(params: dict, m: int, c: float = 1.0):
    """poly(clip(x - c0)) with poly the Taylor polynomial at c0; returns (net, budgets)."""
    coeffs = exp_coefficients(params["c0"], params["degree"])
    d = max(2, params["degree"])
    eps_k, terms = polynomial_budgets(params["eps_r"], m, coeffs, d, 1, params["K_poly"], c, 1.0)
    poly = construct_polynomial(coeffs, 1, params["K_poly"], m, eps_k, terms, c)
    clip = shift_input(construct_clip(params["alpha"], params["A_clip"]), params["c0"])
    noise = polynomial_noise(coeffs, params["K_poly"], terms) + clip_noise(params["alpha"], params["A_clip"])
    return compose(poly, clip), eps_k, noise


def build_exp(eps: float, m: int, A: float, policy: BudgetPolicy = BudgetPolicy()):
    request = BuildRequest("exp", eps, m, {"A": float(A)})

    def make(backoff, k):
        params = exp_parameters(eps, m, A, k, policy.backoff_factor)
        net, eps_k, noise = construct_exp(params, m, policy.asymptotic_constant)
        budgets = dict(params, eps_k=eps_k)
        claims = {
            "domain": [[-A, params["K"] + 3.0]],
            "global_bound": math.exp(A + 1.0) + 1.0,
        }
        return net, certificate(request, policy, budgets, audit(net), noise, claims, k)

    return refine(request, policy, make)


# ---------------------------------------------------------------- naive reciprocal


def reciprocal_truncation(n: int, m: int, a: float, b: float, points: int = 400) -> float:
    """max_{j <= m} sup_{[a, b]} |d^j (t^n / x)|, t = 1 - x/b, via Leibniz with absolute values."""
    x = np.linspace(a, b, points)
    t = 1.0 - x / b
    worst = 0.0
    for j in range(m + 1):
        total = np.zeros_like(x)
        for i in range(min(j, n) + 1):
            dt = math.perm(n, i) * np.abs(t) ** (n - i) / b**i
            dx = math.factorial(j - i) / x ** (j - i + 1)
            total += math.comb(j, i) * dt * dx
        worst = max(worst, float(total.max()))
    return worst


def reciprocal_naive_parameters(eps: float, m: int, a: float, b: float, c: float, backoff: float) -> dict:
    """Working data for (1 - t^(2^J)) / x on [a, b].

    The truncation target is eps/2; the mul2 and square blocks take the
    asymptotic part budget clamped at the square floor.
    """
    le = math.log(1.0 / eps)
    eps_part = working(c * (le + m * math.log(1.0 / a)), MUL2_FLOOR, backoff)
    eps_clip = working(c * (le + m * math.log(m / a)), FLOORS["clip"], backoff)
    target = eps / 2.0 * backoff
    J = 1
    while reciprocal_truncation(2**J, m, a, b) > target:
        J += 1
    lo = 11.0 * a / 16.0
    bound = b / lo
    scales = [max(2.0, min(2.0**k, bound)) * 1.05 for k in range(J)]
    return {
        "eps_part": eps_part,
        "eps_clip": eps_clip,
        "alpha": clip_alpha(eps_clip, m),
        "J": J,
        "r": 2**J,
        "R": square_radius(eps_part / 4.0, m + 1),
        "scales": scales,
        "a": a,
        "b": b,
    }


def construct_range_clip(alpha: float, a: float, b: float):
    """(a/8) clip(8x/a): identity on [a, b], outputs in [11a/16, b + 5a/16]."""
    center = 4.0 * (1.0 + b / a)
    A = 4.0 * b / a - 4.0
    return rescale(construct_clip(alpha, A, center), inner=a / 8.0, outer=a / 8.0)


def construct_reciprocal_naive(params: dict):
    """Range clip, then J product steps P <- P (1 + s), s <- s^2 starting at (1, 1 - x/b).

    After J steps P = sum_{i < 2^J} t^i, and the output is P / b.
    """
    a, b, R = params["a"], params["b"], params["R"]
    J = params["J"]
    net = construct_range_clip(params["alpha"], a, b)
    net = compose(affine(np.array([[0.0], [-1.0 / b]]), np.array([-1.0, -1.0])), net)
    pre = affine(np.eye(2), np.array([0.0, -1.0]))
    take_s = affine(np.array([[0.0, 1.0]]))
    for k, S in enumerate(params["scales"]):
        mul = compose(construct_mul2(R, S), pre)
        if k < J - 1:
            block = parallel([mul, compose(construct_square(R), take_s)], shared_input=True)
        else:
            block = mul
        net = compose(block, net)
    return rescale(net, outer=1.0 / b)


def reciprocal_naive_noise(params: dict) -> float:
    R = params["R"]
    return sum(square_noise(R, S * S) for S in params["scales"]) / params["b"]


def build_reciprocal_naive(eps: float, m: int, a: float, b: float, policy: BudgetPolicy = BudgetPolicy()):
    request = BuildRequest("reciprocal_naive", eps, m, {"a": float(a), "b": float(b)})

    def make(backoff, k):
        params = reciprocal_naive_parameters(eps, m, a, b, policy.asymptotic_constant, backoff)
        net = construct_reciprocal_naive(params)
        budgets = {key: v for key, v in params.items() if key not in ("a", "b", "scales")}
        claims = {"domain": [[a, b]], "global_bound": 3.0 / a, "extra_probes": [[-5.0]]}
        return net, certificate(request, policy, budgets, audit(net), reciprocal_naive_noise(params), claims, k)

    return refine(request, policy, make)


# ---------------------------------------------------------------- reciprocal on [2^-N, 1]


def reciprocal_pieces(N: int) -> list:
    """Intervals [a_{i-2}, a_{i+1} min 1] of the local reciprocals, with a_{-1} = 2^(-N-1)."""
    a = knots(N)
    ext = [2.0 ** (-N - 1)] + a
    return [(ext[i - 1], min(ext[min(i + 2, N + 1)], 1.0)) for i in range(1, N + 1)]


def reciprocal_log_budgets(eps: float, m: int, N: int, c: float) -> dict:
    le = math.log(1.0 / eps)
    rec = c * (m * N + m * m * le)
    pou = c * (rec + m * m * N + m * m * math.log(m * N * rec))
    return {
        "rec": rec,
        "pou": pou,
        "id_phi": c * (rec + m * m * N + m * m * math.log(m)),
        "id_psi": c * (m * m * pou + m * m * N + m * m * math.log(m)),
        "mul": c * (m**3 * N + m**3 * math.log(m / eps)),
    }


def construct_reciprocal(eps: float, m: int, N: int, c: float, backoff: float):
    """sum_i q(phi_id o phi_rec_i, psi_id o psi_i); returns (net, budgets, noise)."""
    logs = reciprocal_log_budgets(eps, m, N, c)
    eps_rec = working(logs["rec"], backoff=backoff)
    eps_pou = max(working(logs["pou"]), FLOORS["pou"]) * backoff
    alpha, eps0 = partition_working(eps_pou, m, N)
    psis = construct_partition_of_unity(N, alpha, eps0)

    pieces = []
    noise = 0.0
    for lo, hi in reciprocal_pieces(N):
        params = reciprocal_naive_parameters(eps_rec / 2.0, m, lo, hi, c, backoff)
        pieces.append((params, construct_reciprocal_naive(params)))
        noise += reciprocal_naive_noise(params)
    depth = max(net.depth for _, net in pieces)
    scale = 4.0 * 2.0**N
    eps_mul = working(logs["mul"], MUL2_FLOOR, backoff)
    R_q = square_radius(eps_mul / 4.0, m + 1)
    q = construct_mul2(R_q, scale)

    def padded(net, eps_id, K):
        L = 1 + depth - net.depth
        if L < 2:
            return net
        b = identity_deep_budgets(eps_id, m, L, K, c, 1.0)
        return compose(identity_deep_from_budgets(b, m, L, K), net)

    eps_id_phi = working(logs["id_phi"], backoff=backoff)
    eps_id_psi = working(logs["id_psi"], backoff=backoff)
    branches = []
    for (params, phi), psi in zip(pieces, psis):
        pair = parallel([padded(phi, eps_id_phi, scale), padded(psi, eps_id_psi, 1.0)], shared_input=True)
        branches.append(compose(q, pair))
    net = weighted_sum(branches, np.ones(N), shared_input=True)
    noise += N * square_noise(R_q, scale * scale)
    budgets = {
        "eps_rec": eps_rec,
        "eps_pou": eps_pou,
        "alpha_pou": alpha,
        "eps_0_pou": eps0,
        "eps_id_phi": eps_id_phi,
        "eps_id_psi": eps_id_psi,
        "eps_mul": eps_mul,
        "R_q": R_q,
    }
    budgets.update({f"J_{i}": p["J"] for i, (p, _) in enumerate(pieces, start=1)})
    return net, budgets, noise


def build_reciprocal(eps: float, m: int, N: int, policy: BudgetPolicy = BudgetPolicy()):
    request = BuildRequest("reciprocal", eps, m, {"N": int(N)})
    N = int(N)

    def make(backoff, k):
        net, budgets, noise = construct_reciprocal(eps, m, N, policy.asymptotic_constant, backoff)
        claims = {"domain": [[2.0**-N, 1.0]], "global_bound": 4.0 * 2.0 ** (N + 2)}
        return net, certificate(request, policy, budgets, audit(net), noise, claims, k)

    return refine(request, policy, make)


# ---------------------------------------------------------------- division


def division_log_budget(eps: float, m: int, N: int, c: float) -> float:
    return c * (m * m * N + m * m * math.log(m) + math.log(1.0 / eps))


def construct_division(eps: float, m: int, N: int, c: float, backoff: float):
    """S mul2(phi_id(x), phi_rec(y)) at scale S = 2^(N+1), all blocks at order m + 1."""
    eps0 = working(division_log_budget(eps, m, N, c), backoff=backoff)
    rec, rec_budgets, noise = construct_reciprocal(eps0, m + 1, N, c, 1.0)
    b = identity_deep_budgets(eps0, m + 1, rec.depth, 1.0, c, 1.0)
    ident = identity_deep_from_budgets(b, m + 1, rec.depth, 1.0)
    scale = 2.0 ** (N + 1)
    eps_mul = working(math.log(1.0 / eps0), MUL2_FLOOR, 1.0)
    R = square_radius(eps_mul / 4.0, m + 1)
    net = compose(construct_mul2(R, scale), parallel([ident, rec]))
    budgets = {"eps_0": eps0, "eps_mul": eps_mul, "R_div": R}
    budgets.update({f"rec.{key}": v for key, v in rec_budgets.items()})
    return net, budgets, noise + square_noise(R, scale * scale)


def build_division(eps: float, m: int, N: int, policy: BudgetPolicy = BudgetPolicy()):
    request = BuildRequest("division", eps, m, {"N": int(N)})
    N = int(N)

    def make(backoff, k):
        net, budgets, noise = construct_division(eps, m, N, policy.asymptotic_constant, backoff)
        claims = {"domain": [[-1.0, 1.0], [2.0**-N, 1.0]], "global_bound": 2.0 * 4.0 ** (N + 2)}
        return net, certificate(request, policy, budgets, audit(net), noise, claims, k)

    return refine(request, policy, make)
