"""Products of d numbers, monomials and multivariate polynomials."""

from __future__ import annotations

import math

import numpy as np

from ..network import Layer, Network, affine, audit, compose, compose_all, parallel, weighted_sum
from .budget import (
    FLOORS,
    BudgetPolicy,
    BuildRequest,
    prod_tree_log_budgets,
    clip_alpha,
    square_radius,
    working,
)
from .elementary import (
    add_constant,
    certificate,
    clip_noise,
    construct_clip,
    construct_mul2,
    identity_deep_budgets,
    identity_deep_from_budgets,
    refine,
    rescale,
    square_noise,
)

MUL2_FLOOR = 4.0 * FLOORS["square"]


def tree_levels(d: int) -> int:
    return max(1, math.ceil(math.log2(d)))


# ---------------------------------------------------------------- product tree


def construct_product_tree(radii) -> Network:
    """Binary tree of mul2 blocks on 2^J inputs; radii[j] is used at level j + 1."""
    J = len(radii)
    net = None
    for j, R in enumerate(radii):
        width = 2 ** (J - j - 1)
        level = parallel([construct_mul2(R)] * width)
        net = level if net is None else compose(level, net)
    return net


def prod_budgets(eps: float, m: int, d: int, K: float, c: float, backoff: float) -> dict:
    """Working budgets of the clipped product network.

    The tree runs at order m + 1 and each level's mul2 accuracy is clamped at
    the float floor of the square block.
    """
    le = math.log(1.0 / eps)
    mm = m + 1
    mul_d = c * (le + m * math.log(m * d * K))
    clip = mul_d + c * d * math.log(K)
    eps1 = mul_d + d * math.log(K) + math.log(4.0 * (mm + 3) * d * d)
    J = tree_levels(d)
    tree = prod_tree_log_budgets(eps1, mm, J)
    out = {"eps_mul_d": working(mul_d, backoff=backoff), "eps_1": working(eps1, backoff=backoff)}
    out["eps_clip"] = working(clip, FLOORS["clip"], backoff)
    out["alpha_clip"] = clip_alpha(out["eps_clip"], m)
    for j in range(1, J + 1):
        e = working(tree[f"mul_{j}"], MUL2_FLOOR, backoff)
        out[f"eps_mul_{j}"] = e
        out[f"R_{j}"] = square_radius(e / 4.0, mm)
        out[f"gamma_{j}"] = tree[f"gamma_{j}"]
    return out


def construct_prod_d(d: int, K: float, budgets: dict, fan=None, normalized: bool = False) -> Network:
    """K^d prod(clip(x)/K) with the tree padded by constant ones.

    ``fan`` is an optional affine map applied before the clips (the monomial
    fan-out). With ``normalized`` the K^d output factor is left out.
    """
    J = tree_levels(d)
    n = 2**J
    clips = parallel([construct_clip(budgets["alpha_clip"], K)] * d)
    w = np.zeros((n, d))
    w[np.arange(d), np.arange(d)] = 1.0 / K
    shift = np.zeros(n)
    shift[d:] = -1.0
    tree = construct_product_tree([budgets[f"R_{j}"] for j in range(1, J + 1)])
    net = compose_all(tree, affine(w, shift), clips)
    if fan is not None:
        net = compose(net, fan)
    return net if normalized else rescale(net, outer=K**d)


def prod_noise(d: int, K: float, budgets: dict) -> float:
    J = tree_levels(d)
    tree = sum(square_noise(budgets[f"R_{j}"]) for j in range(1, J + 1))
    return K**d * (tree + clip_noise(budgets["alpha_clip"], K))


def build_prod_d(eps: float, m: int, d: int, K: float = 1.0, policy: BudgetPolicy = BudgetPolicy()):
    request = BuildRequest("prod_d", eps, m, {"d": int(d), "K": float(K)})
    d = int(d)

    def make(backoff, k):
        b = prod_budgets(eps, m, d, K, policy.asymptotic_constant, backoff)
        net = construct_prod_d(d, K, b)
        claims = {"domain": [[-K, K]] * d, "far_probes": True}
        return net, certificate(request, policy, b, audit(net), prod_noise(d, K, b), claims, k)

    return refine(request, policy, make)


# ---------------------------------------------------------------- monomials


def fan_out(k_multi) -> Network:
    """Affine {0, 1} map x -> (x_1 repeated k_1 times, ..., x_I repeated k_I times)."""
    k_multi = tuple(int(v) for v in k_multi)
    d = sum(k_multi)
    w = np.zeros((d, len(k_multi)))
    row = 0
    for i, ki in enumerate(k_multi):
        w[row : row + ki, i] = 1.0
        row += ki
    return affine(w)


def construct_monomial(k_multi, K: float, budgets: dict, normalized: bool = False) -> Network:
    d = sum(k_multi)
    return construct_prod_d(d, K, budgets, fan=fan_out(k_multi), normalized=normalized)


def build_monomial(eps: float, m: int, k_multi, K: float = 1.0, policy: BudgetPolicy = BudgetPolicy()):
    request = BuildRequest("monomial", eps, m, {"k": tuple(k_multi), "K": float(K)})
    k_multi = request.params["k"]
    d = sum(k_multi)

    def make(backoff, k):
        b = prod_budgets(eps, m, d, K, policy.asymptotic_constant, backoff)
        net = construct_monomial(k_multi, K, b)
        claims = {"domain": [[-K, K]] * len(k_multi)}
        return net, certificate(request, policy, b, audit(net), prod_noise(d, K, b), claims, k)

    return refine(request, policy, make)


# ---------------------------------------------------------------- polynomials


def polynomial_term_log(eps: float, m: int, d: int, I: int, K: float, c: float) -> float:
    """log(1/eps_k) = c (log(1/eps) + m^2 (d + I) log(m d K I))."""
    return c * (math.log(1.0 / eps) + m * m * (d + I) * math.log(m * d * K * I))


def polynomial_budgets(eps: float, m: int, coeffs: dict, d: int, I: int, K: float, c: float, backoff: float):
    """Per-term budgets; every term's blocks are sized from eps_k."""
    log_term = polynomial_term_log(eps, m, d, I, K, c)
    eps_k = working(log_term, backoff=backoff)
    terms = {}
    for key in coeffs:
        deg = sum(key)
        if deg >= 2:
            terms[key] = prod_budgets(eps_k, m, deg, K, c, 1.0)
    return eps_k, terms


def construct_polynomial(coeffs: dict, I: int, K: float, m: int, eps_k: float, terms: dict, c: float = 1.0) -> Network:
    """sum_k a_k x^k with depth-equalized branches.

    Monomials are built in normalized form (range about [-1, 1]), padded with
    deep identities of half-width 1, and the factor K^|k| is folded into the
    output coefficient. Linear terms run through a deep identity of
    half-width K; the constant goes into the output shift.
    """
    const = sum(a for key, a in coeffs.items() if sum(key) == 0)
    linear = {key: a for key, a in coeffs.items() if sum(key) == 1 and a != 0}
    nonlinear = {key: a for key, a in coeffs.items() if sum(key) >= 2 and a != 0}
    if not nonlinear:
        w = np.zeros((1, I))
        for key, a in linear.items():
            w[0, key.index(1)] += a
        return affine(w, np.array([-const]))

    mono = {key: construct_monomial(key, K, terms[key], normalized=True) for key in nonlinear}
    max_depth = max(n.depth for n in mono.values())
    branches, weights = [], []
    for key, net in mono.items():
        L_id = 1 + max_depth - net.depth
        if L_id >= 2:
            b = identity_deep_budgets(eps_k, m, L_id, 1.0, c, 1.0)
            net = compose(identity_deep_from_budgets(b, m, L_id, 1.0), net)
        branches.append(net)
        weights.append(nonlinear[key] * K ** sum(key))
    if linear:
        b = identity_deep_budgets(eps_k, m, max_depth, K, c, 1.0)
        ident = identity_deep_from_budgets(b, m, max_depth, K)
        for key, a in linear.items():
            select = np.zeros((1, I))
            select[0, key.index(1)] = 1.0
            branches.append(compose(ident, affine(select)))
            weights.append(a)
    net = weighted_sum(branches, weights, shared_input=True)
    return add_constant(net, const) if const else net


def polynomial_noise(coeffs: dict, K: float, terms: dict) -> float:
    total = 0.0
    for key, b in terms.items():
        total += abs(coeffs[key]) * prod_noise(sum(key), K, b)
    return total


def build_polynomial(eps: float, m: int, coeffs, d: int | None = None, I: int | None = None, K: float = 1.0,
                     policy: BudgetPolicy = BudgetPolicy()):
    params = {"coeffs": coeffs, "K": float(K)}
    if d is not None:
        params["d"] = int(d)
    if I is not None:
        params["I"] = int(I)
    request = BuildRequest("polynomial", eps, m, params)
    p = request.params
    coeffs = p["coeffs"]
    I = int(p.get("I", 1))

    def make(backoff, k):
        if not coeffs:
            net = affine(np.zeros((1, I)))
            budgets = {}
            noise = 0.0
        else:
            eps_k, terms = polynomial_budgets(eps, m, coeffs, int(p["d"]), I, K, policy.asymptotic_constant, backoff)
            net = construct_polynomial(coeffs, I, K, m, eps_k, terms, policy.asymptotic_constant)
            budgets = {"eps_k": eps_k}
            for key, b in terms.items():
                tag = ",".join(map(str, key))
                budgets.update({f"{name}[{tag}]": v for name, v in b.items()})
            noise = polynomial_noise(coeffs, K, terms)
        claims = {"domain": [[-K, K]] * I}
        return net, certificate(request, policy, budgets, audit(net), noise, claims, k)

    return refine(request, policy, make)
