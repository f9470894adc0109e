"""Identity, clipping, step, partition-of-unity, square and product blocks.

Each target has a ``construct_*`` function that turns explicit parameters into
a network, and a ``build_*`` function that allocates budgets, runs the
verification battery and backs off until the battery passes.
"""

from __future__ import annotations

import math

import numpy as np

from ..network import Layer, Network, audit, compose, compose_all
from .budget import (
    FLOORS,
    SQRT_2_OVER_PI,
    UNIT_ROUNDOFF,
    BudgetError,
    BudgetPolicy,
    BuildCertificate,
    BuildRequest,
    RefinementExhausted,
    clip_alpha,
    heaviside_parameters,
    identity_deep_log_budgets,
    identity_radius,
    asymptotic_log10,
    square_radius,
    working,
)

SQUARE_MIN_EPS = 1e-6


# ---------------------------------------------------------------- helpers


def rescale(net: Network, inner: float = 1.0, outer: float = 1.0) -> Network:
    """x -> outer * net(x / inner)."""
    layers = list(net.layers)
    first = layers[0]
    layers[0] = Layer(first.weight / inner, first.shift)
    last = layers[-1]
    layers[-1] = Layer(last.weight * outer, last.shift * outer)
    return Network(tuple(layers))


def shift_input(net: Network, c) -> Network:
    """x -> net(x - c)."""
    first = net.layers[0]
    c = np.broadcast_to(np.asarray(c, dtype=float), (first.cols,))
    return Network((Layer(first.weight, first.shift + first.weight @ c),) + net.layers[1:])


def add_constant(net: Network, value) -> Network:
    """x -> net(x) + value."""
    last = net.layers[-1]
    return Network(net.layers[:-1] + (Layer(last.weight, last.shift - value),))


def refine(request: BuildRequest, policy: BudgetPolicy, make):
    """Run ``make(backoff, k)`` -> (net, cert) until the battery passes.

    The k-th attempt multiplies every working budget by backoff_factor^k.
    """
    from ..verify import check_certificate

    last = None
    for k in range(policy.max_refinements + 1):
        net, cert = make(policy.backoff_factor**k, k)
        cert = check_certificate(net, cert, policy)
        if cert.passed:
            return net, cert
        last = cert
    worst = max(
        (c["value"] / c["limit"] if c["limit"] else math.inf for c in last.verification["checks"] if not c["pass"]),
        default=math.inf,
    )
    raise RefinementExhausted(
        f"{request.target}: battery still failing after {policy.max_refinements} refinements "
        f"(worst check at {worst:.3g} x its limit)",
        last_error=worst,
        diagnostics=last.verification,
    )


def certificate(request, policy, budgets, config, noise_floor=0.0, claims=None, refinements=0):
    return BuildCertificate(
        request=request,
        budgets=dict(budgets),
        asymptotic_budgets=asymptotic_log10(request, policy),
        config=config,
        noise_floor=float(noise_floor),
        claims=claims or {},
        refinements=refinements,
    )


# ---------------------------------------------------------------- identity


def construct_identity_shallow(R: float, scale: float = 1.0) -> Network:
    """scale * 2R GELU(x / (R scale)); GELU(0) = 0 so no output shift is needed."""
    return Network(
        (
            Layer(np.array([[1.0 / (R * scale)]]), np.zeros(1)),
            Layer(np.array([[2.0 * R * scale]]), np.zeros(1)),
        )
    )


def build_identity_shallow(eps: float, m: int, policy: BudgetPolicy = BudgetPolicy()):
    request = BuildRequest("identity_shallow", eps, m)

    def make(backoff, k):
        R = identity_radius(eps * backoff, m)
        net = construct_identity_shallow(R)
        claims = {"domain": [[-1.0, 1.0]], "scaling": "C^2 eps on [-C, C]", "C": [1, 2, 4]}
        return net, certificate(request, policy, {"R": R}, audit(net), 0.0, claims, k)

    return refine(request, policy, make)


# ---------------------------------------------------------------- clip


def construct_clip(alpha: float, A: float, center: float = 0.0) -> Network:
    """alpha^-1 GELU(alpha(x + A + 1/2)) - alpha^-1 GELU(alpha(x - A - 1/2)) - A - 1/2,

    evaluated at x - center and shifted up by center.
    """
    h = A + 0.5
    net = Network(
        (
            Layer(np.array([[alpha], [alpha]]), np.array([-alpha * h, alpha * h])),
            Layer(np.array([[1.0 / alpha, -1.0 / alpha]]), np.array([h])),
        )
    )
    if center:
        net = add_constant(shift_input(net, center), center)
    return net


def clip_noise(alpha: float, A: float) -> float:
    return 8.0 * UNIT_ROUNDOFF * (A + 1.0) * alpha


def build_clip(eps: float, m: int, A: float, policy: BudgetPolicy = BudgetPolicy()):
    request = BuildRequest("clip", eps, m, {"A": A})

    def make(backoff, k):
        alpha = clip_alpha(eps * backoff, m)
        net = construct_clip(alpha, A)
        claims = {"interior": [-A, A], "rays": [[-A - 20.0, -A - 1.0], [A + 1.0, A + 20.0]], "sup": A + 2.5}
        return net, certificate(request, policy, {"alpha": alpha}, audit(net), clip_noise(alpha, A), claims, k)

    return refine(request, policy, make)


# ---------------------------------------------------------------- deep identity


def construct_identity_deep(eps_clip: float, eps_ids, m: int, K: float) -> Network:
    """Clip of half-width K followed by shallow identities rescaled to 4K.

    The depth is 2 + len(eps_ids); the chain runs at order m + 1.
    """
    net = construct_clip(clip_alpha(eps_clip, m), K)
    for e in eps_ids:
        net = compose(construct_identity_shallow(identity_radius(e, m + 1), 4.0 * K), net)
    return net


def identity_deep_budgets(eps: float, m: int, L: int, K: float, c: float, backoff: float) -> dict:
    logs = identity_deep_log_budgets(math.log(1.0 / eps), m, L, K, c)
    out = {
        "eps_prime": working(logs["prime"], backoff=backoff),
        "eps_clip": working(logs["clip"], FLOORS["clip"], backoff),
    }
    for j in range(2, L):
        out[f"eps_id_{j}"] = working(logs["id_2" if j == 2 else "id_j"], FLOORS["identity"], backoff)
    return out


def identity_deep_from_budgets(b: dict, m: int, L: int, K: float) -> Network:
    return construct_identity_deep(b["eps_clip"], [b[f"eps_id_{j}"] for j in range(2, L)], m, K)


def build_identity_deep(eps: float, m: int, L: int, K: float = 1.0, policy: BudgetPolicy = BudgetPolicy()):
    request = BuildRequest("identity_deep", eps, m, {"L": int(L), "K": float(K)})

    def make(backoff, k):
        b = identity_deep_budgets(eps, m, int(L), K, policy.asymptotic_constant, backoff)
        net = identity_deep_from_budgets(b, m, int(L), K)
        claims = {"domain": [[-K, K]], "depth": int(L)}
        noise = clip_noise(clip_alpha(b["eps_clip"], m), K)
        return net, certificate(request, policy, b, audit(net), noise, claims, k)

    return refine(request, policy, make)


# ---------------------------------------------------------------- Heaviside and partition


def construct_heaviside(alpha: float, eps0: float, shift: float = 0.0) -> Network:
    """x -> (GELU(alpha(x - shift) + eps0) - GELU(alpha(x - shift) - eps0)) / (2 eps0)."""
    c = 1.0 / (2.0 * eps0)
    base = alpha * shift
    return Network(
        (
            Layer(np.array([[alpha], [alpha]]), np.array([base - eps0, base + eps0])),
            Layer(np.array([[c, -c]]), np.zeros(1)),
        )
    )


def heaviside_working(eps: float, m: int, kappa: float) -> tuple[float, float]:
    alpha, eps0 = heaviside_parameters(eps, m, kappa)
    return alpha, max(eps0, FLOORS["heaviside_eps0"])


def heaviside_noise(alpha: float, eps0: float, m: int) -> float:
    return 4.0 * UNIT_ROUNDOFF * alpha**m / eps0


def build_heaviside(eps: float, m: int, kappa: float, policy: BudgetPolicy = BudgetPolicy()):
    request = BuildRequest("heaviside", eps, m, {"kappa": kappa})

    def make(backoff, k):
        alpha, eps0 = heaviside_working(eps * backoff, m, kappa)
        net = construct_heaviside(alpha, eps0)
        claims = {"left": [-10.0, -kappa], "right": [kappa, 10.0]}
        b = {"alpha": alpha, "eps_0": eps0}
        return net, certificate(request, policy, b, audit(net), heaviside_noise(alpha, eps0, m), claims, k)

    return refine(request, policy, make)


def knots(N: int) -> list:
    return [2.0 ** (-N + i) for i in range(N + 1)]


def construct_partition_of_unity(N: int, alpha: float, eps0: float) -> list:
    """psi_1 = 1 - phi(x - a_1), psi_i = phi(x - a_{i-1}) - phi(x - a_i), psi_N = phi(x - a_{N-1}).

    All members see bit-identical pre-activations at a shared knot, so the
    telescoping sum is reproduced in floating point.
    """
    a = knots(N)
    c = 1.0 / (2.0 * eps0)

    def hidden(shift):
        s = alpha * shift
        return [s - eps0, s + eps0]

    nets = []
    for i in range(1, N + 1):
        shifts, weights = [], []
        if i > 1:
            shifts += hidden(a[i - 1])
            weights += [c, -c]
        if i < N:
            shifts += hidden(a[i])
            weights += [-c, c]
        rows = len(shifts)
        out_shift = -1.0 if i == 1 else 0.0
        nets.append(
            Network(
                (
                    Layer(np.full((rows, 1), alpha), np.array(shifts)),
                    Layer(np.array([weights]), np.array([out_shift])),
                )
            )
        )
    return nets


def partition_working(eps: float, m: int, N: int, backoff: float = 1.0) -> tuple[float, float]:
    """(alpha, eps0) for the shared step at accuracy eps/2, kappa = a_0."""
    return heaviside_working(max(eps / 2.0, FLOORS["pou"]) * backoff, m, 2.0**-N)


def build_partition_of_unity(eps: float, m: int, N: int, policy: BudgetPolicy = BudgetPolicy()):
    request = BuildRequest("partition_of_unity", eps, m, {"N": int(N)})

    def make(backoff, k):
        alpha, eps0 = partition_working(eps, m, int(N), backoff)
        nets = construct_partition_of_unity(int(N), alpha, eps0)
        a = knots(int(N))
        claims = {"knots": a, "first_tail": [a[2], 10.0], "last_tail": [-10.0, a[-3]], "sum_tol": 1e-12}
        b = {"eps_heaviside": eps / 2.0 * backoff, "alpha": alpha, "eps_0": eps0}
        cfg = [audit(n) for n in nets]
        return nets, certificate(request, policy, b, cfg, 2.0 * heaviside_noise(alpha, eps0, m), claims, k)

    return refine(request, policy, make)


# ---------------------------------------------------------------- square and mul2


def construct_square(R: float, scale: float = 1.0) -> Network:
    """scale^2 (R^2 / GELU''(0)) (GELU(2x/(R scale)) - 2 GELU(x/(R scale)))."""
    c = R * R / SQRT_2_OVER_PI * scale * scale
    s = R * scale
    return Network(
        (
            Layer(np.array([[2.0 / s], [1.0 / s]]), np.zeros(2)),
            Layer(np.array([[c, -2.0 * c]]), np.zeros(1)),
        )
    )


def construct_mul2(R: float, scale: float = 1.0) -> Network:
    """Polarization 1/4 (sq(x + y) - sq(x - y)) with both squares at radius R.

    ``scale`` gives scale^2 mul2(x/scale, y/scale), accurate on [-scale, scale]^2.
    """
    c = 0.25 * R * R / SQRT_2_OVER_PI * scale * scale
    s = R * scale
    w = np.array([[2.0, 2.0], [1.0, 1.0], [2.0, -2.0], [1.0, -1.0]]) / s
    return Network((Layer(w, np.zeros(4)), Layer(np.array([[c, -2.0 * c, -c, 2.0 * c]]), np.zeros(1))))


def square_working(eps: float, m: int, backoff: float = 1.0) -> float:
    """Radius R at the square budget, clamped at the floating-point floor."""
    return square_radius(max(eps, FLOORS["square"]) * backoff, m)


def square_noise(R: float, scale: float = 1.0) -> float:
    """Cancellation floor R^2 2^-52 of the square block, in output units."""
    return R * R * UNIT_ROUNDOFF * scale


def build_square(eps: float, m: int, policy: BudgetPolicy = BudgetPolicy()):
    if eps < SQUARE_MIN_EPS:
        raise BudgetError(f"square needs eps >= {SQUARE_MIN_EPS:g}; below it cancellation dominates")
    request = BuildRequest("square", eps, m)

    def make(backoff, k):
        R = square_working(eps, m, backoff)
        net = construct_square(R)
        claims = {"scaling": "C^3 eps on [-C, C]", "C": [1, 2, 4]}
        return net, certificate(request, policy, {"R": R}, audit(net), square_noise(R), claims, k)

    return refine(request, policy, make)


def build_mul2(eps: float, m: int, policy: BudgetPolicy = BudgetPolicy()):
    if eps < 4 * SQUARE_MIN_EPS:
        raise BudgetError(f"mul2 needs eps >= {4 * SQUARE_MIN_EPS:g}")
    request = BuildRequest("mul2", eps, m)

    def make(backoff, k):
        R = square_working(eps / 4.0, m, backoff)
        net = construct_mul2(R)
        claims = {"scaling": "C^3 eps on [-C, C]^2", "C": [1, 2, 4]}
        b = {"eps_square": eps / 4.0 * backoff, "R": R}
        return net, certificate(request, policy, b, audit(net), square_noise(R), claims, k)

    return refine(request, policy, make)


__all__ = [
    "add_constant",
    "build_clip",
    "build_heaviside",
    "build_identity_deep",
    "build_identity_shallow",
    "build_mul2",
    "build_partition_of_unity",
    "build_square",
    "compose_all",
    "construct_clip",
    "construct_heaviside",
    "construct_identity_deep",
    "construct_identity_shallow",
    "construct_mul2",
    "construct_partition_of_unity",
    "construct_square",
    "knots",
    "rescale",
    "shift_input",
]
