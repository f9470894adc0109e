import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gelunet.activation import gelu_seminorm_bound
from gelunet.builders import (
    BudgetError,
    BudgetPolicy,
    BuildRequest,
    RefinementExhausted,
    allocate_budgets,
    build_clip,
    build_division,
    build_exp,
    build_heaviside,
    build_identity_deep,
    build_identity_shallow,
    build_monomial,
    build_mul2,
    build_partition_of_unity,
    build_polynomial,
    build_prod_d,
    build_reciprocal,
    build_reciprocal_naive,
    build_square,
)
from gelunet.builders.budget import SQRT_2_OVER_PI, clip_alpha, heaviside_parameters, square_radius
from gelunet.builders.elementary import certificate, construct_square, knots, refine
from gelunet.builders.products import construct_prod_d, prod_budgets
from gelunet.network import audit, derivatives, evaluate
from gelunet.verify import GridSpec, far_probes, make_oracle, partition_sum_error, sobolev_error


def sup_error(net, oracle, intervals, m, points=None):
    grid = GridSpec(tuple(intervals), points or (2048 if len(intervals) == 1 else 64))
    return sobolev_error(net, oracle, grid, m).overall


def value(net, *x):
    return float(evaluate(net, list(x))[0])


# ---------------------------------------------------------------- requests and budgets


@pytest.mark.parametrize(
    "target, params",
    [
        ("heaviside", {"kappa": 1.5}),
        ("partition_of_unity", {"N": 2}),
        ("clip", {"A": 0.5}),
        ("prod_d", {"d": 1}),
        ("monomial", {"k": (1,)}),
        ("polynomial", {"coeffs": {(2,): 1.5}}),
        ("polynomial", {"coeffs": [((2,), 0.5), ((2,), 0.1)]}),
        ("exp", {"A": 2.0}),
        ("reciprocal_naive", {"a": 0.9, "b": 1.0}),
        ("bogus", {}),
    ],
)
def test_request_rejects_bad_parameters(target, params):
    with pytest.raises(BudgetError):
        BuildRequest(target, 1e-2, 3, params)


def test_request_rejects_bad_eps_and_order():
    with pytest.raises(BudgetError):
        BuildRequest("square", 1.5, 2)
    with pytest.raises(BudgetError):
        BuildRequest("square", 1e-2, 0)
    with pytest.raises(BudgetError):
        BuildRequest("reciprocal", 1e-1, 2, {"N": 3})


def test_square_budget_map():
    b = allocate_budgets(BuildRequest("square", 1e-3, 3))
    assert set(b) == {"R"}
    assert b["R"] >= 10 * gelu_seminorm_bound(3) / (SQRT_2_OVER_PI * 1e-3)


def test_prod_tree_gammas():
    b = allocate_budgets(BuildRequest("prod_d", 1e-2, 2, {"d": 8, "K": 1.0}))
    m = 2 + 1  # the tree runs one order higher
    assert b["gamma_1"] == 0
    for j in (2, 3):
        assert b[f"gamma_{j}"] <= (m + 3) * 4**j


def test_budgets_shrink_with_constant():
    for target, params in [("identity_deep", {"L": 4, "K": 2.0}), ("prod_d", {"d": 4, "K": 2.0}),
                           ("division", {"N": 3})]:
        req = BuildRequest(target, 1e-2, 3, params)
        one = allocate_budgets(req, BudgetPolicy(asymptotic_constant=1.0))
        two = allocate_budgets(req, BudgetPolicy(asymptotic_constant=2.0))
        for key, v in one.items():
            if not key.startswith("gamma"):
                assert two[key] <= v, key


def test_budget_underflow_is_reported():
    with pytest.raises(BudgetError, match="underflows"):
        allocate_budgets(BuildRequest("reciprocal", 1e-1, 3, {"N": 3}))


def test_refinement_exhaustion_reports_last_error():
    req = BuildRequest("square", 1e-3, 3)

    def make(backoff, k):
        net = construct_square(5.0)  # far too small a radius at any backoff
        return net, certificate(req, BudgetPolicy(), {"R": 5.0}, audit(net), 0.0, {"C": [1]}, k)

    with pytest.raises(RefinementExhausted) as info:
        refine(req, BudgetPolicy(max_refinements=2), make)
    assert info.value.last_error > 1
    assert "error.C=1" in info.value.diagnostics["failed"]


@settings(max_examples=40, deadline=None)
@given(log_eps=st.floats(-12, -1), m=st.integers(1, 6))
def test_clip_alpha_is_smallest_solution(log_eps, m):
    eps = 10.0**log_eps
    a = clip_alpha(eps, m)
    f = lambda t: 4 * t**m * math.exp(-t * t / 16)
    assert f(a) <= eps * (1 + 1e-9)
    lo = max(1.0, math.sqrt(8 * m))
    assert a == lo or f(a * (1 - 1e-9)) > eps * (1 - 1e-6)


@settings(max_examples=30, deadline=None)
@given(log_eps=st.floats(-6, -1), m=st.integers(1, 4), kappa=st.floats(0.05, 0.9))
def test_heaviside_parameters_positive(log_eps, m, kappa):
    alpha, eps0 = heaviside_parameters(10.0**log_eps, m, kappa)
    assert alpha > 0 and 0 < eps0 < 1


@settings(max_examples=30, deadline=None)
@given(e1=st.floats(-6, -1), e2=st.floats(-6, -1), m=st.integers(2, 6))
def test_square_radius_monotone(e1, e2, m):
    lo, hi = sorted((10.0**e1, 10.0**e2))
    assert square_radius(lo, m) >= square_radius(hi, m)


# ---------------------------------------------------------------- identity, clip, step


def test_identity_shallow():
    net, cert = build_identity_shallow(1e-3, 3)
    cfg = audit(net)
    assert cfg.depth == 2 and cfg.max_width == 1 and cfg.nonzeros <= 3
    assert value(net, 0.0) == 0.0
    assert sup_error(net, make_oracle("identity"), [(-2, 2)], 3) <= 4e-3
    assert cert.passed


def test_identity_deep_degenerate_chain():
    net, _ = build_identity_deep(1e-2, 2, 2)
    assert net.depth == 2
    xs = np.linspace(-1, 1, 1001)
    assert np.max(np.abs(evaluate(net, xs)[:, 0] - xs)) <= 1e-2


def test_identity_deep_scaling_and_accuracy():
    sizes = {L: audit(build_identity_deep(1e-2, 2, L)[0]).nonzeros for L in (2, 4, 8)}
    # affine growth: per-layer increments agree within a factor of two
    steps = [(sizes[4] - sizes[2]) / 2, (sizes[8] - sizes[4]) / 4]
    assert min(steps) > 0 and max(steps) / min(steps) <= 2
    net, cert = build_identity_deep(1e-2, 2, 4, K=2.0)
    assert net.depth == 4 and cert.refinements <= 6
    assert sup_error(net, make_oracle("identity"), [(-2, 2)], 2) <= 1e-2


def test_heaviside():
    net, cert = build_heaviside(1e-2, 1, 0.25)
    cfg = audit(net)
    assert cfg.depth == 2 and cfg.nonzeros <= 8
    assert value(net, 0.0) == pytest.approx(0.5, abs=1e-2)
    xs = np.linspace(0.25, 10, 5000)
    assert np.max(np.abs(1 - evaluate(net, xs)[:, 0])) <= 1e-2


def test_partition_of_unity():
    nets, cert = build_partition_of_unity(1e-2, 1, 3)
    a = knots(3)
    assert partition_sum_error(nets, n=10_000) <= 1e-12
    xs = np.linspace(a[2], 10, 5000)
    assert np.max(np.abs(evaluate(nets[0], xs))) <= 1e-2
    assert all(psi.depth == 2 for psi in nets)
    assert cert.passed


def test_clip():
    net, cert = build_clip(1e-3, 2, 1.0)
    cfg = audit(net)
    assert (cfg.depth, cfg.max_width, cfg.nonzeros) == (2, 2, 7)
    assert abs(value(net, 0.0)) <= 1e-3
    xs = np.linspace(2, 21, 5000)
    assert np.max(np.abs(evaluate(net, xs)[:, 0] - 1.5)) <= 1e-3


# ---------------------------------------------------------------- square and products


def test_square():
    net, cert = build_square(1e-3, 3)
    cfg = audit(net)
    assert (cfg.depth, cfg.max_width, cfg.nonzeros) == (2, 2, 4)
    assert value(net, 0.0) == 0.0
    assert abs(value(net, 1.5) - 2.25) <= 8e-3


def test_mul2():
    net, cert = build_mul2(1e-3, 2)
    cfg = audit(net)
    assert cfg.depth == 2 and cfg.max_width <= 4 and cfg.nonzeros <= 12
    xs = np.linspace(-50, 50, 101)
    assert np.all(evaluate(net, np.stack([xs, 0 * xs], 1))[:, 0] == 0.0)
    assert abs(value(net, 1.2, -0.8) + 0.96) <= 8e-3


def test_mul2_rejects_tiny_eps():
    with pytest.raises(BudgetError):
        build_mul2(1e-7, 2)


def test_prod_d():
    net, cert = build_prod_d(1e-2, 2, 4, K=2.0)
    assert value(net, 1, 1, 1, 1) == pytest.approx(1.0, abs=1e-2)
    d = derivatives(net, far_probes(4), 2)
    assert np.all(np.isfinite(d))
    # depth trend only needs the construction, not the 8-D verification
    L = {dd: construct_prod_d(dd, 1.0, prod_budgets(1e-2, 2, dd, 1.0, 1.0, 1.0)).depth for dd in (2, 4, 8)}
    assert L[8] - L[4] <= L[4] - L[2] + 2


def test_monomial():
    net, cert = build_monomial(1e-2, 2, (2, 0))
    assert sup_error(net, make_oracle("monomial", k=(2, 0)), [(-1, 1), (-1, 1)], 2) <= 1e-2
    a = evaluate(net, [[0.3, -0.9], [0.3, 0.0], [0.3, 0.7]])[:, 0]
    assert np.ptp(a) <= 1e-12
    net, _ = build_monomial(1e-2, 2, (1, 1))
    assert value(net, 0.5, 0.5) == pytest.approx(0.25, abs=1e-2)


def test_polynomial():
    net, cert = build_polynomial(1e-2, 3, {(1,): 1.0})
    xs = np.linspace(-1, 1, 101)
    assert np.max(np.abs(evaluate(net, xs)[:, 0] - xs)) <= 1e-12
    net, cert = build_polynomial(1e-2, 3, {(0, 0): 0.0}, I=2)
    assert np.all(evaluate(net, np.ones((3, 2))) == 0)
    coeffs = {(2, 0): 1.0, (1, 1): 1.0}
    net, cert = build_polynomial(1e-2, 3, coeffs, d=2, I=2)
    assert sup_error(net, make_oracle("polynomial", coeffs=coeffs), [(-1, 1), (-1, 1)], 3) <= 1e-2


# ---------------------------------------------------------------- exp, reciprocal, division


@pytest.fixture(scope="module")
def exp_net():
    return build_exp(1e-2, 3, 0.5)


def test_exp_values(exp_net):
    net, cert = exp_net
    assert value(net, 0.0) == pytest.approx(1.0, abs=1e-2)
    assert value(net, -0.5) == pytest.approx(math.exp(0.5), abs=1e-2)
    far = derivatives(net, [[1e3]], 3)
    assert np.all(np.isfinite(far))
    assert abs(far[0, 0, 0]) <= cert.claims["global_bound"]


def test_reciprocal_naive():
    net, cert = build_reciprocal_naive(1e-2, 3, 0.5, 1.0)
    assert value(net, 1.0) == pytest.approx(1.0, abs=1e-2)
    assert sup_error(net, make_oracle("reciprocal"), [(0.5, 1.0)], 3) <= 1e-2
    assert abs(value(net, -5.0)) <= cert.claims["global_bound"]


@pytest.fixture(scope="module")
def reciprocal_net():
    return build_reciprocal(1e-1, 3, 3)


def test_reciprocal(reciprocal_net):
    net, cert = reciprocal_net
    N, eps = 3, 1e-1
    assert value(net, 1.0) == pytest.approx(1.0, abs=eps)
    assert value(net, 2.0**-N) == pytest.approx(2**N, abs=eps * (1 + 2 ** (2 * N)))
    assert cert.verification["checks"][-1]["name"] == "partition.sum"
    assert cert.verification["checks"][-1]["pass"]


@pytest.fixture(scope="module")
def division_net():
    return build_division(1e-1, 3, 3)


def test_division(division_net):
    net, cert = division_net
    N, eps = 3, 1e-1
    assert value(net, 1.0, 1.0) == pytest.approx(1.0, abs=eps)
    assert abs(value(net, 0.0, 0.5)) <= 2 * eps
    assert value(net, -1.0, 2.0**-N) == pytest.approx(-(2**N), abs=eps * (1 + 2**N))
