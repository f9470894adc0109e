import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gelunet.compiler import (
    ParseError,
    RangeError,
    compile_expr,
    expr_oracle,
    infer_ranges,
    parse,
    taylor_jet,
)
from gelunet.network import evaluate, multi_indices


def shape(e):
    if e.kind == "constant":
        return ("const", e.value)
    if e.kind == "variable":
        return ("var", e.name)
    if e.kind == "int_pow":
        return ("int_pow", shape(e.children[0]), e.exponent)
    return (e.kind,) + tuple(shape(c) for c in e.children)


# ---------------------------------------------------------------- parsing


def test_parse_examples():
    assert shape(parse("x*y + 1")) == ("add", ("mul", ("var", "x"), ("var", "y")), ("const", 1.0))
    assert shape(parse("exp(-x)/y")) == ("div", ("exp_neg", ("var", "x")), ("var", "y"))


def test_precedence_and_associativity():
    assert shape(parse("a - b - c")) == ("sub", ("sub", ("var", "a"), ("var", "b")), ("var", "c"))
    assert shape(parse("-x^2")) == ("sub", ("const", 0.0), ("int_pow", ("var", "x"), 2))
    assert shape(parse("exp(x)")) == ("exp_neg", ("sub", ("const", 0.0), ("var", "x")))
    assert shape(parse("(x + 1)^3")) == ("int_pow", ("add", ("var", "x"), ("const", 1.0)), 3)


@pytest.mark.parametrize(
    "source, column",
    [("x^^2", 3), ("x +", 4), ("(x", 3), ("x $ y", 3), ("x^2.5", 3), ("2x", 2)],
)
def test_syntax_errors_carry_position(source, column):
    with pytest.raises(ParseError) as info:
        parse(source)
    assert info.value.column == column and info.value.line == 1


def test_line_numbers():
    with pytest.raises(ParseError) as info:
        parse("x +\n  * y")
    assert (info.value.line, info.value.column) == (2, 3)


def test_unknown_names():
    with pytest.raises(ParseError, match="unknown identifier 'z'"):
        parse("x + z", ["x"])
    with pytest.raises(ParseError, match="unknown function 'sin'"):
        parse("sin(x)")


# ---------------------------------------------------------------- ranges


def test_interval_rules():
    assert infer_ranges(parse("x^2"), {"x": (-1, 1)}).interval == (0.0, 1.0)
    assert infer_ranges(parse("x^3"), {"x": (-1, 2)}).interval == (-1.0, 8.0)
    assert infer_ranges(parse("x*y - 1"), {"x": (-1, 2), "y": (-3, 1)}).interval == (-7.0, 2.0)
    e = infer_ranges(parse("exp(-(x+2))"), {"x": (0, 1)})
    assert e.interval == pytest.approx((math.exp(-3), math.exp(-2)))


def test_division_needs_positive_denominator():
    with pytest.raises(RangeError, match="contains 0"):
        infer_ranges(parse("1/y"), {"y": (-1, 1)})
    with pytest.raises(RangeError, match="N >= 3"):
        infer_ranges(parse("x/y"), {"x": (0, 1), "y": (0.25, 1)}, N=2)
    infer_ranges(parse("x/y"), {"x": (0, 1), "y": (0.25, 1)}, N=3)


def test_exp_argument_bound():
    with pytest.raises(RangeError, match=r"\[-A, inf\)"):
        infer_ranges(parse("exp(-x)"), {"x": (-2, 1)})


def test_undeclared_variable():
    with pytest.raises(RangeError):
        infer_ranges(parse("x + y"), {"x": (0, 1)})


@settings(max_examples=100, deadline=None)
@given(
    lo=st.floats(-3, 3), w=st.floats(0, 3), lo2=st.floats(-3, 3), w2=st.floats(0, 3),
    t=st.floats(0, 1), t2=st.floats(0, 1),
)
def test_intervals_enclose_values(lo, w, lo2, w2, t, t2):
    decls = {"x": (lo, lo + w), "y": (lo2, lo2 + w2)}
    x, y = lo + t * w, lo2 + t2 * w2
    for src, f in [("x*y - x", lambda: x * y - x), ("(x - y)^2 + x^3", lambda: (x - y) ** 2 + x**3)]:
        iv = infer_ranges(parse(src), decls).interval
        v = f()
        assert iv[0] - 1e-9 * (1 + abs(v)) <= v <= iv[1] + 1e-9 * (1 + abs(v))


# ---------------------------------------------------------------- Taylor oracle


def test_taylor_jet_matches_closed_form():
    e = parse("x^2 + exp(-x)")
    pts = np.linspace(0, 1, 7).reshape(-1, 1)
    coef = taylor_jet(e, ["x"], pts, 4)
    x = pts[:, 0]
    want = [x**2 + np.exp(-x), 2 * x - np.exp(-x), 1 + np.exp(-x) / 2, -np.exp(-x) / 6, np.exp(-x) / 24]
    for k in range(5):
        np.testing.assert_allclose(coef[k], want[k], rtol=1e-13, atol=1e-14)


def test_taylor_jet_quotient():
    e = parse("x/y")
    pts = np.array([[0.3, 0.5], [-1.0, 0.125]])
    oracle = expr_oracle(e, ["x", "y"])
    x, y = pts[:, 0], pts[:, 1]
    np.testing.assert_allclose(oracle.fn(pts, (0, 0)), x / y)
    np.testing.assert_allclose(oracle.fn(pts, (1, 1)), -1 / y**2)
    np.testing.assert_allclose(oracle.fn(pts, (0, 3)), -6 * x / y**4)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-2, 2), b=st.floats(-2, 2), x=st.floats(-1, 1), y=st.floats(-1, 1))
def test_taylor_jet_polynomial_identity(a, b, x, y):
    # (a x + b y)^2 expands to a^2 x^2 + 2ab xy + b^2 y^2
    e1 = parse(f"({a!r}*x + {b!r}*y)^2")
    e2 = parse(f"{a * a!r}*x^2 + {2 * a * b!r}*x*y + {b * b!r}*y^2")
    pts = np.array([[x, y]])
    np.testing.assert_allclose(taylor_jet(e1, ["x", "y"], pts, 3), taylor_jet(e2, ["x", "y"], pts, 3),
                               rtol=1e-9, atol=1e-9)


# ---------------------------------------------------------------- end to end


def test_compile_variable_is_exact():
    net, cert = compile_expr("x", {"x": (-3, 3)}, 1e-2, 2)
    assert net.depth == 1 and cert.verification["overall"] == 0.0 and cert.passed


def test_compile_product():
    net, cert = compile_expr("x*y", {"x": (-1, 1), "y": (-1, 1)}, 1e-2, 2)
    assert cert.passed and cert.verification["overall"] <= 1e-2


def test_compile_sum_with_exp():
    net, cert = compile_expr("x^2 + exp(-x)", {"x": (0, 1)}, 5e-2, 3)
    assert cert.passed and cert.verification["overall"] <= 5e-2
    assert evaluate(net, [0.5])[0] == pytest.approx(0.25 + math.exp(-0.5), abs=5e-2)
    kinds = [n["kind"] for n in cert.nodes]
    assert {"add", "int_pow", "exp_neg"} <= set(kinds)


def test_compile_quotient():
    net, cert = compile_expr("x/y", {"x": (-1, 1), "y": (0.25, 1)}, 1e-1, 2)
    assert cert.passed
    assert evaluate(net, [1.0, 0.25])[0] == pytest.approx(4.0, abs=1e-1)


def test_compile_affine_combination_is_exact():
    net, cert = compile_expr("3*x - 2*y + 1", {"x": (0, 1), "y": (0, 1)}, 1e-2, 2)
    assert net.depth == 1 and cert.verification["overall"] <= 1e-14


def test_compile_rejects_range_violation():
    with pytest.raises(RangeError):
        compile_expr("1/y", {"y": (-1, 1)}, 1e-2, 3)
