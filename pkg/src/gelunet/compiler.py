"""Arithmetic expressions to certified GELU networks.

Grammar::

    expr   := term {("+" | "-") term}
    term   := unary {("*" | "/") unary}
    unary  := "-" unary | factor
    factor := base ["^" integer]
    base   := number | identifier | "(" expr ")" | "exp" "(" expr ")"

exp(E) is stored as exp_neg(-E), so exp(-x) becomes exp_neg(x).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace

import numpy as np

from . import bounds
from .builders.budget import FLOORS, BudgetError, BudgetPolicy, RefinementExhausted, clip_alpha, square_radius
from .builders.elementary import (
    construct_clip,
    construct_mul2,
    identity_deep_budgets,
    identity_deep_from_budgets,
    rescale,
)
from .builders.functions import construct_division, construct_exp, exp_parameters
from .builders.products import MUL2_FLOOR, construct_monomial, prod_budgets
from .network import Network, affine, audit, compose, compose_all, multi_indices, parallel, weighted_sum
from .network import _jet_mul
from .verify import GridSpec, Oracle, default_points, sobolev_error

KINDS = ("constant", "variable", "add", "sub", "mul", "div", "int_pow", "exp_neg")
SHARE_FLOOR = 1e-12
MAX_DIV_N = 6


class CompileError(ValueError):
    """Base class for front-end errors; these map to exit code 2."""


class ParseError(CompileError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"syntax error at line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class RangeError(CompileError):
    """An operand's inferred interval breaks a builder's domain constraint."""


@dataclass(frozen=True)
class Expr:
    kind: str
    children: tuple = ()
    value: float | None = None
    name: str | None = None
    exponent: int | None = None
    pos: tuple = (1, 1)
    interval: tuple | None = None

    def __str__(self) -> str:
        k = self.kind
        if k == "constant":
            return repr(self.value)
        if k == "variable":
            return self.name
        if k == "int_pow":
            return f"({self.children[0]})^{self.exponent}"
        if k == "exp_neg":
            return f"exp(-({self.children[0]}))"
        op = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[k]
        return f"({self.children[0]} {op} {self.children[1]})"


# ---------------------------------------------------------------- parsing


_TOKEN = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()])"
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(source: str) -> list:
    tokens = []
    line, start, i = 1, 0, 0
    while i < len(source):
        mt = _TOKEN.match(source, i)
        if mt is None:
            raise ParseError(f"unexpected character {source[i]!r}", line, i - start + 1)
        kind = mt.lastgroup
        if kind == "nl":
            line += 1
            start = mt.end()
        elif kind != "ws":
            tokens.append(Token(kind, mt.group(), line, i - start + 1))
        i = mt.end()
    tokens.append(Token("end", "", line, i - start + 1))
    return tokens


class _Parser:
    def __init__(self, source: str, variables):
        self.tokens = tokenize(source)
        self.i = 0
        self.variables = None if variables is None else set(variables)

    def peek(self) -> Token:
        return self.tokens[self.i]

    def take(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> Token:
        tok = self.peek()
        if tok.text != text:
            found = tok.text or "end of input"
            raise ParseError(f"expected {text!r}, found {found!r}", tok.line, tok.column)
        return self.take()

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError(f"unexpected {tok.text!r}", tok.line, tok.column)
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek().text in ("+", "-"):
            tok = self.take()
            right = self.term()
            left = Expr("add" if tok.text == "+" else "sub", (left, right), pos=(tok.line, tok.column))
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek().text in ("*", "/"):
            tok = self.take()
            right = self.unary()
            left = Expr("mul" if tok.text == "*" else "div", (left, right), pos=(tok.line, tok.column))
        return left

    def unary(self) -> Expr:
        if self.peek().text == "-":
            tok = self.take()
            inner = self.unary()
            return Expr("sub", (Expr("constant", value=0.0, pos=(tok.line, tok.column)), inner),
                        pos=(tok.line, tok.column))
        return self.factor()

    def factor(self) -> Expr:
        base = self.base()
        if self.peek().text == "^":
            self.take()
            tok = self.peek()
            if tok.kind != "num" or not tok.text.isdigit():
                raise ParseError(f"exponent must be a nonnegative integer, found {tok.text or 'end of input'!r}",
                                 tok.line, tok.column)
            self.take()
            return Expr("int_pow", (base,), exponent=int(tok.text), pos=base.pos)
        return base

    def base(self) -> Expr:
        tok = self.peek()
        pos = (tok.line, tok.column)
        if tok.kind == "num":
            self.take()
            return Expr("constant", value=float(tok.text), pos=pos)
        if tok.kind == "id":
            self.take()
            if tok.text == "exp":
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                if arg.kind == "sub" and arg.children[0].kind == "constant" and arg.children[0].value == 0.0:
                    return Expr("exp_neg", (arg.children[1],), pos=pos)
                return Expr("exp_neg", (Expr("sub", (Expr("constant", value=0.0, pos=pos), arg), pos=pos),), pos=pos)
            if self.peek().text == "(":
                raise ParseError(f"unknown function {tok.text!r}", tok.line, tok.column)
            if self.variables is not None and tok.text not in self.variables:
                raise ParseError(f"unknown identifier {tok.text!r}", tok.line, tok.column)
            return Expr("variable", name=tok.text, pos=pos)
        if tok.text == "(":
            self.take()
            e = self.expr()
            self.expect(")")
            return e
        found = tok.text or "end of input"
        raise ParseError(f"unexpected {found!r}", tok.line, tok.column)


def parse(source: str, variables=None) -> Expr:
    """Parse ``source``; with ``variables`` given, other identifiers are rejected."""
    return _Parser(source, variables).parse()


def variables_of(e: Expr) -> list:
    out = []

    def walk(node):
        if node.kind == "variable" and node.name not in out:
            out.append(node.name)
        for c in node.children:
            walk(c)

    walk(e)
    return out


# ---------------------------------------------------------------- interval inference


def _imul(a, b):
    p = (a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
    return (min(p), max(p))


def _ipow(a, n):
    if n == 0:
        return (1.0, 1.0)
    lo, hi = a[0] ** n, a[1] ** n
    if n % 2 == 0:
        if a[0] <= 0 <= a[1]:
            return (0.0, max(lo, hi))
        return (min(lo, hi), max(lo, hi))
    return (lo, hi)


def denominator_levels(interval, N: int | None = None) -> int:
    """Number N of dyadic levels that covers a positive denominator after scaling by its top."""
    lo, hi = interval
    needed = max(3, math.ceil(math.log2(hi / lo) - 1e-12))
    if N is not None:
        if N < 3:
            raise RangeError(f"division needs N >= 3 (denominator floor 2^-N), got N = {N}")
        if 2.0**-N > lo / hi * (1 + 1e-12):
            raise RangeError(
                f"denominator interval [{lo:g}, {hi:g}] needs N >= {needed}, declared N = {N}"
            )
        return N
    return needed


def infer_ranges(e: Expr, declarations: dict, N: int | None = None) -> Expr:
    """Annotate every node with its interval; reject nodes outside builder domains."""
    k = e.kind
    where = f"{k} node at line {e.pos[0]}, column {e.pos[1]}"
    if k == "constant":
        return replace(e, interval=(e.value, e.value))
    if k == "variable":
        if e.name not in declarations:
            raise RangeError(f"variable {e.name!r} has no declared interval")
        lo, hi = map(float, declarations[e.name])
        if not lo <= hi:
            raise RangeError(f"declared interval of {e.name!r} is empty")
        return replace(e, interval=(lo, hi))
    kids = tuple(infer_ranges(c, declarations, N) for c in e.children)
    iv = [c.interval for c in kids]
    if k == "add":
        out = (iv[0][0] + iv[1][0], iv[0][1] + iv[1][1])
    elif k == "sub":
        out = (iv[0][0] - iv[1][1], iv[0][1] - iv[1][0])
    elif k == "mul":
        out = _imul(iv[0], iv[1])
    elif k == "int_pow":
        if e.exponent < 0:
            raise RangeError(f"{where}: exponent must be >= 0")
        out = _ipow(iv[0], e.exponent)
    elif k == "div":
        lo, hi = iv[1]
        if lo <= 0 <= hi:
            raise RangeError(
                f"{where}: denominator interval [{lo:g}, {hi:g}] contains 0; "
                f"division requires a denominator in [2^-N, 1] after scaling, N >= 3"
            )
        mag = (lo, hi) if lo > 0 else (-hi, -lo)
        levels = denominator_levels(mag, N)
        if levels > MAX_DIV_N:
            raise RangeError(f"{where}: denominator spread needs N = {levels} > {MAX_DIV_N}")
        inv = (1.0 / hi, 1.0 / lo)
        out = _imul(iv[0], inv)
    elif k == "exp_neg":
        lo, hi = iv[0]
        if lo < -1.0:
            raise RangeError(
                f"{where}: exponent argument interval [{lo:g}, {hi:g}] must lie in [-A, inf) with A <= 1"
            )
        out = (math.exp(-hi), math.exp(-lo))
    else:
        raise CompileError(f"unknown node kind {k!r}")
    return replace(e, children=kids, interval=out)


# ---------------------------------------------------------------- Taylor oracle


def _series(f: np.ndarray, derivs: list, n: int, m: int) -> np.ndarray:
    """h(f) for a jet f given h^(k)(f_0) for k = 0..m, by Horner substitution."""
    delta = f.copy()
    delta[0] = 0.0
    out = np.zeros_like(f)
    out[0] = derivs[m] / math.factorial(m)
    for k in range(m - 1, -1, -1):
        out = _jet_mul(delta, out, n, m)
        out[0] += derivs[k] / math.factorial(k)
    return out


def taylor_jet(e: Expr, names: list, points: np.ndarray, m: int) -> np.ndarray:
    """Taylor coefficients of ``e`` at each point, shape (n_coef, n_points)."""
    n = len(names)
    idx = multi_indices(n, m)
    npts = points.shape[0]

    def go(node):
        k = node.kind
        if k == "constant":
            out = np.zeros((len(idx), npts))
            out[0] = node.value
            return out
        if k == "variable":
            i = names.index(node.name)
            out = np.zeros((len(idx), npts))
            out[0] = points[:, i]
            if m >= 1:
                out[1 + i] = 1.0
            return out
        f = [go(c) for c in node.children]
        if k == "add":
            return f[0] + f[1]
        if k == "sub":
            return f[0] - f[1]
        if k == "mul":
            d0 = f[0].copy()
            d0[0] = 0.0
            return f[0][0] * f[1] + _jet_mul(d0, f[1], n, m)
        if k == "div":
            c = f[1][0]
            inv = _series(f[1], [(-1.0) ** j * math.factorial(j) / c ** (j + 1) for j in range(m + 1)], n, m)
            d0 = f[0].copy()
            d0[0] = 0.0
            return f[0][0] * inv + _jet_mul(d0, inv, n, m)
        if k == "int_pow":
            p, c = node.exponent, f[0][0]
            derivs = [math.perm(p, j) * c ** (p - j) if j <= p else np.zeros_like(c) for j in range(m + 1)]
            return _series(f[0], derivs, n, m)
        if k == "exp_neg":
            c = f[0][0]
            return _series(f[0], [(-1.0) ** j * np.exp(-c) for j in range(m + 1)], n, m)
        raise CompileError(f"unknown node kind {k!r}")

    return go(e)


def expr_oracle(e: Expr, names: list) -> Oracle:
    """Oracle whose partials come from exact Taylor arithmetic on the expression."""
    cache = {}

    def fn(points, k):
        m = sum(k)
        key = (points.shape, hash(points.tobytes()))
        if key not in cache or cache[key][0] < m:
            cache.clear()
            mm = max(m, 3)
            coef = taylor_jet(e, names, points, mm)
            fact = np.array([math.prod(math.factorial(v) for v in kk) for kk in multi_indices(len(names), mm)])
            cache[key] = (mm, coef * fact[:, None])
        mm, d = cache[key]
        return d[multi_indices(len(names), mm).index(tuple(k))]

    return Oracle(str(e), len(names), fn)


# ---------------------------------------------------------------- code generation


@dataclass
class Compiled:
    net: Network
    exact: bool = False


@dataclass(frozen=True)
class CompileCertificate:
    source: str
    declarations: dict
    eps: float
    order: int
    nodes: tuple
    config: object
    refinements: int
    verification: dict | None = None

    @property
    def passed(self) -> bool:
        return bool(self.verification and self.verification.get("pass"))

    def as_dict(self) -> dict:
        return {
            "source": self.source,
            "declarations": {k: list(v) for k, v in self.declarations.items()},
            "eps": self.eps,
            "order": self.order,
            "nodes": [dict(n) for n in self.nodes],
            "config": self.config.as_dict(),
            "refinements": self.refinements,
            "verification": self.verification,
        }


def _mag(interval) -> float:
    return max(abs(interval[0]), abs(interval[1]))


class _Builder:
    def __init__(self, names: list, m: int, policy: BudgetPolicy, backoff: float, N: int | None):
        self.names = names
        self.m = m
        self.policy = policy
        self.c = policy.asymptotic_constant
        self.backoff = backoff
        self.N = N
        self.log = []

    def share(self, eps: float) -> float:
        return max(eps, SHARE_FLOOR) * self.backoff

    def note(self, node: Expr, eps: float, **extra):
        entry = {"kind": node.kind, "expr": str(node), "interval": list(node.interval), "eps": eps}
        entry.update(extra)
        self.log.append(entry)

    def pad(self, item: Compiled, depth: int, interval, eps: float) -> Network:
        net = item.net
        if net.depth == depth:
            return net
        L = 1 + depth - net.depth
        K = max(1.0, _mag(interval) * 1.05)
        b = identity_deep_budgets(self.share(eps), self.m, L, K, self.c, 1.0)
        return compose(identity_deep_from_budgets(b, self.m, L, K), net)

    def pair(self, a: Compiled, b: Compiled, ia, ib, eps: float) -> Network:
        depth = max(a.net.depth, b.net.depth)
        return parallel([self.pad(a, depth, ia, eps), self.pad(b, depth, ib, eps)], shared_input=True)

    def amplification(self, g_norm: float, f_interval) -> float:
        return bounds.composition_bound(self.m, 1, len(self.names), g_norm, [max(1.0, _mag(f_interval))])

    def build(self, e: Expr, eps: float) -> Compiled:
        k = e.kind
        I = len(self.names)
        if k == "constant":
            self.note(e, eps, exact=True)
            return Compiled(affine(np.zeros((1, I)), np.array([-e.value])), True)
        if k == "variable":
            w = np.zeros((1, I))
            w[0, self.names.index(e.name)] = 1.0
            self.note(e, eps, exact=True)
            return Compiled(affine(w), True)
        kids = e.children
        if k in ("add", "sub"):
            a = self.build(kids[0], eps / 3.0)
            b = self.build(kids[1], eps / 3.0)
            sign = 1.0 if k == "add" else -1.0
            if a.exact and b.exact:
                net = weighted_sum([a.net, b.net], [1.0, sign], shared_input=True)
                self.note(e, eps, exact=True)
                return Compiled(net, True)
            depth = max(a.net.depth, b.net.depth)
            nets = [self.pad(a, depth, kids[0].interval, eps / 3.0), self.pad(b, depth, kids[1].interval, eps / 3.0)]
            self.note(e, eps, depth=depth)
            return Compiled(weighted_sum(nets, [1.0, sign], shared_input=True))
        if k == "mul":
            for i, j in ((0, 1), (1, 0)):
                if kids[i].kind == "constant":
                    other = self.build(kids[j], eps / max(1.0, abs(kids[i].value)))
                    self.note(e, eps, exact=other.exact)
                    return Compiled(rescale(other.net, outer=kids[i].value), other.exact)
            ma, mb = max(1.0, _mag(kids[0].interval)), max(1.0, _mag(kids[1].interval))
            child_eps = eps / (3.0 * bounds.product_bound(self.m, 1.0, max(ma, mb)))
            a = self.build(kids[0], child_eps)
            b = self.build(kids[1], child_eps)
            S = max(ma, mb) + 1.0
            op_eps = self.share(eps / 3.0)
            alpha = clip_alpha(max(op_eps / (4.0 * S), FLOORS["clip"]), self.m)
            clips = parallel([construct_clip(alpha, ma), construct_clip(alpha, mb)])
            eps_mul = max(op_eps / (S * S), MUL2_FLOOR * self.backoff)
            R = square_radius(eps_mul / 4.0, self.m + 1)
            pair = self.pair(a, b, kids[0].interval, kids[1].interval, eps / 3.0)
            net = compose_all(construct_mul2(R, S), clips, pair)
            self.note(e, eps, R=R, alpha_clip=alpha, scale=S)
            return Compiled(net)
        if k == "int_pow":
            p = e.exponent
            child = kids[0]
            if p == 0:
                self.note(e, eps, exact=True)
                return Compiled(affine(np.zeros((1, I)), np.array([-1.0])), True)
            if p == 1:
                return self.build(child, eps)
            K = max(1.0, _mag(child.interval))
            budgets = prod_budgets(self.share(eps / 2.0), self.m, p, K, self.c, 1.0)
            if child.kind == "variable":
                km = [0] * I
                km[self.names.index(child.name)] = p
                net = construct_monomial(tuple(km), K, budgets)
            else:
                g_norm = max(math.perm(p, j) * K ** (p - j) for j in range(min(p, self.m + 1) + 1))
                inner = self.build(child, eps / (2.0 * self.amplification(g_norm, child.interval)))
                net = compose(construct_monomial((p,), K, budgets), inner.net)
            self.note(e, eps, K=K, depth=net.depth)
            return Compiled(net)
        if k == "exp_neg":
            child = kids[0]
            A = min(1.0, max(0.0, -child.interval[0]))
            g_norm = math.exp(A)
            inner = self.build(child, eps / (2.0 * self.amplification(g_norm, child.interval)))
            params = exp_parameters(self.share(eps / 2.0), self.m, A, 0, self.policy.backoff_factor)
            outer, _, _ = construct_exp(params, self.m, self.c)
            self.note(e, eps, A=A, K=params["K"], r=params["r"])
            return Compiled(compose(outer, inner.net))
        if k == "div":
            num, den = kids
            lo, hi = den.interval
            sign = 1.0
            if hi < 0:
                sign, (lo, hi) = -1.0, (-hi, -lo)
            N = denominator_levels((lo, hi), self.N)
            X = max(_mag(num.interval), 1e-300)
            Y = hi
            g_norm = math.factorial(self.m + 1) * (1.0 / lo) ** (self.m + 2) * max(1.0, X)
            child_eps = eps / (3.0 * self.amplification(g_norm, (lo, hi)))
            a = self.build(num, child_eps)
            b = self.build(den, child_eps)
            depth = max(a.net.depth, b.net.depth)
            pair = parallel(
                [
                    rescale(self.pad(a, depth, num.interval, child_eps), outer=1.0 / X),
                    rescale(self.pad(b, depth, den.interval, child_eps), outer=sign / Y),
                ],
                shared_input=True,
            )
            div_eps = self.share(eps / 3.0) * Y / max(X, 1.0)
            net, budgets, _ = construct_division(div_eps, self.m, N, self.c, 1.0)
            self.note(e, eps, N=N, numerator_scale=X, denominator_scale=Y)
            return Compiled(rescale(compose(net, pair), outer=sign * X / Y))
        raise CompileError(f"unknown node kind {k!r}")


def _declared(declarations: dict, names: list) -> list:
    extra = [n for n in names if n not in declarations]
    if extra:
        raise RangeError(f"variables without declared interval: {', '.join(extra)}")
    return list(declarations)


def compile_expr(
    source,
    declarations: dict,
    eps: float,
    m: int,
    policy: BudgetPolicy = BudgetPolicy(),
    N: int | None = None,
    points: int | None = None,
):
    """Parse, infer ranges, build and verify. Returns (net, CompileCertificate).

    ``source`` may be text or an already parsed Expr. The network reads the
    declared variables in declaration order. Raises RefinementExhausted when
    the measured error stays above eps.
    """
    if not 0 < eps < 1:
        raise BudgetError("eps must lie in (0, 1)")
    names = list(declarations)
    e = parse(source, names) if isinstance(source, str) else source
    _declared(declarations, variables_of(e))
    e = infer_ranges(e, declarations, N)
    intervals = [tuple(map(float, declarations[n])) for n in names]
    oracle = expr_oracle(e, names)
    grid = GridSpec(tuple(intervals), points or default_points(len(names)))
    last = None
    for k in range(policy.max_refinements + 1):
        builder = _Builder(names, m, policy, policy.backoff_factor**k, N)
        net = builder.build(e, eps).net
        report = sobolev_error(net, oracle, grid, m, eps=eps, target=str(e))
        cert = CompileCertificate(
            source=source if isinstance(source, str) else str(source),
            declarations={n: intervals[i] for i, n in enumerate(names)},
            eps=eps,
            order=m,
            nodes=tuple(builder.log),
            config=audit(net),
            refinements=k,
            verification=report.as_dict(),
        )
        if report.passed:
            return net, cert
        last = cert
    raise RefinementExhausted(
        f"compiled network misses eps = {eps:g} after {policy.max_refinements} refinements "
        f"(measured {last.verification['overall']:.3g})",
        last_error=last.verification["overall"],
        diagnostics=last.verification,
    )


compile = compile_expr
