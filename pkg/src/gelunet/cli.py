"""Command line: synth, verify, audit and compile.

Exit codes: 0 pass, 1 measured failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import builders
from .builders import BudgetError, RefinementExhausted
from .compiler import CompileError, compile_expr, expr_oracle, infer_ranges, parse, variables_of
from .network import NetworkError, audit, load, save
from .verify import GridSpec, VerificationError, default_points, make_oracle, sobolev_error

EXIT_PASS, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad flags or files; maps to exit code 2."""


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default)


def _write(path, text: str):
    Path(path).write_text(text + "\n", encoding="utf-8")


def _interval(text: str, what: str) -> tuple:
    # split on the colon that separates the bounds; allows a leading minus sign
    parts = text.split(":")
    if len(parts) != 2:
        raise InputError(f"{what}: expected lo:hi, got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise InputError(f"{what}: bounds must be numbers, got {text!r}") from None
    if not lo <= hi:
        raise InputError(f"{what}: empty interval {text!r}")
    return lo, hi


def parse_domain(text: str) -> list:
    return [_interval(part, "--domain") for part in text.split(",")]


def parse_var(text: str) -> tuple:
    name, sep, rest = text.partition("=")
    if not sep or not name.strip():
        raise InputError(f"--var: expected name=lo:hi, got {text!r}")
    return name.strip(), _interval(rest, f"--var {name.strip()}")


def parse_probes(text: str) -> list:
    try:
        return [tuple(float(v) for v in p.split(",")) for p in text.split(";") if p.strip()]
    except ValueError:
        raise InputError(f"--probes: expected x1,x2;y1,y2 style points, got {text!r}") from None


def read_coeffs(path) -> dict:
    """Coefficient file: {"coeffs": [[[k1, ...], a], ...]} or {"coeffs": {"k1,k2": a}}."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read coefficient file {path}: {exc}") from None
    raw = doc.get("coeffs", doc) if isinstance(doc, dict) else doc
    try:
        if isinstance(raw, dict):
            return [(tuple(int(v) for v in str(k).split(",")), float(a)) for k, a in raw.items()]
        return [(tuple(int(v) for v in k), float(a)) for k, a in raw]
    except (TypeError, ValueError):
        raise InputError(f"malformed coefficient file {path}") from None


# ---------------------------------------------------------------- synth


def _require_flag(args, name: str, flag: str):
    value = getattr(args, name)
    if value is None:
        raise InputError(f"target {args.target} needs {flag}")
    return value


def _build(args):
    t, eps, m = args.target, args.eps, args.order
    K = args.scale if args.scale is not None else 1.0
    if t == "identity_shallow":
        return builders.build_identity_shallow(eps, m)
    if t == "identity_deep":
        return builders.build_identity_deep(eps, m, _require_flag(args, "L", "--L"), K)
    if t == "heaviside":
        return builders.build_heaviside(eps, m, _require_flag(args, "kappa", "--kappa"))
    if t == "partition_of_unity":
        return builders.build_partition_of_unity(eps, m, _require_flag(args, "N", "--N"))
    if t == "clip":
        return builders.build_clip(eps, m, _require_flag(args, "A", "--clip-A"))
    if t == "square":
        return builders.build_square(eps, m)
    if t == "mul2":
        return builders.build_mul2(eps, m)
    if t == "prod_d":
        return builders.build_prod_d(eps, m, _require_flag(args, "dim", "--dim"), K)
    if t == "monomial":
        return builders.build_monomial(eps, m, _require_flag(args, "multi", "--multi"), K)
    if t == "polynomial":
        coeffs = read_coeffs(_require_flag(args, "coeffs", "--coeffs"))
        return builders.build_polynomial(eps, m, coeffs, I=args.dim, K=K)
    if t == "exp":
        return builders.build_exp(eps, m, args.A if args.A is not None else 0.0)
    if t == "reciprocal_naive":
        return builders.build_reciprocal_naive(eps, m, _require_flag(args, "a", "--a"), _require_flag(args, "b", "--b"))
    if t == "reciprocal":
        return builders.build_reciprocal(eps, m, _require_flag(args, "N", "--N"))
    if t == "division":
        return builders.build_division(eps, m, _require_flag(args, "N", "--N"))
    raise InputError(f"unknown target {t!r}")


def check_domain(cert) -> list:
    """Intervals on which the certificate's main approximation claim is stated."""
    c = cert.claims
    if "domain" in c:
        return [list(iv) for iv in c["domain"]]
    if "interior" in c:
        return [list(c["interior"])]
    if "right" in c:
        return [list(c["right"])]
    if cert.request.target == "mul2":
        return [[-1.0, 1.0], [-1.0, 1.0]]
    if cert.request.target == "partition_of_unity":
        return [list(c["first_tail"])]
    return [[-1.0, 1.0]]


def _meta(cert, args) -> dict:
    req = cert.request.as_dict()
    return {
        "target": req["target"],
        "eps": req["eps"],
        "order": req["order"],
        "domain": {
            "intervals": check_domain(cert),
            "params": req["params"],
            "noise_floor": cert.noise_floor,
        },
        "seed": args.seed,
    }


def cert_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".cert.json")


def cmd_synth(args) -> int:
    net, cert = _build(args)
    meta = _meta(cert, args)
    if isinstance(net, list):
        out = Path(args.out)
        for i, psi in enumerate(net, start=1):
            save(psi, out.with_name(f"{out.stem}_{i}{out.suffix or '.json'}"), dict(meta, member=i))
    else:
        save(net, args.out, meta)
    doc = dict(cert.as_dict(), seed=args.seed)
    _write(cert_path(args.out), _dump(doc))
    print(f"{cert.request.target}: pass={cert.passed} refinements={cert.refinements} -> {args.out}")
    return EXIT_PASS if cert.passed else EXIT_FAIL


# ---------------------------------------------------------------- verify


def oracle_for(target: str, net, params: dict, args):
    """Map a builder target (or an oracle name) to its analytic reference."""
    t = target
    if t in ("identity", "identity_shallow", "identity_deep"):
        return make_oracle("identity")
    if t == "square":
        return make_oracle("square")
    if t in ("mul2", "product", "prod_d"):
        return make_oracle("product", dim=net.input_dim)
    if t == "monomial":
        k = args.multi or params.get("k")
        if k is None:
            raise InputError("monomial verification needs --multi")
        return make_oracle("monomial", k=k)
    if t == "polynomial":
        if args.coeffs:
            coeffs = dict(read_coeffs(args.coeffs))
        elif "coeffs" in params:
            coeffs = {tuple(int(v) for v in k.split(",")): a for k, a in params["coeffs"].items()}
        else:
            raise InputError("polynomial verification needs --coeffs")
        if not coeffs:
            return make_oracle("zero", dim=net.input_dim)
        return make_oracle("polynomial", coeffs=coeffs, dim=net.input_dim)
    if t in ("exp", "exp_neg"):
        return make_oracle("exp_neg")
    if t in ("reciprocal", "reciprocal_naive"):
        return make_oracle("reciprocal")
    if t == "division":
        return make_oracle("division")
    if t == "clip":
        A = args.A if args.A is not None else params.get("A")
        if A is None:
            raise InputError("clip verification needs --clip-A")
        return make_oracle("clip", A=A)
    if t in ("heaviside", "step"):
        return make_oracle("step")
    raise InputError(f"no verification oracle for target {t!r}")


def cmd_verify(args) -> int:
    try:
        net, meta = load(args.net)
    except OSError as exc:
        raise InputError(f"cannot read network file: {exc}") from None
    stored = meta.get("domain", {}) if isinstance(meta.get("domain"), dict) else {}
    order = args.order if args.order is not None else meta.get("order")
    if order is None:
        raise InputError("verify needs --order (the network file records none)")
    eps = args.eps if args.eps is not None else meta.get("eps")
    if args.expr is not None:
        decls = dict(parse_var(v) for v in args.var)
        e = parse(args.expr, list(decls) or None)
        names = list(decls) or variables_of(e)
        if args.domain:
            intervals = parse_domain(args.domain)
            decls = dict(zip(names, intervals))
        if set(names) != set(decls) or len(names) != len(decls):
            raise InputError("--expr verification needs one interval per variable (--var or --domain)")
        e = infer_ranges(e, decls)
        oracle = expr_oracle(e, names)
        intervals = [decls[n] for n in names]
        target = args.expr
        noise = 0.0
    else:
        target = args.target or meta.get("target")
        if target is None:
            raise InputError("verify needs --target or --expr")
        oracle = oracle_for(target, net, stored.get("params", {}), args)
        if args.domain:
            intervals = parse_domain(args.domain)
        elif "intervals" in stored and target == meta.get("target"):
            intervals = [tuple(iv) for iv in stored["intervals"]]
        else:
            raise InputError("verify needs --domain")
        noise = float(stored.get("noise_floor", 0.0)) if target == meta.get("target") else 0.0
    probes = parse_probes(args.probes) if args.probes else []
    if args.random_probes:
        rng = np.random.default_rng(args.seed)
        lo = np.array([iv[0] for iv in intervals])
        hi = np.array([iv[1] for iv in intervals])
        probes += [tuple(p) for p in lo + (hi - lo) * rng.random((args.random_probes, len(intervals)))]
    grid = GridSpec(tuple(intervals), args.grid or default_points(len(intervals)), tuple(probes))
    report = sobolev_error(net, oracle, grid, int(order), eps=eps, noise_floor=noise, target=target)
    doc = dict(report.as_dict(), seed=args.seed)
    text = _dump(doc)
    if args.out:
        _write(args.out, text)
    print(text)
    return EXIT_PASS if report.passed else EXIT_FAIL


# ---------------------------------------------------------------- audit


def cmd_audit(args) -> int:
    try:
        net, meta = load(args.net)
    except OSError as exc:
        raise InputError(f"cannot read network file: {exc}") from None
    cfg = audit(net).as_dict()
    if args.json:
        print(_dump(cfg))
    else:
        for key, value in cfg.items():
            print(f"{key}: {value}")
    return EXIT_PASS


# ---------------------------------------------------------------- compile


def cmd_compile(args) -> int:
    if not args.var:
        raise InputError("compile needs at least one --var name=lo:hi")
    decls = dict(parse_var(v) for v in args.var)
    try:
        net, cert = compile_expr(args.expr, decls, args.eps, args.order, N=args.N)
    except RefinementExhausted as exc:
        print(f"compile: {exc}", file=sys.stderr)
        return EXIT_FAIL
    meta = {
        "target": "expression",
        "eps": args.eps,
        "order": args.order,
        "domain": {"intervals": [list(v) for v in decls.values()], "variables": list(decls), "expr": args.expr},
        "seed": args.seed,
    }
    if args.out:
        save(net, args.out, meta)
        _write(cert_path(args.out), _dump(dict(cert.as_dict(), seed=args.seed)))
    v = cert.verification
    print(f"{args.expr}: pass={v['pass']} measured={v['overall']:.3e} eps={args.eps:g} "
          f"depth={cert.config.depth} nonzeros={cert.config.nonzeros}")
    return EXIT_PASS if cert.passed else EXIT_FAIL


# ---------------------------------------------------------------- entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


def _multi(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected k1,k2,..., got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gelunet", allow_abbrev=False, description="Build and check GELU networks with Sobolev-norm error certificates.")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0, help="seed for randomized probes (recorded in outputs)")

    s = sub.add_parser("synth", help="build a network for a target and write it with its certificate")
    s.add_argument("--target", required=True, choices=sorted(builders.budget.TARGETS))
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--order", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dim", type=int, help="d for prod_d, number of variables for polynomial")
    s.add_argument("--scale", type=float, help="half-width K of the input box")
    s.add_argument("--clip-A", "--A", dest="A", type=float, help="A for clip and exp")
    s.add_argument("--N", type=int)
    s.add_argument("--a", type=float)
    s.add_argument("--b", type=float)
    s.add_argument("--L", type=int, help="depth of identity_deep")
    s.add_argument("--kappa", type=float, help="transition half-width of heaviside")
    s.add_argument("--multi", type=_multi, help="monomial multi-index k1,k2,...")
    s.add_argument("--coeffs", help="JSON file of polynomial coefficients")
    common(s)

    v = sub.add_parser("verify", help="measure Sobolev error of a stored network")
    v.add_argument("--net", required=True)
    v.add_argument("--target")
    v.add_argument("--expr")
    v.add_argument("--var", action="append", default=[], help="name=lo:hi, with --expr")
    v.add_argument("--domain", help="lo:hi[,lo:hi...]")
    v.add_argument("--order", type=int)
    v.add_argument("--eps", type=float)
    v.add_argument("--grid", type=int, help="points per dimension")
    v.add_argument("--probes", help="extra points x1,x2;y1,y2")
    v.add_argument("--random-probes", type=int, default=0, help="number of seeded uniform probes")
    v.add_argument("--multi", type=_multi)
    v.add_argument("--coeffs")
    v.add_argument("--clip-A", "--A", dest="A", type=float)
    v.add_argument("--out")
    common(v)

    a = sub.add_parser("audit", help="print depth, widths, nonzeros and magnitude")
    a.add_argument("--net", required=True)
    a.add_argument("--json", action="store_true")
    common(a)

    c = sub.add_parser("compile", help="compile an arithmetic expression")
    c.add_argument("--expr", required=True)
    c.add_argument("--var", action="append", default=[], help="name=lo:hi")
    c.add_argument("--eps", type=float, required=True)
    c.add_argument("--order", type=int, required=True)
    c.add_argument("--N", type=int, help="dyadic levels of every denominator")
    c.add_argument("--out")
    common(c)
    return p


COMMANDS = {"synth": cmd_synth, "verify": cmd_verify, "audit": cmd_audit, "compile": cmd_compile}


_VALUE_FLAGS = ("--domain", "--var", "--probes", "--expr")


def _glue_negative_values(argv: list) -> list:
    """Join "--domain -2:2" into "--domain=-2:2"; argparse would read -2:2 as a flag."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in _VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(_glue_negative_values(argv))
        return COMMANDS[args.verb](args)
    except RefinementExhausted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (InputError, CompileError, BudgetError, NetworkError, VerificationError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
