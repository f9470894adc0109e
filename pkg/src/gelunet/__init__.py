"""Constructive GELU networks with simultaneous Sobolev-norm error certificates."""

from .activation import gelu, gelu_derivative, gelu_seminorm_bound, gelu_tail_bound
from .builders import (
    BudgetError,
    BudgetPolicy,
    BuildCertificate,
    BuildRequest,
    RefinementExhausted,
    allocate_budgets,
)
from .compiler import CompileError, ParseError, RangeError, compile_expr, infer_ranges, parse
from .network import (
    Jet,
    Layer,
    Network,
    NetworkConfig,
    audit,
    compose,
    deserialize,
    evaluate,
    parallel,
    partials,
    serialize,
    weighted_sum,
)
from .verify import GridSpec, SobolevReport, check_certificate, make_oracle, sobolev_error

__all__ = [
    "BudgetError",
    "BudgetPolicy",
    "BuildCertificate",
    "BuildRequest",
    "CompileError",
    "GridSpec",
    "Jet",
    "Layer",
    "Network",
    "NetworkConfig",
    "ParseError",
    "RangeError",
    "RefinementExhausted",
    "SobolevReport",
    "allocate_budgets",
    "audit",
    "check_certificate",
    "compile_expr",
    "compose",
    "deserialize",
    "evaluate",
    "gelu",
    "gelu_derivative",
    "gelu_seminorm_bound",
    "gelu_tail_bound",
    "infer_ranges",
    "make_oracle",
    "parallel",
    "parse",
    "partials",
    "serialize",
    "sobolev_error",
    "weighted_sum",
]
