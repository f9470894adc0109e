"""Constructors for the GELU approximation networks, with certificates."""

from .budget import (
    FLOORS,
    BudgetError,
    BudgetPolicy,
    BuildCertificate,
    BuildRequest,
    RefinementExhausted,
    allocate_budgets,
)
from .elementary import (
    build_clip,
    build_heaviside,
    build_identity_deep,
    build_identity_shallow,
    build_mul2,
    build_partition_of_unity,
    build_square,
)
from .products import build_monomial, build_polynomial, build_prod_d
from .functions import build_division, build_exp, build_reciprocal, build_reciprocal_naive
