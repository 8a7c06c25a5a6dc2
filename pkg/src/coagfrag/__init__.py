"""Deterministic sectional solver and verification harness for
coagulation-fragmentation dynamics with balanced-growth coefficients."""

from coagfrag.kernel import (
    AssumptionViolation,
    CoefficientSpec,
    DivergentMomentError,
    PowerLawDaughter,
    TabulatedDaughter,
    b_ln,
    delta_rho,
    derived_constants,
    eval_a,
    eval_b,
    eval_K,
    frag_moment,
    moment_closure_constant,
    rho_star,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolation",
    "CoefficientSpec",
    "DivergentMomentError",
    "PowerLawDaughter",
    "TabulatedDaughter",
    "b_ln",
    "delta_rho",
    "derived_constants",
    "eval_a",
    "eval_b",
    "eval_K",
    "frag_moment",
    "moment_closure_constant",
    "rho_star",
    "validate",
]
