"""Operator splitting for linear evolution equations.

Sequential, Strang and weighted splitting of ``u' = (A + B) u``, their behaviour
under spatial approximation, and a split solver for linear equations with
distributed delay.
"""

from .core import (
    SEQUENTIAL,
    STRANG,
    EvolveSpec,
    ExactSolution,
    Generator,
    Scheme,
    Semigroup,
    StabilityEstimate,
    consistency_defect,
    evaluate_semigroup,
    fit_envelope,
    fit_order,
    order_estimate,
    split_evolve,
    split_step,
    stability_scan,
    step_matrix,
)
from .linalg import expm

__version__ = "0.1.0"

__all__ = [
    "SEQUENTIAL",
    "STRANG",
    "EvolveSpec",
    "ExactSolution",
    "Generator",
    "Scheme",
    "Semigroup",
    "StabilityEstimate",
    "consistency_defect",
    "evaluate_semigroup",
    "expm",
    "fit_envelope",
    "fit_order",
    "order_estimate",
    "split_evolve",
    "split_step",
    "stability_scan",
    "step_matrix",
]
