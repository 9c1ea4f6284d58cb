"""Gradient ascent and spectral diagnostics for quadratically regularized optimal transport."""

from .closed_form import full_support_check, full_support_potentials, solve_potentials
from .core import (DualPair, GdConfig, SolveTrace, delta_n, dual_gradient, dual_objective,
                   gd_step, lipschitz_witness, project_balanced, schrodinger_residual, solve)
from .linearized import (active_sets, assemble_L, assemble_Ln, lambda_measure, operator_norm,
                         self_adjoint_defect, support_components)
from .measures import (DiscreteMeasure, cost_matrix, make_discrete, mean, product_grid_2d,
                       trapezoid_grid)
from .primal import (Coupling, coupling_density, marginal_residual, primal_objective,
                     support_fraction)
from .sinkhorn import run_sinkhorn, sinkhorn_step

__version__ = "0.1.0"

__all__ = [
    "full_support_check",
    "full_support_potentials",
    "solve_potentials",
    "DualPair",
    "GdConfig",
    "SolveTrace",
    "delta_n",
    "dual_gradient",
    "dual_objective",
    "gd_step",
    "lipschitz_witness",
    "project_balanced",
    "schrodinger_residual",
    "solve",
    "active_sets",
    "assemble_L",
    "assemble_Ln",
    "lambda_measure",
    "operator_norm",
    "self_adjoint_defect",
    "support_components",
    "DiscreteMeasure",
    "cost_matrix",
    "make_discrete",
    "mean",
    "product_grid_2d",
    "trapezoid_grid",
    "Coupling",
    "coupling_density",
    "marginal_residual",
    "primal_objective",
    "support_fraction",
    "run_sinkhorn",
    "sinkhorn_step",
]
