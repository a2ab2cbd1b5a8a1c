"""Numerical solver and verification suite for elliptic equations with
convex gradient constraints, max{F(D2u, x) - f(x), H(Du)} = 0, via smooth
penalization and eps-continuation, validated by discrete viscosity
diagnostics and a Monte Carlo singular-control bound."""

from .constraint import (
    Ball,
    Box,
    Ellipsoid,
    Polytope,
    analytic_constraint,
    constraint_from_support,
    support_function,
    surrogate,
)
from .control import Policy, SimConfig, dpp_probe, policy_from_solution, simulate_cost
from .grid import Grid, GridFn, gradient, hessian, monotonicity_check
from .operator import SymMat, bellman_operator, diffusion_sup_operator, linear_operator
from .penalty import PenaltyFn, penalty_family
from .solver import Problem, SolveReport, active_set, solve, solve_penalized, solve_unconstrained
from .verify import (
    comparison_check,
    constraint_violation,
    hessian_product_probe,
    run_verification,
    uniform_bound_sweep,
    viscosity_residual,
)

__version__ = "0.1.0"
