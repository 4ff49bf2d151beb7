"""Proximal Value Method: a duality-free QP/LP solver.

The constrained problem min q(x) s.t. Ax + s = b, s in C is recast as the
search for the smallest level t at which the merit r(x, s, t) can be driven
to zero, and t is updated by inexact proximal-point steps on the value
function r*(t) = min_{x,s} r(x, s, t).
"""

from .merit import eval_merit, eval_prox_stage, select_hessian
from .problem import (
    ConeSpec,
    ProblemData,
    ProblemFormatError,
    SolverSettings,
    Violation,
    load_problem,
    save_problem,
    validate,
)
from .solver import SolveReport, Solver, Status, recover_feasible, solve

__version__ = "0.1.0"

__all__ = [
    "ConeSpec",
    "ProblemData",
    "ProblemFormatError",
    "SolveReport",
    "Solver",
    "SolverSettings",
    "Status",
    "Violation",
    "eval_merit",
    "eval_prox_stage",
    "load_problem",
    "recover_feasible",
    "save_problem",
    "select_hessian",
    "solve",
    "validate",
    "__version__",
]
