"""Semismooth Newton solvers for the two PVM subproblems.

``solve_pa`` minimises r(., ., t_k) over (x, s); ``solve_pb`` evaluates the
proximal map of r at (x_half, s_half, t_k).  Both share the factorisation
context and the Armijo backtracking search.
"""

from __future__ import annotations

import dataclasses
import enum
from typing import Callable

import numpy as np

from . import linalg
from .merit import Mode, eval_merit, eval_prox_stage, merit_value, select_hessian
from .problem import ProblemData, SolverSettings

# Cap on the Pa regularisation mu_j = |grad r|.
MU_MAX = 1e-4
MU_ESCALATIONS = 5
_ROUNDOFF = 8 * np.finfo(float).eps


class NewtonStatus(str, enum.Enum):
    CONVERGED = "Converged"
    ITER_LIMIT = "IterLimit"
    LINE_SEARCH_STALL = "LineSearchStall"
    FACTOR_FAILURE = "FactorFailure"
    TARGET_REACHED = "TargetReached"


@dataclasses.dataclass
class NewtonOutcome:
    point: tuple
    grad_norm: float
    iters: int
    status: NewtonStatus
    values: list[float] = dataclasses.field(default_factory=list)
    history: list[np.ndarray] | None = None

    @property
    def converged(self) -> bool:
        return self.status is NewtonStatus.CONVERGED


@dataclasses.dataclass
class LineSearchResult:
    step: float
    direction: np.ndarray
    value: float
    stalled: bool
    fallback: bool


def armijo_search(
    f: Callable[[np.ndarray], float],
    point: np.ndarray,
    d: np.ndarray,
    g: np.ndarray,
    settings: SolverSettings,
    f0: float | None = None,
) -> LineSearchResult:
    """Backtracking on rho in {1, beta, beta^2, ...} for sufficient decrease.

    A non-descent ``d`` is replaced by ``-g`` before searching.
    """
    if f0 is None:
        f0 = f(point)
    slope = float(g @ d)
    fallback = False
    if not slope < 0:
        d = -g
        slope = -float(g @ g)
        fallback = True
    rho = 1.0
    # slack for evaluations at the rounding floor of f0
    slack = _ROUNDOFF * abs(f0)
    for _ in range(settings.max_backtracks):
        val = f(point + rho * d)
        if val <= f0 + settings.armijo_c * rho * slope + slack:
            return LineSearchResult(rho, d, val, False, fallback)
        rho *= settings.backtrack_factor
    return LineSearchResult(0.0, d, f0, True, fallback)


def regularisation(gnorm: float) -> float:
    """mu_j = |grad r| clipped to [0, MU_MAX]."""
    return min(gnorm, MU_MAX)


def _direction(ctx, helem, g: np.ndarray, mu: float) -> np.ndarray:
    for _ in range(MU_ESCALATIONS + 1):
        if linalg.refactor(ctx, helem, mu):
            try:
                return linalg.solve_rank1(ctx, g, helem.rank1_active, helem.rank1_vector).copy()
            except linalg.FactorizationError:
                pass
        mu = max(10.0 * mu, 1e-10)
    raise linalg.FactorizationError(f"factorisation failed after {MU_ESCALATIONS} regularisation increases")


def solve_pa(
    prob: ProblemData,
    ctx: linalg.FactorContext,
    start: tuple[np.ndarray, np.ndarray],
    t_k: float,
    tol: float,
    settings: SolverSettings,
    record: bool = False,
    r_target: float | None = None,
) -> NewtonOutcome:
    """Minimise r(x, s, t_k) over (x, s) to gradient norm ``tol``.

    With ``r_target`` the solve also stops (status TargetReached) as soon as
    r drops to that value.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    n = prob.n
    z = np.concatenate([np.asarray(start[0], dtype=float), np.asarray(start[1], dtype=float)])

    def f(w):
        return merit_value(prob, w[:n], w[n:], t_k)

    history = [z.copy()] if record else None
    me = eval_merit(prob, z[:n], z[n:], t_k)
    values = [me.r_value]
    status = NewtonStatus.ITER_LIMIT
    j = 0
    while True:
        g = me.grad_xs
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            status = NewtonStatus.CONVERGED
            break
        if r_target is not None and me.r_value <= r_target:
            status = NewtonStatus.TARGET_REACHED
            break
        if j >= settings.max_inner:
            break
        helem = select_hessian(prob, me, z[n:], t_k, Mode.PA)
        try:
            d = _direction(ctx, helem, g, regularisation(gnorm))
        except linalg.FactorizationError:
            status = NewtonStatus.FACTOR_FAILURE
            break
        j += 1
        ls = armijo_search(f, z, d, g, settings, f0=me.r_value)
        if ls.stalled:
            status = NewtonStatus.LINE_SEARCH_STALL
            break
        z = z + ls.step * ls.direction
        me = eval_merit(prob, z[:n], z[n:], t_k)
        values.append(me.r_value)
        if record:
            history.append(z.copy())
    return NewtonOutcome((z[:n].copy(), z[n:].copy()), gnorm, j, status, values, history)


def solve_pb(
    prob: ProblemData,
    ctx: linalg.FactorContext,
    start: tuple[np.ndarray, np.ndarray, float],
    centers: tuple[np.ndarray, np.ndarray, float],
    sigma: float,
    tol: float,
    settings: SolverSettings,
    record: bool = False,
    xs_weight: float = 1.0,
) -> NewtonOutcome:
    """Proximal step on r about ``centers`` with weight ``sigma``.

    ``xs_weight`` scales the (x, s) part of the proximal term.  At zero the
    stage is no longer strongly convex in (x, s) and that block is
    regularised as in Pa.
    """
    if not (sigma > 0 and tol > 0):
        raise ValueError("sigma and tol must be positive")
    n, m = prob.n, prob.m
    z = np.concatenate([np.asarray(start[0], dtype=float), np.asarray(start[1], dtype=float), [float(start[2])]])
    centers = (np.asarray(centers[0], dtype=float), np.asarray(centers[1], dtype=float), float(centers[2]))

    def stage(w):
        return eval_prox_stage(prob, w[:n], w[n:n + m], w[-1], centers, sigma, xs_weight)

    def f(w):
        return stage(w).value

    history = [z.copy()] if record else None
    se = stage(z)
    values = [se.value]
    status = NewtonStatus.ITER_LIMIT
    j = 0
    while True:
        g = se.grad
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            status = NewtonStatus.CONVERGED
            break
        if j >= settings.max_inner:
            break
        helem = select_hessian(prob, se.merit, z[n:n + m], z[-1], Mode.PB, sigma, xs_weight)
        try:
            # with xs_weight > 0 the stage is strongly convex and needs no mu
            d = _direction(ctx, helem, g, 0.0 if xs_weight > 0 else regularisation(gnorm))
        except linalg.FactorizationError:
            status = NewtonStatus.FACTOR_FAILURE
            break
        j += 1
        ls = armijo_search(f, z, d, g, settings, f0=se.value)
        if ls.stalled:
            status = NewtonStatus.LINE_SEARCH_STALL
            break
        z = z + ls.step * ls.direction
        se = stage(z)
        values.append(se.value)
        if record:
            history.append(z.copy())
    return NewtonOutcome((z[:n].copy(), z[n:n + m].copy(), float(z[-1])), gnorm, j, status, values, history)
