"""Outer proximal-point loop on the value function.

Each outer iteration solves Pa (minimise r at the current level t_k) and
Pb (a proximal step on r from the Pa point), then tightens the inner
tolerances and raises the proximal weight on a fixed schedule.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
from typing import Any

import numpy as np
import scipy.sparse as sp

from . import linalg
from .merit import MeritEval, eval_merit
from .newton import NewtonStatus, solve_pa, solve_pb
from .problem import ProblemData, SolverSettings

log = logging.getLogger(__name__)

# Gradient tolerance used when polishing a feasible point at a fixed level.
POLISH_TOL = 1e-8
# An Infeasible verdict needs r to have stalled: r_k >= PLATEAU_RATIO * r_{k-1}.
PLATEAU_RATIO = 0.5
# Weight of the (x, s) part of the Pb proximal term.  Zero makes Pb the
# proximal step of the value function in t alone.
PB_XS_WEIGHT = 0.0


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    SUBOPTIMAL_FEASIBLE = "SuboptimalFeasible"
    ITER_LIMIT = "IterLimit"
    LINE_SEARCH_FAILURE = "LineSearchFailure"


@dataclasses.dataclass
class OuterRecord:
    k: int
    t: float
    r_value: float
    rq: float
    sigma: float
    delta_alpha: float
    delta_beta: float
    newton_pa: int
    newton_pb: int


@dataclasses.dataclass
class SolveReport:
    status: Status
    t_final: float
    x_final: np.ndarray
    s_final: np.ndarray
    r_final: float
    M_estimate: float
    trace: list[OuterRecord]
    cumulative_newton: int
    t_initial: float = math.nan

    @property
    def outer_iterations(self) -> int:
        return len(self.trace)

    def to_dict(self, include_solution: bool = True) -> dict[str, Any]:
        out: dict[str, Any] = {
            "status": self.status.value,
            "t_final": self.t_final,
            "r_final": self.r_final,
            "M_estimate": self.M_estimate,
            "cumulative_newton": self.cumulative_newton,
            "outer_iterations": self.outer_iterations,
            "t_initial": self.t_initial,
            "trace": [dataclasses.asdict(rec) for rec in self.trace],
        }
        if include_solution:
            out["x"] = self.x_final.tolist()
            out["s"] = self.s_final.tolist()
        return out


def default_t0(prob: ProblemData) -> float | None:
    """Unconstrained minimum of the objective, or None when Q is singular.

    None means a lower bound has to come from the user.
    """
    try:
        fac = linalg.LDLFactor(prob.Q + 1e-12 * sp.identity(prob.n, format="csc"), pivot_tol=1e-10)
    except linalg.FactorizationError:
        return None
    x_u = fac.solve(-prob.p)
    return prob.objective(x_u)


def classify_termination(me: MeritEval, delta_beta: float, settings: SolverSettings) -> Status | None:
    """Optimal / Infeasible once the level is stationary, else None."""
    if abs(me.grad_t) <= settings.eps_opt and delta_beta <= settings.eps_opt:
        return Status.OPTIMAL if me.r_value <= settings.eps_con else Status.INFEASIBLE
    return None


def confirm_termination(status: Status | None, trace: list[OuterRecord], settings: SolverSettings) -> Status | None:
    """Veto a verdict while the outer sequence is still making progress.

    Optimal additionally needs the last prox step to have moved t by at
    most eps_opt; Infeasible needs r to have stopped falling.
    """
    if status is None or len(trace) < 2:
        return status
    cur, prev = trace[-1], trace[-2]
    if status is Status.OPTIMAL and abs(cur.t - prev.t) > settings.eps_opt:
        return None
    if status is Status.INFEASIBLE and cur.r_value < PLATEAU_RATIO * prev.r_value:
        return None
    return status


class Solver:
    """PVM solver bound to one problem; the symbolic analysis is done once."""

    def __init__(self, prob: ProblemData, settings: SolverSettings | None = None):
        self.prob = prob
        self.settings = settings or SolverSettings()
        self.ctx = linalg.symbolic_setup(prob)

    # ------------------------------------------------------------------
    def _start(self, warm) -> tuple[np.ndarray, np.ndarray, float | None]:
        prob = self.prob
        x0 = s0 = t0 = None
        if warm is not None:
            x0, s0, *rest = tuple(warm) + (None,) * (3 - len(warm))
            t0 = rest[0] if rest else None
        x0 = np.zeros(prob.n) if x0 is None else np.array(x0, dtype=float)
        s0 = prob.b - prob.A_csr @ x0 if s0 is None else np.array(s0, dtype=float)
        if x0.shape != (prob.n,) or s0.shape != (prob.m,):
            raise ValueError("warm start dimensions do not match the problem")
        return x0, s0, t0

    def _level(self, t0: float | None) -> float:
        for cand in (t0, self.settings.t0, self.prob.t0):
            if cand is not None:
                return float(cand)
        t = default_t0(self.prob)
        if t is None:
            raise ValueError("no lower bound on the optimal cost: Q is singular, supply t0")
        return t

    def _report(self, status, t, x, s, trace, newton, t_init) -> SolveReport:
        me = eval_merit(self.prob, x, s, t)
        return SolveReport(status, t, x, s, me.r_value, me.r0_value, trace, newton, t_init)

    # ------------------------------------------------------------------
    def solve(self, warm=None) -> SolveReport:
        """Run the outer loop from ``warm = (x0, s0, t0)`` (any may be None)."""
        cfg = self.settings
        prob = self.prob
        x, s, t0 = self._start(warm)
        t = t_init = self._level(t0)
        sigma, delta = cfg.sigma0, cfg.delta0
        trace: list[OuterRecord] = []
        newton = 0

        for k in range(cfg.max_outer):
            pa = solve_pa(prob, self.ctx, (x, s), t, delta, cfg)
            newton += pa.iters
            xh, sh = pa.point
            if pa.status in (NewtonStatus.FACTOR_FAILURE, NewtonStatus.LINE_SEARCH_STALL):
                log.warning("Pa failed at k=%d: %s", k, pa.status.value)
                return self._report(Status.LINE_SEARCH_FAILURE, t, xh, sh, trace, newton, t_init)
            me = eval_merit(prob, xh, sh, t)
            rec = OuterRecord(k, t, me.r_value, me.rq, sigma, delta, delta, pa.iters, 0)
            trace.append(rec)
            if cfg.verbose:
                log.info("k=%d t=%.10g r=%.3e rq=%.3e newton=%d", k, t, me.r_value, me.rq, newton)

            if me.r_value <= cfg.eps_con and t <= t_init:
                # feasible at the starting level: no certificate that t0 <= t*
                return self._report(Status.SUBOPTIMAL_FEASIBLE, t, xh, sh, trace, newton, t_init)

            status = confirm_termination(classify_termination(me, delta, cfg), trace, cfg)
            if status is not None:
                return self._report(status, t, xh, sh, trace, newton, t_init)

            # a gradient error g moves the prox point in t by about sigma * g, and
            # an overshoot past t* is never undone, so cap the error at eps_opt
            pb_tol = min(delta, cfg.eps_opt) / sigma
            pb = solve_pb(prob, self.ctx, (xh, sh, t), (xh, sh, t), sigma, pb_tol, cfg,
                          xs_weight=PB_XS_WEIGHT)
            newton += pb.iters
            rec.newton_pb = pb.iters
            if pb.status in (NewtonStatus.FACTOR_FAILURE, NewtonStatus.LINE_SEARCH_STALL):
                log.warning("Pb failed at k=%d: %s", k, pb.status.value)
                return self._report(Status.LINE_SEARCH_FAILURE, t, xh, sh, trace, newton, t_init)
            x, s, t = pb.point
            sigma = min(max(1.0 / math.sqrt(delta), sigma), cfg.sigma_cap)
            delta *= cfg.delta_shrink

        return self._report(Status.ITER_LIMIT, t, x, s, trace, newton, t_init)

    def recover_feasible(self, t_fixed: float, warm=None, tol: float = POLISH_TOL) -> SolveReport:
        """Minimise r at the fixed level ``t_fixed`` only (no outer loop)."""
        cfg = self.settings
        x, s, _ = self._start(warm)
        pa = solve_pa(self.prob, self.ctx, (x, s), t_fixed, tol, cfg, r_target=cfg.eps_con)
        xh, sh = pa.point
        me = eval_merit(self.prob, xh, sh, t_fixed)
        rec = OuterRecord(0, t_fixed, me.r_value, me.rq, math.nan, tol, math.nan, pa.iters, 0)
        if pa.status in (NewtonStatus.FACTOR_FAILURE, NewtonStatus.LINE_SEARCH_STALL):
            status = Status.LINE_SEARCH_FAILURE
        elif me.r_value <= cfg.eps_con:
            status = Status.SUBOPTIMAL_FEASIBLE
        else:
            status = Status.INFEASIBLE
        return self._report(status, t_fixed, xh, sh, [rec], pa.iters, t_fixed)


def solve(prob: ProblemData, settings: SolverSettings | None = None, warm=None) -> SolveReport:
    return Solver(prob, settings).solve(warm)


def recover_feasible(prob: ProblemData, settings: SolverSettings | None, t_fixed: float, warm=None) -> SolveReport:
    return Solver(prob, settings).recover_feasible(t_fixed, warm)
