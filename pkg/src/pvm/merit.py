"""Residual field, merit function and generalised Hessian selection.

The merit is

    r(x, s, t) = 1/2 max(q(x) - t, 0)^2 + 1/2 |Ax + s - b|^2 + 1/2 dist(s, C)^2

with C = Zero^p x Nonneg^m+.  Its gradient is semismooth, so Newton steps
use an element of the Clarke generalised Hessian picked by
:func:`select_hessian`.
"""

from __future__ import annotations

import dataclasses
import enum

import numpy as np

from .problem import ProblemData


class Mode(enum.Enum):
    PA = "PA"  # minimise r over (x, s) at fixed t
    PB = "PB"  # proximal step on r over (x, s, t)


class Pattern(enum.Enum):
    WITH_Q = "with_q"
    WITHOUT_Q = "without_q"


@dataclasses.dataclass
class MeritEval:
    q_value: float
    rq: float
    eq_residual: np.ndarray
    cone_residual: np.ndarray
    r_value: float
    r0_value: float
    grad_x: np.ndarray
    grad_s: np.ndarray
    grad_t: float
    v: np.ndarray

    @property
    def grad_xs(self) -> np.ndarray:
        return np.concatenate([self.grad_x, self.grad_s])


@dataclasses.dataclass
class StageEval:
    """Merit plus the proximal centring term of the Pb stage objective."""

    merit: MeritEval
    value: float
    grad_x: np.ndarray
    grad_s: np.ndarray
    grad_t: float

    @property
    def grad(self) -> np.ndarray:
        return np.concatenate([self.grad_x, self.grad_s, [self.grad_t]])


@dataclasses.dataclass
class HessianElement:
    mode: Mode
    base_pattern: Pattern
    H_diag_s: np.ndarray
    rq_scale: float
    rank1_active: int
    rank1_vector: np.ndarray
    sigma: float | None = None
    xs_weight: float = 1.0

    @property
    def shift(self) -> float:
        """Diagonal added to the (x, s) block by the proximal term."""
        return 0.0 if self.mode is Mode.PA else self.xs_weight / self.sigma


def cone_residual(prob: ProblemData, s: np.ndarray) -> np.ndarray:
    """s - proj_C(s): s_i on zero rows, min(s_i, 0) on nonneg rows."""
    out = np.minimum(s, 0.0)
    out[prob.zero_rows] = s[prob.zero_rows]
    return out


def merit_value(prob: ProblemData, x: np.ndarray, s: np.ndarray, t: float) -> float:
    """Cheap merit evaluation without gradients (used by line searches)."""
    q = prob.objective(x)
    rq = max(q - t, 0.0)
    e = prob.A_csr @ x + s - prob.b
    c = cone_residual(prob, s)
    return 0.5 * (rq * rq + e @ e + c @ c)


def eval_merit(prob: ProblemData, x: np.ndarray, s: np.ndarray, t: float) -> MeritEval:
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    if x.shape != (prob.n,) or s.shape != (prob.m,):
        raise ValueError(f"expected x of length {prob.n} and s of length {prob.m}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(s)) and np.isfinite(t)):
        raise ValueError("non-finite point passed to eval_merit")
    Qx = prob.Q_full @ x
    v = Qx + prob.p
    q = float(0.5 * x @ Qx + prob.p @ x)
    rq = max(q - t, 0.0)
    e = prob.A_csr @ x + s - prob.b
    c = cone_residual(prob, s)
    r0 = 0.5 * float(e @ e + c @ c)
    return MeritEval(
        q_value=q,
        rq=rq,
        eq_residual=e,
        cone_residual=c,
        r_value=0.5 * rq * rq + r0,
        r0_value=r0,
        grad_x=prob.At_csr @ e + rq * v,
        grad_s=e + c,
        grad_t=-rq,
        v=v,
    )


def eval_prox_stage(
    prob: ProblemData,
    x: np.ndarray,
    s: np.ndarray,
    t: float,
    centers: tuple[np.ndarray, np.ndarray, float],
    sigma: float,
    xs_weight: float = 1.0,
) -> StageEval:
    """Stage objective r + (1/2 sigma)(w |x - xc|^2 + w |s - sc|^2 + (t - tc)^2), w = ``xs_weight``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not xs_weight >= 0:
        raise ValueError("xs_weight must be non-negative")
    xc, sc, tc = centers
    me = eval_merit(prob, x, s, t)
    dx, ds, dt = x - xc, s - sc, t - tc
    inv = 1.0 / sigma
    w = xs_weight * inv
    value = me.r_value + 0.5 * (w * float(dx @ dx + ds @ ds) + inv * dt * dt)
    return StageEval(
        merit=me,
        value=value,
        grad_x=me.grad_x + w * dx,
        grad_s=me.grad_s + w * ds,
        grad_t=me.grad_t + inv * dt,
    )


def select_hessian(
    prob: ProblemData,
    me: MeritEval,
    s: np.ndarray,
    t: float,
    mode: Mode = Mode.PA,
    sigma: float | None = None,
    xs_weight: float = 1.0,
) -> HessianElement:
    """Pick the Clarke Hessian element with the kink multipliers set to one.

    The returned element describes ``H`` (without the rank-1 epigraph
    term) plus the rank-1 vector; ``linalg.refactor`` assembles and factors
    ``H`` and ``linalg.solve_rank1`` applies the rank-1 correction.
    """
    if mode is Mode.PB and not (sigma and sigma > 0):
        raise ValueError("PB mode needs a positive sigma")
    xi_q = 1 if me.q_value >= t else 0
    h_s = np.where(s <= 0.0, 2.0, 1.0)
    h_s[prob.zero_rows] = 2.0
    tail = [me.v, np.zeros(prob.m)]
    if mode is Mode.PB:
        tail.append([-1.0])
    return HessianElement(
        mode=mode,
        base_pattern=Pattern.WITH_Q if me.rq > 0 else Pattern.WITHOUT_Q,
        H_diag_s=h_s,
        rq_scale=me.rq,
        rank1_active=xi_q,
        rank1_vector=np.concatenate(tail),
        sigma=sigma if mode is Mode.PB else None,
        xs_weight=xs_weight,
    )


def dense_hessian(prob: ProblemData, helem: HessianElement) -> np.ndarray:
    """Dense assembly of the selected Hessian element, rank-1 term included.

    Reference path for tests and small-problem debugging.
    """
    n, m = prob.n, prob.m
    A = prob.A.toarray()
    Hx = A.T @ A + helem.rq_scale * prob.Q_full.toarray()
    K = np.block([[Hx, A.T], [A, np.diag(helem.H_diag_s)]])
    if helem.mode is Mode.PB:
        K = K + helem.shift * np.eye(n + m)
        K = np.block([[K, np.zeros((n + m, 1))], [np.zeros((1, n + m)), np.array([[1.0 / helem.sigma]])]])
    u = helem.rank1_vector
    return K + helem.rank1_active * np.outer(u, u)
