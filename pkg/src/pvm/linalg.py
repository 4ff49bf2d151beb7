"""Sparse LDL' factorisation of the Newton matrix with rank-1 updates.

The Newton matrix (rank-1 epigraph term excluded) is

    K = [[A'A + rq*Q + dx*I,  A'             ],
         [A,                  diag(h_s) + ds*I]]

Its structure takes one of two forms depending on whether the Q block is
active, so both symbolic analyses (ordering, elimination tree, column
counts) are computed once in :func:`symbolic_setup`.  Numeric work runs in
numba kernels over buffers owned by the :class:`FactorContext`; after setup
``refactor`` and ``solve_rank1`` allocate nothing.

The PB system carries an extra t coordinate that couples to (x, s) only
through the rank-1 term; it is handled as a decoupled diagonal entry of
value 1/sigma inside the Sherman-Morrison solve.
"""

from __future__ import annotations

import dataclasses
import logging

import numba
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .merit import HessianElement, Mode, Pattern
from .problem import ProblemData

log = logging.getLogger(__name__)

PIVOT_TOL = 1e-14
SM_TOL = 1e-14


class FactorizationError(RuntimeError):
    """Numeric breakdown: tiny pivot or singular Sherman-Morrison update."""


# --- numba kernels ---------------------------------------------------------


@numba.njit(cache=True)
def _etree(N, Ap, Ai, work, Lnz, etree):
    for i in range(N):
        work[i] = 0
        Lnz[i] = 0
        etree[i] = -1
    for j in range(N):
        work[j] = j
        for p in range(Ap[j], Ap[j + 1]):
            i = Ai[p]
            if i > j:
                return -1
            while work[i] != j:
                if etree[i] == -1:
                    etree[i] = j
                Lnz[i] += 1
                work[i] = j
                i = etree[i]
    total = 0
    for i in range(N):
        total += Lnz[i]
    return total


@numba.njit(cache=True)
def _assemble(Ax, base, qval, rq, diag_pos, n, dx, h_s, ds):
    for k in range(Ax.shape[0]):
        Ax[k] = base[k] + rq * qval[k]
    for i in range(n):
        Ax[diag_pos[i]] += dx
    for i in range(h_s.shape[0]):
        Ax[diag_pos[n + i]] += h_s[i] + ds


@numba.njit(cache=True)
def _factor(N, Ap, Ai, Ax, Lp, Li, Lx, D, Dinv, Lnz, etree, y_mark, y_idx, elim, next_space, y_vals, piv_tol):
    Lp[0] = 0
    for i in range(N):
        Lp[i + 1] = Lp[i] + Lnz[i]
        next_space[i] = Lp[i]
        y_mark[i] = 0
        y_vals[i] = 0.0
        D[i] = 0.0
    for k in range(N):
        n_y = 0
        for p in range(Ap[k], Ap[k + 1]):
            bidx = Ai[p]
            if bidx == k:
                D[k] = Ax[p]
                continue
            y_vals[bidx] = Ax[p]
            nxt = bidx
            if y_mark[nxt] == 0:
                y_mark[nxt] = 1
                elim[0] = nxt
                n_e = 1
                nxt = etree[bidx]
                while nxt != -1 and nxt < k:
                    if y_mark[nxt] == 1:
                        break
                    y_mark[nxt] = 1
                    elim[n_e] = nxt
                    n_e += 1
                    nxt = etree[nxt]
                while n_e > 0:
                    n_e -= 1
                    y_idx[n_y] = elim[n_e]
                    n_y += 1
        for ii in range(n_y - 1, -1, -1):
            c = y_idx[ii]
            tmp = next_space[c]
            yc = y_vals[c]
            for j in range(Lp[c], tmp):
                y_vals[Li[j]] -= Lx[j] * yc
            Li[tmp] = k
            Lx[tmp] = yc * Dinv[c]
            D[k] -= yc * Lx[tmp]
            next_space[c] += 1
            y_vals[c] = 0.0
            y_mark[c] = 0
        if abs(D[k]) < piv_tol or not np.isfinite(D[k]):
            return k
        Dinv[k] = 1.0 / D[k]
    return -1


@numba.njit(cache=True)
def _ldl_solve(N, Lp, Li, Lx, Dinv, perm, rhs, out, work):
    # out = K^{-1} rhs with K = P' L D L' P
    for i in range(N):
        work[i] = rhs[perm[i]]
    for i in range(N):
        wi = work[i]
        for j in range(Lp[i], Lp[i + 1]):
            work[Li[j]] -= Lx[j] * wi
    for i in range(N):
        work[i] *= Dinv[i]
    for i in range(N - 1, -1, -1):
        acc = work[i]
        for j in range(Lp[i], Lp[i + 1]):
            acc -= Lx[j] * work[Li[j]]
        work[i] = acc
    for i in range(N):
        out[perm[i]] = work[i]


@numba.njit(cache=True)
def _solve_rank1(N, Lp, Li, Lx, Dinv, perm, g, xi, u, has_tail, tail_weight, d, z, work, sm_tol):
    """d = -(Kbar + xi*u*u')^{-1} g, Kbar = blockdiag(K, 1/tail_weight) if has_tail."""
    _ldl_solve(N, Lp, Li, Lx, Dinv, perm, g, d, work)
    for i in range(N):
        d[i] = -d[i]
    if has_tail:
        d[N] = -tail_weight * g[N]
    if xi == 0:
        return 0
    _ldl_solve(N, Lp, Li, Lx, Dinv, perm, u, z, work)
    if has_tail:
        z[N] = tail_weight * u[N]
    uy = 0.0
    uz = 0.0
    M = N + 1 if has_tail else N
    for i in range(M):
        uy += u[i] * d[i]
        uz += u[i] * z[i]
    den = 1.0 + xi * uz
    if abs(den) < sm_tol or not np.isfinite(den):
        return 1
    coef = xi * uy / den
    for i in range(M):
        d[i] -= coef * z[i]
    return 0


# --- symbolic structures ---------------------------------------------------


@dataclasses.dataclass
class SymbolicPattern:
    """Ordering, structure and value maps for one sparsity pattern."""

    pattern: Pattern
    perm: np.ndarray
    Ap: np.ndarray
    Ai: np.ndarray
    base: np.ndarray
    qval: np.ndarray
    diag_pos: np.ndarray
    etree: np.ndarray
    Lnz: np.ndarray
    Lp: np.ndarray
    Li: np.ndarray
    Lx: np.ndarray
    Ax: np.ndarray

    @property
    def nnz_K(self) -> int:
        return int(self.Ai.size)

    @property
    def nnz_L(self) -> int:
        return int(self.Li.size)

    def coords(self) -> set[tuple[int, int]]:
        """Stored upper-triangle coordinates in original (unpermuted) indices."""
        out = set()
        for j in range(self.Ap.size - 1):
            for k in range(self.Ap[j], self.Ap[j + 1]):
                a, b = self.perm[self.Ai[k]], self.perm[j]
                out.add((min(a, b), max(a, b)))
        return out


def _entries(prob: ProblemData, with_q: bool):
    n, m = prob.n, prob.m
    N = n + m
    A = prob.A.tocoo()
    AtA = sp.triu(prob.A.T @ prob.A).tocoo()
    rows = [AtA.row, A.col, np.arange(N)]
    cols = [AtA.col, A.row + n, np.arange(N)]
    base = [AtA.data, A.data, np.zeros(N)]
    qv = [np.zeros(AtA.nnz), np.zeros(A.nnz), np.zeros(N)]
    if with_q:
        Q = prob.Q.tocoo()
        rows.append(Q.row)
        cols.append(Q.col)
        base.append(np.zeros(Q.nnz))
        qv.append(Q.data)
    else:
        # diagonal of Q is structurally present anyway; keep its values so
        # the WITHOUT_Q pattern stays valid if ever used with rq > 0
        d = prob.Q.diagonal()
        idx = np.arange(n)
        rows.append(idx)
        cols.append(idx)
        base.append(np.zeros(n))
        qv.append(d)
    return (np.concatenate(rows).astype(np.int64), np.concatenate(cols).astype(np.int64),
            np.concatenate(base), np.concatenate(qv))


def _ordering(prob: ProblemData) -> np.ndarray:
    n, m = prob.n, prob.m
    r, c, _, _ = _entries(prob, with_q=True)
    N = n + m
    full = sp.coo_matrix((np.ones(r.size), (r, c)), shape=(N, N)).tocsr()
    full = (full + full.T).tocsr()
    return np.asarray(reverse_cuthill_mckee(full, symmetric_mode=True), dtype=np.int64)


def _build_pattern(prob: ProblemData, pattern: Pattern, perm: np.ndarray) -> SymbolicPattern:
    N = prob.n + prob.m
    r, c, base, qv = _entries(prob, with_q=pattern is Pattern.WITH_Q)
    iperm = np.empty(N, dtype=np.int64)
    iperm[perm] = np.arange(N)
    pr, pc = iperm[r], iperm[c]
    lo, hi = np.minimum(pr, pc), np.maximum(pr, pc)
    key = hi * N + lo  # column-major over the permuted upper triangle
    uniq, inv = np.unique(key, return_inverse=True)
    Ai = (uniq % N).astype(np.int64)
    col = uniq // N
    Ap = np.zeros(N + 1, dtype=np.int64)
    np.add.at(Ap, col + 1, 1)
    Ap = np.cumsum(Ap)
    base_v = np.bincount(inv, weights=base, minlength=uniq.size)
    q_v = np.bincount(inv, weights=qv, minlength=uniq.size)
    diag_key = np.arange(N, dtype=np.int64) * (N + 1)
    diag_perm_pos = np.searchsorted(uniq, diag_key)
    if not np.array_equal(uniq[diag_perm_pos], diag_key):
        raise FactorizationError("structurally missing diagonal")
    # diag_pos is indexed by original variable index
    diag_pos = diag_perm_pos[iperm]

    etree = np.empty(N, dtype=np.int64)
    Lnz = np.empty(N, dtype=np.int64)
    work = np.empty(N, dtype=np.int64)
    total = _etree(N, Ap, Ai, work, Lnz, etree)
    if total < 0:
        raise FactorizationError("matrix structure is not upper triangular")
    Lp = np.zeros(N + 1, dtype=np.int64)
    Lp[1:] = np.cumsum(Lnz)
    return SymbolicPattern(
        pattern=pattern, perm=perm, Ap=Ap, Ai=Ai, base=base_v, qval=q_v, diag_pos=diag_pos,
        etree=etree, Lnz=Lnz, Lp=Lp, Li=np.zeros(total, dtype=np.int64), Lx=np.zeros(total),
        Ax=np.zeros(uniq.size),
    )


@dataclasses.dataclass
class FactorContext:
    """Single-owner mutable factorisation state for one problem."""

    n: int
    m: int
    pattern_with_q: SymbolicPattern
    pattern_without_q: SymbolicPattern
    active_pattern: Pattern | None
    mode: Mode
    tail_weight: float
    D: np.ndarray
    Dinv: np.ndarray
    y_mark: np.ndarray
    y_idx: np.ndarray
    elim: np.ndarray
    next_space: np.ndarray
    y_vals: np.ndarray
    work: np.ndarray
    d: np.ndarray
    z: np.ndarray

    @property
    def N(self) -> int:
        return self.n + self.m

    @property
    def dim(self) -> int:
        return self.N + (1 if self.mode is Mode.PB else 0)

    @property
    def active(self) -> SymbolicPattern:
        if self.active_pattern is None:
            raise FactorizationError("no numeric factorisation available")
        return self.pattern_with_q if self.active_pattern is Pattern.WITH_Q else self.pattern_without_q


def symbolic_setup(prob: ProblemData) -> FactorContext:
    perm = _ordering(prob)
    with_q = _build_pattern(prob, Pattern.WITH_Q, perm)
    without_q = _build_pattern(prob, Pattern.WITHOUT_Q, perm)
    N = prob.n + prob.m
    log.debug("symbolic setup: N=%d nnz(K)=%d/%d nnz(L)=%d/%d", N, with_q.nnz_K, without_q.nnz_K,
              with_q.nnz_L, without_q.nnz_L)
    return FactorContext(
        n=prob.n, m=prob.m, pattern_with_q=with_q, pattern_without_q=without_q, active_pattern=None,
        mode=Mode.PA, tail_weight=0.0,
        D=np.zeros(N), Dinv=np.zeros(N), y_mark=np.zeros(N, dtype=np.int64), y_idx=np.zeros(N, dtype=np.int64),
        elim=np.zeros(N, dtype=np.int64), next_space=np.zeros(N, dtype=np.int64), y_vals=np.zeros(N),
        work=np.zeros(N), d=np.zeros(N + 1), z=np.zeros(N + 1),
    )


def refactor(ctx: FactorContext, helem: HessianElement, mu: float) -> bool:
    """Numerically factor H + mu*I for ``helem`` (rank-1 term excluded).

    Returns False on pivot breakdown; the caller escalates ``mu``.
    """
    sym = ctx.pattern_with_q if helem.base_pattern is Pattern.WITH_Q else ctx.pattern_without_q
    shift = helem.shift + mu
    _assemble(sym.Ax, sym.base, sym.qval, helem.rq_scale, sym.diag_pos, ctx.n, shift, helem.H_diag_s, shift)
    fail = _factor(ctx.N, sym.Ap, sym.Ai, sym.Ax, sym.Lp, sym.Li, sym.Lx, ctx.D, ctx.Dinv, sym.Lnz, sym.etree,
                   ctx.y_mark, ctx.y_idx, ctx.elim, ctx.next_space, ctx.y_vals, PIVOT_TOL)
    if fail >= 0:
        ctx.active_pattern = None
        return False
    ctx.active_pattern = helem.base_pattern
    ctx.mode = helem.mode
    ctx.tail_weight = helem.sigma if helem.mode is Mode.PB else 0.0
    return True


def solve_rank1(ctx: FactorContext, g: np.ndarray, xi: int, u: np.ndarray) -> np.ndarray:
    """Solve (Hbar + xi*u*u') d = -g by Sherman-Morrison on the stored factors.

    In PB mode ``g`` and ``u`` have length n+m+1, the last entry being the t
    coordinate.  The result is written to a buffer owned by ``ctx`` and
    stays valid until the next call.
    """
    sym = ctx.active
    has_tail = ctx.mode is Mode.PB
    dim = ctx.N + 1 if has_tail else ctx.N
    if g.shape[0] != dim or u.shape[0] != dim:
        raise ValueError(f"expected vectors of length {dim}")
    status = _solve_rank1(ctx.N, sym.Lp, sym.Li, sym.Lx, ctx.Dinv, sym.perm, g, xi, u, has_tail,
                          ctx.tail_weight, ctx.d, ctx.z, ctx.work, SM_TOL)
    if status:
        raise FactorizationError("Sherman-Morrison denominator vanished")
    return ctx.d[:dim]


def solve(ctx: FactorContext, rhs: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Plain solve with the stored (x, s) factors: out = Hbar^{-1} rhs."""
    sym = ctx.active
    if out is None:
        out = np.empty(ctx.N)
    _ldl_solve(ctx.N, sym.Lp, sym.Li, sym.Lx, ctx.Dinv, sym.perm, rhs, out, ctx.work)
    return out


class LDLFactor:
    """One-off LDL' of a symmetric matrix given by its upper triangle."""

    def __init__(self, upper: sp.spmatrix, pivot_tol: float = PIVOT_TOL):
        upper = sp.triu(sp.csc_matrix(upper)).tocsc()
        N = upper.shape[0]
        full = (upper + upper.T).tocsr()
        self.perm = np.asarray(reverse_cuthill_mckee(full, symmetric_mode=True), dtype=np.int64)
        P = sp.csc_matrix((np.ones(N), (np.arange(N), self.perm)), shape=(N, N))
        permuted = sp.triu(P @ (upper + sp.triu(upper, k=1).T) @ P.T).tocsc()
        permuted.sort_indices()
        self.N = N
        Ap = permuted.indptr.astype(np.int64)
        Ai = permuted.indices.astype(np.int64)
        Ax = permuted.data.astype(float)
        self.etree = np.empty(N, dtype=np.int64)
        self.Lnz = np.empty(N, dtype=np.int64)
        total = _etree(N, Ap, Ai, np.empty(N, dtype=np.int64), self.Lnz, self.etree)
        self.Lp = np.zeros(N + 1, dtype=np.int64)
        self.Li = np.zeros(total, dtype=np.int64)
        self.Lx = np.zeros(total)
        self.D = np.zeros(N)
        self.Dinv = np.zeros(N)
        fail = _factor(N, Ap, Ai, Ax, self.Lp, self.Li, self.Lx, self.D, self.Dinv, self.Lnz, self.etree,
                       np.zeros(N, dtype=np.int64), np.zeros(N, dtype=np.int64), np.zeros(N, dtype=np.int64),
                       np.zeros(N, dtype=np.int64), np.zeros(N), pivot_tol)
        if fail >= 0:
            raise FactorizationError(f"pivot {fail} below tolerance")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        out = np.empty(self.N)
        _ldl_solve(self.N, self.Lp, self.Li, self.Lx, self.Dinv, self.perm, np.asarray(rhs, dtype=float), out,
                   np.empty(self.N))
        return out
