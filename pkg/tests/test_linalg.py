import numpy as np
import pytest
import scipy.sparse as sp

from alloc import KERNELS, count_numpy_allocations, kernel_allocations
from oracles import random_problem
from pvm import linalg
from pvm.merit import HessianElement, Mode, Pattern, dense_hessian, eval_merit, select_hessian
from pvm.problem import ConeSpec, ProblemData

GOLDEN_NNZ_K = 1296
GOLDEN_NNZ_L = 1092


def element(prob, diag_s, mode=Mode.PA, rq=0.0, xi=0, u=None, sigma=None, pattern=Pattern.WITHOUT_Q):
    size = prob.n + prob.m + (1 if mode is Mode.PB else 0)
    return HessianElement(mode=mode, base_pattern=pattern, H_diag_s=np.asarray(diag_s, dtype=float),
                          rq_scale=rq, rank1_active=xi, rank1_vector=np.zeros(size) if u is None else u,
                          sigma=sigma)


def random_element(rng, prob, mode=Mode.PA):
    x, s, t = rng.standard_normal(prob.n), rng.standard_normal(prob.m), float(rng.standard_normal())
    me = eval_merit(prob, x, s, t)
    return select_hessian(prob, me, s, t, mode, sigma=2.5 if mode is Mode.PB else None)


def test_zero_row_two_by_two():
    prob = ProblemData(Q=sp.csc_matrix((1, 1)), p=[0.0], A=sp.csc_matrix([[1.0]]), b=[0.0], cone=ConeSpec(1, 0))
    ctx = linalg.symbolic_setup(prob)
    assert ctx.dim == 2
    assert linalg.refactor(ctx, element(prob, [2.0]), 0.0)
    assert np.allclose(linalg.solve(ctx, np.array([1.0, 0.0])), [2.0, -1.0], rtol=0, atol=1e-15)


def test_positive_slack_two_by_two_is_singular_without_mu():
    prob = ProblemData(Q=sp.csc_matrix((1, 1)), p=[0.0], A=sp.csc_matrix([[1.0]]), b=[0.0], cone=ConeSpec(0, 1))
    ctx = linalg.symbolic_setup(prob)
    assert not linalg.refactor(ctx, element(prob, [1.0]), 0.0)
    assert linalg.refactor(ctx, element(prob, [1.0]), 1e-8)


def test_sherman_morrison_hand_example():
    # A = 0 and h_s = 0, mu = 1 make Hbar the 2x2 identity
    prob = ProblemData(Q=sp.csc_matrix((1, 1)), p=[0.0], A=sp.csc_matrix((1, 1)), b=[0.0], cone=ConeSpec(0, 1))
    ctx = linalg.symbolic_setup(prob)
    assert linalg.refactor(ctx, element(prob, [0.0]), 1.0)
    d = linalg.solve_rank1(ctx, np.array([1.0, 1.0]), 1, np.array([1.0, 0.0]))
    assert np.allclose(d, [-0.5, -1.0], rtol=0, atol=1e-15)
    d = linalg.solve_rank1(ctx, np.array([1.0, 1.0]), 0, np.array([1.0, 0.0]))
    assert np.array_equal(d, [-1.0, -1.0])


def test_inactive_rank1_is_plain_solve():
    rng = np.random.default_rng(0)
    prob = random_problem(rng, 5, 2, 4)
    ctx = linalg.symbolic_setup(prob)
    h = random_element(rng, prob)
    assert linalg.refactor(ctx, h, 1e-3)
    g = rng.standard_normal(prob.n + prob.m)
    d = linalg.solve_rank1(ctx, g, 0, h.rank1_vector).copy()
    assert np.array_equal(d, -linalg.solve(ctx, g))


def dense_oracle(prob, h, mu):
    K = dense_hessian(prob, h)
    N = prob.n + prob.m
    K[:N, :N] += mu * np.eye(N)
    return K


@pytest.mark.parametrize("mode", [Mode.PA, Mode.PB])
@pytest.mark.parametrize("seed", range(8))
def test_matches_dense_solver(seed, mode):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, int(rng.integers(1, 9)), int(rng.integers(0, 4)), int(rng.integers(1, 9)))
    ctx = linalg.symbolic_setup(prob)
    h = random_element(rng, prob, mode)
    mu = 1e-3
    assert linalg.refactor(ctx, h, mu)
    g = rng.standard_normal(ctx.dim)
    d = linalg.solve_rank1(ctx, g, h.rank1_active, h.rank1_vector).copy()
    K = dense_oracle(prob, h, mu)
    ref = np.linalg.solve(K, -g)
    assert np.allclose(d, ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())
    assert np.linalg.norm(K @ d + g) <= 1e-8 * (1 + np.linalg.norm(g))


def test_twenty_dimensional_rank1_against_dense():
    rng = np.random.default_rng(20)
    prob = random_problem(rng, 8, 4, 8)
    ctx = linalg.symbolic_setup(prob)
    me = eval_merit(prob, rng.standard_normal(8), rng.standard_normal(12), -50.0)
    h = select_hessian(prob, me, rng.standard_normal(12), -50.0)
    assert h.rank1_active == 1 and ctx.dim == 20
    assert linalg.refactor(ctx, h, 1e-4)
    g = rng.standard_normal(20)
    d = linalg.solve_rank1(ctx, g, 1, h.rank1_vector).copy()
    ref = np.linalg.solve(dense_oracle(prob, h, 1e-4), -g)
    assert np.allclose(d, ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())


def test_empty_column_regularised():
    A = sp.csc_matrix(np.array([[1.0, 0.0], [2.0, 0.0]]))
    prob = ProblemData(Q=sp.csc_matrix((2, 2)), p=[0.0, 0.0], A=A, b=[1.0, 1.0], cone=ConeSpec(0, 2))
    ctx = linalg.symbolic_setup(prob)
    h = element(prob, [2.0, 2.0])
    assert not linalg.refactor(ctx, h, 0.0)
    assert linalg.refactor(ctx, h, 1e-8)
    d = linalg.solve_rank1(ctx, np.ones(4), 0, np.zeros(4)).copy()
    ref = np.linalg.solve(dense_oracle(prob, h, 1e-8), -np.ones(4))
    assert np.allclose(d, ref, rtol=1e-6)


def test_without_q_pattern_is_subset():
    rng = np.random.default_rng(3)
    for _ in range(10):
        prob = random_problem(rng, int(rng.integers(1, 9)), int(rng.integers(0, 4)), int(rng.integers(1, 9)))
        ctx = linalg.symbolic_setup(prob)
        assert ctx.pattern_without_q.coords() <= ctx.pattern_with_q.coords()
        N = prob.n + prob.m
        diag = {(i, i) for i in range(N)}
        assert diag <= ctx.pattern_without_q.coords()


def test_mpc_setup_counts():
    from pvm.mpc import build_mpc

    ctx = linalg.symbolic_setup(build_mpc())
    assert ctx.N == 420
    # golden counts for the RCM ordering, recorded from the first run
    # Q is diagonal, so both patterns coincide on this instance
    assert (ctx.pattern_with_q.nnz_K, ctx.pattern_without_q.nnz_K) == (GOLDEN_NNZ_K, GOLDEN_NNZ_K)
    assert ctx.pattern_with_q.nnz_L == GOLDEN_NNZ_L


def test_solve_rank1_checks_lengths_and_state():
    prob = ProblemData(Q=sp.csc_matrix((1, 1)), p=[0.0], A=sp.csc_matrix((1, 1)), b=[0.0], cone=ConeSpec(0, 1))
    ctx = linalg.symbolic_setup(prob)
    with pytest.raises(linalg.FactorizationError):
        linalg.solve_rank1(ctx, np.ones(2), 0, np.zeros(2))
    assert linalg.refactor(ctx, element(prob, [0.0]), 1.0)
    with pytest.raises(ValueError):
        linalg.solve_rank1(ctx, np.ones(3), 1, np.ones(2))


def test_ldl_factor_one_off():
    rng = np.random.default_rng(9)
    M = rng.standard_normal((6, 6))
    K = M @ M.T + np.eye(6)
    fac = linalg.LDLFactor(sp.triu(sp.csc_matrix(K)))
    rhs = rng.standard_normal(6)
    assert np.allclose(fac.solve(rhs), np.linalg.solve(K, rhs), rtol=1e-10)
    with pytest.raises(linalg.FactorizationError):
        linalg.LDLFactor(sp.csc_matrix((2, 2)))


# --- allocation ---------------------------------------------------------------

def test_kernels_contain_no_heap_allocation():
    """Recompile each numeric kernel uncached and scan its LLVM IR for NRT allocators."""
    from pvm.mpc import build_mpc
    from pvm.solver import Solver

    Solver(build_mpc()).solve()  # make sure every kernel has its production signature
    assert kernel_allocations() == {name: [] for name in KERNELS}


def test_no_array_allocation_during_mpc_solve(monkeypatch):
    from pvm.mpc import build_baseline
    from pvm.solver import Solver

    solver = Solver(build_baseline())
    solver.solve()  # warm the JIT before measuring
    stats = count_numpy_allocations(monkeypatch, solver.solve)
    assert stats["calls"] > 10
    assert stats["net"] == 0
    # the Python wrappers create a view and box a few scalars; an array
    # temporary would be at least one float vector of length N
    assert stats["peak"] < 8 * solver.ctx.N


def test_allocation_counter_detects_allocations(monkeypatch):
    kept = []
    monkeypatch.setattr(linalg, "solve_rank1", lambda *args: kept.append(np.ones(4096)) or kept[-1])
    stats = count_numpy_allocations(monkeypatch, lambda: linalg.solve_rank1(None, None, 0, None))
    assert stats["calls"] == 1 and stats["net"] >= 4096 * 8 and stats["peak"] >= 4096 * 8
