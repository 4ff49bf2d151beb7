import numpy as np
import pytest
import scipy.sparse as sp

from oracles import (
    bounded_random_qp,
    dense_newton,
    fd_gradient,
    grid_minimize,
    random_problem,
    slack_min,
    smooth_instance,
)
from pvm import linalg
from pvm.merit import eval_merit, eval_prox_stage
from pvm.newton import (
    MU_MAX,
    NewtonStatus,
    armijo_search,
    regularisation,
    solve_pa,
    solve_pb,
)
from pvm.problem import ConeSpec, ProblemData, SolverSettings

CFG = SolverSettings()


def toy(b2: float) -> ProblemData:
    """q = x^2/2 with x = 1 and x <= b2 (feasible for b2 = 2, infeasible for b2 = 0)."""
    return ProblemData(Q=sp.csc_matrix([[1.0]]), p=[0.0], A=sp.csc_matrix([[1.0], [1.0]]), b=[1.0, b2],
                       cone=ConeSpec(1, 1))


def strictly_decreasing(values):
    """Decreasing up to rounding ties, which appear once the gradient test is nearly met."""
    return all(b < a or b - a <= 1e-14 * abs(a) for a, b in zip(values, values[1:]))


# --- Armijo -------------------------------------------------------------------


def test_armijo_accepts_exact_newton_step():
    ls = armijo_search(lambda z: float(z @ z), np.array([1.0]), np.array([-1.0]), np.array([2.0]), CFG)
    assert ls.step == 1.0 and not ls.fallback and not ls.stalled and ls.value == 0.0


def test_armijo_steepest_step_on_parabola():
    # d = -g lands on f(-1) = f(1): no sufficient decrease at rho = 1
    ls = armijo_search(lambda z: float(z @ z), np.array([1.0]), np.array([-2.0]), np.array([2.0]), CFG)
    assert ls.step == 0.5 and ls.value == 0.0


def test_armijo_fallback_on_ascent_direction():
    g = np.array([1.0])
    ls = armijo_search(lambda z: float(z @ z), np.array([0.5]), np.array([1.0]), g, CFG)
    assert ls.fallback
    assert np.array_equal(ls.direction, -g)


def test_armijo_cubic_overshoot():
    f = lambda z: abs(z[0]) ** 3 / 3  # noqa: E731
    x, d, g = np.array([1.0]), np.array([-10.0]), np.array([1.0])
    ls = armijo_search(f, x, d, g, CFG)
    # direct evaluation: first k with f(1 - 10 rho) <= f(1) - 1e-4 * 10 rho, rho = 0.5^k
    k = 0
    while abs(1 - 10 * 0.5 ** k) ** 3 / 3 > 1 / 3 - 1e-4 * 10 * 0.5 ** k:
        k += 1
    assert ls.step == 0.5 ** k
    assert k == 3


def test_armijo_stall():
    # wrong gradient sign makes every step an ascent step
    ls = armijo_search(lambda z: float(z @ z), np.array([1.0]), np.array([2.0]), np.array([-2.0]), CFG)
    assert ls.stalled and ls.step == 0.0


def test_regularisation_clip():
    assert regularisation(0.0) == 0.0
    assert regularisation(1e-6) == 1e-6
    assert regularisation(5.0) == MU_MAX


# --- Pa -----------------------------------------------------------------------


def test_pa_zero_iterations_at_minimiser():
    prob = toy(2.0)
    ctx = linalg.symbolic_setup(prob)
    out = solve_pa(prob, ctx, (np.array([1.0]), np.array([0.0, 1.0])), 1.0, 1e-10, CFG)
    assert out.status is NewtonStatus.CONVERGED and out.iters == 0 and out.grad_norm <= 1e-10


def test_pa_smooth_region_converges_fast():
    prob = smooth_instance()
    t = -1.0
    ctx = linalg.symbolic_setup(prob)
    start = dense_newton(prob, t, np.zeros(3), iters=2)
    ref = dense_newton(prob, t, np.zeros(3))
    out = solve_pa(prob, ctx, (start[:2], start[2:]), t, 1e-10, CFG, record=True)
    assert out.converged and out.iters <= 3
    assert np.allclose(np.concatenate(out.point), ref, atol=1e-9)
    assert all(eval_merit(prob, z[:2], z[2:], t).rq > 0 for z in out.history)


def newton_error_ratios(prob, t, start):
    ctx = linalg.symbolic_setup(prob)
    ref = dense_newton(prob, t, np.concatenate(start))
    out = solve_pa(prob, ctx, start, t, 1e-13, CFG, record=True)
    errs = [np.linalg.norm(z - ref) for z in out.history]
    errs = [e for e in errs if e > 1e-13]
    return out, [b / a for a, b in zip(errs, errs[1:])]


def test_pa_superlinear():
    out, ratios = newton_error_ratios(smooth_instance(), -1.0, (np.array([3.0, -2.0]), np.array([0.5])))
    assert out.converged and len(ratios) >= 3
    tail = ratios[-3:]
    assert min(tail[:2]) < 0.5
    assert tail[-1] < 0.1


def test_pa_infeasible_toy_plateau():
    prob = toy(0.0)
    ctx = linalg.symbolic_setup(prob)
    out = solve_pa(prob, ctx, (np.zeros(1), np.array([1.0, 0.0])), 10.0, 1e-12, CFG)
    assert out.converged
    x, s = out.point
    M = eval_merit(prob, x, s, 10.0).r_value

    def r0_of_x(xv):
        eq = slack_min(lambda s1: 0.5 * (xv + s1 - 1) ** 2 + 0.5 * s1 ** 2)
        ineq = slack_min(lambda s2: 0.5 * (xv + s2) ** 2 + 0.5 * min(s2, 0.0) ** 2)
        return eq + ineq

    _, M_grid = grid_minimize(r0_of_x, -2, 2, points=41, rounds=12)
    assert M == pytest.approx(M_grid, abs=1e-6)
    assert M == pytest.approx(0.125, abs=1e-10)


def test_pa_rejects_bad_tolerance():
    prob = toy(2.0)
    with pytest.raises(ValueError):
        solve_pa(prob, linalg.symbolic_setup(prob), (np.zeros(1), np.zeros(2)), 0.0, 0.0, CFG)


def test_pa_target_stop():
    prob = toy(2.0)
    ctx = linalg.symbolic_setup(prob)
    out = solve_pa(prob, ctx, (np.zeros(1), np.array([1.0, 2.0])), 1.0, 1e-14, CFG, r_target=1e-8)
    assert out.status in (NewtonStatus.TARGET_REACHED, NewtonStatus.CONVERGED)
    assert eval_merit(prob, *out.point, 1.0).r_value <= 1e-8


def test_pa_iteration_limit():
    prob = toy(0.0)
    ctx = linalg.symbolic_setup(prob)
    out = solve_pa(prob, ctx, (np.array([5.0]), np.array([3.0, 3.0])), 10.0, 1e-14,
                   SolverSettings(max_inner=1))
    assert out.status is NewtonStatus.ITER_LIMIT and out.iters == 1


# --- Pb -----------------------------------------------------------------------


def test_pb_fixed_point_at_feasible_minimiser():
    prob = toy(2.0)
    ctx = linalg.symbolic_setup(prob)
    center = (np.array([1.0]), np.array([0.0, 1.0]), 1.0)
    tol, sigma = 1e-10, 1e4
    out = solve_pb(prob, ctx, center, center, sigma, tol, CFG)
    assert out.converged
    step = np.concatenate([out.point[0] - center[0], out.point[1] - center[1], [out.point[2] - center[2]]])
    assert np.linalg.norm(step) <= tol * sigma


@pytest.mark.parametrize("w", [1.0, 0.0])
def test_pb_tiny_sigma_stays_at_centers(w):
    rng = np.random.default_rng(11)
    prob = random_problem(rng, 3, 1, 3)
    ctx = linalg.symbolic_setup(prob)
    center = (rng.standard_normal(3), rng.standard_normal(4), 0.3)
    out = solve_pb(prob, ctx, center, center, 1e-6, 1e-8, CFG, xs_weight=w)
    assert out.converged
    assert abs(out.point[2] - center[2]) <= 1e-4
    if w == 1.0:
        assert np.abs(out.point[0] - center[0]).max() <= 1e-4
        assert np.abs(out.point[1] - center[1]).max() <= 1e-4


@pytest.mark.parametrize("w", [1.0, 0.0])
@pytest.mark.parametrize("seed", range(5))
def test_pb_first_order_condition(seed, w):
    rng = np.random.default_rng(seed)
    prob = bounded_random_qp(rng, max_total=12)
    while prob.n != 3:
        prob = bounded_random_qp(rng, max_total=12)
    ctx = linalg.symbolic_setup(prob)
    n, m = prob.n, prob.m
    center = (rng.standard_normal(n), rng.standard_normal(m), float(rng.standard_normal()))
    sigma, tol = 10.0, 1e-9
    out = solve_pb(prob, ctx, center, center, sigma, tol, CFG, xs_weight=w)
    assert out.converged
    z = np.concatenate([out.point[0], out.point[1], [out.point[2]]])
    stage = eval_prox_stage(prob, z[:n], z[n:n + m], z[-1], center, sigma, w)
    assert np.linalg.norm(stage.grad) <= tol
    fd = fd_gradient(lambda v: eval_prox_stage(prob, v[:n], v[n:n + m], v[-1], center, sigma, w).value, z, h=1e-7)
    assert np.linalg.norm(fd) <= 1e-6


def test_pb_rejects_bad_arguments():
    prob = toy(2.0)
    ctx = linalg.symbolic_setup(prob)
    c = (np.zeros(1), np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        solve_pb(prob, ctx, c, c, 0.0, 1e-6, CFG)
    with pytest.raises(ValueError):
        solve_pb(prob, ctx, c, c, 1.0, 0.0, CFG)


# --- monotone descent ---------------------------------------------------------


@pytest.mark.parametrize("seed", range(10))
def test_monotone_descent(seed):
    rng = np.random.default_rng(200 + seed)
    prob = random_problem(rng, int(rng.integers(1, 7)), int(rng.integers(0, 3)), int(rng.integers(0, 6)),
                          feasible=bool(seed % 2))
    ctx = linalg.symbolic_setup(prob)
    x, s, t = rng.standard_normal(prob.n), rng.standard_normal(prob.m), float(rng.standard_normal())
    pa = solve_pa(prob, ctx, (x, s), t, 1e-10, CFG)
    assert strictly_decreasing(pa.values)
    for w in (1.0, 0.0):
        pb = solve_pb(prob, ctx, (*pa.point, t), (*pa.point, t), 1e4, 1e-10, CFG, xs_weight=w)
        assert strictly_decreasing(pb.values)
