"""Linear-quadratic MPC benchmark problems.

Decision vector x = (z_1, ..., z_H, u_1, ..., u_H).  The dynamics
z_i = A_sys z_{i-1} + B_sys u_i (z_0 fixed to the state estimate) are
zero-cone rows; the box constraints |u_i|_inf <= u_max and
|z_i|_inf <= z_max are pairs of nonnegative-cone rows.
"""

from __future__ import annotations

import dataclasses
import functools
import itertools

import numpy as np
import scipy.sparse as sp

from .problem import ConeSpec, ProblemData, SolverSettings

A_SYS = np.array([[1.01, 0.01, 0.0], [0.01, 1.01, 0.01], [0.0, 0.01, 1.01]])
B_SYS = np.eye(3)

INFEASIBLE_U_MAX = tuple(-0.01 * k for k in range(1, 10))
INFEASIBLE_Z_MAX = tuple(0.1 + 0.05 * k for k in range(8))


@dataclasses.dataclass(frozen=True)
class MpcSpec:
    horizon: int = 20
    Q_weight: float = 100.0
    R_weight: float = 0.01
    u_max: float = 0.01
    z_max: float = 1.0
    z0_hat: tuple[float, ...] = (0.5, 0.5, 0.5)
    A_sys: np.ndarray = dataclasses.field(default_factory=lambda: A_SYS.copy())
    B_sys: np.ndarray = dataclasses.field(default_factory=lambda: B_SYS.copy())
    objective_scale: float = 1.0

    @property
    def state_dim(self) -> int:
        return self.A_sys.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B_sys.shape[1]

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        A, B = np.atleast_2d(self.A_sys), np.atleast_2d(self.B_sys)
        object.__setattr__(self, "A_sys", A)
        object.__setattr__(self, "B_sys", B)
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0] or len(self.z0_hat) != A.shape[0]:
            raise ValueError("inconsistent system dimensions")


def build_mpc(spec: MpcSpec = MpcSpec(), name: str | None = None) -> ProblemData:
    H, nz, nu = spec.horizon, spec.state_dim, spec.input_dim
    n_z, n_u = H * nz, H * nu
    n = n_z + n_u

    # objective sum z'Qz + u'Ru  ==  1/2 x' (2 blkdiag(Q, R)) x
    diag = np.concatenate([np.full(n_z, 2.0 * spec.Q_weight), np.full(n_u, 2.0 * spec.R_weight)])
    Qmat = sp.diags(diag * spec.objective_scale, format="csc")

    # dynamics: z_i - A z_{i-1} - B u_i = 0  (z_0 moved to the right-hand side)
    Z = sp.kron(sp.identity(H), sp.identity(nz)) - sp.kron(sp.eye(H, k=-1), spec.A_sys)
    U = -sp.kron(sp.identity(H), spec.B_sys)
    A_eq = sp.hstack([Z, U])
    b_eq = np.zeros(n_z)
    b_eq[:nz] = spec.A_sys @ np.asarray(spec.z0_hat, dtype=float)

    I_u = sp.hstack([sp.csr_matrix((n_u, n_z)), sp.identity(n_u)])
    I_z = sp.hstack([sp.identity(n_z), sp.csr_matrix((n_z, n_u))])
    A_in = sp.vstack([I_u, -I_u, I_z, -I_z])
    b_in = np.concatenate([np.full(2 * n_u, spec.u_max), np.full(2 * n_z, spec.z_max)])

    A = sp.vstack([A_eq, A_in]).tocsc()
    b = np.concatenate([b_eq, b_in])
    cone = ConeSpec(zero=n_z, nonneg=2 * (n_u + n_z))
    prob = ProblemData(Q=Qmat, p=np.zeros(n), A=A, b=b, cone=cone, t0=0.0, name=name)
    assert prob.n == n and prob.m == n_z + 2 * (n_u + n_z)
    return prob


HIGH_ACCURACY = SolverSettings(eps_opt=1e-9, eps_con=1e-14, max_outer=60)

# Optimal value of the scaled baseline used by the benchmarks.
BENCHMARK_T_STAR = 0.1819


def normalising_scale(prob: ProblemData) -> float:
    """Factor making the largest objective coefficient 1/n.

    The termination test |grad_t r| <= eps_opt is absolute, so objectives
    with large gradients at the solution stop far below the optimal value;
    this normalisation keeps the objective and residual terms of the merit
    on comparable scales.
    """
    size = max(abs(prob.Q).max() if prob.Q.nnz else 0.0, np.abs(prob.p).max(initial=0.0))
    if size == 0:
        raise ValueError("objective is identically zero")
    return 1.0 / (size * prob.n)


def objective_scale_factor(prob: ProblemData, target_t_star: float,
                           settings: SolverSettings = HIGH_ACCURACY) -> float:
    """Factor c such that scaling (Q, p) by c moves the optimal value to the target.

    The optimal value is homogeneous of degree one in (Q, p); the solve runs
    on the :func:`normalising_scale` copy of the problem.
    """
    from .solver import Solver, Status

    if not (np.isfinite(target_t_star) and target_t_star > 0):
        raise ValueError("target optimal value must be positive")
    pre = normalising_scale(prob)
    rep = Solver(prob.with_objective_scale(pre), settings).solve()
    if rep.status is not Status.OPTIMAL:
        raise ValueError(f"cannot scale objective: solve returned {rep.status.value}")
    if rep.t_final <= 0:
        raise ValueError("optimal value is not positive; scaling to a target is ill-defined")
    return pre * target_t_star / rep.t_final


def scale_objective(prob: ProblemData, target_t_star: float,
                    settings: SolverSettings = HIGH_ACCURACY) -> ProblemData:
    """Rescale Q and p so the optimal value becomes ``target_t_star``."""
    return prob.with_objective_scale(objective_scale_factor(prob, target_t_star, settings))


@functools.lru_cache(maxsize=None)
def benchmark_scale() -> float:
    """Objective scale taking the default instance to BENCHMARK_T_STAR."""
    return objective_scale_factor(build_mpc(), BENCHMARK_T_STAR)


def build_baseline() -> ProblemData:
    """Default instance with the benchmark objective scaling."""
    return build_mpc(MpcSpec(objective_scale=benchmark_scale()), name="mpc_baseline")


def build_infeasible_family(objective_scale: float | None = None) -> list[ProblemData]:
    """72 instances with z0_hat = (1,1,1) and a negative input bound.

    The objective carries the benchmark scaling unless ``objective_scale``
    is given.
    """
    scale = benchmark_scale() if objective_scale is None else objective_scale
    out = []
    for u_max, z_max in itertools.product(INFEASIBLE_U_MAX, INFEASIBLE_Z_MAX):
        spec = MpcSpec(u_max=u_max, z_max=z_max, z0_hat=(1.0, 1.0, 1.0), objective_scale=scale)
        out.append(build_mpc(spec, name=f"mpc_infeasible_u{u_max:+.2f}_z{z_max:.2f}"))
    return out
