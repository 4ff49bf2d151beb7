"""Benchmark experiments on the MPC family: warm starts, feasibility
recovery from t0 > t*, and infeasibility detection.

Each experiment returns a :class:`BenchTable`; :func:`write_csv` renders it
with a commented header carrying the version, settings, seed, timestamp and
per-cell wall-clock times.
"""

from __future__ import annotations

import dataclasses
import datetime
import io
import json
import math
import time
from typing import Any, Sequence

import numpy as np

from . import __version__
from .mpc import HIGH_ACCURACY, build_baseline, build_infeasible_family
from .problem import ProblemData, SolverSettings
from .solver import Solver, Status

# Iteration counts of interior-point solvers on the same benchmarks, as
# reported.  They are printed for context only; none of these solvers run.
REPORTED_COLD_START = {"Clarabel": 9, "ECOS": 14, "Hypatia": 16}
REPORTED_INFEASIBLE = {
    "ECOS": (4, 6, 5),
    "Hypatia": (4, 27, 14),
    "Clarabel": (5, 7, 6),
    "PVM (reported)": (5, 9, 7),
}

RECOVER_GROWTH = 1.02
RECOVER_POINTS = 20

_SUCCESS = (Status.OPTIMAL, Status.SUBOPTIMAL_FEASIBLE)


@dataclasses.dataclass(frozen=True)
class ExperimentGrid:
    t0_values: tuple[float, ...] = (0.18, 0.13, 0.09, 0.06, 0.0)
    epsilon_values: tuple[float, ...] = (1e-6, 1e-5, 1e-4, 1e-3, 1e-2)
    trials_per_cell: int = 11
    rng_seed: int = 0
    include_cold: bool = True

    def __post_init__(self) -> None:
        if self.trials_per_cell < 1 or self.trials_per_cell % 2 == 0:
            raise ValueError("trials_per_cell must be a positive odd number")
        if any(e < 0 for e in self.epsilon_values):
            raise ValueError("perturbation radii must be non-negative")
        object.__setattr__(self, "t0_values", tuple(float(t) for t in self.t0_values))
        object.__setattr__(self, "epsilon_values", tuple(float(e) for e in self.epsilon_values))


@dataclasses.dataclass
class BenchTable:
    columns: list[str]
    rows: list[list[Any]]
    wall_clock: list[float]
    settings: SolverSettings
    seed: int | None
    meta: dict[str, Any] = dataclasses.field(default_factory=dict)

    def column(self, name: str) -> list[Any]:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]


@dataclasses.dataclass
class Reference:
    x: np.ndarray
    s: np.ndarray
    t_star: float


def reference_solution(prob: ProblemData, settings: SolverSettings = HIGH_ACCURACY) -> Reference:
    rep = Solver(prob, settings).solve()
    if rep.status is not Status.OPTIMAL:
        raise RuntimeError(f"reference solve failed: {rep.status.value}")
    return Reference(rep.x_final, rep.s_final, rep.t_final)


def cell_rng(seed: int, cell_index: int) -> np.random.Generator:
    """Independent stream per cell, so cell order or parallelism cannot change results."""
    return np.random.default_rng([seed, cell_index])


def perturbed_start(prob: ProblemData, center: np.ndarray, eps: float, rng: np.random.Generator):
    x0 = center + rng.uniform(-eps, eps, size=center.shape[0])
    return x0, prob.b - prob.A_csr @ x0


def _median(counts: Sequence[int]) -> float:
    return float(np.median(np.asarray(counts, dtype=float)))


def warmstart(
    grid: ExperimentGrid = ExperimentGrid(),
    settings: SolverSettings | None = None,
    prob: ProblemData | None = None,
    reference: Reference | None = None,
) -> BenchTable:
    """Median cumulative Newton counts over the (t0, epsilon) grid.

    Warm starts perturb the reference solution componentwise on
    [-eps, eps] with s0 = b - A x0.  The cold row starts from x0 = 0 and is
    deterministic, so it is solved once per t0.
    """
    settings = settings or SolverSettings()
    prob = prob if prob is not None else build_baseline()
    ref = reference or reference_solution(prob)
    solver = Solver(prob, settings)
    rows, clock = [], []
    cell = 0
    for eps in grid.epsilon_values:
        for t0 in grid.t0_values:
            rng = cell_rng(grid.rng_seed, cell)
            cell += 1
            start = time.perf_counter()
            counts, failures = [], 0
            for _ in range(grid.trials_per_cell):
                x0, s0 = perturbed_start(prob, ref.x, eps, rng)
                rep = solver.solve((x0, s0, t0))
                counts.append(rep.cumulative_newton)
                failures += rep.status not in _SUCCESS
            clock.append(time.perf_counter() - start)
            rows.append([t0, eps, _median(counts), failures, grid.rng_seed])
    if grid.include_cold:
        for t0 in grid.t0_values:
            start = time.perf_counter()
            rep = solver.solve((None, None, t0))
            clock.append(time.perf_counter() - start)
            rows.append([t0, "cold", float(rep.cumulative_newton), int(rep.status not in _SUCCESS), grid.rng_seed])
    return BenchTable(["t0", "epsilon", "median_newton", "failures", "seed"], rows, clock, settings,
                      grid.rng_seed, {"t_star": ref.t_star, "trials_per_cell": grid.trials_per_cell})


def recover_levels(t_star: float, count: int = RECOVER_POINTS, growth: float = RECOVER_GROWTH) -> list[float]:
    """Increasing levels above t*: t* * growth**(i+1), i = 0..count-1."""
    if t_star <= 0:
        raise ValueError("geometric levels need a positive optimal value")
    return [t_star * growth ** (i + 1) for i in range(count)]


def recover(
    epsilon_values: Sequence[float] = (1e-1, 1e-2, 1e-3),
    t_values: Sequence[float] | None = None,
    trials_per_cell: int = 11,
    rng_seed: int = 0,
    include_cold: bool = True,
    settings: SolverSettings | None = None,
    prob: ProblemData | None = None,
    reference: Reference | None = None,
) -> BenchTable:
    """Median Newton counts of ``recover_feasible`` at fixed levels t > t*.

    Warm starts perturb a minimiser of r(., ., t) computed from a cold
    start at that level.
    """
    if trials_per_cell < 1 or trials_per_cell % 2 == 0:
        raise ValueError("trials_per_cell must be a positive odd number")
    settings = settings or SolverSettings()
    prob = prob if prob is not None else build_baseline()
    ref = reference or reference_solution(prob)
    levels = list(t_values) if t_values is not None else recover_levels(ref.t_star)
    if any(t <= ref.t_star for t in levels):
        raise ValueError("recovery levels must exceed the optimal value")
    solver = Solver(prob, settings)
    centers = {}
    rows, clock = [], []
    cell = 0
    for eps in epsilon_values:
        for t in levels:
            if t not in centers:
                centers[t] = solver.recover_feasible(t).x_final
            rng = cell_rng(rng_seed, cell)
            cell += 1
            start = time.perf_counter()
            counts, failures = [], 0
            for _ in range(trials_per_cell):
                x0, s0 = perturbed_start(prob, centers[t], float(eps), rng)
                rep = solver.recover_feasible(t, (x0, s0))
                counts.append(rep.cumulative_newton)
                failures += rep.status is not Status.SUBOPTIMAL_FEASIBLE
            clock.append(time.perf_counter() - start)
            rows.append([t, float(eps), _median(counts), failures, rng_seed])
    if include_cold:
        for t in levels:
            start = time.perf_counter()
            rep = solver.recover_feasible(t)
            clock.append(time.perf_counter() - start)
            rows.append([t, "cold", float(rep.cumulative_newton), int(rep.status is not Status.SUBOPTIMAL_FEASIBLE),
                         rng_seed])
    return BenchTable(["t", "epsilon", "median_newton", "failures", "seed"], rows, clock, settings, rng_seed,
                      {"t_star": ref.t_star, "trials_per_cell": trials_per_cell})


def infeasible(settings: SolverSettings | None = None, family: Sequence[ProblemData] | None = None) -> BenchTable:
    """Cold solves of the infeasible family; one row per instance."""
    settings = settings or SolverSettings()
    family = list(family) if family is not None else build_infeasible_family()
    rows, clock = [], []
    for prob in family:
        start = time.perf_counter()
        rep = Solver(prob, settings).solve()
        clock.append(time.perf_counter() - start)
        rows.append([prob.name or "", rep.status.value, rep.cumulative_newton, rep.M_estimate])
    return BenchTable(["name", "status", "newton", "M_estimate"], rows, clock, settings, None)


def summary_counts(counts: Sequence[int]) -> tuple[float, float, float]:
    arr = np.asarray(counts, dtype=float)
    return float(arr.min()), float(arr.max()), float(np.median(arr))


# --- CSV ---------------------------------------------------------------------


def format_value(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        return f"{value:.17g}"
    return str(value)


def render_csv(table: BenchTable, timestamp: str | None = None) -> str:
    """CSV text with LF endings.  Only the line starting ``# run`` varies between identical runs."""
    if timestamp is None:
        timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    settings = {k: v for k, v in dataclasses.asdict(table.settings).items()}
    buf = io.StringIO(newline="")
    buf.write(f"# pvm {__version__}\n")
    buf.write(f"# settings {json.dumps(settings, sort_keys=True)}\n")
    buf.write(f"# seed {table.seed if table.seed is not None else 'none'}\n")
    for key in sorted(table.meta):
        buf.write(f"# {key} {format_value(table.meta[key])}\n")
    clocks = ",".join(f"{c:.6f}" for c in table.wall_clock)
    buf.write(f"# run {timestamp} wall_clock_s={clocks}\n")
    buf.write(",".join(table.columns) + "\n")
    for row in table.rows:
        buf.write(",".join(format_value(v) for v in row) + "\n")
    return buf.getvalue()


def write_csv(table: BenchTable, path, timestamp: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_csv(table, timestamp))


def csv_body(text: str) -> str:
    """Everything except the ``# run`` line, for reproducibility comparisons."""
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("# run "))
