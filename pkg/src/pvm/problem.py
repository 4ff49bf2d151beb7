"""Problem data model, settings, validation and the JSON problem format.

A problem is the convex QP

    min  1/2 x'Qx + p'x
    s.t. Ax + s = b,  s in Zero^p x Nonneg^m+

where the first ``cone.zero`` rows of ``A`` are equality rows and the
remaining ``cone.nonneg`` rows are one-sided inequalities.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp


class ProblemFormatError(ValueError):
    """Raised when a problem file cannot be parsed into a valid problem."""


class Violation(str, enum.Enum):
    DIMENSION_MISMATCH = "DimensionMismatch"
    CONE_DIM_MISMATCH = "ConeDimMismatch"
    INDEX_OUT_OF_RANGE = "IndexOutOfRange"
    NON_FINITE = "NonFinite"
    NOT_UPPER_TRIANGULAR = "NotUpperTriangular"
    NEGATIVE_DIAGONAL = "NegativeDiagonal"
    NEGATIVE_CONE_DIM = "NegativeConeDim"


@dataclasses.dataclass(frozen=True)
class ConeSpec:
    zero: int
    nonneg: int

    @property
    def m(self) -> int:
        return self.zero + self.nonneg


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _canonical(mat: Any, shape: tuple[int, int] | None = None) -> sp.csc_matrix:
    out = sp.csc_matrix(mat, shape=shape, dtype=float)
    out.sum_duplicates()
    out.sort_indices()
    for a in (out.data, out.indices, out.indptr):
        _freeze(a)
    return out


@dataclasses.dataclass(frozen=True, eq=False)
class ProblemData:
    """Immutable QP instance.

    ``Q`` holds the upper triangle of the symmetric cost matrix (CSC),
    ``A`` is the m x n constraint matrix (CSC).  Construction canonicalises
    storage (sorted, deduplicated) but does not validate; use
    :func:`validate` or :func:`load_problem` for that.
    """

    Q: sp.csc_matrix
    p: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cone: ConeSpec
    t0: float | None = None
    name: str | None = None

    def __post_init__(self) -> None:
        set_ = object.__setattr__
        set_(self, "Q", _canonical(self.Q))
        set_(self, "A", _canonical(self.A))
        set_(self, "p", _freeze(np.array(self.p, dtype=float).reshape(-1)))
        set_(self, "b", _freeze(np.array(self.b, dtype=float).reshape(-1)))

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def zero_rows(self) -> slice:
        return slice(0, self.cone.zero)

    @property
    def nonneg_rows(self) -> slice:
        return slice(self.cone.zero, self.cone.zero + self.cone.nonneg)

    # Derived operators, cached on first use.  Problems are immutable so the
    # caches never go stale.
    def _cached(self, key: str, build):
        cache = self.__dict__.setdefault("_cache", {})
        if key not in cache:
            cache[key] = build()
        return cache[key]

    @property
    def Q_full(self) -> sp.csr_matrix:
        """Full symmetric Q rebuilt from the stored upper triangle."""

        def build():
            upper = sp.triu(self.Q, k=1)
            return sp.csr_matrix(upper + upper.T + sp.diags(self.Q.diagonal()))

        return self._cached("Q_full", build)

    @property
    def A_csr(self) -> sp.csr_matrix:
        return self._cached("A_csr", lambda: sp.csr_matrix(self.A))

    @property
    def At_csr(self) -> sp.csr_matrix:
        return self._cached("At_csr", lambda: sp.csr_matrix(self.A.T))

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.Q_full @ x) + self.p @ x)

    def with_objective_scale(self, factor: float) -> "ProblemData":
        """Copy with (Q, p) multiplied by ``factor``; a lower bound t0 survives positive factors."""
        t0 = self.t0 * factor if self.t0 is not None and factor > 0 else None
        return ProblemData(
            Q=self.Q * factor, p=self.p * factor, A=self.A, b=self.b, cone=self.cone, t0=t0, name=self.name
        )


@dataclasses.dataclass(frozen=True)
class SolverSettings:
    eps_opt: float = 1e-4
    eps_con: float = 1e-8
    sigma0: float = 1e4
    delta0: float = 1e-2
    delta_shrink: float = 0.1
    sigma_cap: float = 1e12
    max_outer: int = 50
    max_inner: int = 200
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 50
    t0: float | None = None
    verbose: bool = False

    def __post_init__(self) -> None:
        for name in ("eps_opt", "eps_con", "sigma0", "delta0", "sigma_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("delta_shrink", "armijo_c", "backtrack_factor"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.max_outer < 1 or self.max_inner < 0 or self.max_backtracks < 1:
            raise ValueError("iteration caps must be positive")


def validate(prob: ProblemData) -> list[Violation]:
    """Return the list of invariant violations (empty when well formed)."""
    out: list[Violation] = []
    m, n = prob.A.shape
    if prob.Q.shape != (n, n) or prob.p.shape != (n,) or prob.b.shape != (m,):
        out.append(Violation.DIMENSION_MISMATCH)
    if prob.cone.zero < 0 or prob.cone.nonneg < 0:
        out.append(Violation.NEGATIVE_CONE_DIM)
    if prob.cone.m != m:
        out.append(Violation.CONE_DIM_MISMATCH)
    finite = all(np.all(np.isfinite(v)) for v in (prob.Q.data, prob.A.data, prob.p, prob.b))
    if not finite or (prob.t0 is not None and not math.isfinite(prob.t0)):
        out.append(Violation.NON_FINITE)
    Qc = prob.Q.tocoo()
    if np.any(Qc.row > Qc.col):
        out.append(Violation.NOT_UPPER_TRIANGULAR)
    if np.any(prob.Q.diagonal() < 0):
        out.append(Violation.NEGATIVE_DIAGONAL)
    return out


# --- JSON format -----------------------------------------------------------


def _triplets(obj: Any, field: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not isinstance(obj, list):
        raise ProblemFormatError(f"{field}: expected a list of [row, col, value] triplets")
    rows, cols, vals = [], [], []
    for k, item in enumerate(obj):
        if not isinstance(item, list) or len(item) != 3:
            raise ProblemFormatError(f"{field}[{k}]: expected [row, col, value]")
        r, c, v = item
        if not (isinstance(r, int) and isinstance(c, int)) or isinstance(r, bool) or isinstance(c, bool):
            raise ProblemFormatError(f"{field}[{k}]: indices must be integers")
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ProblemFormatError(f"{field}[{k}]: value must be a number")
        if not math.isfinite(v):
            raise ProblemFormatError(f"{field}[{k}]: NaN/Inf entry")
        rows.append(r)
        cols.append(c)
        vals.append(float(v))
    return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(vals, dtype=float)


def _vector(obj: Any, field: str) -> np.ndarray:
    if not isinstance(obj, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
        raise ProblemFormatError(f"{field}: expected a list of numbers")
    arr = np.array(obj, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ProblemFormatError(f"{field}: NaN/Inf entry")
    return arr


def problem_from_dict(data: dict) -> ProblemData:
    """Build and validate a problem from the decoded JSON object."""
    if not isinstance(data, dict):
        raise ProblemFormatError("top level must be an object")
    missing = {"Q", "A", "p", "b", "cone"} - data.keys()
    if missing:
        raise ProblemFormatError(f"missing keys: {sorted(missing)}")
    cone = data["cone"]
    if not isinstance(cone, dict) or not all(isinstance(cone.get(k), int) for k in ("zero", "nonneg")):
        raise ProblemFormatError("cone: expected {'zero': int, 'nonneg': int}")
    p = _vector(data["p"], "p")
    b = _vector(data["b"], "b")
    n, m = p.size, b.size
    qr, qc, qv = _triplets(data["Q"], "Q")
    ar, ac, av = _triplets(data["A"], "A")
    if np.any((qr < 0) | (qr >= n) | (qc < 0) | (qc >= n)):
        raise ProblemFormatError("Q: index out of range")
    if ar.size and (ar.max() >= m or ar.min() < 0):
        raise ProblemFormatError(f"A: row index out of range (b has length {m}, dimension mismatch)")
    # triplets cannot express trailing empty rows; A's height is its last referenced row
    a_rows = int(ar.max()) + 1 if ar.size else 0
    if a_rows != m:
        raise ProblemFormatError(f"dimension mismatch: A has {a_rows} rows, b has length {m}")
    if np.any((ac < 0) | (ac >= n)):
        raise ProblemFormatError("A: column index out of range")
    if cone["zero"] + cone["nonneg"] != m:
        raise ProblemFormatError(f"dimension mismatch: cone sizes sum to {cone['zero'] + cone['nonneg']}, b has {m}")

    Q = sp.coo_matrix((qv, (qr, qc)), shape=(n, n)).tocsc()
    if np.any(qr > qc):
        if np.any(qr < qc):
            Q = (Q + Q.T) * 0.5
        else:
            Q = Q.T
    Q = sp.triu(Q).tocsc()
    A = sp.coo_matrix((av, (ar, ac)), shape=(m, n)).tocsc()
    A.eliminate_zeros()

    t0 = data.get("t0")
    if t0 is not None and (not isinstance(t0, (int, float)) or not math.isfinite(t0)):
        raise ProblemFormatError("t0: expected a finite number")
    name = data.get("name")
    prob = ProblemData(Q=Q, p=p, A=A, b=b, cone=ConeSpec(cone["zero"], cone["nonneg"]), t0=t0, name=name)
    bad = validate(prob)
    if bad:
        raise ProblemFormatError("invalid problem: " + ", ".join(v.value for v in bad))
    return prob


def problem_to_dict(prob: ProblemData) -> dict:
    def trip(mat: sp.csc_matrix) -> list:
        c = mat.tocoo()
        return [[int(r), int(k), float(v)] for r, k, v in zip(c.row, c.col, c.data)]

    a_trip = trip(prob.A)
    if prob.m and prob.n and not any(r == prob.m - 1 for r, _, _ in a_trip):
        a_trip.append([prob.m - 1, 0, 0.0])  # keeps the row count recoverable
    out = {
        "Q": trip(prob.Q),
        "p": [float(v) for v in prob.p],
        "A": a_trip,
        "b": [float(v) for v in prob.b],
        "cone": {"zero": prob.cone.zero, "nonneg": prob.cone.nonneg},
    }
    if prob.t0 is not None:
        out["t0"] = float(prob.t0)
    if prob.name is not None:
        out["name"] = prob.name
    return out


def load_problem(path: str | Path) -> ProblemData:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ProblemFormatError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(f"parse error: {exc}") from exc
    return problem_from_dict(data)


def save_problem(prob: ProblemData, path: str | Path) -> None:
    # repr of a Python float round-trips exactly through json
    Path(path).write_text(json.dumps(problem_to_dict(prob)))
