"""Dense revised simplex (Bland's rule) and the basis-pursuit reformulation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError, InfeasibleError, NumericalError

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-11
LP_BUDGET = 20_000_000  # entries of the constraint matrix


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LinearProgram:
    """min c^T x subject to A x = b, with x_k >= 0 unless ``free[k]``."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    free: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        A = np.asarray(self.A, dtype=float)
        if A.ndim == 1:
            A = A.reshape(1, -1) if c.size == A.size else A.reshape(-1, 1)
        b = np.asarray(self.b, dtype=float).ravel()
        if A.shape != (b.size, c.size):
            raise ValueError(f"A has shape {A.shape}, expected {(b.size, c.size)}")
        free = np.zeros(c.size, dtype=bool) if self.free is None else np.asarray(self.free, dtype=bool)
        if free.size != c.size:
            raise ValueError("free mask has wrong length")
        for name, arr in (("c", c), ("A", A), ("b", b)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "free", free)


@dataclass
class LpSolution:
    status: LpStatus
    primal: np.ndarray
    dual: np.ndarray
    objective_value: float
    iterations: int = 0
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    gap: float = float("nan")
    reduced_costs: np.ndarray = field(default=None, repr=False)


class _Simplex:
    """Revised simplex on min c^T x, A x = b, x >= 0, with b >= 0."""

    def __init__(self, A, b, max_iter):
        self.A = A
        self.b = b
        self.m, self.n = A.shape
        self.max_iter = max_iter
        self.iterations = 0

    def _refactor(self, basis):
        try:
            return np.linalg.inv(self.A[:, basis])
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular basis matrix") from exc

    def run(self, c, basis, allowed):
        """Bland's-rule iterations from a feasible basis; returns (basis, status)."""
        A, b = self.A, self.b
        Binv = self._refactor(basis)
        since = 0
        while True:
            if self.iterations >= self.max_iter:
                raise NumericalError(f"simplex iteration cap {self.max_iter} reached")
            xB = Binv @ b
            y = c[basis] @ Binv
            d = c - y @ A
            d[basis] = 0.0
            cand = np.flatnonzero((d < -OPT_TOL) & allowed)
            if cand.size == 0:
                return basis, LpStatus.OPTIMAL
            e = int(cand[0])
            col = Binv @ A[:, e]
            pos = col > PIVOT_TOL
            if not pos.any():
                return basis, LpStatus.UNBOUNDED
            ratios = np.full(self.m, np.inf)
            ratios[pos] = np.maximum(xB[pos], 0.0) / col[pos]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, best))
            r = int(ties[np.argmin(np.asarray(basis)[ties])])
            basis[r] = e
            self.iterations += 1
            since += 1
            if since >= 50:
                Binv = self._refactor(basis)
                since = 0
            else:
                piv = col[r]
                row = Binv[r] / piv
                Binv -= np.outer(col, row)
                Binv[r] = row


def solve_lp(p: LinearProgram, max_iter: int = 100_000, budget: int = LP_BUDGET) -> LpSolution:
    """Two-phase revised simplex with Bland's anti-cycling rule.

    Free variables are split into a difference of nonnegative parts.  The
    returned dual ``y`` satisfies c - A^T y >= 0 on nonnegative variables and
    = 0 on free ones at optimality.
    """
    m0, n0 = p.A.shape
    if m0 * (n0 + p.free.sum() + m0) > budget:
        raise BudgetError(f"LP with {m0} rows and {n0} columns exceeds budget", size=m0 * n0)
    # split free variables
    free_idx = np.flatnonzero(p.free)
    A = np.hstack([p.A, -p.A[:, free_idx]])
    c = np.concatenate([p.c, -p.c[free_idx]])
    b = p.b.copy()
    sign = np.where(b < 0, -1.0, 1.0)
    A = A * sign[:, None]
    b = b * sign
    m, n = A.shape

    if m == 0:
        if np.any(c < -OPT_TOL):
            return LpSolution(LpStatus.UNBOUNDED, np.zeros(n0), np.zeros(0), -np.inf)
        return _finish(p, np.zeros(n), np.zeros(0), free_idx, 0)

    # phase I on [A | I]
    Aa = np.hstack([A, np.eye(m)])
    simplex = _Simplex(Aa, b, max_iter)
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    basis = list(range(n, n + m))
    allowed = np.ones(n + m, dtype=bool)
    basis, _ = simplex.run(c1, basis, allowed)
    Binv = simplex._refactor(basis)
    xB = Binv @ b
    infeas = float(c1[basis] @ xB)
    if infeas > FEAS_TOL * (1.0 + np.abs(b).max()):
        y = c1[basis] @ Binv
        return LpSolution(LpStatus.INFEASIBLE, np.full(n0, np.nan), y * sign, np.nan,
                          iterations=simplex.iterations)

    # drive artificials out of the basis; a row that cannot be cleared is
    # redundant and is dropped together with its artificial
    drop_rows, drop_pos = [], []
    for r in range(m):
        if basis[r] < n:
            continue
        row = Binv[r] @ A
        in_basis = set(basis)
        nonbasic = [k for k in range(n) if k not in in_basis and abs(row[k]) > 1e-9]
        if nonbasic:
            basis[r] = nonbasic[0]
            Binv = simplex._refactor(basis)
        else:
            drop_rows.append(basis[r] - n)
            drop_pos.append(r)
    rows = np.setdiff1d(np.arange(m), drop_rows)
    basis = [k for r, k in enumerate(basis) if r not in set(drop_pos)]
    A, b, sign_kept = A[rows], b[rows], sign[rows]
    m2 = len(rows)

    simplex2 = _Simplex(A, b, max_iter)
    simplex2.iterations = simplex.iterations
    if m2 == 0:
        x = np.zeros(n)
        if np.any(c < -OPT_TOL):
            return LpSolution(LpStatus.UNBOUNDED, np.full(n0, np.nan), np.zeros(m0), -np.inf)
        return _finish(p, x, np.zeros(m0), free_idx, simplex2.iterations)
    basis, status = simplex2.run(c, basis, np.ones(n, dtype=bool))
    if status == LpStatus.UNBOUNDED:
        return LpSolution(LpStatus.UNBOUNDED, np.full(n0, np.nan), np.full(m0, np.nan), -np.inf,
                          iterations=simplex2.iterations)
    B = A[:, basis]
    xB = np.linalg.solve(B, b)
    x = np.zeros(n)
    x[basis] = np.maximum(xB, 0.0)
    y_kept = np.linalg.solve(B.T, c[basis])
    y = np.zeros(m0)
    y[rows] = y_kept * sign_kept
    return _finish(p, x, y, free_idx, simplex2.iterations)


def _finish(p: LinearProgram, x_split, y, free_idx, iterations) -> LpSolution:
    n0 = p.c.size
    x = x_split[:n0].copy()
    x[free_idx] -= x_split[n0:]
    val = float(p.c @ x)
    d = p.c - p.A.T @ y if y.size else p.c.copy()
    scale_b = 1.0 + (np.abs(p.b).max() if p.b.size else 0.0)
    prim = float(np.abs(p.A @ x - p.b).max()) if p.b.size else 0.0
    dres = np.where(p.free, np.abs(d), np.maximum(-d, 0.0))
    dual_res = float(dres.max()) if dres.size else 0.0
    gap = abs(val - float(p.b @ y)) if y.size else abs(val)
    if prim > 1e-9 * scale_b or dual_res > 1e-9 * scale_b or gap > 1e-8 * (1.0 + abs(val)):
        raise NumericalError(
            f"certificate check failed: primal {prim:.2e}, dual {dual_res:.2e}, gap {gap:.2e}")
    return LpSolution(LpStatus.OPTIMAL, x, y, val, iterations, prim, dual_res, gap, d)


@dataclass
class BasisPursuitResult:
    constant: float
    beta: np.ndarray
    value: float
    solution: LpSolution | None = None

    def __iter__(self):
        return iter((self.constant, self.beta, self.value))


def basis_pursuit(X, z, max_iter: int = 100_000) -> BasisPursuitResult:
    """min ||beta||_1 subject to X beta + c 1 = z with c free."""
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != z.size:
        raise ValueError("X must be n x m with n = len(z)")
    n, m = X.shape
    if np.all(z == z[0]):
        return BasisPursuitResult(float(z[0]), np.zeros(m), 0.0)
    # variables: c (free), beta+ (m), beta- (m)
    A = np.hstack([np.ones((n, 1)), X, -X])
    cost = np.concatenate([[0.0], np.ones(2 * m)])
    free = np.zeros(2 * m + 1, dtype=bool)
    free[0] = True
    sol = solve_lp(LinearProgram(cost, A, z, free), max_iter=max_iter)
    if sol.status == LpStatus.INFEASIBLE:
        raise InfeasibleError("target values are not representable by the given columns")
    if sol.status != LpStatus.OPTIMAL:
        raise NumericalError(f"basis pursuit returned status {sol.status.value}")
    beta = sol.primal[1:m + 1] - sol.primal[m + 1:]
    return BasisPursuitResult(float(sol.primal[0]), beta, float(np.abs(beta).sum()), sol)
