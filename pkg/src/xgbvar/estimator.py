"""Least-squares estimators over the midpoint lattice and a greedy booster baseline.

The constrained and penalized problems share one scheme: accelerated
proximal gradient on a working set of columns, an active-set polish of the
restricted solution, and a full-gradient scan (through the matrix-free
midpoint operator) that adds violating columns until the KKT conditions
hold over the whole index set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConvergenceError
from .ingest import tree_to_ensemble
from .lattice import (BasisAtom, Dataset, Grid, Leaf, MidpointOperator, RegressionTree,
                      SparseEnsemble, Split)

KKT_TOL = 1e-6
MAX_ITER = 50_000
REL_TOL = 1e-10


# ---------------------------------------------------------------- results


@dataclass
class FitResult:
    constant: float
    support: np.ndarray
    values: np.ndarray
    n_columns: int
    objective: float
    rss: float
    active_l1: float
    kkt_residual: float
    iterations: int
    mode: str
    budget: float | None = None
    alpha: float | None = None
    atoms: list[BasisAtom] = field(default_factory=list, repr=False)
    dims: int = 1

    @property
    def coefficients(self) -> np.ndarray:
        beta = np.zeros(self.n_columns)
        beta[self.support] = self.values
        return beta

    def ensemble(self) -> SparseEnsemble:
        return SparseEnsemble.from_terms(self.constant, zip(self.atoms, self.values), self.dims)

    def predict(self, points) -> np.ndarray:
        return self.ensemble()(points)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "c": self.constant,
            "V": self.budget,
            "alpha": self.alpha,
            "objective": self.objective,
            "rss": self.rss,
            "active_l1": self.active_l1,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "n_columns": self.n_columns,
            "beta": [dict(a.to_json(), column=int(k), coef=float(v))
                     for k, v, a in zip(self.support, self.values, self.atoms)],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


# ---------------------------------------------------------------- helpers


def project_l1_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto {x : ||x||_1 <= radius} (sort-based)."""
    if radius <= 0:
        return np.zeros_like(v)
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, u.size + 1)
    rho = np.flatnonzero(u * k > css - radius)[-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.maximum(a - theta, 0.0)


def soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _top_eig(G: np.ndarray) -> float:
    k = G.shape[0]
    if k <= 200:
        return float(np.linalg.eigvalsh(G)[-1])
    # power iteration with a 5% margin so the FISTA step stays safe
    v = np.ones(k) / math.sqrt(k)
    lam = 0.0
    for _ in range(60):
        w = G @ v
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if abs(nrm - lam) <= 1e-4 * nrm:
            lam = nrm
            break
        lam = nrm
    return 1.05 * lam


class _Restricted:
    """Quadratic ||y - A b||^2 over centered columns A, kept in Gram form."""

    def __init__(self, A: np.ndarray, y: np.ndarray):
        self.G = A.T @ A
        self.h = A.T @ y
        self.yy = float(y @ y)
        k = self.G.shape[0]
        self.lip = max(2.0 * _top_eig(self.G), 1e-300) if k else 1e-300

    def obj(self, b):
        return self.yy - 2.0 * float(self.h @ b) + float(b @ self.G @ b)

    def neg_grad(self, b):
        return 2.0 * (self.h - self.G @ b)


def _fista(q: _Restricted, b0, prox, penalty, max_iter):
    """FISTA with gradient-based adaptive restart; returns (b, iterations)."""
    x = b0.copy()
    z = x.copy()
    t = 1.0
    f_prev = q.obj(x) + penalty(x)
    step = 1.0 / q.lip
    calm = 0
    for it in range(1, max_iter + 1):
        x_new = prox(z + step * q.neg_grad(z), step)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        if float((z - x_new) @ (x_new - x)) > 0:
            t_new = 1.0
            z = x_new.copy()
        else:
            z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
        if it % 10:
            continue
        f = q.obj(x) + penalty(x)
        if abs(f_prev - f) <= REL_TOL * max(abs(f), 1e-300):
            calm += 1
            if calm >= 2:
                return x, it
        else:
            calm = 0
        f_prev = f
    return x, max_iter


def _active_set(Q, p, w, budget=None, max_iter=2000):
    """Exact minimizer of 0.5 w'Qw - p'w over w >= 0 (and sum(w) = budget if given).

    Primal active-set iterations started from the feasible point ``w``.
    Returns (w, nu) where nu is the multiplier of the sum constraint (0 without one).
    """
    m = w.size
    P = w > 0
    nu = 0.0
    scale = 1.0 + float(np.abs(p).max(initial=0.0))

    def solve(Pidx):
        QP = Q[np.ix_(Pidx, Pidx)]
        if budget is None:
            return np.linalg.lstsq(QP, p[Pidx], rcond=None)[0], 0.0
        K = np.zeros((Pidx.size + 1, Pidx.size + 1))
        K[:-1, :-1] = QP
        K[:-1, -1] = 1.0
        K[-1, :-1] = 1.0
        sol = np.linalg.lstsq(K, np.concatenate([p[Pidx], [budget]]), rcond=None)[0]
        return sol[:-1], sol[-1]

    for _ in range(max_iter):
        # inner loop: move toward the unconstrained optimum on P, dropping blocked variables
        for _ in range(m + 1):
            Pidx = np.flatnonzero(P)
            if Pidx.size == 0:
                nu = 0.0
                break
            z, nu = solve(Pidx)
            if np.all(z > 0):
                w = np.zeros(m)
                w[Pidx] = z
                break
            neg = z <= 0
            wp = w[Pidx]
            step = float(np.min(wp[neg] / (wp[neg] - z[neg])))
            wp = wp + step * (z - wp)
            wp[neg & (wp <= 1e-15 * scale)] = 0.0
            wp[wp < 0] = 0.0
            w = np.zeros(m)
            w[Pidx] = wp
            P = w > 0
        dual = p - Q @ w - nu
        dual[P] = -np.inf
        j = int(np.argmax(dual))
        if dual[j] <= 1e-13 * scale:
            return w, nu
        P[j] = True
        if budget is None and not (w > 0).any():
            w = np.zeros(m)
    return w, nu


def _polish(q: _Restricted, b, V=None, alpha=0.0):
    """Active-set refinement of a FISTA point on the split variables b = w+ - w-."""
    k = b.size
    if k == 0:
        return b
    Q = 2.0 * np.block([[q.G, -q.G], [-q.G, q.G]])
    p = 2.0 * np.concatenate([q.h, -q.h]) - alpha
    w0 = np.concatenate([np.maximum(b, 0.0), np.maximum(-b, 0.0)])

    def total(x):
        return q.obj(x) + alpha * float(np.abs(x).sum())

    cands = [b]
    try:
        if V is not None:
            if w0.sum() < V * (1 - 1e-6):
                w, _ = _active_set(Q, p, w0)
                if w.sum() <= V * (1 + 1e-12):
                    cands.append(w[:k] - w[k:])
            if len(cands) == 1:
                start = w0 * (V / w0.sum()) if w0.sum() > 0 else np.eye(1, 2 * k, int(np.argmax(p))).ravel() * V
                w, nu = _active_set(Q, p, start, budget=V)
                if nu >= 0:
                    cands.append(w[:k] - w[k:])
        else:
            w, _ = _active_set(Q, p, w0)
            cands.append(w[:k] - w[k:])
    except np.linalg.LinAlgError:
        return b
    best = min(cands, key=total)
    return best


def _kkt(g: np.ndarray, beta_S: np.ndarray, S: np.ndarray, mu: float, slack: float,
         rsum: float) -> float:
    """Max violation of the optimality conditions given the negative gradient g = 2 X^T r."""
    res = [abs(rsum), max(0.0, float(np.abs(g).max(initial=0.0)) - mu), mu * max(slack, 0.0)]
    nz = np.abs(beta_S) > 0
    if nz.any():
        res.append(float(np.abs(g[S[nz]] - mu * np.sign(beta_S[nz])).max()))
    return float(max(res))


class _LatticeProblem:
    def __init__(self, dataset: Dataset, s: int, max_columns: int):
        self.dataset = dataset
        self.grid = Grid.from_points(dataset.points)
        self.op = MidpointOperator(self.grid, s, dataset.points, max_columns=max_columns)
        self.y = np.asarray(dataset.responses, dtype=float)
        self.ybar = float(self.y.mean())
        self.yc = self.y - self.ybar

    def centered(self, idx):
        A = self.op.columns(idx)
        return A - A.mean(axis=0)

    def fit_values(self, W, b):
        """Intercept, raw residual and fitted values for coefficients b on columns W."""
        Xb = self.op.columns(W) @ b if len(W) else np.zeros(self.op.n)
        c = float(np.mean(self.y - Xb))
        r = self.y - c - Xb
        return c, r

    def result(self, W, b, mode, objective_fn, kkt, iters, budget=None, alpha=None):
        keep = np.abs(b) > 0
        W = np.asarray(W, dtype=np.int64)[keep]
        b = b[keep]
        c, r = self.fit_values(W, b)
        rss = float(r @ r)
        order = np.argsort(W)
        W, b = W[order], b[order]
        return FitResult(c, W, b, self.op.n_columns, objective_fn(rss, b), rss,
                         float(np.abs(b).sum()), kkt, iters, mode, budget, alpha,
                         [self.op.atom(int(k)) for k in W], self.dataset.d)


def _initial_set(g: np.ndarray, size: int) -> list[int]:
    size = min(size, g.size)
    if size == 0:
        return []
    idx = np.argpartition(-np.abs(g), size - 1)[:size]
    return [int(i) for i in idx[np.argsort(-np.abs(g[idx]), kind="stable")]]


def _grow(W: list[int], g: np.ndarray, thresh: float, limit: int) -> list[int]:
    mask = np.abs(g) > thresh
    mask[W] = False
    cand = np.flatnonzero(mask)
    if cand.size == 0:
        return []
    if cand.size > limit:
        part = np.argpartition(-np.abs(g[cand]), limit - 1)[:limit]
        cand = cand[part]
    return [int(i) for i in cand[np.argsort(-np.abs(g[cand]), kind="stable")]]


def _solve(dataset, s, mode, param, tol, max_iter, max_columns, work_size, raise_on_fail):
    prob = _LatticeProblem(dataset, s, max_columns)
    op = prob.op
    iters = 0
    if mode == "constrained":
        V = float(param)

        def objective_fn(rss, b):
            return rss
    else:
        alpha = float(param)

        def objective_fn(rss, b):
            return rss + alpha * float(np.abs(b).sum())

    g0 = 2.0 * op.rmatvec(prob.yc)
    gscale = 1.0 + float(np.abs(g0).max(initial=0.0))
    trivial = (mode == "constrained" and V == 0.0) or (mode == "penalized" and
                                                        np.abs(g0).max(initial=0.0) <= alpha)
    if op.n_columns == 0 or trivial or np.all(prob.yc == 0):
        W, b = [], np.zeros(0)
        mu = float(np.abs(g0).max(initial=0.0)) if mode == "constrained" else alpha
        if mode == "constrained" and np.all(prob.yc == 0):
            mu = 0.0
        kkt = _kkt(g0, b, np.zeros(0, dtype=np.int64), mu, V if mode == "constrained" else 0.0,
                   float(prob.yc.sum()))
        if mode == "penalized":
            kkt = max(0.0, float(np.abs(g0).max(initial=0.0)) - alpha)
        return prob.result(W, b, mode, objective_fn, kkt, 0, V if mode == "constrained" else None,
                           None if mode == "constrained" else alpha)

    W = _initial_set(g0, work_size)
    b = np.zeros(len(W))
    inner_tol = 1e-3 * tol
    fista_cap = 200
    for outer in range(200):
        A = prob.centered(W)
        q = _Restricted(A, prob.yc)
        if mode == "constrained":
            def prox(v, step):
                return project_l1_ball(v, V)

            def penalty(x):
                return 0.0
        else:
            def prox(v, step):
                return soft_threshold(v, alpha * step)

            def penalty(x):
                return alpha * float(np.abs(x).sum())
        for rnd in range(50):
            b, it = _fista(q, b, prox, penalty, max(1, min(max_iter - iters, fista_cap * (rnd + 1))))
            iters += it
            b = _polish(q, b, V=V) if mode == "constrained" else _polish(q, b, alpha=alpha)
            gW = q.neg_grad(b)
            if mode == "constrained":
                binding = np.abs(b).sum() >= V * (1 - 1e-9)
                mu = float(np.abs(gW).max(initial=0.0)) if binding else 0.0
                slack = V - np.abs(b).sum()
            else:
                mu, slack = alpha, 0.0
            kw = _kkt(gW, b, np.arange(len(W)), mu, slack, 0.0)
            if kw <= inner_tol or iters >= max_iter:
                break
        c, r = prob.fit_values(W, b)
        g = 2.0 * op.rmatvec(r)
        if mode == "constrained":
            binding = np.abs(b).sum() >= V * (1 - 1e-9)
            nzmu = np.abs(g[np.asarray(W, dtype=np.int64)][np.abs(b) > 0]) if len(W) else np.zeros(0)
            mu = float(nzmu.max(initial=0.0)) if binding else 0.0
            slack = V - float(np.abs(b).sum())
        else:
            mu, slack = alpha, 0.0
        kkt = _kkt(g, b, np.asarray(W, dtype=np.int64), mu, slack, float(r.sum()))
        new = _grow(W, g, mu + inner_tol, min(max(16, len(W) // 2), 64))
        if not new:
            if kkt <= tol or iters >= max_iter:
                break
            # no new columns but inner problem not tight enough; keep iterating
            if iters >= max_iter:
                break
            continue
        W = W + new
        b = np.concatenate([b, np.zeros(len(new))])
        if iters >= max_iter:
            break
    res = prob.result(W, b, mode, objective_fn, kkt, iters, V if mode == "constrained" else None,
                      None if mode == "constrained" else alpha)
    if res.kkt_residual > tol and raise_on_fail:
        raise ConvergenceError(f"{mode} fit stopped with KKT residual {res.kkt_residual:.3e}",
                               residual=res.kkt_residual)
    return res


def constrained_lse(dataset: Dataset, s: int, V: float, tol: float = KKT_TOL,
                    max_iter: int = MAX_ITER, max_columns: int = 50_000_000,
                    work_size: int = 64, raise_on_fail: bool = False) -> FitResult:
    """min sum_i (y_i - c - (X beta)_i)^2 subject to ||beta||_1 <= V over the midpoint design."""
    if not V >= 0:
        raise ValueError("budget V must be >= 0")
    if s < 1:
        raise ValueError("depth bound must be >= 1")
    return _solve(dataset, s, "constrained", V, tol, max_iter, max_columns, work_size, raise_on_fail)


def penalized_lse(dataset: Dataset, s: int, alpha: float, tol: float = KKT_TOL,
                  max_iter: int = MAX_ITER, max_columns: int = 50_000_000,
                  work_size: int = 64, raise_on_fail: bool = False) -> FitResult:
    """min sum_i (y_i - c - (X beta)_i)^2 + alpha ||beta||_1 over the midpoint design."""
    if not alpha >= 0:
        raise ValueError("alpha must be >= 0")
    if s < 1:
        raise ValueError("depth bound must be >= 1")
    return _solve(dataset, s, "penalized", alpha, tol, max_iter, max_columns, work_size, raise_on_fail)


def dual_alpha(dataset: Dataset, s: int, V: float, fit: FitResult | None = None) -> float:
    """Penalty level at which the penalized problem reproduces the V-constrained fit."""
    fit = fit if fit is not None else constrained_lse(dataset, s, V)
    if fit.active_l1 < V * (1 - 1e-9):
        return 0.0
    grid = Grid.from_points(dataset.points)
    op = MidpointOperator(grid, s, dataset.points)
    r = dataset.responses - fit.predict(dataset.points)
    return float(np.abs(2.0 * op.rmatvec(r)).max(initial=0.0))


# ---------------------------------------------------------------- snapping


def snap_atom(atom: BasisAtom, grid: Grid) -> BasisAtom | str | None:
    """Midpoint version of one atom on ``grid``.

    Returns the snapped atom, the string ``"one"`` when the atom is 1 at every
    grid point, or None when it is 0 at every grid point.
    """
    lower, upper = [], []
    for j, l in atom.lower:
        v = grid.values[j]
        if l <= v[0]:
            continue
        if l > v[-1]:
            return None
        m = int(np.searchsorted(v, l, side="left")) - 1
        lower.append((j, (v[m] + v[m + 1]) / 2.0))
    for j, u in atom.upper:
        v = grid.values[j]
        if u > v[-1]:
            continue
        if u <= v[0]:
            return None
        m = int(np.searchsorted(v, u, side="left")) - 1
        upper.append((j, (v[m] + v[m + 1]) / 2.0))
    if not lower and not upper:
        return "one"
    out = BasisAtom(tuple(lower), tuple(upper))
    return None if out.is_empty() else out


def snap_to_midpoints(ens: SparseEnsemble, grid: Grid, s: int) -> SparseEnsemble:
    """Move every threshold to the midpoint lattice without changing values on the grid."""
    if grid.dims < ens.dims:
        raise ValueError("grid has fewer coordinates than the ensemble")
    constant = ens.constant
    terms = []
    for atom, coef in ens.atoms.items():
        if atom.order > s:
            raise ValueError(f"atom {atom!r} deeper than s={s}")
        snapped = snap_atom(atom, grid)
        if snapped == "one":
            constant += coef
        elif snapped is not None:
            terms.append((snapped, coef))
    return SparseEnsemble.from_terms(constant, terms, grid.dims)


def objective_value(dataset: Dataset, ens: SparseEnsemble, alpha: float) -> float:
    r = dataset.responses - ens(dataset.points)
    return float(r @ r) + float(alpha) * ens.weight


# ---------------------------------------------------------------- greedy booster


@dataclass(frozen=True)
class BoostConfig:
    max_depth: int
    alpha: float = 0.0
    lam: float = 0.0
    rounds: int = 10
    learning_rate: float = 1.0
    min_gain: float = 0.0

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.alpha < 0 or self.lam < 0:
            raise ValueError("penalties must be >= 0")


def _score(G, H, alpha, lam):
    return soft_threshold(G, alpha) ** 2 / (H + lam)


def _grow_tree(X, g, h, idx, depth, cfg: BoostConfig, mids) -> Leaf | Split:
    G, H = g[idx].sum(), h[idx].sum()
    leaf = Leaf(float(-soft_threshold(G, cfg.alpha) / (H + cfg.lam) * cfg.learning_rate))
    if depth >= cfg.max_depth or idx.size < 2:
        return leaf
    parent = _score(G, H, cfg.alpha, cfg.lam)
    best = None
    for j in range(X.shape[1]):
        m = mids[j]
        if m.size == 0:
            continue
        xs = X[idx, j]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        cg = np.concatenate([[0.0], np.cumsum(g[idx][order])])
        ch = np.concatenate([[0.0], np.cumsum(h[idx][order])])
        nl = np.searchsorted(xs, m, side="left")
        ok = (nl > 0) & (nl < idx.size)
        if not ok.any():
            continue
        k = np.flatnonzero(ok)
        GL, HL = cg[nl[k]], ch[nl[k]]
        gain = 0.5 * (_score(GL, HL, cfg.alpha, cfg.lam)
                      + _score(G - GL, H - HL, cfg.alpha, cfg.lam) - parent)
        a = int(np.argmax(gain))
        if best is None or gain[a] > best[0]:
            best = (float(gain[a]), j, float(m[k[a]]))
    if best is None or best[0] <= cfg.min_gain:
        return leaf
    _, j, t = best
    right = X[idx, j] >= t
    return Split(j, t, _grow_tree(X, g, h, idx[~right], depth + 1, cfg, mids),
                 _grow_tree(X, g, h, idx[right], depth + 1, cfg, mids))


def greedy_boost(dataset: Dataset, config: BoostConfig) -> list[RegressionTree]:
    """Second-order exact-greedy boosting with squared loss and L1/L2 leaf penalties.

    The first returned tree is the constant initialization at mean(y).
    Splits are restricted to midpoints of the training values.
    """
    X, y = dataset.points, dataset.responses
    mids = Grid.from_points(X).midpoints
    trees = [RegressionTree(Leaf(float(y.mean())))]
    pred = np.full(y.size, float(y.mean()))
    h = np.full(y.size, 2.0)
    idx = np.arange(y.size)
    for _ in range(config.rounds):
        g = 2.0 * (pred - y)
        tree = RegressionTree(_grow_tree(X, g, h, idx, 0, config, mids))
        trees.append(tree)
        pred = pred + tree(X)
    return trees


def boost_objective(dataset: Dataset, trees: Sequence[RegressionTree], alpha: float) -> float:
    """Training RSS plus alpha times the leaf-weight L1 norm of the non-constant trees."""
    pred = np.zeros(dataset.n)
    pen = 0.0
    for t in trees:
        pred += t(dataset.points)
        if t.depth > 0:
            pen += float(np.abs(t.leaves()).sum())
    r = dataset.responses - pred
    return float(r @ r) + float(alpha) * pen


def trees_to_ensemble(trees: Sequence[RegressionTree], dims: int) -> SparseEnsemble:
    total = SparseEnsemble(0.0, {}, dims)
    for t in trees:
        total = total + tree_to_ensemble(t, dims)
    return total


def dual_pair(dataset: Dataset, s: int, V: float) -> tuple[float, FitResult, FitResult]:
    """(alpha, constrained fit, penalized fit at alpha) for a budget V."""
    con = constrained_lse(dataset, s, V)
    alpha = dual_alpha(dataset, s, V, con)
    return alpha, con, penalized_lse(dataset, s, alpha)
