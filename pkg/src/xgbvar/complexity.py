"""L1 complexity, Hardy-Krause variation and related measures for piecewise-constant ensembles."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import BudgetError
from .lattice import (DEFAULT_BUDGET, BasisAtom, ColumnType, Grid, LatticeDictionary,
                      SparseEnsemble, design_matrix, evaluate_on_product_grid)
from .lp import basis_pursuit

TOL = 1e-7
MAX_CELLS = 50_000


# ---------------------------------------------------------------- anchors


@dataclass(frozen=True, order=True)
class Anchor:
    """Corner at infinity: signs[j] is -1 for a_j = -inf and +1 for a_j = +inf."""

    signs: tuple[int, ...]

    def __post_init__(self):
        signs = tuple(int(s) for s in self.signs)
        if not signs or any(s not in (-1, 1) for s in signs):
            raise ValueError("anchor signs must be a non-empty tuple over {-1, +1}")
        object.__setattr__(self, "signs", signs)

    @classmethod
    def parse(cls, label: str) -> "Anchor":
        if not label or any(ch not in "+-" for ch in label):
            raise ValueError(f"bad anchor label {label!r}")
        return cls(tuple(-1 if ch == "-" else 1 for ch in label))

    @classmethod
    def lower(cls, d: int) -> "Anchor":
        return cls((-1,) * d)

    @property
    def label(self) -> str:
        return "".join("-" if s < 0 else "+" for s in self.signs)

    @property
    def d(self) -> int:
        return len(self.signs)

    def flipped(self, j: int) -> "Anchor":
        s = list(self.signs)
        s[j] = -s[j]
        return Anchor(tuple(s))

    def __str__(self) -> str:
        return self.label


def all_anchors(d: int) -> list[Anchor]:
    return [Anchor(s) for s in itertools.product((-1, 1), repeat=d)]


# ---------------------------------------------------------------- lattice LPs


def representatives(thresholds: Sequence[np.ndarray]) -> list[np.ndarray]:
    """One point per cell of the threshold lattice: v_1 - 1, v_1, ..., v_m per coordinate."""
    out = []
    for t in thresholds:
        t = np.asarray(t, dtype=float)
        out.append(np.concatenate([[t[0] - 1.0], t]) if t.size else np.zeros(1))
    return out


def _product_points(axes: Sequence[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _lattice_setup(ens: SparseEnsemble):
    thr = ens.thresholds()
    axes = representatives(thr)
    cells = math.prod(a.size for a in axes)
    if cells > MAX_CELLS:
        raise BudgetError(f"refinement grid has {cells} cells (limit {MAX_CELLS})", size=cells)
    z = evaluate_on_product_grid(ens, axes).ravel()
    return thr, _product_points(axes), z


def _reduce_columns(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop all-zero and duplicate columns; returns (matrix, kept column indices)."""
    nz = np.flatnonzero(M.any(axis=0))
    if nz.size == 0:
        return M[:, :0], nz
    _, first = np.unique(M[:, nz].T, axis=0, return_index=True)
    keep = nz[np.sort(first)]
    return M[:, keep], keep


def _solve_dictionary(M: np.ndarray, z: np.ndarray):
    Mr, keep = _reduce_columns(M)
    res = basis_pursuit(Mr, z)
    beta = np.zeros(M.shape[1])
    beta[keep] = res.beta
    return res.constant, beta, res.value


def vxgb_points(grid: Grid, s: int, points, z) -> float:
    """Smallest L1 mass of a depth-``s`` midpoint-lattice ensemble matching ``z`` at ``points``."""
    z = np.asarray(z, dtype=float).ravel()
    if not np.all(np.isfinite(z)):
        raise ValueError("target values must be finite")
    if np.all(z == z[0]):
        return 0.0
    M = design_matrix(grid, s, np.asarray(points, dtype=float)).matrix
    return _solve_dictionary(M, z)[2]


def _ensemble_lp(ens: SparseEnsemble, s: int, disjoint: bool) -> float:
    if not ens.atoms:
        return 0.0
    thr, pts, z = _lattice_setup(ens)
    if np.all(z == z[0]):
        return 0.0
    dic = LatticeDictionary(thr, s, disjoint=disjoint)
    M = dic.matrix(pts, budget=DEFAULT_BUDGET * 4)
    return _solve_dictionary(M, z)[2]


def vxgb_ensemble(ens: SparseEnsemble, s: int) -> float:
    """Exact depth-``s`` complexity of a piecewise-constant ensemble.

    Solved as basis pursuit over atoms on the ensemble's own threshold
    lattice, matching the function on one representative point per cell.
    """
    if s < 1:
        raise ValueError("depth bound must be >= 1")
    return _ensemble_lp(ens, s, disjoint=False)


def v_tilde(ens: SparseEnsemble, s: int) -> float:
    """Complexity with the dictionary restricted to atoms with disjoint L and U."""
    if s < 1:
        raise ValueError("depth bound must be >= 1")
    return _ensemble_lp(ens, s, disjoint=True)


# ---------------------------------------------------------------- 1D


def _require_1d(f: SparseEnsemble):
    if f.dims != 1:
        raise ValueError("expected a one-dimensional ensemble")


def _values_1d(f: SparseEnsemble) -> np.ndarray:
    axes = representatives(f.thresholds())
    return evaluate_on_product_grid(f, axes)


def total_variation_1d(f: SparseEnsemble) -> float:
    _require_1d(f)
    return float(np.abs(np.diff(_values_1d(f))).sum())


def vxgb_1d(f: SparseEnsemble, s: int) -> float:
    """Closed form in one dimension: TV for s = 1, (TV + |f(+inf) - f(-inf)|) / 2 for s >= 2."""
    _require_1d(f)
    if s < 1:
        raise ValueError("depth bound must be >= 1")
    vals = _values_1d(f)
    tv = float(np.abs(np.diff(vals)).sum())
    if s == 1:
        return tv
    return (tv + abs(float(vals[-1] - vals[0]))) / 2.0


# ---------------------------------------------------------------- Hardy-Krause


def oriented_expansion(ens: SparseEnsemble, anchor: Anchor,
                       max_terms: int = 2_000_000) -> dict[tuple[tuple[int, float], ...], float]:
    """Rewrite ``ens`` in atoms oriented toward ``anchor``.

    Coordinate j uses 1(x_j >= t) when a_j = -inf and 1(x_j < t) when
    a_j = +inf.  Keys are sorted ((j, t), ...) tuples; the empty key holds
    the constant.
    """
    if anchor.d < ens.dims:
        raise ValueError(f"anchor has {anchor.d} coordinates, ensemble needs {ens.dims}")
    out: dict[tuple, float] = {(): ens.constant}
    total = 0
    for atom, coef in ens.atoms.items():
        lo = dict(atom.lower)
        up = dict(atom.upper)
        factors = []
        for j in sorted(set(lo) | set(up)):
            if anchor.signs[j] < 0:
                if j in lo and j in up:
                    opts = [(1.0, lo[j]), (-1.0, max(lo[j], up[j]))]
                elif j in lo:
                    opts = [(1.0, lo[j])]
                else:
                    opts = [(1.0, None), (-1.0, up[j])]
            else:
                if j in lo and j in up:
                    opts = [(1.0, up[j]), (-1.0, min(lo[j], up[j]))]
                elif j in up:
                    opts = [(1.0, up[j])]
                else:
                    opts = [(1.0, None), (-1.0, lo[j])]
            factors.append((j, opts))
        total += 1 << sum(len(o) - 1 for _, o in factors)
        if total > max_terms:
            raise BudgetError(f"orientation expansion exceeds {max_terms} terms", size=total)
        for combo in itertools.product(*[o for _, o in factors]):
            sign = 1.0
            key = []
            for (j, _), (sg, t) in zip(factors, combo):
                sign *= sg
                if t is not None:
                    key.append((j, t))
            key = tuple(key)
            out[key] = out.get(key, 0.0) + sign * coef
    return out


def oriented_ensemble(ens: SparseEnsemble, anchor: Anchor) -> SparseEnsemble:
    """The same function written only in atoms oriented toward ``anchor``."""
    exp = oriented_expansion(ens, anchor)
    terms = []
    for key, coef in exp.items():
        if not key:
            continue
        lower = {j: t for j, t in key if anchor.signs[j] < 0}
        upper = {j: t for j, t in key if anchor.signs[j] > 0}
        terms.append((BasisAtom.make(lower, upper), coef))
    return SparseEnsemble.from_terms(exp[()], terms, max(ens.dims, 1))


def hk_variation(ens: SparseEnsemble, a: Anchor) -> float:
    """Hardy-Krause variation anchored at ``a``: total mass of the oriented coefficients."""
    exp = oriented_expansion(ens, a)
    return float(sum(abs(v) for k, v in exp.items() if k))


# ---------------------------------------------------------------- report


@dataclass
class ComplexityReport:
    v_xgb: float
    hk: dict[str, float]
    s: int
    d: int
    v_tilde: float | None = None
    bounds_ok: bool = field(init=False)

    def __post_init__(self):
        self.bounds_ok = sandwich_holds(self.v_xgb, self.hk.values(), self.s, self.d)

    def to_json(self) -> dict:
        return {"v_xgb": self.v_xgb, "hk": dict(self.hk), "v_tilde": self.v_tilde,
                "bounds_ok": self.bounds_ok, "s": self.s}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def sandwich_holds(v: float, hk_values: Iterable[float], s: int, d: int, tol: float = TOL) -> bool:
    hk = list(hk_values)
    scale = min(2 ** s - 1, 2 ** d)
    return max(hk) / scale <= v + tol and v <= min(hk) + tol


def complexity_report(ens: SparseEnsemble, s: int, include_tilde: bool = False) -> ComplexityReport:
    v = vxgb_ensemble(ens, s)
    hk = {a.label: hk_variation(ens, a) for a in all_anchors(ens.dims)}
    vt = v_tilde(ens, s) if include_tilde else None
    return ComplexityReport(v, hk, s, ens.dims, vt)


# ---------------------------------------------------------------- symmetry


def flip_axis(ens: SparseEnsemble, j: int, t: float) -> SparseEnsemble:
    """Reflect coordinate ``j`` about ``t/2`` keeping right-continuity.

    1(x_j >= l) becomes 1(x_j < t - l) and 1(x_j < u) becomes 1(x_j >= t - u).
    """
    if not 0 <= j < ens.dims:
        raise ValueError(f"coordinate {j} out of range")
    t = float(t)
    out = {}
    for atom, coef in ens.atoms.items():
        lower = [(k, v) for k, v in atom.lower if k != j]
        upper = [(k, v) for k, v in atom.upper if k != j]
        lower += [(j, t - v) for k, v in atom.upper if k == j]
        upper += [(j, t - v) for k, v in atom.lower if k == j]
        out[BasisAtom(tuple(lower), tuple(upper))] = coef
    return SparseEnsemble(ens.constant, out, ens.dims)


# ---------------------------------------------------------------- infimal convolution


def anchor_dictionary(thresholds: Sequence[np.ndarray], s: int, anchor: Anchor) -> LatticeDictionary:
    """Atoms oriented toward ``anchor`` on sets S with 0 < |S| <= s."""
    d = len(thresholds)
    types = []
    for k in range(1, min(s, d) + 1):
        for S in itertools.combinations(range(d), k):
            L = tuple(j for j in S if anchor.signs[j] < 0)
            U = tuple(j for j in S if anchor.signs[j] > 0)
            types.append(ColumnType(L, U))
    return LatticeDictionary(thresholds, s, types=types)


def infimal_conv_decomposition(ens: SparseEnsemble, s: int) -> dict[str, SparseEnsemble]:
    """Optimal split f = sum_a f_a minimizing sum_a HK_a(f_a)."""
    d = ens.dims
    anchors = all_anchors(d)
    if not ens.atoms:
        parts = {a.label: SparseEnsemble(0.0, {}, d) for a in anchors}
        parts[anchors[0].label] = SparseEnsemble(ens.constant, {}, d)
        return parts
    thr, pts, z = _lattice_setup(ens)
    dics = [anchor_dictionary(thr, s, a) for a in anchors]
    M = np.hstack([dic.matrix(pts, budget=DEFAULT_BUDGET * 4) for dic in dics])
    c, beta, _ = _solve_dictionary(M, z)
    parts = {}
    off = 0
    for a, dic in zip(anchors, dics):
        terms = [(dic.atom(k), beta[off + k]) for k in range(dic.size) if beta[off + k] != 0.0]
        off += dic.size
        parts[a.label] = SparseEnsemble.from_terms(c if a == anchors[0] else 0.0, terms, d)
    return parts


def infimal_conv_hk(ens: SparseEnsemble, s: int) -> float:
    """min over f = sum_a f_a of sum_a HK_a(f_a), over anchor-oriented lattice atoms."""
    parts = infimal_conv_decomposition(ens, s)
    return float(sum(hk_variation(f, Anchor.parse(lbl)) for lbl, f in parts.items()))


# ---------------------------------------------------------------- L^p replication


def lp_replication_penalty(weights, p: float, L: int) -> float:
    """Total ||w / L||_p^p over L copies of a tree, i.e. L^(1-p) ||w||_p^p."""
    p = float(p)
    if not p > 1.0:
        raise ValueError("exponent p must exceed 1")
    if int(L) != L or L < 1:
        raise ValueError("replication count must be a positive integer")
    w = np.abs(np.asarray(weights, dtype=float).ravel())
    return float(np.sum(w ** p)) / float(L) ** (p - 1.0)
