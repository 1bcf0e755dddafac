"""Grids, basis atoms, sparse ensembles, regression trees and design operators.

A basis atom is the indicator

    prod_{j in L} 1(x_j >= l_j) * prod_{j in U} 1(x_j < u_j)

and an ensemble is a constant plus a finite signed combination of atoms.
Coordinates are 0-based throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import BudgetError

DEFAULT_BUDGET = 5_000_000


# ---------------------------------------------------------------- Grid


@dataclass(frozen=True)
class Grid:
    """Per-coordinate sorted distinct values and the midpoints between them."""

    values: tuple[np.ndarray, ...]

    def __post_init__(self):
        vals = []
        for j, v in enumerate(self.values):
            a = np.asarray(v, dtype=float).ravel()
            if a.size < 1:
                raise ValueError(f"coordinate {j} has no values")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"coordinate {j} has non-finite values")
            if a.size > 1 and not np.all(np.diff(a) > 0):
                raise ValueError(f"coordinate {j} values are not strictly increasing")
            a.setflags(write=False)
            vals.append(a)
        object.__setattr__(self, "values", tuple(vals))

    @classmethod
    def from_points(cls, points) -> "Grid":
        X = np.asarray(points, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return cls(tuple(np.unique(X[:, j]) for j in range(X.shape[1])))

    @property
    def dims(self) -> int:
        return len(self.values)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(v.size for v in self.values)

    @property
    def midpoints(self) -> tuple[np.ndarray, ...]:
        return tuple((v[:-1] + v[1:]) / 2.0 for v in self.values)

    def ranks(self, points) -> np.ndarray:
        """Index of each coordinate of each point within ``values`` (points must lie on the grid)."""
        X = _as_points(points, self.dims)
        R = np.empty(X.shape, dtype=np.int64)
        for j, v in enumerate(self.values):
            r = np.searchsorted(v, X[:, j])
            if np.any(r >= v.size) or np.any(v[np.minimum(r, v.size - 1)] != X[:, j]):
                raise ValueError(f"coordinate {j}: point not on the grid")
            R[:, j] = r
        return R


# ---------------------------------------------------------------- atoms


def _as_points(x, d: int | None = None) -> np.ndarray:
    X = np.asarray(x, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X[None, :] if d is None or X.size == d else X[:, None]
    if d is not None and X.shape[1] < d:
        raise ValueError(f"points have {X.shape[1]} coordinates, need {d}")
    return X


def _canon(side: Mapping[int, float] | Iterable[tuple[int, float]]) -> tuple[tuple[int, float], ...]:
    items = side.items() if isinstance(side, Mapping) else side
    out = []
    for j, t in items:
        j = int(j)
        t = float(t)
        if j < 0:
            raise ValueError(f"negative coordinate index {j}")
        if not math.isfinite(t):
            raise ValueError(f"non-finite threshold on coordinate {j}")
        out.append((j, t))
    out.sort()
    for a, b in zip(out, out[1:]):
        if a[0] == b[0]:
            raise ValueError(f"coordinate {a[0]} repeated on one side of an atom")
    return tuple(out)


@dataclass(frozen=True, order=True)
class BasisAtom:
    """Indicator of {x_j >= l_j for (j, l_j) in lower} and {x_j < u_j for (j, u_j) in upper}."""

    lower: tuple[tuple[int, float], ...] = ()
    upper: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lower", _canon(self.lower))
        object.__setattr__(self, "upper", _canon(self.upper))
        if not self.lower and not self.upper:
            raise ValueError("an atom needs at least one threshold")

    @classmethod
    def make(cls, lower=None, upper=None) -> "BasisAtom":
        return cls(_canon(lower or {}), _canon(upper or {}))

    @property
    def L(self) -> tuple[int, ...]:
        return tuple(j for j, _ in self.lower)

    @property
    def U(self) -> tuple[int, ...]:
        return tuple(j for j, _ in self.upper)

    @property
    def order(self) -> int:
        return len(self.lower) + len(self.upper)

    @property
    def max_coord(self) -> int:
        return max(self.L + self.U)

    def is_empty(self) -> bool:
        """True when some coordinate has l_j >= u_j, so the indicator is identically 0."""
        up = dict(self.upper)
        return any(j in up and l >= up[j] for j, l in self.lower)

    def indicator(self, points) -> np.ndarray:
        X = _as_points(points, self.max_coord + 1)
        out = np.ones(X.shape[0], dtype=bool)
        for j, l in self.lower:
            out &= X[:, j] >= l
        for j, u in self.upper:
            out &= X[:, j] < u
        return out

    def to_json(self) -> dict:
        return {"lower": {str(j): t for j, t in self.lower}, "upper": {str(j): t for j, t in self.upper}}

    @classmethod
    def from_json(cls, obj: Mapping) -> "BasisAtom":
        return cls.make({int(k): v for k, v in obj.get("lower", {}).items()},
                        {int(k): v for k, v in obj.get("upper", {}).items()})

    def __repr__(self) -> str:
        parts = [f"x{j}>={t:g}" for j, t in self.lower] + [f"x{j}<{t:g}" for j, t in self.upper]
        return "1(" + ", ".join(parts) + ")"


def eval_atom(atom: BasisAtom, x) -> np.ndarray | int:
    """Evaluate an atom at one point (returns 0/1) or at rows of a matrix."""
    arr = np.asarray(x, dtype=float)
    vals = atom.indicator(arr).astype(np.int64)
    return int(vals[0]) if arr.ndim <= 1 else vals


# ---------------------------------------------------------------- ensembles


class SparseEnsemble:
    """Constant plus a finite signed combination of basis atoms.

    Coefficients on identical atoms merge, exact zeros are dropped, and atoms
    with an empty interval on some coordinate are discarded (counted in
    ``dropped_empty``).
    """

    __slots__ = ("_constant", "_atoms", "_dims", "dropped_empty")

    def __init__(self, constant: float = 0.0, atoms: Mapping[BasisAtom, float] | None = None,
                 dims: int | None = None):
        merged: dict[BasisAtom, float] = {}
        dropped = 0
        for atom, coef in (atoms or {}).items():
            coef = float(coef)
            if not math.isfinite(coef):
                raise ValueError("non-finite coefficient")
            if atom.is_empty():
                dropped += 1
                continue
            merged[atom] = merged.get(atom, 0.0) + coef
        merged = {a: c for a, c in sorted(merged.items()) if c != 0.0}
        need = max((a.max_coord + 1 for a in merged), default=1)
        if dims is None:
            dims = need
        elif dims < need:
            raise ValueError(f"dims={dims} but atoms use coordinate {need - 1}")
        if not math.isfinite(float(constant)):
            raise ValueError("non-finite constant")
        self._constant = float(constant)
        self._atoms = MappingProxyType(merged)
        self._dims = int(dims)
        self.dropped_empty = dropped

    @classmethod
    def from_terms(cls, constant: float, terms: Iterable[tuple[BasisAtom, float]],
                   dims: int | None = None) -> "SparseEnsemble":
        acc: dict[BasisAtom, float] = {}
        for atom, coef in terms:
            acc[atom] = acc.get(atom, 0.0) + float(coef)
        return cls(constant, acc, dims)

    @property
    def constant(self) -> float:
        return self._constant

    @property
    def atoms(self) -> Mapping[BasisAtom, float]:
        return self._atoms

    @property
    def dims(self) -> int:
        return self._dims

    @property
    def weight(self) -> float:
        return float(sum(abs(c) for c in self._atoms.values()))

    @property
    def depth(self) -> int:
        return max((a.order for a in self._atoms), default=0)

    def __len__(self) -> int:
        return len(self._atoms)

    def __iter__(self) -> Iterator[tuple[BasisAtom, float]]:
        return iter(self._atoms.items())

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseEnsemble):
            return NotImplemented
        return self._constant == other._constant and dict(self._atoms) == dict(other._atoms)

    def __hash__(self):
        return hash((self._constant, tuple(self._atoms.items())))

    def __repr__(self) -> str:
        return f"SparseEnsemble(c={self._constant:g}, atoms={len(self._atoms)}, weight={self.weight:g})"

    def with_dims(self, dims: int) -> "SparseEnsemble":
        return SparseEnsemble(self._constant, self._atoms, dims)

    def __call__(self, points) -> np.ndarray:
        X = _as_points(points, self._dims)
        out = np.full(X.shape[0], self._constant)
        for atom, coef in self._atoms.items():
            out[atom.indicator(X)] += coef
        return out

    def __add__(self, other: "SparseEnsemble | float") -> "SparseEnsemble":
        if isinstance(other, (int, float)):
            return SparseEnsemble(self._constant + float(other), self._atoms, self._dims)
        terms = list(self._atoms.items()) + list(other._atoms.items())
        return SparseEnsemble.from_terms(self._constant + other._constant, terms,
                                         max(self._dims, other._dims))

    def __mul__(self, a: float) -> "SparseEnsemble":
        a = float(a)
        return SparseEnsemble(a * self._constant, {k: a * v for k, v in self._atoms.items()}, self._dims)

    __rmul__ = __mul__
    __radd__ = __add__

    def __neg__(self) -> "SparseEnsemble":
        return self * -1.0

    def __sub__(self, other: "SparseEnsemble") -> "SparseEnsemble":
        return self + (-other)

    def thresholds(self) -> tuple[np.ndarray, ...]:
        """Sorted distinct thresholds used on each coordinate."""
        per = [set() for _ in range(self._dims)]
        for atom in self._atoms:
            for j, t in atom.lower + atom.upper:
                per[j].add(t)
        return tuple(np.array(sorted(p), dtype=float) for p in per)

    def to_json(self) -> dict:
        return {
            "dims": self._dims,
            "constant": self._constant,
            "atoms": [dict(a.to_json(), coef=c) for a, c in self._atoms.items()],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "SparseEnsemble":
        terms = [(BasisAtom.from_json(a), float(a["coef"])) for a in obj.get("atoms", [])]
        return cls.from_terms(float(obj.get("constant", 0.0)), terms, obj.get("dims"))


def eval_ensemble(ens: SparseEnsemble, x):
    arr = np.asarray(x, dtype=float)
    vals = ens(arr)
    return float(vals[0]) if arr.ndim <= 1 and vals.size == 1 else vals


def evaluate_on_product_grid(ens: SparseEnsemble, axes: Sequence[np.ndarray],
                             budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """Values of ``ens`` on the tensor product of sorted 1D ``axes``.

    Each atom covers an index box, so the values come from a d-dimensional
    difference array followed by cumulative sums.
    """
    axes = [np.asarray(a, dtype=float) for a in axes]
    d = len(axes)
    if d < ens.dims:
        raise ValueError("need one axis per coordinate")
    shape = tuple(a.size for a in axes)
    size = math.prod(s + 1 for s in shape)
    if size > budget:
        raise BudgetError(f"product grid of {size} cells exceeds budget {budget}", size=size)
    diff = np.zeros(tuple(s + 1 for s in shape))
    for atom, coef in ens.atoms.items():
        lo = [0] * d
        hi = list(shape)
        for j, l in atom.lower:
            lo[j] = int(np.searchsorted(axes[j], l, side="left"))
        for j, u in atom.upper:
            hi[j] = min(hi[j], int(np.searchsorted(axes[j], u, side="left")))
        if any(a >= b for a, b in zip(lo, hi)):
            continue
        for corner in itertools.product((0, 1), repeat=d):
            idx = tuple(hi[j] if c else lo[j] for j, c in enumerate(corner))
            diff[idx] += coef if sum(corner) % 2 == 0 else -coef
    for j in range(d):
        diff = np.cumsum(diff, axis=j)
    return diff[tuple(slice(0, s) for s in shape)] + ens.constant


# ---------------------------------------------------------------- trees


@dataclass(frozen=True)
class Leaf:
    weight: float


@dataclass(frozen=True)
class Split:
    """Internal node: ``left`` covers x_j < t, ``right`` covers x_j >= t."""

    feature: int
    threshold: float
    left: "Leaf | Split"
    right: "Leaf | Split"


@dataclass(frozen=True)
class RegressionTree:
    root: Leaf | Split

    @property
    def depth(self) -> int:
        def rec(node):
            if isinstance(node, Leaf):
                return 0
            return 1 + max(rec(node.left), rec(node.right))
        return rec(self.root)

    @property
    def max_feature(self) -> int:
        def rec(node):
            if isinstance(node, Leaf):
                return -1
            return max(node.feature, rec(node.left), rec(node.right))
        return rec(self.root)

    def leaves(self) -> list[float]:
        out = []

        def rec(node):
            if isinstance(node, Leaf):
                out.append(node.weight)
            else:
                rec(node.left)
                rec(node.right)
        rec(self.root)
        return out

    def __call__(self, points) -> np.ndarray:
        X = _as_points(points, self.max_feature + 1 if self.max_feature >= 0 else None)
        out = np.empty(X.shape[0])

        def rec(node, idx):
            if idx.size == 0:
                return
            if isinstance(node, Leaf):
                out[idx] = node.weight
                return
            go_right = X[idx, node.feature] >= node.threshold
            rec(node.left, idx[~go_right])
            rec(node.right, idx[go_right])
        rec(self.root, np.arange(X.shape[0]))
        return out


def eval_tree(tree: RegressionTree, x):
    arr = np.asarray(x, dtype=float)
    vals = tree(arr)
    return float(vals[0]) if arr.ndim <= 1 and vals.size == 1 else vals


# ---------------------------------------------------------------- data


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        X = np.array(self.points, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.array(self.responses, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("points must be a non-empty n x d matrix")
        if y.size != X.shape[0]:
            raise ValueError("responses length does not match number of points")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite entries")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "points", X)
        object.__setattr__(self, "responses", y)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


# ---------------------------------------------------------------- design


@dataclass(frozen=True)
class ColumnType:
    L: tuple[int, ...]
    U: tuple[int, ...]

    @property
    def axes(self) -> tuple[tuple[int, bool], ...]:
        """(coordinate, is_lower) for every threshold slot, L slots first."""
        return tuple((j, True) for j in self.L) + tuple((j, False) for j in self.U)

    @property
    def disjoint(self) -> bool:
        return not set(self.L) & set(self.U)


def column_types(d: int, s: int, disjoint: bool = False) -> list[ColumnType]:
    """All (L, U) with 0 < |L| + |U| <= s, in lexicographic order."""
    subsets = [c for k in range(0, min(s, d) + 1) for c in itertools.combinations(range(d), k)]
    out = []
    for L in subsets:
        for U in subsets:
            if 0 < len(L) + len(U) <= s and not (disjoint and set(L) & set(U)):
                out.append(ColumnType(L, U))
    out.sort(key=lambda t: (t.L, t.U))
    return out


class LatticeDictionary:
    """Atoms with thresholds drawn from fixed per-coordinate threshold lists.

    Column k corresponds to a (type, index tuple) pair; index tuples run in
    C order over the type's threshold slots.
    """

    def __init__(self, thresholds: Sequence[np.ndarray], s: int, disjoint: bool = False,
                 types: Sequence[ColumnType] | None = None):
        self.thresholds = tuple(np.asarray(t, dtype=float) for t in thresholds)
        self.s = int(s)
        d = len(self.thresholds)
        self.types = list(types) if types is not None else column_types(d, s, disjoint)
        self.shapes = [tuple(self.thresholds[j].size for j, _ in t.axes) for t in self.types]
        sizes = [math.prod(sh) for sh in self.shapes]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    def locate(self, k: int) -> tuple[int, tuple[int, ...]]:
        ti = int(np.searchsorted(self.offsets, k, side="right")) - 1
        idx = np.unravel_index(int(k - self.offsets[ti]), self.shapes[ti])
        return ti, tuple(int(i) for i in idx)

    def atom(self, k: int) -> BasisAtom:
        ti, idx = self.locate(k)
        t = self.types[ti]
        lower = [(j, self.thresholds[j][i]) for (j, _), i in zip(t.axes[:len(t.L)], idx[:len(t.L)])]
        upper = [(j, self.thresholds[j][i]) for (j, _), i in zip(t.axes[len(t.L):], idx[len(t.L):])]
        return BasisAtom(tuple(lower), tuple(upper))

    def key(self, k: int) -> tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...], tuple[int, ...]]:
        ti, idx = self.locate(k)
        t = self.types[ti]
        return t.L, t.U, idx[:len(t.L)], idx[len(t.L):]

    def nonempty_mask(self) -> np.ndarray:
        """False for columns whose atom is identically zero (l_j >= u_j)."""
        mask = np.ones(self.size, dtype=bool)
        for t, sh, off in zip(self.types, self.shapes, self.offsets):
            if t.disjoint or math.prod(sh) == 0:
                continue
            ok = np.ones(sh, dtype=bool)
            for a, (j, is_lo) in enumerate(t.axes):
                if not is_lo:
                    continue
                b = len(t.L) + t.U.index(j) if j in t.U else None
                if b is None:
                    continue
                lo = self.thresholds[j].reshape([-1 if i == a else 1 for i in range(len(sh))])
                up = self.thresholds[j].reshape([-1 if i == b else 1 for i in range(len(sh))])
                ok &= lo < up
            mask[off:off + ok.size] = ok.ravel()
        return mask

    def matrix(self, points, budget: int = DEFAULT_BUDGET) -> np.ndarray:
        """Dense 0/1 matrix of every column evaluated at ``points``."""
        X = _as_points(points, len(self.thresholds))
        n = X.shape[0]
        if n * self.size > budget:
            raise BudgetError(f"design with |J|={self.size} columns and n={n} rows exceeds budget {budget}",
                              size=self.size)
        out = np.zeros((n, self.size), dtype=np.uint8)
        for t, sh, off in zip(self.types, self.shapes, self.offsets):
            k = math.prod(sh)
            if k == 0:
                continue
            block = np.ones((n,) + sh, dtype=bool)
            for a, (j, is_lo) in enumerate(t.axes):
                thr = self.thresholds[j]
                ind = X[:, j][:, None] >= thr[None, :] if is_lo else X[:, j][:, None] < thr[None, :]
                block &= ind.reshape((n,) + tuple(-1 if i == a else 1 for i in range(len(sh))))
            out[:, off:off + k] = block.reshape(n, k)
        return out


@dataclass(frozen=True)
class DesignMatrix:
    matrix: np.ndarray
    dictionary: LatticeDictionary = field(repr=False)

    @property
    def columns(self) -> list:
        return [self.dictionary.key(k) for k in range(self.dictionary.size)]

    def atom(self, k: int) -> BasisAtom:
        return self.dictionary.atom(k)


def design_matrix(grid: Grid, s: int, dataset: Dataset | np.ndarray,
                  budget: int = DEFAULT_BUDGET) -> DesignMatrix:
    """Midpoint-lattice design over the index set J, columns ordered by (L, U, p, q)."""
    points = dataset.points if isinstance(dataset, Dataset) else dataset
    dic = LatticeDictionary(grid.midpoints, s)
    return DesignMatrix(dic.matrix(points, budget), dic)


class MidpointOperator:
    """Matrix-free midpoint design for points lying on ``grid``.

    Column order matches :func:`design_matrix`.  Products use the ranks of the
    data values: a lower-threshold slot at midpoint p is active for rank r iff
    p < r, an upper slot at q iff q >= r.  Both products reduce to prefix and
    suffix sums over one tensor per column type.
    """

    def __init__(self, grid: Grid, s: int, points, max_columns: int = 50_000_000):
        self.grid = grid
        self.dictionary = LatticeDictionary(grid.midpoints, s)
        if self.dictionary.size > max_columns:
            raise BudgetError(f"|J|={self.dictionary.size} exceeds {max_columns} columns",
                              size=self.dictionary.size)
        self.ranks = grid.ranks(points)
        self.n = self.ranks.shape[0]
        self.sizes = grid.sizes

    @property
    def n_columns(self) -> int:
        return self.dictionary.size

    def _rank_index(self, t: ColumnType) -> tuple[np.ndarray, ...]:
        return tuple(self.ranks[:, j] for j, _ in t.axes)

    def matvec(self, beta: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        dic = self.dictionary
        for t, sh, off in zip(dic.types, dic.shapes, dic.offsets):
            k = math.prod(sh)
            if k == 0:
                continue
            B = beta[off:off + k].reshape(sh)
            if not B.any():
                continue
            for a, (j, is_lo) in enumerate(t.axes):
                pad = [(0, 0)] * B.ndim
                if is_lo:
                    pad[a] = (1, 0)
                    B = np.cumsum(np.pad(B, pad), axis=a)
                else:
                    pad[a] = (0, 1)
                    B = np.flip(np.cumsum(np.flip(np.pad(B, pad), axis=a), axis=a), axis=a)
            out += B[self._rank_index(t)]
        return out

    def rmatvec(self, r: np.ndarray) -> np.ndarray:
        out = np.empty(self.n_columns)
        dic = self.dictionary
        for t, sh, off in zip(dic.types, dic.shapes, dic.offsets):
            k = math.prod(sh)
            if k == 0:
                continue
            full = tuple(self.sizes[j] for j, _ in t.axes)
            flat = np.ravel_multi_index(self._rank_index(t), full)
            T = np.bincount(flat, weights=r, minlength=math.prod(full)).reshape(full)
            for a, (j, is_lo) in enumerate(t.axes):
                if is_lo:
                    T = np.flip(np.cumsum(np.flip(T, axis=a), axis=a), axis=a)
                    T = np.take(T, np.arange(1, full[a]), axis=a)
                else:
                    T = np.take(np.cumsum(T, axis=a), np.arange(0, full[a] - 1), axis=a)
            out[off:off + k] = T.ravel()
        return out

    def columns(self, idx: Sequence[int]) -> np.ndarray:
        """Dense n x len(idx) block of selected columns."""
        idx = np.asarray(idx, dtype=np.int64)
        out = np.ones((self.n, idx.size))
        for c, k in enumerate(idx):
            ti, pos = self.dictionary.locate(int(k))
            for (j, is_lo), p in zip(self.dictionary.types[ti].axes, pos):
                r = self.ranks[:, j]
                out[:, c] *= (p < r) if is_lo else (p >= r)
        return out

    def column_means(self) -> np.ndarray:
        return self.rmatvec(np.full(self.n, 1.0 / self.n))

    def atom(self, k: int) -> BasisAtom:
        return self.dictionary.atom(k)
