import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import rand_ensemble
from xgbvar.errors import BudgetError
from xgbvar.lattice import (BasisAtom, Dataset, Grid, LatticeDictionary, Leaf, MidpointOperator,
                            RegressionTree, SparseEnsemble, Split, column_types, design_matrix,
                            evaluate_on_product_grid)


def test_atom_indicator_is_half_open():
    a = BasisAtom.make({0: 0.0}, {1: 1.0})
    X = np.array([[0.0, 0.5], [-1e-9, 0.5], [0.0, 1.0], [3.0, -2.0]])
    assert a.indicator(X).tolist() == [1, 0, 0, 1]


def test_atom_empty_when_interval_collapses():
    assert BasisAtom.make({0: 1.0}, {0: 1.0}).is_empty()
    assert not BasisAtom.make({0: 0.0}, {0: 1.0}).is_empty()


def test_atom_json_round_trip():
    a = BasisAtom.make({2: -0.5, 0: 1.5}, {1: 3.0})
    assert BasisAtom.from_json(a.to_json()) == a
    assert a.order == 3


def test_ensemble_merges_and_drops():
    a = BasisAtom.make({0: 0.0})
    e = SparseEnsemble.from_terms(1.0, [(a, 2.0), (a, -2.0), (BasisAtom.make({0: 1.0}, {0: 1.0}), 5.0)], 1)
    assert len(e) == 0 and e.constant == 1.0 and e.dropped_empty == 1


def test_ensemble_arithmetic_pointwise():
    rng = np.random.default_rng(1)
    f, g = rand_ensemble(rng, 2, 2), rand_ensemble(rng, 2, 2)
    X = rng.uniform(-4, 4, (200, 2))
    assert np.allclose((f + g)(X), f(X) + g(X))
    assert np.allclose((f - 2.5 * g)(X), f(X) - 2.5 * g(X))
    assert np.allclose((-f)(X), -f(X))


def test_ensemble_json_round_trip():
    rng = np.random.default_rng(2)
    e = rand_ensemble(rng, 3, 3, k=10)
    assert SparseEnsemble.from_json(e.to_json()) == e


def test_product_grid_matches_pointwise():
    rng = np.random.default_rng(3)
    e = rand_ensemble(rng, 3, 2, k=12)
    axes = [np.sort(rng.uniform(-4, 4, 7)) for _ in range(3)]
    pts = np.array(list(itertools.product(*axes)))
    assert np.allclose(evaluate_on_product_grid(e, axes).ravel(), e(pts))


def test_product_grid_budget():
    e = SparseEnsemble(0.0, {BasisAtom.make({0: 0.0}): 1.0}, 2)
    with pytest.raises(BudgetError):
        evaluate_on_product_grid(e, [np.arange(100.0), np.arange(100.0)], budget=1000)


def test_tree_left_branch_is_strict_less():
    tree = RegressionTree(Split(0, 0.5, Leaf(-1.0), Split(1, 2.0, Leaf(2.0), Leaf(3.0))))
    X = np.array([[0.49, 9], [0.5, 1.0], [0.5, 2.0]])
    assert tree(X).tolist() == [-1.0, 2.0, 3.0]
    assert tree.depth == 2 and tree.max_feature == 1


def test_grid_midpoints_and_ranks():
    g = Grid.from_points(np.array([[2.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    assert g.sizes == (3, 2)
    assert g.midpoints[0].tolist() == [0.5, 1.5]
    assert g.ranks(np.array([[1.0, 1.0]])).tolist() == [[1, 1]]
    with pytest.raises(ValueError):
        g.ranks(np.array([[0.3, 1.0]]))


def test_dataset_rejects_non_finite():
    with pytest.raises(ValueError):
        Dataset(np.array([[0.0], [np.nan]]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 1)), np.zeros(2))


def _brute_force_columns(values, s):
    """Enumerate the midpoint dictionary by hand: every (L, U, thresholds) choice, empty ones dropped."""
    d = len(values)
    mids = [(v[1:] + v[:-1]) / 2 for v in values]
    cols = set()
    for L in itertools.chain.from_iterable(itertools.combinations(range(d), r) for r in range(d + 1)):
        for U in itertools.chain.from_iterable(itertools.combinations(range(d), r) for r in range(d + 1)):
            if not L and not U or len(L) + len(U) > s:
                continue
            for ls in itertools.product(*[mids[j] for j in L]):
                for us in itertools.product(*[mids[j] for j in U]):
                    atom = BasisAtom.make(dict(zip(L, ls)), dict(zip(U, us)))
                    if not atom.is_empty():
                        cols.add(atom)
    return cols


@pytest.mark.parametrize("d,s,k", [(1, 1, 4), (1, 2, 4), (2, 1, 3), (2, 2, 3), (3, 2, 3)])
def test_dictionary_matches_enumeration(d, s, k):
    values = [np.arange(k, dtype=float) for _ in range(d)]
    dic = LatticeDictionary([(v[1:] + v[:-1]) / 2 for v in values], s)
    got = {dic.atom(i) for i in np.flatnonzero(dic.nonempty_mask())}
    assert got == _brute_force_columns(values, s)


def test_column_count_two_dims_depth_two():
    # 2 midpoints per axis and 8 (L, U) types with |L| + |U| <= 2, each with
    # 2 or 4 threshold choices: 4*2 + 6*4 = 32 columns. In the two
    # same-axis interval types, 3 of 4 choices are empty, leaving 26 nonempty.
    pts = np.array(list(itertools.product([0.0, 1.0, 2.0], repeat=2)))
    dm = design_matrix(Grid.from_points(pts), 2, pts)
    assert dm.matrix.shape == (9, 32)
    assert int(dm.dictionary.nonempty_mask().sum()) == 26
    assert len(_brute_force_columns([np.arange(3.0)] * 2, 2)) == 26


def test_column_types_bounded_and_distinct():
    types = column_types(3, 2)
    assert all(len(t.L) + len(t.U) <= 2 for t in types)
    assert len(types) == len(set(types))


@settings(max_examples=25, deadline=None)
@given(d=st.integers(1, 3), s=st.integers(1, 3), n=st.integers(2, 9), seed=st.integers(0, 10_000))
def test_operator_matches_dense_design(d, s, n, seed):
    rng = np.random.default_rng(seed)
    X = np.round(rng.normal(size=(n, d)), 1)
    op = MidpointOperator(Grid.from_points(X), s, X)
    D = op.columns(np.arange(op.n_columns))
    beta = rng.normal(size=op.n_columns)
    r = rng.normal(size=n)
    assert np.allclose(op.matvec(beta), D @ beta)
    assert np.allclose(op.rmatvec(r), D.T @ r)
    for k in rng.choice(op.n_columns, size=min(5, op.n_columns), replace=False):
        assert np.array_equal(op.atom(int(k)).indicator(X), D[:, k])
