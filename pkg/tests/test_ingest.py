import json
from pathlib import Path

import numpy as np
import pytest

from xgbvar.errors import ParseError
from xgbvar.ingest import dump_tree, load_dataset, parse_xgb_dump, tree_to_ensemble
from xgbvar.lattice import BasisAtom, Leaf, RegressionTree, Split

FIXTURES = Path(__file__).parent / "fixtures"


def _nested(split_feature="f0", leaf_left=-1.0, leaf_right=2.0, **extra):
    node = {"nodeid": 0, "depth": 0, "split": split_feature, "split_condition": 0.5,
            "yes": 1, "no": 2, "missing": 1,
            "children": [{"nodeid": 1, "leaf": leaf_left}, {"nodeid": 2, "leaf": leaf_right}]}
    node.update(extra)
    return node


def test_single_split_gives_one_atom_per_leaf():
    ens = parse_xgb_dump(json.dumps([_nested()])).to_ensemble()
    assert ens.constant == 0.0
    assert dict(ens.atoms) == {BasisAtom.make({0: 0.5}): 2.0, BasisAtom.make({}, {0: 0.5}): -1.0}


def test_repeated_feature_regions_by_brute_force():
    # x0 < 0 ? (x0 < -1 ? 1 : 2) : (x0 < 1 ? 3 : 4)
    tree = RegressionTree(Split(0, 0.0, Split(0, -1.0, Leaf(1), Leaf(2)),
                                Split(0, 1.0, Leaf(3), Leaf(4))))
    ens = tree_to_ensemble(tree)
    for x, want in [(-2, 1), (-1, 2), (-0.5, 2), (0, 3), (0.99, 3), (1, 4), (5, 4)]:
        assert ens(np.array([[x]]))[0] == want
    assert all(a.order <= 2 for a in ens.atoms)


def test_unreachable_leaf_dropped():
    tree = RegressionTree(Split(0, 0.0, Split(0, 1.0, Leaf(1.0), Leaf(99.0)), Leaf(5.0)))
    ens = tree_to_ensemble(tree)
    X = np.linspace(-3, 3, 61)[:, None]
    assert np.allclose(ens(X), tree(X))
    assert 99.0 not in ens.atoms.values()


def test_flat_and_named_features():
    flat = [{"nodeid": 0, "split": "age", "split_condition": 30, "yes": 1, "no": 2, "missing": 2},
            {"nodeid": 1, "leaf": 0.1}, {"nodeid": 2, "leaf": 0.3}]
    dump = parse_xgb_dump(json.dumps({"trees": [flat], "feature_names": ["income", "age"],
                                      "base_score": 0.5}))
    assert dump.feature_count == 2 and dump.base_score == 0.5
    assert dump.predict(np.array([[0, 29], [0, 30]])).tolist() == pytest.approx([0.6, 0.8])


@pytest.mark.parametrize("doc,msg", [
    ("{not json", "malformed"),
    (json.dumps([{"nodeid": 0, "split": "f0", "yes": 1, "no": 2}]), "split_condition"),
    (json.dumps([_nested(missing=7)]), "missing"),
    (json.dumps([_nested(split_feature="mystery")]), "unknown feature"),
    (json.dumps([_nested(leaf_left="x")]), "leaf"),
    (json.dumps([{"nodeid": 0, "split": "f0", "split_condition": 1, "yes": 1, "no": 1,
                  "children": [{"nodeid": 1, "leaf": 0}]}]), "twice"),
])
def test_malformed_dumps(doc, msg):
    with pytest.raises(ParseError, match=msg):
        parse_xgb_dump(doc)


def test_dump_tree_round_trip():
    tree = RegressionTree(Split(1, 0.25, Leaf(-1.5), Split(0, 2.0, Leaf(0.5), Leaf(3.0))))
    back = parse_xgb_dump(json.dumps([dump_tree(tree)])).trees[0]
    X = np.random.default_rng(0).uniform(-3, 3, (100, 2))
    assert np.array_equal(back(X), tree(X))


@pytest.mark.parametrize("path", sorted(FIXTURES.glob("*.json")), ids=lambda p: p.stem)
def test_fixture_predictions_match_tree_sum(path):
    dump = parse_xgb_dump(path.read_text())
    ens = dump.to_ensemble()
    X = np.random.default_rng(1).uniform(-1.5, 1.5, (1000, dump.feature_count))
    assert np.max(np.abs(ens(X) - dump.predict(X))) < 1e-9


def test_load_dataset():
    ds = load_dataset("a,y,b\n1,2,3\n4,5,6\n\n", "y")
    assert ds.points.tolist() == [[1, 3], [4, 6]] and ds.responses.tolist() == [2, 5]
    for bad in ("a,y\n1,zz\n", "a,y\n1,nan\n", "a,b\n1,2\n", "a,y\n1\n", "a,y\n"):
        with pytest.raises(ParseError):
            load_dataset(bad, "y")
