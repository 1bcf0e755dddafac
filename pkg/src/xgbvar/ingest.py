"""XGBoost JSON dumps, CSV datasets, and tree-to-atom decomposition."""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ParseError
from .lattice import BasisAtom, Dataset, Grid, Leaf, RegressionTree, SparseEnsemble, Split

_FEATURE = re.compile(r"^f(\d+)$")


@dataclass(frozen=True)
class ModelDump:
    trees: tuple[RegressionTree, ...]
    feature_count: int
    base_score: float = 0.0
    source_metadata: str = ""

    def to_ensemble(self) -> SparseEnsemble:
        total = SparseEnsemble(self.base_score, {}, max(self.feature_count, 1))
        for tree in self.trees:
            total = total + tree_to_ensemble(tree, self.feature_count)
        return total

    def predict(self, points) -> np.ndarray:
        X = np.asarray(points, dtype=float)
        out = np.full(X.shape[0] if X.ndim == 2 else 1, self.base_score)
        for tree in self.trees:
            out = out + tree(X)
        return out


def tree_to_ensemble(tree: RegressionTree, dims: int | None = None) -> SparseEnsemble:
    """One atom per root-to-leaf path; l_j is the largest >= threshold, u_j the smallest < one."""
    constant = 0.0
    terms: list[tuple[BasisAtom, float]] = []

    def rec(node, lower: dict, upper: dict):
        nonlocal constant
        if isinstance(node, Leaf):
            if any(j in upper and lower[j] >= upper[j] for j in lower):
                return  # contradictory splits: unreachable leaf
            if not lower and not upper:
                constant += node.weight
            elif node.weight != 0.0:
                terms.append((BasisAtom.make(lower, upper), node.weight))
            return
        j, t = node.feature, node.threshold
        up = dict(upper)
        up[j] = min(up.get(j, math.inf), t)
        rec(node.left, lower, up)
        lo = dict(lower)
        lo[j] = max(lo.get(j, -math.inf), t)
        rec(node.right, lo, upper)

    rec(tree.root, {}, {})
    if dims is None:
        dims = max(tree.max_feature + 1, 1)
    return SparseEnsemble.from_terms(constant, terms, dims)


def _feature_index(split: Any, names: Mapping[str, int] | None) -> int:
    if isinstance(split, bool):
        raise ParseError(f"unknown feature {split!r}")
    if isinstance(split, int):
        if split < 0:
            raise ParseError(f"negative feature index {split}")
        return split
    if isinstance(split, str):
        if names is not None and split in names:
            return int(names[split])
        m = _FEATURE.match(split)
        if m:
            return int(m.group(1))
        if split.isdigit():
            return int(split)
    raise ParseError(f"unknown feature {split!r}")


def _build_tree(obj: Any, names) -> RegressionTree:
    # Accept nested dumps ("children") and flat node lists.
    if isinstance(obj, list):
        nodes = {}
        for node in obj:
            if not isinstance(node, dict) or "nodeid" not in node:
                raise ParseError("flat tree entries need a nodeid")
            nodes[node["nodeid"]] = node
        if 0 not in nodes:
            raise ParseError("flat tree lacks root node 0")
        root_id = 0
    elif isinstance(obj, dict):
        nodes = {}

        def collect(node):
            if not isinstance(node, dict) or "nodeid" not in node:
                raise ParseError("tree node must be an object with a nodeid")
            if node["nodeid"] in nodes:
                raise ParseError(f"duplicate nodeid {node['nodeid']}")
            nodes[node["nodeid"]] = node
            for child in node.get("children", []):
                collect(child)
        collect(obj)
        root_id = obj["nodeid"]
    else:
        raise ParseError("tree must be an object or a list of nodes")

    seen = set()

    def build(nid):
        if nid not in nodes:
            raise ParseError(f"missing node {nid}")
        if nid in seen:
            raise ParseError(f"node {nid} reached twice")
        seen.add(nid)
        node = nodes[nid]
        if "leaf" in node:
            w = node["leaf"]
            if not isinstance(w, (int, float)) or isinstance(w, bool) or not math.isfinite(w):
                raise ParseError(f"node {nid}: leaf value must be a finite number")
            return Leaf(float(w))
        for key in ("split", "split_condition", "yes", "no"):
            if key not in node:
                raise ParseError(f"node {nid}: missing field {key!r}")
        yes, no = node["yes"], node["no"]
        if "missing" in node and node["missing"] not in (yes, no):
            raise ParseError(f"node {nid}: missing branch {node['missing']!r} is neither yes nor no")
        t = node["split_condition"]
        if not isinstance(t, (int, float)) or isinstance(t, bool) or not math.isfinite(t):
            raise ParseError(f"node {nid}: split_condition must be a finite number")
        return Split(_feature_index(node["split"], names), float(t), build(yes), build(no))

    return RegressionTree(build(root_id))


def parse_xgb_dump(text: str | bytes, feature_names: Sequence[str] | None = None,
                   base_score: float | None = None, feature_count: int | None = None) -> ModelDump:
    """Parse the JSON dump format: a list of trees whose yes-branch is x < split_condition.

    A wrapper object ``{"trees": [...], "base_score": b, "feature_count": d}``
    is also accepted; ``base_score`` becomes the ensemble constant.
    """
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    meta = ""
    if isinstance(doc, dict) and "trees" in doc:
        if base_score is None and "base_score" in doc:
            base_score = doc["base_score"]
        if feature_names is None:
            feature_names = doc.get("feature_names")
        if feature_count is None:
            feature_count = doc.get("feature_count")
        meta = str(doc.get("metadata", ""))
        doc = doc["trees"]
    elif isinstance(doc, dict):
        doc = [doc]
    if not isinstance(doc, list):
        raise ParseError("dump must be a JSON array of trees")
    names = {n: i for i, n in enumerate(feature_names)} if feature_names is not None else None
    trees = tuple(_build_tree(t, names) for t in doc)
    used = max((t.max_feature for t in trees), default=-1) + 1
    if feature_count is None:
        feature_count = max(used, 1)
    if not isinstance(feature_count, int) or feature_count < used:
        raise ParseError(f"feature_count {feature_count} smaller than used features {used}")
    try:
        b = float(base_score or 0.0)
    except (TypeError, ValueError) as exc:
        raise ParseError("base_score must be numeric") from exc
    return ModelDump(trees, feature_count, b, meta)


def dump_tree(tree: RegressionTree) -> dict:
    """Inverse of the parser for one tree, in the nested dump layout."""
    counter = [0]

    def rec(node, depth):
        nid = counter[0]
        counter[0] += 1
        if isinstance(node, Leaf):
            return {"nodeid": nid, "leaf": node.weight}
        out = {"nodeid": nid, "depth": depth, "split": f"f{node.feature}",
               "split_condition": node.threshold}
        left = rec(node.left, depth + 1)
        right = rec(node.right, depth + 1)
        out.update(yes=left["nodeid"], no=right["nodeid"], missing=left["nodeid"],
                   children=[left, right])
        return out
    return rec(tree.root, 0)


def load_dataset(text: str, response_column: str) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration as exc:
        raise ParseError("empty CSV") from exc
    header = [h.strip() for h in header]
    if response_column not in header:
        raise ParseError(f"response column {response_column!r} not found")
    yi = header.index(response_column)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"line {lineno}: expected {len(header)} cells, got {len(row)}")
        vals = []
        for cell in row:
            try:
                v = float(cell)
            except ValueError as exc:
                raise ParseError(f"line {lineno}: non-numeric cell {cell!r}") from exc
            if not math.isfinite(v):
                raise ParseError(f"line {lineno}: non-finite cell {cell!r}")
            vals.append(v)
        rows.append(vals)
    if not rows:
        raise ParseError("CSV has no data rows")
    if len(header) < 2:
        raise ParseError("CSV needs at least one feature column")
    M = np.array(rows)
    y = M[:, yi]
    X = np.delete(M, yi, axis=1)
    return Dataset(X, y)


def grid_from_dataset(dataset: Dataset) -> Grid:
    return Grid.from_points(dataset.points)
