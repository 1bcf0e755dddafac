"""Random inputs and brute-force oracles shared by the test modules."""

import itertools

import numpy as np

from xgbvar.lattice import BasisAtom, SparseEnsemble


def rand_ensemble(rng, d, s, k=6, nthr=3, half_grid=True):
    """Random ensemble with atoms of order <= s on a small threshold set per axis."""
    if half_grid:
        ths = [np.sort(rng.choice(np.arange(-6, 7), nthr, replace=False)) / 2 for _ in range(d)]
    else:
        ths = [np.sort(rng.uniform(-3, 3, nthr)) for _ in range(d)]
    terms = []
    for _ in range(k):
        lo, up = {}, {}
        for _ in range(int(rng.integers(1, s + 1))):
            j = int(rng.integers(d))
            if rng.random() < 0.5 and j not in lo:
                lo[j] = float(rng.choice(ths[j]))
            elif j not in up:
                up[j] = float(rng.choice(ths[j]))
        atom = BasisAtom.make(lo, up)
        if not atom.is_empty():
            terms.append((atom, float(rng.normal())))
    return SparseEnsemble.from_terms(float(rng.normal()), terms, d)


def rand_step_1d(rng, jumps):
    """1D step function as a sum of up-steps 1(x >= t) with random heights."""
    ts = np.sort(rng.choice(np.arange(-40, 41), jumps, replace=False)) / 4
    terms = [(BasisAtom.make({0: float(t)}), float(rng.normal())) for t in ts]
    return SparseEnsemble.from_terms(float(rng.normal()), terms, 1)


def cell_values(ens):
    """Values on one representative per refinement cell, with the 1D axes used."""
    axes = []
    for j in range(ens.dims):
        t = ens.thresholds()[j] if j < len(ens.thresholds()) else np.zeros(0)
        t = np.unique(t)
        first = t[0] - 1 if t.size else 0.0
        axes.append(np.concatenate([[first], t]))
    pts = np.array(list(itertools.product(*axes)))
    return ens(pts).reshape([a.size for a in axes]), axes


def hk_quasi_volume(ens, signs):
    """HK variation anchored at the corner ``signs`` by summing mixed differences.

    For each nonempty coordinate set S the function is frozen at the anchor
    end of the other axes and the Vitali variation of that face is the sum of
    absolute S-fold differences over neighbouring cells.
    """
    vals, _ = cell_values(ens)
    d = vals.ndim
    total = 0.0
    for r in range(1, d + 1):
        for S in itertools.combinations(range(d), r):
            face = vals
            for j in reversed(range(d)):
                if j not in S:
                    face = np.take(face, 0 if signs[j] < 0 else -1, axis=j)
            diff = face
            for axis in range(face.ndim):
                diff = np.diff(diff, axis=axis)
            total += float(np.abs(diff).sum())
    return total


def centered(X, y):
    A = X - X.mean(axis=0)
    return A, y - y.mean()


def _unique_columns(A):
    keep, seen = [], []
    for k in range(A.shape[1]):
        col = A[:, k]
        if np.allclose(col, 0):
            continue
        if any(np.allclose(col, c) or np.allclose(col, -c) for c in seen):
            continue
        seen.append(col)
        keep.append(k)
    return A[:, keep]


def constrained_oracle(X, y, V):
    """min ||y - c - X b||^2 subject to ||b||_1 <= V by enumerating faces.

    Candidates are unconstrained least squares on every independent support
    and the equality-constrained quadratic on every signed support with
    sum(sign * b) = V; the best feasible candidate is optimal.
    """
    A, yc = centered(np.asarray(X, float), np.asarray(y, float))
    A = _unique_columns(A)
    m = A.shape[1]
    best = float(yc @ yc)
    rank_cap = np.linalg.matrix_rank(A) if m else 0
    for k in range(1, rank_cap + 1):
        for S in itertools.combinations(range(m), k):
            AS = A[:, S]
            if np.linalg.matrix_rank(AS) < k:
                continue
            G, h = AS.T @ AS, AS.T @ yc
            b = np.linalg.solve(G, h)
            if np.abs(b).sum() <= V + 1e-12:
                r = yc - AS @ b
                best = min(best, float(r @ r))
            for sig in itertools.product((-1.0, 1.0), repeat=k):
                sig = np.array(sig)
                K = np.block([[G, sig[:, None]], [sig[None, :], np.zeros((1, 1))]])
                sol = np.linalg.solve(K, np.concatenate([h, [V]]))
                b = sol[:-1]
                if np.all(b * sig >= -1e-12):
                    r = yc - AS @ b
                    best = min(best, float(r @ r))
    return best


def penalized_oracle(X, y, alpha):
    """min ||y - c - X b||^2 + alpha ||b||_1 by enumerating signed supports."""
    A, yc = centered(np.asarray(X, float), np.asarray(y, float))
    A = _unique_columns(A)
    m = A.shape[1]
    best = float(yc @ yc)
    rank_cap = np.linalg.matrix_rank(A) if m else 0
    for k in range(1, rank_cap + 1):
        for S in itertools.combinations(range(m), k):
            AS = A[:, S]
            if np.linalg.matrix_rank(AS) < k:
                continue
            G, h = AS.T @ AS, AS.T @ yc
            for sig in itertools.product((-1.0, 1.0), repeat=k):
                sig = np.array(sig)
                b = np.linalg.solve(G, h - alpha / 2 * sig)
                if np.all(b * sig >= -1e-12):
                    r = yc - AS @ b
                    best = min(best, float(r @ r) + alpha * float(np.abs(b).sum()))
    return best


ACCEPTANCE = {}


def record(criterion, ok, detail):
    """Store and print one PASS/FAIL line for an acceptance criterion."""
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return ok
