"""Dyadic packing family, its exact L2 identities, and the Assouad lower bound.

Every function here is piecewise polynomial of degree <= 1 in each
coordinate on the dyadic grid of mesh 2^-(l+2), so all integrals are done
with two-point Gauss-Legendre rules per grid cell, which is exact for the
products that appear (degree <= 2 per coordinate).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BudgetError

QUAD_BUDGET = 20_000_000  # quadrature nodes times family terms

_GAUSS = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])


def _check(m: int, k: int):
    if m < 0:
        raise ValueError(f"resolution must be >= 0, got {m}")
    if not 1 <= k <= 2 ** m:
        raise ValueError(f"index k={k} outside [1, {2 ** m}]")


def _cell_offset(m, k, x):
    w = 2.0 ** -m
    return np.asarray(x, dtype=float) - (k - 1) * w, w


def _scalar(x, out):
    return out.item() if np.ndim(x) == 0 else out


def psi(m: int, k: int, x):
    """+1 on the outer quarters of cell k at level m, -1 on its middle half, 0 elsewhere."""
    _check(m, k)
    u, w = _cell_offset(m, k, x)
    out = np.zeros(u.shape, dtype=np.int8)
    out[((u > 0) & (u < w / 4)) | ((u > 3 * w / 4) & (u < w))] = 1
    out[(u > w / 4) & (u < 3 * w / 4)] = -1
    return _scalar(x, out)


def psi_primitive(m: int, k: int, x):
    """Running integral of psi from 0 to x: a zero-mean zigzag with peak 2^-(m+2)."""
    _check(m, k)
    u, w = _cell_offset(m, k, x)
    out = np.where(u <= w / 4, u, np.where(u <= 3 * w / 4, w / 2 - u, u - w))
    out = np.where((u <= 0) | (u >= w), 0.0, out)
    return _scalar(x, out)


def haar_h(m: int, k: int, x):
    _check(m, k)
    u, w = _cell_offset(m, k, x)
    amp = 2.0 ** (m / 2)
    out = np.zeros(u.shape)
    out[(u > 0) & (u < w / 2)] = amp
    out[(u > w / 2) & (u < w)] = -amp
    return _scalar(x, out)


def gauss_nodes(level: int):
    """Two Gauss nodes per cell of the mesh 2^-level on [0, 1], with weights."""
    h = 2.0 ** -level
    left = np.arange(2 ** level) * h
    nodes = (left[:, None] + h * _GAUSS[None, :]).ravel()
    return nodes, np.full(nodes.size, h / 2)


def compositions(total: int, parts: int) -> list[tuple[int, ...]]:
    """Nonnegative integer vectors of the given length summing to total, lexicographic."""
    if parts == 1:
        return [(total,)]
    return [(a,) + rest for a in range(total + 1) for rest in compositions(total - a, parts - 1)]


def threshold_constant(s_bar: int, B: float = 1.0) -> float:
    return B * 2.0 ** (-4 * s_bar + 1) * (6 * math.log(2)) ** (s_bar - 1) * math.factorial(s_bar - 1)


def sample_size_threshold(s_bar: int, V: float, sigma: float, B: float = 1.0) -> float:
    """Smallest n for which the Assouad argument applies."""
    C = threshold_constant(s_bar, B)
    return max(math.exp(4 * s_bar ** 2) / C, 1.0 / C ** 2) * sigma ** 2 / V ** 2


def resolution_for(s_bar: int, n: int, V: float, sigma: float, B: float = 1.0) -> int:
    """Dyadic level l balancing bias against the KL budget; at least 1."""
    if sigma == 0:
        raise ValueError("the resolution rule needs sigma > 0")
    x = threshold_constant(s_bar, B) * n * V ** 2 / sigma ** 2
    if x <= math.e:
        return 1
    val = (math.log(x) - (s_bar - 1) * math.log(math.log(x))) / (3 * math.log(2))
    return max(1, math.ceil(val))


@dataclass(frozen=True)
class PackingFamily:
    s_bar: int
    l: int
    V: float
    box: tuple[float, ...]
    sigma: float = 1.0
    P: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    Q: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...] = field(init=False, repr=False)

    def __post_init__(self):
        box = tuple(float(m) for m in self.box)
        object.__setattr__(self, "box", box)
        if self.s_bar < 1:
            raise ValueError("s_bar must be >= 1")
        if self.l < 1:
            raise ValueError("l must be >= 1")
        if len(box) < self.s_bar:
            raise ValueError(f"box has {len(box)} widths, need at least s_bar={self.s_bar}")
        if any(not (m > 0 and math.isfinite(m)) for m in box):
            raise ValueError("box widths must be positive")
        if not self.V > 0:
            raise ValueError("V must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        P = tuple(compositions(self.l, self.s_bar))
        Q = tuple((p, i) for p in P
                  for i in itertools.product(*[range(1, 2 ** pj + 1) for pj in p]))
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Q", Q)

    @classmethod
    def for_sample_size(cls, d: int, s: int, V: float, sigma: float, n: int,
                        box=None) -> "PackingFamily":
        s_bar = min(s, d)
        box = tuple(box) if box is not None else (1.0,) * d
        return cls(s_bar, resolution_for(s_bar, n, V, sigma), V, box, sigma)

    @property
    def d(self) -> int:
        return len(self.box)

    @property
    def q(self) -> int:
        return len(self.Q)

    @property
    def scale(self) -> float:
        return self.V / math.sqrt(len(self.P))

    def unit(self, X) -> np.ndarray:
        """Map box points to [0,1]^s_bar, clamping to the closed box."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        M = np.asarray(self.box[:self.s_bar])
        return np.clip(X[:, :self.s_bar] / M + 0.5, 0.0, 1.0)

    def factor_tables(self, nodes_per_axis, fn=psi_primitive) -> list[np.ndarray]:
        """tables[j][term, node] = fn(p_j, i_j, node) for each family term."""
        return [np.array([fn(p[j], i[j], nodes_per_axis[j]) for p, i in self.Q], dtype=float)
                for j in range(self.s_bar)]

    def to_json(self) -> dict:
        return {"s_bar": self.s_bar, "l": self.l, "V": self.V, "box": list(self.box),
                "sigma": self.sigma}


def _check_eta(family: PackingFamily, eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float).ravel()
    if eta.size != family.q:
        raise ValueError(f"eta has length {eta.size}, family has q={family.q}")
    return eta


def _tensor_sum(coef, tables) -> np.ndarray:
    """sum_t coef[t] * prod_j tables[j][t, a_j] over the product grid of nodes."""
    letters = "abcdefghijklmnop"
    subscripts = ",".join(["t"] + [f"t{letters[j]}" for j in range(len(tables))])
    return np.einsum(subscripts + "->" + letters[:len(tables)], coef, *tables, optimize=True)


def f_eta_eval(family: PackingFamily, eta, X) -> np.ndarray:
    """Evaluate f_eta at box points; coordinates past s_bar are ignored."""
    eta = _check_eta(family, eta)
    U = family.unit(X)
    out = np.full(U.shape[0], 0.0)
    for t, (p, i) in enumerate(family.Q):
        if eta[t] == 0:
            continue
        prod = eta[t] * np.ones(U.shape[0])
        for j in range(family.s_bar):
            prod = prod * psi_primitive(p[j], i[j], U[:, j])
        out += prod
    return family.scale * out


def _grid_integral(family, coef, fn, power, budget):
    """Exact integral over [0,1]^s_bar of |sum coef * prod fn|^power (power 1 or 2)."""
    level = family.l + 2
    nodes, weights = gauss_nodes(level)
    size = nodes.size ** family.s_bar * family.q
    if size > budget:
        raise BudgetError(f"quadrature needs {size} node-terms, budget is {budget}", size=size)
    tables = family.factor_tables([nodes] * family.s_bar, fn)
    vals = _tensor_sum(np.asarray(coef, dtype=float), tables)
    integrand = np.abs(vals) if power == 1 else vals ** 2
    for _ in range(family.s_bar):
        integrand = np.tensordot(integrand, weights, axes=([0], [0]))
    return float(integrand)


def l2_distance_sq(family: PackingFamily, eta, eta2, budget: int = QUAD_BUDGET) -> float:
    """||f_eta - f_eta2||^2 under uniform p0, by direct integration of the difference."""
    delta = _check_eta(family, eta) - _check_eta(family, eta2)
    return family.scale ** 2 * _grid_integral(family, delta, psi_primitive, 2, budget)


def total_variation(family: PackingFamily, eta, budget: int = QUAD_BUDGET) -> float:
    """Total variation of the generating measure: the L1 norm of its density."""
    eta = _check_eta(family, eta)
    return family.scale * _grid_integral(family, eta, psi, 1, budget)


def _one_dim_levels(family):
    return [(m, k) for m in range(family.l + 1) for k in range(1, 2 ** m + 1)]


def inner_1d(f, g, pairs_f, pairs_g, level) -> np.ndarray:
    """Matrix of exact L2[0,1] inner products between two lists of (m, k) functions."""
    nodes, weights = gauss_nodes(level)
    F = np.array([f(m, k, nodes) for m, k in pairs_f], dtype=float)
    G = np.array([g(m, k, nodes) for m, k in pairs_g], dtype=float)
    return (F * weights) @ G.T


def _tensor_gram(family, f, g):
    levels = _one_dim_levels(family)
    pos = {mk: r for r, mk in enumerate(levels)}
    K1 = inner_1d(f, g, levels, levels, family.l + 2)
    idx = np.array([[pos[(p[j], i[j])] for j in range(family.s_bar)] for p, i in family.Q])
    K = np.ones((family.q, family.q))
    for j in range(family.s_bar):
        K *= K1[np.ix_(idx[:, j], idx[:, j])]
    return K


def psi_gram(family: PackingFamily) -> np.ndarray:
    """Gram matrix of the tensor primitives, from products of 1D inner products."""
    return _tensor_gram(family, psi_primitive, psi_primitive)


def haar_gram(family: PackingFamily) -> np.ndarray:
    return _tensor_gram(family, haar_h, haar_h)


def cross_gram(family: PackingFamily) -> np.ndarray:
    """cross[a, b] = <Psi_a, H_b> for family terms a, b."""
    return _tensor_gram(family, psi_primitive, haar_h)


def gram_distance_sq(family: PackingFamily, eta, eta2, K=None) -> float:
    delta = _check_eta(family, eta) - _check_eta(family, eta2)
    K = psi_gram(family) if K is None else K
    return family.scale ** 2 * float(delta @ K @ delta)


def bessel_sum(family: PackingFamily, eta, eta2, C=None) -> float:
    """Sum of squared coefficients of f_eta - f_eta2 along the Haar tensors."""
    delta = _check_eta(family, eta) - _check_eta(family, eta2)
    C = cross_gram(family) if C is None else C
    coef = family.scale * (delta @ C)
    return float(coef @ coef)


def first_distance_bound(family: PackingFamily, B: float = 1.0) -> float:
    return B * family.V ** 2 / len(family.P) * 2.0 ** (-3 * family.l - 4 * family.s_bar + 2)


def second_distance_bound(family: PackingFamily, b: float = 1.0) -> float:
    return b * family.V ** 2 / len(family.P) * 2.0 ** (-3 * family.l - 6 * family.s_bar + 2)


@dataclass
class FamilyReport:
    s_bar: int
    l: int
    q: int
    haar_orthonormality_error: float
    diagonal_inner_error: float
    offdiagonal_inner_max: float
    tv_max: float
    tv_bound: float
    neighbour_dist_max: float
    neighbour_dist_bound: float
    ratio_min: float
    ratio_bound: float
    pairs_checked: int
    gram_direct_max_error: float
    bessel_excess_min: float
    tv_ok: bool = False
    neighbour_ok: bool = False
    ratio_ok: bool = False
    orthonormal_ok: bool = False

    @property
    def ok(self) -> bool:
        return self.tv_ok and self.neighbour_ok and self.ratio_ok and self.orthonormal_ok

    def to_json(self) -> dict:
        out = asdict(self)
        out["ok"] = self.ok
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _sign_pairs(q, rng, samples):
    """All eta != eta' up to the difference pattern when small; otherwise a random sample."""
    if 3 ** q - 1 <= 20_000:
        for pattern in itertools.product((-1, 0, 1), repeat=q):
            if any(pattern):
                pat = np.array(pattern, dtype=float)
                eta = np.where(pat < 0, -1.0, 1.0)
                yield eta, np.where(pat == 0, eta, -eta)
        return
    for _ in range(samples):
        eta = rng.choice([-1.0, 1.0], size=q)
        flip = rng.random(q) < rng.uniform(0.02, 1.0)
        if not flip.any():
            flip[rng.integers(q)] = True
        yield eta, np.where(flip, -eta, eta)


def family_checks(family: PackingFamily, samples: int = 200, seed: int = 0,
                  direct_checks: int = 8, tol: float = 1e-9,
                  budget: int = QUAD_BUDGET) -> FamilyReport:
    """Verify the TV budget and both distance bounds by exact integration.

    Pairs are enumerated exhaustively when q is small; the direct-integration
    route is compared against the Gram route on ``direct_checks`` of them.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    q = family.q
    Hg = haar_gram(family)
    ortho = float(np.abs(Hg - np.eye(q)).max())
    C = cross_gram(family)
    expected = 2.0 ** (-1.5 * family.l - 3 * family.s_bar)
    diag_err = float(np.abs(np.diag(C) - expected).max())
    off = float(np.abs(C - np.diag(np.diag(C))).max()) if q > 1 else 0.0
    K = psi_gram(family)

    etas = [np.ones(q), -np.ones(q)] + [rng.choice([-1.0, 1.0], size=q) for _ in range(8)]
    tv_max = max(total_variation(family, e, budget) for e in etas)

    base = np.ones(q)
    neighbour = []
    for t in range(q):
        other = base.copy()
        other[t] = -1.0
        neighbour.append(gram_distance_sq(family, base, other, K))
    nb_max = max(neighbour)

    ratio_min, count, gram_err, bessel_excess = math.inf, 0, 0.0, math.inf
    for eta, eta2 in _sign_pairs(q, rng, samples):
        H = int((eta != eta2).sum())
        dist = gram_distance_sq(family, eta, eta2, K)
        ratio_min = min(ratio_min, dist / H)
        bessel_excess = min(bessel_excess, dist - bessel_sum(family, eta, eta2, C))
        if count < direct_checks:
            gram_err = max(gram_err, abs(dist - l2_distance_sq(family, eta, eta2, budget)))
        count += 1

    nb_bound = first_distance_bound(family)
    r_bound = second_distance_bound(family)
    rep = FamilyReport(family.s_bar, family.l, q, ortho, diag_err, off, tv_max, family.V,
                       nb_max, nb_bound, ratio_min, r_bound, count, gram_err, bessel_excess)
    rep.tv_ok = tv_max <= family.V * (1 + tol)
    rep.neighbour_ok = nb_max <= nb_bound * (1 + tol)
    rep.ratio_ok = ratio_min >= r_bound * (1 - tol)
    rep.orthonormal_ok = ortho <= 1e-12 and diag_err <= 1e-12 and off <= 1e-12
    return rep


@dataclass(frozen=True)
class LowerBound:
    value: float
    n: int
    l: int
    q: int
    under_threshold: bool
    threshold: float
    separation: float
    max_kl: float

    def __float__(self):
        return self.value

    def to_json(self) -> dict:
        return asdict(self)


def assouad_bound(family: PackingFamily, n: int, enforce_threshold: bool = True,
                  B: float = 1.0, b: float = 1.0) -> LowerBound:
    """(q/8) * separation * (1 - sqrt(max_kl / 2)) with the family's verified constants.

    Below the sample-size threshold the value is 0 and ``under_threshold`` is set;
    pass ``enforce_threshold=False`` to evaluate the formula anyway.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    thr = sample_size_threshold(family.s_bar, family.V, family.sigma, B)
    sep = second_distance_bound(family, b)
    if family.sigma == 0:
        # noiseless data separates every pair of hypotheses, so nothing is bounded
        return LowerBound(0.0, n, family.l, family.q, False, thr, sep, math.inf)
    kl = n / (2 * family.sigma ** 2) * first_distance_bound(family, B)
    under = n < thr
    value = family.q / 8 * sep * max(0.0, 1.0 - math.sqrt(kl / 2))
    if under and enforce_threshold:
        value = 0.0
    return LowerBound(value, n, family.l, family.q, under, thr, sep, kl)
