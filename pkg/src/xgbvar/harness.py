"""Random-design experiments: data generation, L2 risk, and log-log rate fits."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import ParseError, XgbVarError
from .estimator import BoostConfig, constrained_lse, greedy_boost, penalized_lse, trees_to_ensemble
from .lattice import BasisAtom, Dataset, SparseEnsemble, evaluate_on_product_grid
from .minimax import PackingFamily, f_eta_eval

ESTIMATORS = ("constrained", "penalized", "greedy")


def quadrant(d: int, k: int) -> SparseEnsemble:
    """1(x_0 >= 0, ..., x_{k-1} >= 0) in d coordinates."""
    return SparseEnsemble(0.0, {BasisAtom.make({j: 0.0 for j in range(k)}): 1.0}, d)


@dataclass(frozen=True)
class PackingTarget:
    """A member f_eta of the dyadic packing family, usable as a regression target."""

    family: PackingFamily
    eta: tuple[float, ...]

    def __call__(self, X) -> np.ndarray:
        return f_eta_eval(self.family, self.eta, X)


def _make_target(target: Any, d: int, s: int, V: float, box, sigma: float):
    if isinstance(target, (SparseEnsemble, PackingTarget)) or callable(target):
        return target
    if isinstance(target, str):
        target = {"kind": target}
    if not isinstance(target, Mapping) or "kind" not in target:
        raise ParseError(f"unrecognised target {target!r}")
    kind = target["kind"]
    if kind == "quadrant":
        return quadrant(d, int(target.get("order", min(s, d))))
    if kind == "zero":
        return SparseEnsemble(0.0, {}, d)
    if kind == "ensemble":
        return SparseEnsemble.from_json(target["ensemble"]).with_dims(d)
    if kind == "packing":
        fam = PackingFamily(min(s, d), int(target["l"]), V, tuple(box), sigma)
        if "eta" in target:
            eta = tuple(float(e) for e in target["eta"])
        else:
            rng = np.random.Generator(np.random.Philox(int(target.get("eta_seed", 0))))
            eta = tuple(rng.choice([-1.0, 1.0], size=fam.q))
        return PackingTarget(fam, eta)
    raise ParseError(f"unknown target kind {kind!r}")


@dataclass
class ExperimentConfig:
    d: int
    s: int
    V: float
    sigma: float
    n_list: Sequence[int]
    replicates: int
    seed: int
    target: Any = "quadrant"
    box: Sequence[float] | None = None
    estimator: str = "constrained"
    alpha: float | None = None
    boost: Mapping[str, Any] = field(default_factory=dict)
    quadrature_points: int = 10_000
    workers: int = 1
    risk: str = "population"

    def __post_init__(self):
        self.n_list = tuple(int(n) for n in self.n_list)
        self.box = tuple(float(m) for m in self.box) if self.box is not None else (2.0,) * self.d
        if self.d < 1 or self.s < 1:
            raise ValueError("d and s must be >= 1")
        if len(self.box) != self.d or any(not m > 0 for m in self.box):
            raise ValueError("box needs d positive widths")
        if not self.n_list or any(n < 1 for n in self.n_list):
            raise ValueError("n_list must hold positive sample sizes")
        if any(a >= b for a, b in zip(self.n_list, self.n_list[1:])):
            raise ValueError("n_list must be strictly increasing")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.risk not in ("population", "empirical"):
            raise ValueError("risk must be 'population' or 'empirical'")
        if self.estimator == "penalized" and self.alpha is None:
            raise ValueError("penalized estimator needs alpha")
        self.target = _make_target(self.target, self.d, self.s, self.V, self.box, self.sigma)

    @classmethod
    def from_json(cls, obj: Mapping) -> "ExperimentConfig":
        known = {"d", "s", "V", "sigma", "n_list", "replicates", "seed", "target", "box",
                 "estimator", "alpha", "boost", "quadrature_points", "workers", "risk"}
        extra = set(obj) - known
        if extra:
            raise ParseError(f"unknown config fields {sorted(extra)}")
        missing = {"d", "s", "V", "sigma", "n_list", "replicates", "seed"} - set(obj)
        if missing:
            raise ParseError(f"missing config fields {sorted(missing)}")
        try:
            return cls(**obj)
        except (TypeError, KeyError) as exc:
            raise ParseError(f"bad config: {exc}") from exc

    def f_star(self, X) -> np.ndarray:
        return np.asarray(self.target(X), dtype=float)


def _stream(seed: int, n: int, replicate: int, purpose: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, n, replicate, purpose])))


def gen_data(config: ExperimentConfig, n: int, replicate: int) -> Dataset:
    """Uniform design on the centered box plus Gaussian noise; reproducible per (seed, n, replicate)."""
    rng = _stream(config.seed, n, replicate, 0)
    half = np.asarray(config.box) / 2
    X = rng.uniform(-half, half, size=(n, config.d))
    noise = rng.standard_normal(n)
    return Dataset(X, config.f_star(X) + config.sigma * noise)


def fit_model(config: ExperimentConfig, data: Dataset) -> SparseEnsemble:
    if config.estimator == "constrained":
        return constrained_lse(data, config.s, config.V, raise_on_fail=True).ensemble()
    if config.estimator == "penalized":
        return penalized_lse(data, config.s, config.alpha, raise_on_fail=True).ensemble()
    opts = dict(config.boost)
    opts.setdefault("max_depth", config.s)
    trees = greedy_boost(data, BoostConfig(**opts))
    return trees_to_ensemble(trees, config.d)


def exact_risk(config: ExperimentConfig, a: SparseEnsemble, b: SparseEnsemble) -> float:
    """Integral of (a - b)^2 over the box under the uniform density, cell by cell."""
    diff = a.with_dims(config.d) - b.with_dims(config.d)
    thr = diff.thresholds()
    axes, widths = [], []
    for j, M in enumerate(config.box):
        lo, hi = -M / 2, M / 2
        inner = thr[j][(thr[j] > lo) & (thr[j] < hi)] if j < len(thr) else np.zeros(0)
        edges = np.concatenate([[lo], np.unique(inner), [hi]])
        axes.append(edges[:-1])
        widths.append(np.diff(edges) / M)
    vals = evaluate_on_product_grid(diff, axes)
    out = vals ** 2
    for w in widths:
        out = np.tensordot(out, w, axes=([0], [0]))
    return float(out)


def mc_risk(config: ExperimentConfig, model: Callable, points: int, rng) -> tuple[float, float]:
    """Monte Carlo estimate of the L2 risk and its standard error."""
    half = np.asarray(config.box) / 2
    X = rng.uniform(-half, half, size=(points, config.d))
    sq = (np.asarray(model(X), dtype=float) - config.f_star(X)) ** 2
    se = float(sq.std(ddof=1) / math.sqrt(points)) if points > 1 else 0.0
    return float(sq.mean()), se


def estimate_risk(config: ExperimentConfig, n: int, model, quadrature_points: int | None = None,
                  replicate: int = 0, exact: bool = True) -> float:
    """L2(p0) distance between a fitted model and the target.

    Exact when both are piecewise-constant ensembles, Monte Carlo otherwise.
    """
    if exact and isinstance(model, SparseEnsemble) and isinstance(config.target, SparseEnsemble):
        return exact_risk(config, model, config.target)
    pts = quadrature_points or config.quadrature_points
    return mc_risk(config, model, pts, _stream(config.seed, n, replicate, 1))[0]


@dataclass(frozen=True)
class RiskRow:
    n: int
    mean_risk: float
    stderr: float
    replicates: int
    failures: int = 0
    risks: tuple[float, ...] = ()


@dataclass
class RiskTable:
    rows: list[RiskRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "mean_risk", "stderr", "replicates"])
        for r in self.rows:
            w.writerow([r.n, repr(r.mean_risk), repr(r.stderr), r.replicates])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RiskTable":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != ["n", "mean_risk", "stderr", "replicates"]:
            raise ParseError("risk table header must be n,mean_risk,stderr,replicates")
        try:
            rows = [RiskRow(int(r["n"]), float(r["mean_risk"]), float(r["stderr"]),
                            int(r["replicates"])) for r in reader]
        except (TypeError, ValueError) as exc:
            raise ParseError(f"bad risk table row: {exc}") from exc
        return cls(rows)

    def to_json(self) -> dict:
        return {"rows": [{"n": r.n, "mean_risk": r.mean_risk, "stderr": r.stderr,
                          "replicates": r.replicates, "failures": r.failures,
                          "risks": list(r.risks)} for r in self.rows]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def empirical_risk(config: ExperimentConfig, data: Dataset, model) -> float:
    """Mean squared distance to the target over the design points."""
    diff = np.asarray(model(data.points), dtype=float) - config.f_star(data.points)
    return float(diff @ diff) / data.n


def _replicate(args) -> tuple[int, int, float | None, str | None]:
    config, n, rep = args
    try:
        data = gen_data(config, n, rep)
        model = fit_model(config, data)
        if config.risk == "empirical":
            return n, rep, empirical_risk(config, data, model), None
        return n, rep, estimate_risk(config, n, model, replicate=rep), None
    except XgbVarError as exc:
        return n, rep, None, f"{type(exc).__name__}: {exc}"


def summarize(n: int, risks: Sequence[float], failures: int = 0) -> RiskRow:
    r = np.asarray(risks, dtype=float)
    if r.size == 0:
        return RiskRow(n, math.nan, math.nan, 0, failures)
    se = float(r.std(ddof=1) / math.sqrt(r.size)) if r.size > 1 else 0.0
    return RiskRow(n, float(r.mean()), se, int(r.size), failures, tuple(float(x) for x in r))


def run_rate_experiment(config: ExperimentConfig, workers: int | None = None,
                        progress: Callable[[int, int, float | None], None] | None = None) -> RiskTable:
    """gen_data -> fit -> risk for every (n, replicate); failed fits are counted, not averaged."""
    jobs = [(config, n, rep) for n in config.n_list for rep in range(config.replicates)]
    workers = config.workers if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_replicate(job))
            if progress is not None:
                progress(*results[-1][:3])
    results.sort(key=lambda r: (r[0], r[1]))
    rows = []
    for n in config.n_list:
        mine = [r for r in results if r[0] == n]
        risks = [r[2] for r in mine if r[2] is not None]
        rows.append(summarize(n, risks, sum(r[2] is None for r in mine)))
    return RiskTable(rows)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    slope_stderr: float
    rows_used: int

    def to_json(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared,
                "slope_stderr": self.slope_stderr, "rows_used": self.rows_used}


def fit_rate(table: RiskTable) -> RateFit:
    """Least squares of log(mean risk) on log(n), skipping rows with nonpositive risk."""
    rows = [r for r in table.rows if r.mean_risk > 0 and math.isfinite(r.mean_risk)]
    if len(rows) < 3:
        raise ValueError(f"need at least 3 rows with positive risk, have {len(rows)}")
    x = np.log([r.n for r in rows])
    y = np.log([r.mean_risk for r in rows])
    res = stats.linregress(x, y)
    return RateFit(float(res.slope), float(res.intercept), float(res.rvalue ** 2),
                   float(res.stderr), len(rows))


def rate_summary(table: RiskTable, sigma: float | None = None,
                 interpolation_tol: float = 1e-10) -> dict:
    """Slope report with an interpolation flag for noiseless runs.

    The flag is set when sigma is 0 or every mean risk is negligible; the
    slope fields are null when fewer than 3 rows have positive risk.
    """
    finite = [r.mean_risk for r in table.rows if math.isfinite(r.mean_risk)]
    flat = bool(finite) and max(finite) <= interpolation_tol
    try:
        out = fit_rate(table).to_json() if not flat else None
    except ValueError:
        out = None
    if out is None:
        out = {"slope": None, "intercept": None, "r_squared": None, "slope_stderr": None,
               "rows_used": 0}
    out["interpolation"] = flat or sigma == 0
    return out
