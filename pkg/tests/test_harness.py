import math

import numpy as np
import pytest
from scipy import stats

from xgbvar.errors import ParseError
from xgbvar.harness import (ExperimentConfig, PackingTarget, RiskRow, RiskTable, estimate_risk,
                            exact_risk, fit_model, fit_rate, gen_data, mc_risk, quadrant,
                            rate_summary, run_rate_experiment, summarize, _replicate, _stream)
from xgbvar.lattice import BasisAtom, SparseEnsemble


def config(**kw):
    base = dict(d=2, s=2, V=1.5, sigma=0.5, n_list=[32, 64], replicates=2, seed=7)
    base.update(kw)
    return ExperimentConfig(**base)


def test_gen_data_deterministic_and_noiseless():
    cfg = config()
    a, b = gen_data(cfg, 50, 3), gen_data(cfg, 50, 3)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.responses, b.responses)
    assert not np.array_equal(a.points, gen_data(cfg, 50, 4).points)
    clean = gen_data(config(sigma=0.0), 50, 3)
    assert np.array_equal(clean.responses, cfg.f_star(clean.points))
    assert np.array_equal(clean.points, a.points)


def test_design_is_uniform():
    cfg = config(box=(2.0, 4.0))
    X = gen_data(cfg, 10_000, 0).points
    assert stats.kstest(X[:, 0], stats.uniform(-1, 2).cdf).statistic < 0.02
    assert stats.kstest(X[:, 1], stats.uniform(-2, 4).cdf).statistic < 0.02


def test_risk_identities():
    cfg = config()
    f = cfg.target
    assert exact_risk(cfg, f, f) == 0.0
    assert exact_risk(cfg, f + 1.0, f) == pytest.approx(1.0, abs=1e-15)
    # the quadrant covers a quarter of [-1, 1]^2
    assert exact_risk(cfg, SparseEnsemble(0.0, {}, 2), f) == pytest.approx(0.25, abs=1e-15)
    shift = SparseEnsemble(0.0, {BasisAtom.make({0: 0.5}): 1.0}, 2)
    assert exact_risk(cfg, shift, SparseEnsemble(0.0, {}, 2)) == pytest.approx(0.25, abs=1e-15)


def test_exact_risk_matches_monte_carlo():
    cfg = config()
    model = fit_model(cfg, gen_data(cfg, 64, 0))
    exact = exact_risk(cfg, model, cfg.target)
    mean, se = mc_risk(cfg, model, 100_000, _stream(1, 0, 0, 9))
    assert abs(exact - mean) <= 3 * se
    assert estimate_risk(cfg, 64, model) == exact
    assert estimate_risk(cfg, 64, model, exact=False) != exact


def test_packing_target_uses_monte_carlo():
    cfg = config(target={"kind": "packing", "l": 2, "eta_seed": 3})
    assert isinstance(cfg.target, PackingTarget)
    zero = SparseEnsemble(0.0, {}, 2)
    r = estimate_risk(cfg, 10, zero, quadrature_points=20_000)
    assert 0 < r < cfg.V ** 2


def test_config_validation():
    with pytest.raises(ValueError):
        config(n_list=[64, 32])
    with pytest.raises(ValueError):
        config(replicates=0)
    with pytest.raises(ValueError):
        config(sigma=-1.0)
    with pytest.raises(ParseError):
        ExperimentConfig.from_json({"d": 2})
    with pytest.raises(ParseError):
        ExperimentConfig.from_json(dict(d=2, s=2, V=1, sigma=0, n_list=[8], replicates=1,
                                         seed=0, colour="red"))
    with pytest.raises(ParseError):
        config(target={"kind": "spiral"})


def test_fit_rate_synthetic():
    ns = [64, 128, 256, 512, 1024]
    t = RiskTable([RiskRow(n, n ** (-2 / 3), 0.0, 1) for n in ns])
    assert fit_rate(t).slope == pytest.approx(-2 / 3, abs=1e-12)
    t = RiskTable([RiskRow(n, 3.0 / n, 0.0, 1) for n in ns])
    fit = fit_rate(t)
    assert fit.slope == pytest.approx(-1.0, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)
    with pytest.raises(ValueError):
        fit_rate(RiskTable([RiskRow(n, 1.0 / n, 0.0, 1) for n in ns[:2]]))


def test_csv_round_trip_and_determinism():
    cfg = config()
    t1, t2 = run_rate_experiment(cfg), run_rate_experiment(cfg)
    assert t1.to_csv() == t2.to_csv()
    back = RiskTable.from_csv(t1.to_csv())
    assert [(r.n, r.mean_risk, r.stderr, r.replicates) for r in back.rows] == \
        [(r.n, r.mean_risk, r.stderr, r.replicates) for r in t1.rows]
    assert t1.to_csv().splitlines()[0] == "n,mean_risk,stderr,replicates"
    with pytest.raises(ParseError):
        RiskTable.from_csv("a,b\n1,2\n")


def test_replicates_exchangeable():
    cfg = config(n_list=[40], replicates=5)
    table = run_rate_experiment(cfg)
    perm = [3, 0, 4, 1, 2]
    risks = [_replicate((cfg, 40, r))[2] for r in perm]
    assert sorted(risks) == sorted(table.rows[0].risks)
    assert math.fsum(risks) / 5 == pytest.approx(table.rows[0].mean_risk, rel=1e-14)


def test_interpolation_regime():
    cfg = config(sigma=0.0, V=5.0, n_list=[16, 32, 64], replicates=1, risk="empirical")
    table = run_rate_experiment(cfg)
    assert all(r.mean_risk < 1e-6 for r in table.rows)
    summary = rate_summary(table, cfg.sigma)
    assert summary["interpolation"] is True and summary["slope"] is None


def test_stderr_shrinks_with_replicates():
    # four times the replicates should roughly halve the standard error
    small = run_rate_experiment(config(n_list=[48], replicates=20)).rows[0]
    large = run_rate_experiment(config(n_list=[48], replicates=80)).rows[0]
    assert 1.3 < small.stderr / large.stderr < 3.0


def test_risk_monotone_in_budget():
    rows = [run_rate_experiment(config(V=V, n_list=[48], replicates=30)).rows[0]
            for V in (0.25, 0.5, 1.0)]
    for a, b in zip(rows, rows[1:]):
        assert b.mean_risk <= a.mean_risk + 2 * math.hypot(a.stderr, b.stderr)


def test_greedy_not_better_than_constrained():
    kw = dict(n_list=[64], replicates=15)
    con = run_rate_experiment(config(**kw)).rows[0]
    gre = run_rate_experiment(config(estimator="greedy", boost={"rounds": 10}, **kw)).rows[0]
    diff = np.array(gre.risks) - np.array(con.risks)
    joint_se = diff.std(ddof=1) / math.sqrt(diff.size)
    assert gre.mean_risk >= con.mean_risk - 2 * joint_se


def test_summarize_and_failures():
    row = summarize(10, [1.0, 3.0])
    assert row.mean_risk == 2.0 and row.stderr == pytest.approx(1.0)
    empty = summarize(10, [], failures=2)
    assert empty.replicates == 0 and empty.failures == 2 and math.isnan(empty.mean_risk)


def test_quadrant_target():
    q = quadrant(3, 2)
    X = np.array([[0.1, 0.1, -5.0], [0.1, -0.1, 5.0]])
    assert q(X).tolist() == [1.0, 0.0]
