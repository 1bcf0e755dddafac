import numpy as np
import pytest
from scipy.optimize import linprog

from xgbvar.errors import BudgetError, InfeasibleError
from xgbvar.lp import LinearProgram, LpStatus, basis_pursuit, solve_lp


def test_simple_optimum_and_certificate():
    # min -x - y  s.t. x + 2y + s1 = 4, 3x + y + s2 = 6
    A = np.array([[1.0, 2, 1, 0], [3, 1, 0, 1]])
    sol = solve_lp(LinearProgram([-1, -1, 0, 0], A, [4, 6]))
    assert sol.status == LpStatus.OPTIMAL
    assert np.allclose(sol.primal[:2], [1.6, 1.2])
    assert sol.objective_value == pytest.approx(-2.8)
    assert sol.gap < 1e-9 and sol.primal_residual < 1e-9


def test_beale_cycling_example_terminates():
    # classic instance on which Dantzig's rule cycles without anti-cycling
    c = np.array([-0.75, 150, -0.02, 6, 0, 0, 0])
    A = np.array([[0.25, -60, -0.04, 9, 1, 0, 0],
                  [0.5, -90, -0.02, 3, 0, 1, 0],
                  [0, 0, 1, 0, 0, 0, 1]])
    sol = solve_lp(LinearProgram(c, A, [0, 0, 1]))
    assert sol.status == LpStatus.OPTIMAL
    assert sol.objective_value == pytest.approx(-0.05)


def test_infeasible_and_unbounded():
    infeasible = LinearProgram([1, 1], [[1, 1]], [-1])
    assert solve_lp(infeasible).status == LpStatus.INFEASIBLE
    unbounded = LinearProgram([-1, 0], [[1, -1]], [0])
    assert solve_lp(unbounded).status == LpStatus.UNBOUNDED


def test_redundant_rows_are_dropped():
    A = np.array([[1.0, 1, 0], [2, 2, 0], [0, 1, 1]])
    sol = solve_lp(LinearProgram([1, 2, 3], A, [1, 2, 1]))
    assert sol.status == LpStatus.OPTIMAL
    assert sol.objective_value == pytest.approx(2.0)


def test_free_variables():
    # min |x - 3| style: x free, x - t1 + t2 = 3, cost on t
    sol = solve_lp(LinearProgram([0, 1, 1], [[1, -1, 1]], [3], free=[True, False, False]))
    assert sol.objective_value == pytest.approx(0.0)
    assert sol.primal[0] == pytest.approx(3.0)


def test_budget_guard():
    with pytest.raises(BudgetError):
        solve_lp(LinearProgram(np.ones(1000), np.ones((100, 1000)), np.ones(100)), budget=10_000)


def test_matches_highs_on_random_programs():
    rng = np.random.default_rng(7)
    for _ in range(60):
        m, n = int(rng.integers(1, 6)), int(rng.integers(2, 10))
        A = rng.integers(-3, 4, (m, n)).astype(float)
        x0 = rng.integers(0, 3, n).astype(float)
        b = A @ x0
        c = rng.integers(-2, 5, n).astype(float)
        ref = linprog(c, A_eq=A, b_eq=b, bounds=[(0, None)] * n, method="highs")
        sol = solve_lp(LinearProgram(c, A, b))
        if ref.status == 3:
            assert sol.status == LpStatus.UNBOUNDED
        else:
            assert sol.status == LpStatus.OPTIMAL
            assert sol.objective_value == pytest.approx(ref.fun, abs=1e-8)


def test_basis_pursuit_examples():
    X = np.array([[0, 1, 0, 1], [1, 1, 0, 0], [1, 0, 1, 0]], dtype=float)
    c, beta, value = basis_pursuit(X, [0.0, 1.0, 1.0])
    assert value == pytest.approx(1.0)
    assert np.allclose(c + X @ beta, [0, 1, 1])


def test_basis_pursuit_constant_shortcut_and_infeasible():
    res = basis_pursuit(np.ones((3, 2)), [2.0, 2.0, 2.0])
    assert res.constant == 2.0 and res.value == 0.0 and res.solution is None
    with pytest.raises(InfeasibleError):
        basis_pursuit(np.zeros((2, 1)), [0.0, 1.0])
