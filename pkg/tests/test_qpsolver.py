import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from terrain_mpc.qpsolver import (REGULARIZATION, QpDegenerate, QpInfeasible, QpIterationLimit,
                                  QpProblem, eliminate_fixed_variables, solve)

from oracles import qp_bruteforce


def _random_qp(rng, d=6, m_in=8, m_eq=0):
    M = rng.normal(size=(d, d))
    H = M @ M.T + 0.1 * np.eye(d)
    f = rng.normal(size=d) * 3
    x_feas = rng.normal(size=d)
    A_in = rng.normal(size=(m_in, d))
    b_in = A_in @ x_feas - rng.random(m_in)
    A_eq = rng.normal(size=(m_eq, d))
    b_eq = A_eq @ x_feas
    return QpProblem(H, f, A_eq, b_eq, A_in, b_in)


def _assert_kkt(p, sol, tol=1e-8):
    for name, val in p.kkt_residuals(sol).items():
        assert val <= tol, (name, val)


def test_unconstrained():
    sol = solve(QpProblem(np.eye(2), [-1.0, -1.0]))
    np.testing.assert_allclose(sol.x, [1.0, 1.0])
    assert sol.active.size == 0


def test_single_active_bound():
    p = QpProblem(np.eye(1), [0.0], A_in=[[1.0]], b_in=[1.0])
    sol = solve(p)
    assert sol.x[0] == pytest.approx(1.0)
    assert sol.multipliers_in[0] == pytest.approx(1.0)
    assert sol.active.tolist() == [0]
    _assert_kkt(p, sol)


def test_equality_only():
    p = QpProblem(np.eye(2), [0.0, 0.0], A_eq=[[1.0, 1.0]], b_eq=[2.0])
    sol = solve(p)
    np.testing.assert_allclose(sol.x, [1.0, 1.0])
    np.testing.assert_allclose(sol.multipliers_eq, [1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(0, 2))
def test_matches_active_set_enumeration(seed, m_eq):
    rng = np.random.default_rng(seed)
    p = _random_qp(rng, m_eq=m_eq)
    sol = solve(p)
    x_ref, obj_ref = qp_bruteforce(p.H, p.f, p.A_eq, p.b_eq, p.A_in, p.b_in)
    assert x_ref is not None
    np.testing.assert_allclose(sol.x, x_ref, atol=1e-7)
    assert sol.objective == pytest.approx(obj_ref, abs=1e-7)
    _assert_kkt(p, sol)


def test_objective_beats_feasible_samples():
    rng = np.random.default_rng(1)
    for _ in range(10):
        p = _random_qp(rng)
        sol = solve(p)
        samples = sol.x + rng.normal(size=(1000, p.dim)) * 0.5
        ok = np.all(samples @ p.A_in.T >= p.b_in, axis=1)
        vals = 0.5 * np.einsum("ij,jk,ik->i", samples, p.H, samples) + samples @ p.f
        assert ok.any()
        assert np.all(vals[ok] >= sol.objective - 1e-9)


@pytest.mark.parametrize("alpha", [1e-3, 0.5, 7.0, 1e4])
def test_scaling_invariance(alpha):
    p = _random_qp(np.random.default_rng(2), m_eq=1)
    a = solve(p)
    b = solve(QpProblem(alpha * p.H, alpha * p.f, p.A_eq, p.b_eq, p.A_in, p.b_in))
    np.testing.assert_allclose(b.x, a.x, atol=1e-9)


def test_warm_start_keeps_minimizer():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = _random_qp(rng, d=8, m_in=14)
        cold = solve(p)
        warm = solve(p, warm_start=cold.active)
        np.testing.assert_allclose(warm.x, cold.x, atol=1e-8)
        guess = rng.choice(p.n_in, 4, replace=False)
        np.testing.assert_allclose(solve(p, warm_start=guess).x, cold.x, atol=1e-8)
        assert warm.iterations <= cold.iterations


def test_regularization_reported():
    H = np.diag([1.0, 0.0])
    p = QpProblem(H, [0.0, 0.0], A_in=[[0.0, 1.0], [0.0, -1.0]], b_in=[-1.0, -1.0])
    sol = solve(p)
    assert sol.regularization == REGULARIZATION
    assert solve(QpProblem(np.eye(2), [0.0, 0.0])).regularization == 0.0


def test_infeasible():
    p = QpProblem(np.eye(1), [0.0], A_in=[[1.0], [-1.0]], b_in=[1.0, 0.0])
    with pytest.raises(QpInfeasible):
        solve(p)


def test_dependent_equalities():
    p = QpProblem(np.eye(2), [0.0, 0.0], A_eq=[[1.0, 1.0], [2.0, 2.0]], b_eq=[1.0, 3.0])
    with pytest.raises((QpDegenerate, QpInfeasible)):
        solve(p)


def test_iteration_limit():
    p = _random_qp(np.random.default_rng(4), m_in=8)
    if solve(p).iterations > 0:
        with pytest.raises(QpIterationLimit):
            solve(p, max_iter=0)


def test_bad_shapes():
    with pytest.raises(ValueError):
        QpProblem(np.eye(2), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        QpProblem([[1.0, 2.0], [0.0, 1.0]], [0.0, 0.0])
    with pytest.raises(ValueError):
        QpProblem(np.eye(2), [0.0, 0.0], A_in=[[1.0, 0.0]], b_in=[1.0, 2.0])


def test_dump_round_trip(tmp_path):
    p = _random_qp(np.random.default_rng(5), m_eq=2)
    p.dump(tmp_path / "qp.txt")
    q = QpProblem.load(tmp_path / "qp.txt")
    for name in ("H", "f", "A_eq", "b_eq", "A_in", "b_in"):
        np.testing.assert_array_equal(getattr(q, name), getattr(p, name))
    empty = QpProblem(np.eye(2), [1.0, 0.0])
    empty.dump(tmp_path / "e.txt")
    np.testing.assert_array_equal(solve(QpProblem.load(tmp_path / "e.txt")).x, solve(empty).x)


def test_elimination_matches_full_solve():
    rng = np.random.default_rng(6)
    for _ in range(10):
        p = _random_qp(rng, d=9, m_in=10)
        pin = rng.choice(9, 3, replace=False)
        A_eq = np.zeros((3, 9))
        A_eq[np.arange(3), pin] = 1.0
        b_eq = rng.normal(size=3) * 0.1
        # keep the pinned problem feasible by loosening the inequalities
        A_in, b_in = p.A_in, p.b_in - 10.0
        full = QpProblem(p.H, p.f, A_eq, b_eq, A_in, b_in)
        red = eliminate_fixed_variables(full)
        x = red.expand(solve(red.problem).x)
        np.testing.assert_allclose(x, solve(full).x, atol=1e-8)
        np.testing.assert_array_equal(x[pin], b_eq)


def test_elimination_conflicting_pins():
    p = QpProblem(np.eye(2), [0.0, 0.0], A_eq=[[1.0, 0.0], [1.0, 0.0]], b_eq=[1.0, 2.0])
    with pytest.raises(QpInfeasible):
        eliminate_fixed_variables(p)
