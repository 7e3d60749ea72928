"""Dense simplex LP and box-constrained convex minimax solver."""

import numpy as np
import pytest

from rsirl import (
    Infeasible,
    LinearProgram,
    MinimaxProblem,
    SolverOptions,
    Unbounded,
    solve_lp,
    solve_minimax,
)

SIMPLEX3 = dict(a_eq=np.ones((1, 3)), b_eq=np.array([1.0]))


def _random_psd_quadratics(rng, L, m, scale=1.0):
    H = np.empty((L, m, m))
    q = rng.normal(size=(L, m)) * scale
    c = rng.normal(size=L)
    for j in range(L):
        S = rng.normal(size=(m, m))
        H[j] = S @ S.T
    return H, q, c


def _problem(H, q, c, weights, bound=1.0):
    m = H.shape[1]
    return MinimaxProblem(
        H=H,
        q=q,
        c=c,
        lo=-bound * np.ones(m),
        hi=bound * np.ones(m),
        weights=np.atleast_2d(weights),
    )


def _worst_case(problem, u):
    vals = [
        0.5 * u @ problem.H[j] @ u + problem.q[j] @ u + problem.c[j]
        for j in range(problem.H.shape[0])
    ]
    return float(np.max(problem.weights @ np.asarray(vals)))


def _grid_minimax(problem, step=1e-3):
    m = problem.lo.size
    axes = [np.arange(problem.lo[a], problem.hi[a] + step / 2, step) for a in range(m)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    vals = np.empty((problem.H.shape[0], pts.shape[0]))
    for j in range(problem.H.shape[0]):
        vals[j] = (
            0.5 * np.einsum("ki,ij,kj->k", pts, problem.H[j], pts)
            + pts @ problem.q[j]
            + problem.c[j]
        )
    worst = (problem.weights @ vals).max(axis=0)
    return float(worst.min())


def _gradient_bound(problem):
    # sup over the box of the aggregated gradient norm, per scenario corner
    m = problem.lo.size
    bound = 0.0
    for j in range(problem.H.shape[0]):
        row_mass = np.abs(problem.H[j]) @ np.maximum(
            np.abs(problem.lo), np.abs(problem.hi)
        )
        bound = max(bound, float(np.linalg.norm(row_mass + np.abs(problem.q[j]))))
    return bound


# -- solve_lp -------------------------------------------------------------


def test_lp_picks_max_coefficient_vertex():
    sol = solve_lp(LinearProgram(objective=np.array([1.0, 2.0, 3.0]), **SIMPLEX3))
    assert sol.value == pytest.approx(3.0, abs=1e-9)
    np.testing.assert_allclose(sol.x, [0.0, 0.0, 1.0], atol=1e-9)


def test_lp_detects_infeasible_cut():
    lp = LinearProgram(
        objective=np.array([1.0, 0.0, 0.0]),
        a_ub=np.array([[-1.0, 0.0, 0.0]]),
        b_ub=np.array([-2.0]),
        **SIMPLEX3,
    )
    with pytest.raises(Infeasible):
        solve_lp(lp)


def test_lp_zero_objective_returns_feasible_point():
    sol = solve_lp(LinearProgram(objective=np.zeros(3), **SIMPLEX3))
    assert sol.value == pytest.approx(0.0, abs=1e-12)
    assert sol.x.min() >= -1e-9
    assert sol.x.sum() == pytest.approx(1.0, abs=1e-9)


def test_lp_detects_unbounded():
    lp = LinearProgram(
        objective=np.array([1.0]),
        a_ub=np.array([[-1.0]]),
        b_ub=np.array([0.0]),
    )
    with pytest.raises(Unbounded):
        solve_lp(lp)


def test_lp_dominates_random_feasible_points(rng):
    for trial in range(10):
        n = int(rng.integers(2, 5))
        k = int(rng.integers(1, 4))
        a_ub = rng.normal(size=(k, n))
        b_ub = a_ub @ np.full(n, 1.0 / n) + rng.random(k)  # uniform point feasible
        lp = LinearProgram(
            objective=rng.normal(size=n),
            a_ub=a_ub,
            b_ub=b_ub,
            a_eq=np.ones((1, n)),
            b_eq=np.array([1.0]),
        )
        sol = solve_lp(lp)
        assert (a_ub @ sol.x <= b_ub + 1e-8).all()
        assert sol.x.min() >= -1e-8
        for _ in range(100):
            v = rng.dirichlet(np.ones(n))
            if (a_ub @ v <= b_ub + 1e-12).all():
                assert sol.value >= lp.objective @ v - 1e-7


def test_lp_bitwise_determinism(rng):
    a_ub = rng.normal(size=(4, 5))
    lp = LinearProgram(
        objective=rng.normal(size=5),
        a_ub=a_ub,
        b_ub=np.abs(rng.normal(size=4)) + 1.0,
        a_eq=np.ones((1, 5)),
        b_eq=np.array([1.0]),
    )
    first = solve_lp(lp)
    second = solve_lp(lp)
    assert first.value == second.value
    assert (first.x == second.x).all()


# -- solve_minimax ----------------------------------------------------------


def test_minimax_pure_quadratic_bowl():
    m = 2
    H = np.array([2.0 * np.eye(m)])  # 0.5 u'Hu = |u|^2
    sol = solve_minimax(_problem(H, np.zeros((1, m)), np.zeros(1), np.eye(1)[0]))
    np.testing.assert_allclose(sol.u, np.zeros(m), atol=1e-6)
    assert sol.value == pytest.approx(0.0, abs=1e-9)


def test_minimax_single_vertex_matches_closed_form(rng):
    for _ in range(5):
        m, L = 2, 3
        H, q, c = _random_psd_quadratics(rng, L, m, scale=0.1)
        for j in range(L):
            H[j] += 0.5 * np.eye(m)
        v = rng.dirichlet(np.ones(L))
        problem = _problem(H, q, c, v, bound=10.0)  # box non-binding
        agg_h = np.einsum("j,jab->ab", v, H)
        agg_q = v @ q
        u_closed = np.linalg.solve(agg_h, -agg_q)
        assert np.abs(u_closed).max() < 10.0
        sol = solve_minimax(problem)
        np.testing.assert_allclose(sol.u, u_closed, atol=1e-5)
        assert sol.value == pytest.approx(
            _worst_case(problem, u_closed), abs=1e-5
        )


def test_minimax_against_grid_oracle_1d(rng):
    for _ in range(5):
        H, q, c = _random_psd_quadratics(rng, 3, 1)
        weights = np.vstack([rng.dirichlet(np.ones(3)) for _ in range(3)])
        problem = _problem(H, q, c, weights)
        sol = solve_minimax(problem)
        tau_grid = _grid_minimax(problem, step=1e-3)
        assert abs(sol.value - tau_grid) <= _gradient_bound(problem) * 1e-3


def test_minimax_internal_consistency(rng):
    H, q, c = _random_psd_quadratics(rng, 3, 2)
    weights = np.vstack([rng.dirichlet(np.ones(3)) for _ in range(4)])
    problem = _problem(H, q, c, weights)
    sol = solve_minimax(problem)
    assert sol.value == pytest.approx(_worst_case(problem, sol.u), abs=1e-9)
    assert (sol.u >= problem.lo - 1e-12).all()
    assert (sol.u <= problem.hi + 1e-12).all()


def test_minimax_duplicate_vertex_invariance(rng):
    H, q, c = _random_psd_quadratics(rng, 3, 2)
    weights = np.vstack([rng.dirichlet(np.ones(3)) for _ in range(3)])
    base = solve_minimax(_problem(H, q, c, weights))
    doubled = solve_minimax(_problem(H, q, c, np.vstack([weights, weights[0]])))
    assert doubled.value == pytest.approx(base.value, abs=1e-5)
    np.testing.assert_allclose(doubled.u, base.u, atol=1e-4)


def test_minimax_fast_options_match_full(rng):
    H, q, c = _random_psd_quadratics(rng, 3, 2)
    weights = np.vstack([rng.dirichlet(np.ones(3)) for _ in range(3)])
    problem = _problem(H, q, c, weights)
    full = solve_minimax(problem, SolverOptions())
    fast = solve_minimax(problem, SolverOptions.fast())
    assert fast.value == pytest.approx(full.value, abs=1e-6)


def test_minimax_warm_start_preserves_optimum(rng):
    H, q, c = _random_psd_quadratics(rng, 3, 2)
    weights = np.vstack([rng.dirichlet(np.ones(3)) for _ in range(3)])
    problem = _problem(H, q, c, weights)
    full = solve_minimax(problem, SolverOptions())
    warm = solve_minimax(
        problem, SolverOptions.fast(), warm=full.u + rng.normal(size=2) * 0.05
    )
    assert warm.value == pytest.approx(full.value, abs=1e-6)
    out_of_box = solve_minimax(
        problem, SolverOptions.fast(), warm=np.array([5.0, -5.0])
    )
    assert out_of_box.value == pytest.approx(full.value, abs=1e-6)
