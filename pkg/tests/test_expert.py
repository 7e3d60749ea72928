"""System generation, envelope generation, and the forward expert problem."""

import json
from dataclasses import replace

import numpy as np
import pytest

from rsirl import (
    Envelope,
    ExpertSpec,
    SolverOptions,
    cost_vector,
    expert_act,
    generate_envelope,
    generate_system,
    minimax_problem,
    step_dynamics,
    system_from_json,
    system_to_json,
)


def _vertex_envelope(points):
    return Envelope(3, (), np.atleast_2d(np.asarray(points, dtype=float)))


# -- generate_system -----------------------------------------------------


def test_generate_system_benchmark_dimensions():
    sys_ = generate_system(10, 5, 3, seed=1)
    assert sys_.A.shape == (3, 10, 10)
    assert sys_.B.shape == (3, 10, 5)
    assert sys_.Q.shape == (10, 10)
    np.testing.assert_array_equal(sys_.R, np.eye(5))
    assert sys_.x0.shape == (10,)
    np.testing.assert_array_equal(sys_.u_lo, -np.ones(5))
    np.testing.assert_array_equal(sys_.u_hi, np.ones(5))


def test_generate_system_deterministic():
    a = generate_system(10, 5, 3, seed=1)
    b = generate_system(10, 5, 3, seed=1)
    for field in ("A", "B", "Q", "R", "x0"):
        assert (getattr(a, field) == getattr(b, field)).all()


def test_generate_system_q_is_psd():
    sys_ = generate_system(4, 2, 3, seed=2)
    eigs = np.linalg.eigvalsh(sys_.Q)
    assert eigs.min() >= -1e-10
    np.testing.assert_array_equal(sys_.Q, sys_.Q.T)


# -- generate_envelope ---------------------------------------------------


def test_generate_envelope_hull_of_twenty_points():
    env = generate_envelope(3, 20, seed=0)
    assert env.dimension == 3
    assert len(env.vertices) <= 20
    assert env.vertices.min() >= -1e-9
    np.testing.assert_allclose(env.vertices.sum(axis=1), 1.0, atol=1e-9)


def test_generate_envelope_triangle():
    env = generate_envelope(3, 3, seed=4)
    assert len(env.vertices) == 3


def test_generate_envelope_deterministic():
    a = generate_envelope(3, 20, seed=9)
    b = generate_envelope(3, 20, seed=9)
    assert (a.vertices == b.vertices).all()


def test_generate_envelope_vertices_satisfy_halfspaces():
    env = generate_envelope(3, 12, seed=3)
    for v in env.vertices:
        for h in env.halfspaces:
            assert h.normal @ v <= h.offset + 1e-9 * max(
                1.0, np.linalg.norm(h.normal)
            )


# -- cost_vector ------------------------------------------------------------


def test_cost_vector_zero_when_state_and_action_silent():
    sys_ = generate_system(4, 2, 3, seed=5)
    silent = replace(sys_, A=np.zeros_like(sys_.A))
    g = cost_vector(silent, np.ones(4), np.zeros(2))
    np.testing.assert_allclose(g, np.zeros(3), atol=1e-15)


def test_cost_vector_action_cost_only_when_q_zero():
    sys_ = generate_system(4, 2, 3, seed=5)
    no_q = replace(sys_, Q=np.zeros_like(sys_.Q))
    u = np.array([0.3, -0.4])
    g = cost_vector(no_q, np.ones(4), u)
    np.testing.assert_allclose(g, np.full(3, u @ sys_.R @ u), atol=1e-12)


def test_cost_vector_matches_direct_recomputation(rng):
    sys_ = generate_system(4, 2, 3, seed=6)
    x = rng.normal(size=4)
    u = rng.uniform(-1, 1, size=2)
    g = cost_vector(sys_, x, u)
    for j in range(3):
        x_next = sys_.A[j] @ x + sys_.B[j] @ u
        expected = u @ sys_.R @ u + x_next @ sys_.Q @ x_next
        assert g[j] == pytest.approx(expected, rel=1e-12)
    assert g.min() >= 0.0


def test_cost_vector_componentwise_convex_in_action(rng):
    sys_ = generate_system(4, 2, 3, seed=6)
    for _ in range(20):
        x = rng.normal(size=4)
        u1 = rng.uniform(-1, 1, size=2)
        u2 = rng.uniform(-1, 1, size=2)
        lam = rng.random()
        mix = cost_vector(sys_, x, lam * u1 + (1 - lam) * u2)
        chord = lam * cost_vector(sys_, x, u1) + (1 - lam) * cost_vector(
            sys_, x, u2
        )
        assert (mix <= chord + 1e-9).all()


# -- expert_act ----------------------------------------------------------------


def test_expert_act_single_vertex_closed_form():
    sys_ = generate_system(4, 2, 3, seed=7)
    x = 0.05 * sys_.x0  # keep the unconstrained minimizer inside the box
    for j in range(3):
        spec = ExpertSpec(system=sys_, envelope=_vertex_envelope(np.eye(3)[j]))
        sol = expert_act(spec, x)
        lhs = sys_.R + sys_.B[j].T @ sys_.Q @ sys_.B[j]
        rhs = -sys_.B[j].T @ sys_.Q @ sys_.A[j] @ x
        u_closed = np.linalg.solve(lhs, rhs)
        assert np.abs(u_closed).max() < 1.0
        np.testing.assert_allclose(sol.u, u_closed, atol=1e-5)


def test_expert_act_full_simplex_matches_grid_oracle():
    sys_ = generate_system(3, 2, 3, seed=8)
    x = 0.5 * sys_.x0
    spec = ExpertSpec(system=sys_, envelope=Envelope.simplex(3))
    sol = expert_act(spec, x)
    problem = minimax_problem(sys_, spec.envelope, x)

    step = 2e-3
    ax = np.arange(-1.0, 1.0 + step / 2, step)
    uu = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    vals = np.empty((3, uu.shape[0]))
    for j in range(3):
        vals[j] = (
            0.5 * np.einsum("ki,ij,kj->k", uu, problem.H[j], uu)
            + uu @ problem.q[j]
            + problem.c[j]
        )
    tau_grid = (problem.weights @ vals).max(axis=0).min()
    lipschitz = max(
        float(np.linalg.norm(np.abs(problem.H[j]).sum(axis=1) + np.abs(problem.q[j])))
        for j in range(3)
    )
    assert abs(sol.value - tau_grid) <= lipschitz * step


def test_expert_act_zero_state_zero_action(desk_spec):
    sol = expert_act(desk_spec, np.zeros(4))
    np.testing.assert_allclose(sol.u, np.zeros(2), atol=1e-6)
    assert sol.value == pytest.approx(0.0, abs=1e-9)


def test_expert_act_optimality_certificate(desk_spec, rng):
    x = desk_spec.system.x0
    sol = expert_act(desk_spec, x)
    problem = minimax_problem(desk_spec.system, desk_spec.envelope, x)
    for _ in range(1000):
        u = rng.uniform(-1, 1, size=2)
        vals = np.array(
            [
                0.5 * u @ problem.H[j] @ u + problem.q[j] @ u + problem.c[j]
                for j in range(3)
            ]
        )
        assert sol.value <= (problem.weights @ vals).max() + 2e-5


# -- step_dynamics ---------------------------------------------------------------


def test_step_dynamics_identity_raw():
    sys_ = generate_system(4, 2, 3, seed=9)
    frozen = replace(
        sys_, A=np.repeat(np.eye(4)[None], 3, axis=0)
    )
    x = np.array([0.1, -0.2, 0.3, 0.4])
    out = step_dynamics(frozen, x, np.zeros(2), 1, state_mode="raw")
    np.testing.assert_allclose(out, x, atol=1e-15)


def test_step_dynamics_zero_fixed_point():
    sys_ = generate_system(4, 2, 3, seed=9)
    out = step_dynamics(sys_, np.zeros(4), np.zeros(2), 2, state_mode="raw")
    np.testing.assert_allclose(out, np.zeros(4), atol=1e-15)


def test_step_dynamics_renormalize_unit_norm(rng):
    sys_ = generate_system(4, 2, 3, seed=9)
    for w in (1, 2, 3):
        out = step_dynamics(sys_, rng.normal(size=4), rng.uniform(-1, 1, 2), w)
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)


def test_step_dynamics_rejects_out_of_range_outcome():
    sys_ = generate_system(4, 2, 3, seed=9)
    with pytest.raises(ValueError):
        step_dynamics(sys_, np.zeros(4), np.zeros(2), 0)
    with pytest.raises(ValueError):
        step_dynamics(sys_, np.zeros(4), np.zeros(2), 4)


# -- serialization -----------------------------------------------------------------


def test_system_json_round_trip():
    sys_ = generate_system(4, 2, 3, seed=10)
    payload = json.loads(system_to_json(sys_))
    assert payload["n"] == 4 and payload["m"] == 2 and payload["L"] == 3
    back = system_from_json(system_to_json(sys_))
    for field in ("A", "B", "Q", "R", "u_lo", "u_hi", "x0"):
        assert (getattr(back, field) == getattr(sys_, field)).all()
