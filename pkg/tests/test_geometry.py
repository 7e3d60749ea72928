"""Simplex-restricted polytope geometry: projection, clipping, enumeration."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsirl import (
    DegenerateDirection,
    EmptyEnvelope,
    Envelope,
    HalfSpace,
    RefinementDirection,
    TooManyConstraints,
    clip_envelope,
    cosine_similarity,
    enumerate_vertices,
    envelope_area,
    envelope_from_json,
    envelope_to_json,
    project_to_simplex_tangent,
)

SQ2 = np.sqrt(2.0)
SQ6 = np.sqrt(6.0)


def _sorted_rows(a):
    a = np.asarray(a, dtype=float)
    return a[np.lexsort(a.T[::-1])]


# -- types ---------------------------------------------------------------


def test_halfspace_rejects_zero_normal():
    with pytest.raises(ValueError):
        HalfSpace(np.zeros(3), 1.0)


def test_refinement_direction_requires_zero_sum_unit_norm():
    RefinementDirection(np.array([1.0, -1.0]) / SQ2)
    with pytest.raises(ValueError):
        RefinementDirection(np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        RefinementDirection(np.array([1.0, -1.0]))


def test_envelope_rejects_off_simplex_vertices():
    with pytest.raises(ValueError):
        Envelope(3, (), np.array([[0.5, 0.2, 0.2]]))


def test_envelope_rejects_vertex_violating_halfspace():
    h = HalfSpace(np.array([1.0, 0.0, 0.0]), 0.25)
    with pytest.raises(ValueError):
        Envelope(3, (h,), np.eye(3))


# -- project_to_simplex_tangent ------------------------------------------


def test_projection_of_increasing_vector():
    d = project_to_simplex_tangent([1.0, 2.0, 3.0])
    np.testing.assert_allclose(d.direction, np.array([-1, 0, 1]) / SQ2, atol=1e-12)


def test_projection_of_constant_vector_degenerates():
    with pytest.raises(DegenerateDirection):
        project_to_simplex_tangent([5.0, 5.0, 5.0])


def test_projection_of_single_spike():
    d = project_to_simplex_tangent([2.0, 0.0, 0.0])
    np.testing.assert_allclose(d.direction, np.array([2, -1, -1]) / SQ6, atol=1e-12)


@given(
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.floats(-100, 100),
)
def test_projection_shift_invariance(g, c):
    g = np.asarray(g)
    if np.linalg.norm(g - g.mean()) < 1e-6:
        return
    a = project_to_simplex_tangent(g)
    b = project_to_simplex_tangent(g + c)
    np.testing.assert_allclose(a.direction, b.direction, atol=1e-9)


@given(
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.floats(0.01, 100),
)
def test_projection_scale_invariance(g, s):
    g = np.asarray(g)
    if np.linalg.norm(g - g.mean()) < 1e-6:
        return
    base = project_to_simplex_tangent(g).direction
    np.testing.assert_allclose(
        project_to_simplex_tangent(s * g).direction, base, atol=1e-9
    )
    np.testing.assert_allclose(
        project_to_simplex_tangent(-s * g).direction, -base, atol=1e-9
    )


# -- cosine_similarity -----------------------------------------------------


def test_cosine_of_direction_with_itself():
    d = project_to_simplex_tangent([1.0, 2.0, 3.0])
    assert cosine_similarity(d, d) == pytest.approx(1.0, abs=1e-12)


def test_cosine_of_opposite_directions():
    d = project_to_simplex_tangent([1.0, 2.0, 3.0])
    flipped = RefinementDirection(-d.direction)
    assert cosine_similarity(d, flipped) == pytest.approx(-1.0, abs=1e-12)


def test_cosine_of_orthogonal_zero_sum_directions():
    a = RefinementDirection(np.array([-1.0, 0.0, 1.0]) / SQ2)
    b = RefinementDirection(np.array([1.0, -2.0, 1.0]) / SQ6)
    assert cosine_similarity(a, b) == pytest.approx(0.0, abs=1e-12)


# -- clip_envelope ---------------------------------------------------------


def test_clip_with_slack_halfspace_is_identity(simplex3):
    clipped, refined = clip_envelope(simplex3, HalfSpace([1.0, 0.0, 0.0], 2.0))
    assert not refined
    assert len(clipped.halfspaces) == 0
    for d in np.eye(3):
        assert clipped.support(d) == pytest.approx(simplex3.support(d), abs=1e-12)


def test_clip_simplex_at_half(simplex3):
    clipped, refined = clip_envelope(simplex3, HalfSpace([1.0, 0.0, 0.0], 0.5))
    assert refined
    expected = _sorted_rows(
        [[0, 1, 0], [0, 0, 1], [0.5, 0.5, 0], [0.5, 0, 0.5]]
    )
    np.testing.assert_allclose(_sorted_rows(clipped.vertices), expected, atol=1e-9)


def test_clip_that_excludes_simplex_raises(simplex3):
    with pytest.raises(EmptyEnvelope):
        clip_envelope(simplex3, HalfSpace([1.0, 0.0, 0.0], -0.1))


def test_clip_idempotence(simplex3, rng):
    h = HalfSpace([1.0, 0.0, 0.0], 0.5)
    once, _ = clip_envelope(simplex3, h)
    twice, refined = clip_envelope(once, h)
    assert not refined
    for _ in range(100):
        d = rng.normal(size=3)
        assert twice.support(d) == pytest.approx(once.support(d), abs=1e-8)


def test_clip_monotone_area_and_strict_refinement(simplex3, rng):
    env = simplex3
    for _ in range(40):
        normal = rng.normal(size=3)
        if np.linalg.norm(normal) < 1e-6:
            continue
        offset = env.support(normal) - abs(rng.normal()) * 0.1
        try:
            clipped, refined = clip_envelope(env, HalfSpace(normal, offset))
        except EmptyEnvelope:
            continue
        assert envelope_area(clipped) <= envelope_area(env) + 1e-12
        if refined:
            assert env.support(normal) > offset + 1e-7
            assert env.support(normal) - clipped.support(normal) >= 1e-7 - 1e-9
        env = clipped


# -- enumerate_vertices ------------------------------------------------------


def test_enumerate_bare_simplex():
    verts = enumerate_vertices((), 3)
    np.testing.assert_allclose(
        _sorted_rows(verts), _sorted_rows(np.eye(3)), atol=1e-12
    )


def test_enumerate_single_cut():
    verts = enumerate_vertices((HalfSpace([1.0, 0.0, 0.0], 0.5),), 3)
    expected = _sorted_rows(
        [[0, 1, 0], [0, 0, 1], [0.5, 0.5, 0], [0.5, 0, 0.5]]
    )
    np.testing.assert_allclose(_sorted_rows(verts), expected, atol=1e-9)


def test_enumerate_ignores_redundant_cut():
    hs = (
        HalfSpace([1.0, 0.0, 0.0], 0.6),
        HalfSpace([1.0, 0.0, 0.0], 0.5),
    )
    verts = enumerate_vertices(hs, 3)
    expected = _sorted_rows(
        [[0, 1, 0], [0, 0, 1], [0.5, 0.5, 0], [0.5, 0, 0.5]]
    )
    np.testing.assert_allclose(_sorted_rows(verts), expected, atol=1e-9)


def test_enumerate_outputs_feasible(rng):
    hs = tuple(
        HalfSpace(rng.normal(size=3), 0.4 + 0.3 * rng.random())
        for _ in range(5)
    )
    verts = enumerate_vertices(hs, 3)
    for v in verts:
        assert v.min() >= -1e-9
        assert v.sum() == pytest.approx(1.0, abs=1e-9)
        for h in hs:
            assert h.normal @ v <= h.offset + 1e-9 * max(
                1.0, np.linalg.norm(h.normal)
            )


def test_enumerate_cap_guard():
    hs = tuple(HalfSpace([1.0, 0.0, 0.0], 0.5 + i) for i in range(10))
    with pytest.raises(TooManyConstraints):
        enumerate_vertices(hs, 3, cap=5)


# -- envelope_area ------------------------------------------------------------


def test_area_of_full_simplex(simplex3):
    assert envelope_area(simplex3) == pytest.approx(np.sqrt(3) / 2, abs=1e-12)


def test_area_of_point_envelope():
    env = Envelope(3, (), np.array([[1.0, 0.0, 0.0]]))
    assert envelope_area(env) == 0.0


def test_area_of_half_clipped_simplex(simplex3):
    clipped, _ = clip_envelope(simplex3, HalfSpace([1.0, 0.0, 0.0], 0.5))
    assert envelope_area(clipped) == pytest.approx(
        np.sqrt(3) / 2 * 0.75, abs=1e-12
    )


# -- H/V duality --------------------------------------------------------------


def test_support_matches_lp_over_halfspaces(rng):
    from rsirl import LinearProgram, solve_lp

    env = Envelope.simplex(3)
    for offset in (0.7, 0.5, 0.45):
        env, _ = clip_envelope(env, HalfSpace(rng.normal(size=3), offset))
    for _ in range(100):
        c = rng.normal(size=3)
        c /= np.linalg.norm(c)
        rows = [h.normal for h in env.halfspaces]
        rhs = [h.offset for h in env.halfspaces]
        lp = LinearProgram(
            objective=c,
            a_ub=np.array(rows) if rows else None,
            b_ub=np.array(rhs) if rhs else None,
            a_eq=np.ones((1, 3)),
            b_eq=np.array([1.0]),
        )
        lp_val = solve_lp(lp).value
        assert env.support(c) == pytest.approx(lp_val, abs=1e-7)


# -- serialization -------------------------------------------------------------


def test_json_round_trip(simplex3):
    clipped, _ = clip_envelope(simplex3, HalfSpace([1.0, 0.0, 0.0], 0.5))
    text = envelope_to_json(clipped)
    payload = json.loads(text)
    assert payload["L"] == 3
    assert {"normal", "offset"} <= set(payload["halfspaces"][0])
    back = envelope_from_json(text)
    np.testing.assert_array_equal(back.vertices, clipped.vertices)
    assert back.dimension == clipped.dimension
    for h0, h1 in zip(back.halfspaces, clipped.halfspaces):
        np.testing.assert_array_equal(h0.normal, h1.normal)
        assert h0.offset == h1.offset
