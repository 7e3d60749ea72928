"""Polytope geometry on the probability simplex.

Envelopes are polytopic subsets of the simplex kept in dual representation:
an explicit list of half-spaces (the simplex constraints stay implicit) and
the synchronized vertex list of the intersection.  Vertex enumeration is
combinatorial brute force, exact at the small dimensions and constraint
counts this library produces.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDirection, EmptyEnvelope, TooManyConstraints

# Feasibility slack for membership tests.
FEAS_TOL = 1e-9
# Two points closer than this (max-norm) are the same vertex.
DEDUP_TOL = 1e-8
# A cut must beat the current support value by this much to count as a
# strict refinement; kept two orders above FEAS_TOL so FP noise cannot flip
# the decision.
STRICT_TOL = 1e-7

DEFAULT_SUBSET_CAP = 10**6


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def tangent_basis(dim: int) -> np.ndarray:
    """Orthonormal basis of the zero-sum subspace of R^dim (Helmert rows),
    shape (dim-1, dim)."""
    rows = np.zeros((dim - 1, dim))
    for k in range(1, dim):
        rows[k - 1, :k] = 1.0
        rows[k - 1, k] = -float(k)
        rows[k - 1] /= math.sqrt(k * (k + 1))
    return rows


@dataclass(frozen=True)
class HalfSpace:
    """The set {v : normal . v <= offset}."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        object.__setattr__(self, "normal", _readonly(self.normal))
        object.__setattr__(self, "offset", float(self.offset))
        if self.normal.ndim != 1 or not np.any(self.normal != 0.0):
            raise ValueError("half-space normal must be a nonzero vector")

    def slack(self, points: np.ndarray) -> np.ndarray:
        """offset - normal . v, nonnegative inside."""
        return self.offset - np.asarray(points, dtype=float) @ self.normal


@dataclass(frozen=True)
class RefinementDirection:
    """Unit vector in the simplex tangent space (components sum to zero)."""

    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "direction", _readonly(self.direction))
        d = self.direction
        if abs(float(d.sum())) > 1e-9:
            raise ValueError("refinement direction must sum to zero")
        if abs(float(np.linalg.norm(d)) - 1.0) > 1e-9:
            raise ValueError("refinement direction must have unit norm")


@dataclass(frozen=True)
class Envelope:
    """Polytope = simplex  intersect  all half-spaces, with vertex list."""

    dimension: int
    halfspaces: tuple[HalfSpace, ...]
    vertices: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "halfspaces", tuple(self.halfspaces))
        v = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        object.__setattr__(self, "vertices", _readonly(v))
        if v.shape[0] == 0 or v.shape[1] != self.dimension:
            raise ValueError("vertex array must be nonempty with shape (nv, L)")
        if v.min() < -FEAS_TOL:
            raise ValueError("vertex outside the nonnegative orthant")
        if np.abs(v.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("vertex off the simplex hyperplane")
        for h in self.halfspaces:
            # scale-relative: vertices come from unit-normalized enumeration
            if h.slack(v).min() < -FEAS_TOL * float(np.linalg.norm(h.normal)):
                raise ValueError("vertex violates a stored half-space")

    @classmethod
    def simplex(cls, dimension: int) -> "Envelope":
        return cls(dimension, (), np.eye(dimension))

    def support(self, direction) -> float:
        """max of direction . v over the vertex list."""
        return float(np.max(self.vertices @ np.asarray(direction, dtype=float)))

    def contains(self, point, tol: float = FEAS_TOL) -> bool:
        p = np.asarray(point, dtype=float)
        if p.min() < -tol or abs(p.sum() - 1.0) > tol:
            return False
        return all(h.slack(p) >= -tol for h in self.halfspaces)


def project_to_simplex_tangent(g) -> RefinementDirection:
    """Unit direction of g within the simplex tangent space.

    Subtracts the mean component and normalizes, yielding the orientation of
    the simplex segment perpendicular to the cost vector g.  Raises
    DegenerateDirection when g is (numerically) proportional to all-ones.
    """
    g = np.asarray(g, dtype=float)
    if g.ndim != 1 or g.size < 2:
        raise ValueError("need a vector of dimension >= 2")
    centered = g - g.mean()
    norm = float(np.linalg.norm(centered))
    if norm < 1e-12:
        raise DegenerateDirection(
            "cost vector proportional to all-ones; direction undefined"
        )
    return RefinementDirection(centered / norm)


def cosine_similarity(a: RefinementDirection, b: RefinementDirection) -> float:
    """Inner product of two unit directions, clipped into [-1, 1]."""
    return float(np.clip(a.direction @ b.direction, -1.0, 1.0))


def _constraint_rows(halfspaces, dim):
    """Stack nonnegativity rows (-v_i <= 0) and half-space rows (n.v <= b)."""
    normals = [-np.eye(dim)]
    offsets = [np.zeros(dim)]
    if halfspaces:
        normals.append(np.array([h.normal for h in halfspaces], dtype=float))
        offsets.append(np.array([h.offset for h in halfspaces], dtype=float))
    return np.vstack(normals), np.concatenate(offsets)


def enumerate_vertices(
    halfspaces,
    dim: int,
    cap: int = DEFAULT_SUBSET_CAP,
) -> np.ndarray:
    """Exact vertex set of (simplex  intersect  half-spaces).

    Every (dim-1)-subset of constraint boundaries is intersected with the
    sum-to-one hyperplane; solutions feasible for all constraints within
    FEAS_TOL are kept and deduplicated within DEDUP_TOL.  Output rows are
    sorted lexicographically.  Returns an empty (0, dim) array for an empty
    intersection.
    """
    normals, offsets = _constraint_rows(halfspaces, dim)
    n_con = normals.shape[0]
    n_active = dim - 1
    if math.comb(n_con, n_active) > cap:
        raise TooManyConstraints(
            f"C({n_con},{n_active}) candidate subsets exceed cap {cap}"
        )

    # Unit-normalize rows so the determinant threshold is scale-free.
    scale = np.linalg.norm(normals, axis=1)
    normals = normals / scale[:, None]
    offsets = offsets / scale

    combos = np.array(
        list(itertools.combinations(range(n_con), n_active)), dtype=int
    )
    systems = np.empty((len(combos), dim, dim))
    rhs = np.empty((len(combos), dim))
    systems[:, :n_active, :] = normals[combos]
    systems[:, n_active, :] = 1.0
    rhs[:, :n_active] = offsets[combos]
    rhs[:, n_active] = 1.0

    dets = np.abs(np.linalg.det(systems))
    solvable = dets > 1e-12
    if not np.any(solvable):
        return np.empty((0, dim))
    points = np.linalg.solve(systems[solvable], rhs[solvable, :, None])[..., 0]

    slack = offsets[None, :] - points @ normals.T
    feasible = slack.min(axis=1) >= -FEAS_TOL
    points = points[feasible]
    if points.shape[0] == 0:
        return np.empty((0, dim))

    order = np.lexsort(points.T[::-1])
    points = points[order]
    keep = []
    for p in points:
        if not keep or all(np.max(np.abs(p - q)) > DEDUP_TOL for q in keep):
            keep.append(p)
    return np.array(keep)


def _clip_polygon(vertices: np.ndarray, halfspace: HalfSpace) -> np.ndarray:
    """Cut an L=3 vertex polygon by one half-space.

    The polygon is walked in angular order; surviving vertices are kept
    verbatim and each crossing edge contributes its interpolated boundary
    point.  Every output row is therefore a convex combination of input
    rows, so the cut polygon never sticks out of the original one and the
    area is monotone to machine precision.  Rows come back deduplicated
    within DEDUP_TOL and sorted lexicographically.
    """
    normal = np.asarray(halfspace.normal, dtype=float)
    tol = FEAS_TOL * max(1.0, float(np.linalg.norm(normal)))
    basis = tangent_basis(3)
    coords = (vertices - 1.0 / 3.0) @ basis.T
    rel = coords - coords.mean(axis=0)
    order = np.argsort(np.arctan2(rel[:, 1], rel[:, 0]))
    poly = vertices[order]
    vals = poly @ normal - float(halfspace.offset)

    points = []
    k = poly.shape[0]
    for i in range(k):
        j = (i + 1) % k
        va, vb = vals[i], vals[j]
        if va <= tol:
            points.append(poly[i])
        # sign straddle only: a tolerated boundary vertex is already kept,
        # and interpolating from it would extrapolate past the edge
        if (va < 0.0) != (vb < 0.0):
            t = va / (va - vb)
            if 0.0 < t < 1.0:
                points.append(poly[i] + t * (poly[j] - poly[i]))
    if not points:
        return np.empty((0, 3))

    points = np.array(points)
    points = points[np.lexsort(points.T[::-1])]
    keep = []
    for p in points:
        if not keep or all(np.max(np.abs(p - q)) > DEDUP_TOL for q in keep):
            keep.append(p)
    return np.array(keep)


def clip_envelope(
    envelope: Envelope,
    halfspace: HalfSpace,
    cap: int = DEFAULT_SUBSET_CAP,
) -> tuple[Envelope, bool]:
    """Intersect the envelope with one half-space.

    Returns (clipped, refined).  refined is True iff the cut strictly
    shrinks the envelope (support along the normal drops by more than
    STRICT_TOL); a redundant half-space is not appended and the original
    envelope is returned unchanged.  Raises EmptyEnvelope when the cut
    excludes the whole envelope.  In the planar case the existing polygon
    is cut incrementally; re-enumeration from the half-space set is the
    general-dimension fallback.
    """
    support = envelope.support(halfspace.normal)
    if support <= halfspace.offset + STRICT_TOL:
        return envelope, False
    halfspaces = envelope.halfspaces + (halfspace,)
    if envelope.dimension == 3:
        vertices = _clip_polygon(envelope.vertices, halfspace)
    else:
        vertices = enumerate_vertices(halfspaces, envelope.dimension, cap=cap)
    if vertices.shape[0] == 0:
        raise EmptyEnvelope("half-space excludes every point of the envelope")
    return Envelope(envelope.dimension, halfspaces, vertices), True


def envelope_area(envelope: Envelope) -> float:
    """Area of the envelope polygon in the plane of the simplex.

    Exact shoelace evaluation for L = 3; 0 for point or segment envelopes.
    For L >= 4 the (L-1)-volume of the vertex hull in tangent coordinates is
    reported instead.
    """
    verts = envelope.vertices
    nv, dim = verts.shape
    if nv < 3 or dim < 3:
        return 0.0
    basis = tangent_basis(dim)
    coords = (verts - 1.0 / dim) @ basis.T
    if dim == 3:
        center = coords.mean(axis=0)
        rel = coords - center
        order = np.argsort(np.arctan2(rel[:, 1], rel[:, 0]))
        x, y = coords[order, 0], coords[order, 1]
        return float(
            0.5 * abs(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
        )
    from scipy.spatial import ConvexHull, QhullError

    try:
        return float(ConvexHull(coords).volume)
    except QhullError:
        return 0.0


# -- serialization ----------------------------------------------------------


def envelope_to_json(envelope: Envelope) -> str:
    """JSON text with fields L, halfspaces, vertices (full double precision)."""
    doc = {
        "L": envelope.dimension,
        "halfspaces": [
            {"normal": [float(x) for x in h.normal], "offset": float(h.offset)}
            for h in envelope.halfspaces
        ],
        "vertices": [[float(x) for x in v] for v in envelope.vertices],
    }
    return json.dumps(doc, indent=2)


def envelope_from_json(text: str) -> Envelope:
    doc = json.loads(text)
    halfspaces = tuple(
        HalfSpace(np.array(h["normal"], dtype=float), float(h["offset"]))
        for h in doc["halfspaces"]
    )
    return Envelope(int(doc["L"]), halfspaces, np.array(doc["vertices"], dtype=float))
