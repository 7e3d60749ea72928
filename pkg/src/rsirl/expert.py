"""Risk-sensitive experts for switched linear-quadratic systems.

A system has L disturbance outcomes, each selecting a linear dynamics pair
(A_j, B_j).  The one-step cost under outcome j is u'Ru + x_next'Q x_next,
a convex quadratic in the action.  The expert plays the action minimizing
the worst-case expected cost over its risk envelope, subject to box bounds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import DegenerateHull
from .geometry import Envelope, HalfSpace, envelope_area, tangent_basis
from .solvers import MinimaxProblem, MinimaxSolution, SolverOptions, solve_minimax

# Degenerate-hull retry budget for random envelope generation.
_HULL_RETRIES = 10


@dataclass(frozen=True)
class LinearQuadraticSystem:
    """Switched LQ system with per-outcome dynamics and a shared cost."""

    n: int
    m: int
    L: int
    A: np.ndarray  # (L, n, n)
    B: np.ndarray  # (L, n, m)
    Q: np.ndarray  # (n, n) PSD
    R: np.ndarray  # (m, m) PD
    u_lo: np.ndarray  # (m,)
    u_hi: np.ndarray  # (m,)
    x0: np.ndarray  # (n,)

    def __post_init__(self):
        for name in ("A", "B", "Q", "R", "u_lo", "u_hi", "x0"):
            object.__setattr__(
                self, name, np.asarray(getattr(self, name), dtype=float)
            )
        if self.A.shape != (self.L, self.n, self.n):
            raise ValueError("A must have shape (L, n, n)")
        if self.B.shape != (self.L, self.n, self.m):
            raise ValueError("B must have shape (L, n, m)")
        if np.any(self.u_lo >= self.u_hi):
            raise ValueError("need u_lo < u_hi componentwise")


@dataclass(frozen=True)
class ExpertSpec:
    """A system, the expert's true risk envelope, and nature's true pmf.

    The pmf drives passive disturbance sampling; it defaults to uniform
    over the L outcomes and is unknown to the learner.
    """

    system: LinearQuadraticSystem
    envelope: Envelope
    pmf: np.ndarray | None = None

    def __post_init__(self):
        if self.envelope.dimension != self.system.L:
            raise ValueError("envelope dimension must match outcome count")
        if self.pmf is None:
            object.__setattr__(self, "pmf", np.full(self.system.L, 1.0 / self.system.L))
        else:
            object.__setattr__(self, "pmf", np.asarray(self.pmf, dtype=float))
        if self.pmf.shape != (self.system.L,):
            raise ValueError("pmf must have one entry per outcome")
        if np.any(self.pmf < 0.0) or abs(float(self.pmf.sum()) - 1.0) > 1e-9:
            raise ValueError("pmf must be nonnegative and sum to one")


@dataclass(frozen=True)
class Demonstration:
    """One observed state-action pair.

    w is the realized 1-based disturbance outcome and tau_star the expert's
    worst-case objective at x, when known.
    """

    x: np.ndarray
    u: np.ndarray
    w: int | None = None
    tau_star: float | None = None


def generate_system(
    n: int, m: int, L: int, seed: int, u_bound: float = 1.0
) -> LinearQuadraticSystem:
    """Random system: A, B standard normal per outcome, Q = M'M, R identity.

    Draw order from the (seed,)-keyed stream is A, B, M, x0; the action box
    is the symmetric [-u_bound, u_bound]^m.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed,)))
    a = rng.standard_normal((L, n, n))
    b = rng.standard_normal((L, n, m))
    mm = rng.standard_normal((n, n))
    x0 = rng.standard_normal(n)
    return LinearQuadraticSystem(
        n=n,
        m=m,
        L=L,
        A=a,
        B=b,
        Q=mm.T @ mm,
        R=np.eye(m),
        u_lo=-u_bound * np.ones(m),
        u_hi=u_bound * np.ones(m),
        x0=x0,
    )


def generate_envelope(L: int, n_points: int, seed: int) -> Envelope:
    """Random envelope: convex hull of n_points Dirichlet(1) samples.

    Hull facets are lifted from tangent coordinates back to half-spaces on
    the simplex.  Retries with fresh draws when the sample hull is
    degenerate; DegenerateHull after the retry budget is exhausted.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed,)))
    basis = tangent_basis(L)
    center = np.full(L, 1.0 / L)
    for _ in range(_HULL_RETRIES):
        points = rng.dirichlet(np.ones(L), size=n_points)
        coords = (points - center) @ basis.T
        try:
            hull = ConvexHull(coords)
        except QhullError:
            continue
        halfspaces = []
        for eq in hull.equations:  # a . t + b <= 0
            normal = basis.T @ eq[:-1]
            offset = -eq[-1] + normal @ center
            halfspaces.append(HalfSpace(normal, offset))
        vertices = points[hull.vertices]
        envelope = Envelope(L, tuple(halfspaces), vertices)
        if envelope_area(envelope) > 1e-6:
            return envelope
    raise DegenerateHull(f"no nondegenerate hull after {_HULL_RETRIES} draws")


def cost_quadratics(system: LinearQuadraticSystem, x):
    """Per-outcome quadratic coefficients of u -> cost at state x.

    cost_j(u) = 0.5 u'H_j u + q_j'u + c_j with
    H_j = 2(R + B_j'QB_j), q_j = 2 B_j'Q A_j x, c_j = (A_j x)'Q(A_j x).
    """
    x = np.asarray(x, dtype=float)
    ax = np.einsum("jnk,k->jn", system.A, x)  # (L, n)
    qb = np.einsum("nk,jkm->jnm", system.Q, system.B)  # (L, n, m)
    h = 2.0 * (system.R[None] + np.einsum("jnm,jnp->jmp", system.B, qb))
    q = 2.0 * np.einsum("jnm,jn->jm", qb, ax)
    c = np.einsum("jn,nk,jk->j", ax, system.Q, ax)
    return h, q, c


def cost_vector(system: LinearQuadraticSystem, x, u) -> np.ndarray:
    """Realized cost per outcome at the pair (x, u), shape (L,)."""
    u = np.asarray(u, dtype=float)
    h, q, c = cost_quadratics(system, x)
    return 0.5 * np.einsum("m,jmn,n->j", u, h, u) + q @ u + c


def minimax_problem(
    system: LinearQuadraticSystem, envelope: Envelope, x
) -> MinimaxProblem:
    h, q, c = cost_quadratics(system, x)
    return MinimaxProblem(
        H=h, q=q, c=c, lo=system.u_lo, hi=system.u_hi, weights=envelope.vertices
    )


def expert_act(
    spec: ExpertSpec, x, options: SolverOptions | None = None
) -> MinimaxSolution:
    """Worst-case-optimal action of the expert at state x."""
    return solve_minimax(minimax_problem(spec.system, spec.envelope, x), options)


def step_dynamics(
    system: LinearQuadraticSystem,
    x,
    u,
    w: int,
    state_mode: str = "renormalize",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Advance the state under the 1-based disturbance outcome w.

    state_mode controls growth of the closed loop: "raw" keeps A_w x + B_w u,
    "renormalize" rescales it to unit norm, "redraw" discards it for a fresh
    standard-normal state from rng.
    """
    if not 1 <= w <= system.L:
        raise ValueError(f"disturbance index {w} outside 1..{system.L}")
    if state_mode == "redraw":
        if rng is None:
            raise ValueError("redraw mode needs a generator")
        return rng.standard_normal(system.n)
    x_next = system.A[w - 1] @ np.asarray(x, dtype=float) + system.B[w - 1] @ np.asarray(
        u, dtype=float
    )
    if state_mode == "raw":
        return x_next
    if state_mode == "renormalize":
        norm = float(np.linalg.norm(x_next))
        if norm < 1e-12:
            return x_next
        return x_next / norm
    raise ValueError(f"unknown state_mode {state_mode!r}")


# -- serialization -----------------------------------------------------------


def system_to_json(system: LinearQuadraticSystem) -> str:
    doc = {
        "n": system.n,
        "m": system.m,
        "L": system.L,
        "A": system.A.tolist(),
        "B": system.B.tolist(),
        "Q": system.Q.tolist(),
        "R": system.R.tolist(),
        "u_lo": system.u_lo.tolist(),
        "u_hi": system.u_hi.tolist(),
        "x0": system.x0.tolist(),
    }
    return json.dumps(doc, indent=2)


def system_from_json(text: str) -> LinearQuadraticSystem:
    doc = json.loads(text)
    return LinearQuadraticSystem(
        n=int(doc["n"]),
        m=int(doc["m"]),
        L=int(doc["L"]),
        A=doc["A"],
        B=doc["B"],
        Q=doc["Q"],
        R=doc["R"],
        u_lo=doc["u_lo"],
        u_hi=doc["u_hi"],
        x0=doc["x0"],
    )
