"""Deterministic solvers: dense simplex LP and box-constrained minimax.

The minimax solver minimizes the worst case over an envelope of the expected
quadratic stage cost.  The max over the envelope is attained at its vertices,
so the objective is a pointwise max of per-vertex aggregated quadratics.  The
pinned first phase is multi-restart projected subgradient descent (compiled
kernel when available); a sequential quadratic polish then drives the best
iterate to stationarity, and an LP certificate over the active pieces
verifies global optimality of the convex problem before returning.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize as _nlp_minimize

from . import kernels
from .errors import Infeasible, NotConverged, Unbounded

_PIVOT_TOL = 1e-10
_PHASE1_TOL = 1e-8


@dataclass(frozen=True)
class LinearProgram:
    """maximize objective . x  s.t.  A_ub x <= b_ub, A_eq x = b_eq, x >= 0."""

    objective: np.ndarray
    a_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None


@dataclass(frozen=True)
class LpSolution:
    x: np.ndarray
    value: float


@dataclass(frozen=True)
class MinimaxProblem:
    """min over the box [lo, hi] of the envelope-worst-case expected cost.

    Per-outcome costs are quadratics 0.5 u'H_j u + q_j'u + c_j; weights holds
    the envelope vertices (rows of mixture weights over outcomes).
    """

    H: np.ndarray  # (L, m, m)
    q: np.ndarray  # (L, m)
    c: np.ndarray  # (L,)
    lo: np.ndarray  # (m,)
    hi: np.ndarray  # (m,)
    weights: np.ndarray  # (nv, L)


@dataclass(frozen=True)
class MinimaxSolution:
    u: np.ndarray
    value: float
    residual: float
    spread: float


@dataclass(frozen=True)
class SolverOptions:
    """Knobs for solve_minimax.

    Defaults are the pinned demonstration-grade settings.  fast() trades the
    certificate and the restart spread check for speed; use it only where the
    result feeds an error metric, never to generate demonstrations.
    """

    restarts: int = 5
    iters: int = 2000
    alpha0: float | None = None
    seed: int = 0
    tau_tol: float = 1e-5
    polish: bool = True
    verify: bool = True

    @classmethod
    def fast(cls) -> "SolverOptions":
        # the objective is convex, so one polished start already reaches the
        # optimum; extra restarts only hedge the certificate path
        return cls(restarts=1, iters=200, verify=False)


# -- linear programming ------------------------------------------------------


def _pivot(tableau, basis, row, col):
    tableau[row] /= tableau[row, col]
    mask = np.arange(tableau.shape[0]) != row
    tableau[mask] -= np.outer(tableau[mask, col], tableau[row])
    basis[row] = col


def _simplex_iterate(tableau, basis, cost, allowed):
    """Bland-rule simplex on a tableau in canonical form (basis columns are
    identity, rhs nonnegative).  cost is the maximization objective over all
    tableau columns; columns outside `allowed` never enter."""
    m = tableau.shape[0]
    while True:
        reduced = cost - cost[basis] @ tableau[:, :-1]
        reduced[~allowed] = 0.0
        entering = -1
        for j in np.flatnonzero(reduced > _PIVOT_TOL):
            entering = j
            break
        if entering < 0:
            return
        col = tableau[:, entering]
        rows = np.flatnonzero(col > _PIVOT_TOL)
        if rows.size == 0:
            raise Unbounded("objective unbounded over the feasible set")
        ratios = tableau[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12]
        leaving = ties[np.argmin(basis[ties])]
        _pivot(tableau, basis, leaving, entering)


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Two-phase dense simplex with Bland's rule.

    Deterministic for fixed input.  Raises Infeasible when no point satisfies
    the constraints within 1e-8, Unbounded when the maximum does not exist.
    """
    c = np.asarray(lp.objective, dtype=float)
    n = c.size
    rows, rhs = [], []
    if lp.a_eq is not None and len(lp.a_eq):
        a_eq = np.atleast_2d(np.asarray(lp.a_eq, dtype=float))
        rows.append(a_eq)
        rhs.append(np.asarray(lp.b_eq, dtype=float))
    n_eq_rows = sum(r.shape[0] for r in rows)
    n_ub = 0
    if lp.a_ub is not None and len(lp.a_ub):
        a_ub = np.atleast_2d(np.asarray(lp.a_ub, dtype=float))
        n_ub = a_ub.shape[0]
        rows.append(a_ub)
        rhs.append(np.asarray(lp.b_ub, dtype=float))
    if not rows:
        raise ValueError("LP needs at least one constraint row")
    a = np.vstack([np.hstack([r, np.zeros((r.shape[0], n_ub))]) for r in rows])
    # slack columns for the inequality block
    a[n_eq_rows:, n + np.arange(n_ub)] = np.eye(n_ub)
    b = np.concatenate(rhs)
    m = a.shape[0]

    neg = b < 0
    a[neg] *= -1.0
    b = np.abs(b)

    # phase 1: artificial basis, minimize the artificial mass
    n_tot = n + n_ub
    tableau = np.zeros((m, n_tot + m + 1))
    tableau[:, :n_tot] = a
    tableau[:, n_tot : n_tot + m] = np.eye(m)
    tableau[:, -1] = b
    basis = np.arange(n_tot, n_tot + m)
    cost1 = np.zeros(n_tot + m)
    cost1[n_tot:] = -1.0
    allowed = np.ones(n_tot + m, dtype=bool)
    _simplex_iterate(tableau, basis, cost1, allowed)
    if tableau[:, -1] @ (basis >= n_tot) > _PHASE1_TOL:
        raise Infeasible("no point satisfies the constraints within 1e-8")

    # pivot residual artificials out of the basis where a real column exists
    for i in range(m):
        if basis[i] >= n_tot:
            cols = np.flatnonzero(np.abs(tableau[i, :n_tot]) > _PIVOT_TOL)
            if cols.size:
                _pivot(tableau, basis, i, cols[0])

    keep_rows = basis < n_tot
    tableau = tableau[keep_rows]
    basis = basis[keep_rows]

    cost2 = np.zeros(n_tot + m)
    cost2[:n] = c
    allowed[n_tot:] = False
    _simplex_iterate(tableau, basis, cost2, allowed)

    x = np.zeros(n_tot + m)
    x[basis] = tableau[:, -1]
    x = x[:n]
    return LpSolution(x=x, value=float(c @ x))


# -- minimax -----------------------------------------------------------------


def _aggregate(problem: MinimaxProblem):
    """Per-vertex quadratics of the worst-case objective."""
    w = np.asarray(problem.weights, dtype=float)
    hv = np.einsum("ij,jmn->imn", w, np.asarray(problem.H, dtype=float))
    qv = w @ np.asarray(problem.q, dtype=float)
    cv = w @ np.asarray(problem.c, dtype=float)
    return hv, qv, cv


def _piece_values(hv, qv, cv, u):
    return 0.5 * np.einsum("m,imn,n->i", u, hv, u) + qv @ u + cv


def _objective(hv, qv, cv, u) -> float:
    return float(np.max(_piece_values(hv, qv, cv, u)))


def _sqp_polish(hv, qv, cv, lo, hi, u0):
    """Epigraph SQP refinement: min theta s.t. theta >= every piece value."""
    m = lo.size

    def cons(z):
        return z[-1] - _piece_values(hv, qv, cv, z[:m])

    def cons_jac(z):
        grads = np.einsum("imn,n->im", hv, z[:m]) + qv
        return np.hstack([-grads, np.ones((hv.shape[0], 1))])

    z0 = np.append(u0, _objective(hv, qv, cv, u0))
    res = _nlp_minimize(
        lambda z: z[-1],
        z0,
        jac=lambda z: np.append(np.zeros(m), 1.0),
        bounds=[(float(a), float(b)) for a, b in zip(lo, hi)] + [(None, None)],
        constraints=[{"type": "ineq", "fun": cons, "jac": cons_jac}],
        method="SLSQP",
        options={"maxiter": 200, "ftol": 1e-14},
    )
    u = np.clip(res.x[:m], lo, hi)
    if _objective(hv, qv, cv, u) <= _objective(hv, qv, cv, u0):
        return u
    return np.asarray(u0, dtype=float)


def _certificate_residual(hv, qv, cv, lo, hi, u) -> float:
    """LP bound on the stationarity residual at u.

    Finds mixture weights mu over the near-active pieces minimizing the
    largest violation of the box first-order conditions: zero aggregated
    gradient on free coordinates, nonnegative at the lower bound, nonpositive
    at the upper.  The returned optimum is 0 exactly at a minimizer.
    """
    vals = _piece_values(hv, qv, cv, u)
    fmax = vals.max()
    active = np.flatnonzero(vals >= fmax - 1e-6 * (1.0 + abs(fmax)))
    grads = np.einsum("imn,n->im", hv[active], u) + qv[active]  # (k, m)
    k = active.size
    bnd_tol = 1e-9 * (1.0 + np.max(np.abs(np.concatenate([lo, hi]))))
    at_lo = u <= lo + bnd_tol
    at_hi = u >= hi - bnd_tol

    # variables: mu_1..mu_k, s;   maximize -s
    rows, rhs = [], []
    for a in range(lo.size):
        g_col = grads[:, a]
        if not at_lo[a]:  # (G mu)_a <= s unless pinned at lo
            rows.append(np.append(g_col, -1.0))
            rhs.append(0.0)
        if not at_hi[a]:  # -(G mu)_a <= s unless pinned at hi
            rows.append(np.append(-g_col, -1.0))
            rhs.append(0.0)
    lp = LinearProgram(
        objective=np.append(np.zeros(k), -1.0),
        a_ub=np.array(rows) if rows else None,
        b_ub=np.array(rhs) if rows else None,
        a_eq=np.append(np.ones(k), 0.0)[None, :],
        b_eq=np.array([1.0]),
    )
    return -solve_lp(lp).value


def solve_minimax(
    problem: MinimaxProblem,
    options: SolverOptions | None = None,
    warm=None,
) -> MinimaxSolution:
    """Minimize the envelope-worst-case quadratic cost over the action box.

    Restarted projected subgradient descent, then SQP polish of every restart
    and an LP stationarity certificate on the winner.  A warm point replaces
    the midpoint start.  NotConverged is raised when the polished restarts
    disagree by more than 10 * tau_tol (relative) or the certificate residual
    stays above tolerance.
    """
    opt = options or SolverOptions()
    hv, qv, cv = _aggregate(problem)
    lo = np.asarray(problem.lo, dtype=float)
    hi = np.asarray(problem.hi, dtype=float)
    m = lo.size

    rng = np.random.default_rng(np.random.SeedSequence(opt.seed))
    u0s = np.empty((opt.restarts, m))
    u0s[0] = 0.5 * (lo + hi) if warm is None else np.clip(warm, lo, hi)
    if opt.restarts > 1:
        u0s[1:] = rng.uniform(lo, hi, size=(opt.restarts - 1, m))

    if opt.alpha0 is None:
        radius = 0.5 * float(np.linalg.norm(hi - lo))
        corner = np.maximum(np.abs(lo), np.abs(hi))
        grad_bound = max(
            float(
                np.max(
                    np.linalg.norm(hv, axis=(1, 2)) * np.linalg.norm(corner)
                    + np.linalg.norm(qv, axis=1)
                )
            ),
            1e-12,
        )
        alpha0 = radius / grad_bound
    else:
        alpha0 = opt.alpha0

    best_us, best_vals = kernels.subgradient(
        np.ascontiguousarray(hv),
        np.ascontiguousarray(qv),
        np.ascontiguousarray(cv),
        lo,
        hi,
        np.ascontiguousarray(u0s),
        opt.iters,
        alpha0,
    )

    if opt.polish:
        polished = [_sqp_polish(hv, qv, cv, lo, hi, u) for u in best_us]
        vals = np.array([_objective(hv, qv, cv, u) for u in polished])
    else:
        polished, vals = list(best_us), np.asarray(best_vals)

    order = int(np.argmin(vals))
    u_star, f_star = polished[order], float(vals[order])
    spread = float((vals.max() - vals.min()) / (1.0 + abs(f_star)))

    if not opt.verify:
        return MinimaxSolution(u=u_star, value=f_star, residual=np.nan, spread=spread)

    grad_scale = 1.0 + float(
        np.max(np.abs(np.einsum("imn,n->im", hv, u_star) + qv))
    )
    residual = _certificate_residual(hv, qv, cv, lo, hi, u_star)
    if residual > 1e-6 * grad_scale:
        # one more polish pass from the certified-failed point and the center
        for u0 in (u_star, 0.5 * (lo + hi)):
            u_try = _sqp_polish(hv, qv, cv, lo, hi, u0)
            f_try = _objective(hv, qv, cv, u_try)
            if f_try <= f_star + 1e-12 * (1.0 + abs(f_star)):
                r_try = _certificate_residual(hv, qv, cv, lo, hi, u_try)
                if r_try < residual:
                    u_star, f_star, residual = u_try, f_try, r_try
        if residual > 1e-6 * grad_scale:
            raise NotConverged(
                f"stationarity residual {residual:.3e} above tolerance"
            )
    if spread > 10.0 * opt.tau_tol:
        raise NotConverged(f"restart values disagree (relative spread {spread:.3e})")
    return MinimaxSolution(u=u_star, value=f_star, residual=residual, spread=spread)


def replace_options(options: SolverOptions, **kw) -> SolverOptions:
    return dataclasses.replace(options, **kw)
