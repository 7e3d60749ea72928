"""Envelope inference from expert demonstrations.

Each state-action pair is turned into one half-space on the simplex: the
pair's stationarity conditions restrict the mixtures the expert could have
been guarding against, and the largest expected cost consistent with them
bounds the support of the true envelope along the realized cost vector.
Intersecting these half-spaces monotonically shrinks the envelope estimate
around the truth.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateDirection, Infeasible, InfeasibleKkt
from .expert import (
    Demonstration,
    ExpertSpec,
    LinearQuadraticSystem,
    cost_quadratics,
    cost_vector,
    expert_act,
    minimax_problem,
    step_dynamics,
)
from .geometry import (
    Envelope,
    HalfSpace,
    RefinementDirection,
    clip_envelope,
    envelope_area,
    envelope_to_json,
    project_to_simplex_tangent,
)
from .solvers import LinearProgram, SolverOptions, solve_lp, solve_minimax

# An action component this close to its bound counts as saturated.
SATURATION_TOL = 1e-6


@dataclass(frozen=True)
class SaturationPattern:
    """0-based action coordinates pinned at the upper/lower bound."""

    upper: tuple[int, ...]
    lower: tuple[int, ...]


@dataclass(frozen=True)
class LearnerState:
    """Envelope estimate plus the history the active sampler needs."""

    envelope: Envelope
    directions: tuple[RefinementDirection, ...] = ()
    n_steps: int = 0
    n_refined: int = 0

    @classmethod
    def initial(cls, dimension: int) -> "LearnerState":
        return cls(envelope=Envelope.simplex(dimension))


@dataclass(frozen=True)
class StepRecord:
    step: int
    sampled_w: int
    tau_prime: float
    refined: bool
    area: float
    mse: float
    tau_star: float = float("nan")
    halfspace: HalfSpace | None = None
    preferences: np.ndarray | None = None
    probabilities: np.ndarray | None = None


def saturation_pattern(u, lo, hi, tol: float = SATURATION_TOL) -> SaturationPattern:
    u = np.asarray(u, dtype=float)
    upper = tuple(int(a) for a in np.flatnonzero(u >= np.asarray(hi) - tol))
    lower = tuple(int(a) for a in np.flatnonzero(u <= np.asarray(lo) + tol))
    return SaturationPattern(upper=upper, lower=lower)


def cost_gradient_matrix(system: LinearQuadraticSystem, x, u) -> np.ndarray:
    """Action gradients of the per-outcome costs, shape (m, L); column j is
    the gradient of cost_j at (x, u)."""
    h, q, _ = cost_quadratics(system, x)
    return (np.einsum("jmn,n->jm", h, np.asarray(u, dtype=float)) + q).T


@dataclass(frozen=True)
class KktCertificate:
    """Optimal point of the stationarity program backing a half-space.

    mixture is the maximizing weight vector over outcomes; sigma_upper and
    sigma_lower are the multipliers attached to the saturated coordinates,
    in the order listed by the saturation pattern.
    """

    mixture: np.ndarray
    sigma_upper: np.ndarray
    sigma_lower: np.ndarray


@dataclass(frozen=True)
class KktHalfspace:
    """A learned constraint together with the point that attains it."""

    halfspace: HalfSpace
    tau_prime: float
    certificate: KktCertificate


def kkt_halfspace(
    system: LinearQuadraticSystem,
    x,
    u,
    envelope: Envelope,
) -> KktHalfspace:
    """Largest expected cost consistent with the pair's optimality.

    Maximizes g . v over mixtures in the current envelope that satisfy the
    stationarity conditions: zero aggregated action gradient on free
    coordinates, sign-constrained at saturated ones (slack multipliers).
    Stationarity rows are relaxed by a gradient-scaled tolerance so that
    demonstrations solved to certificate accuracy stay feasible.  Returns
    the half-space {v : g . v <= tau_prime} with its attaining certificate.
    """
    g = np.asarray(cost_vector(system, x, u), dtype=float)
    grad = np.asarray(cost_gradient_matrix(system, x, u), dtype=float)  # (m, L)
    pattern = saturation_pattern(u, system.u_lo, system.u_hi)
    m, dim = grad.shape
    kappa = 1e-6 * (1.0 + float(np.max(np.abs(grad))))

    n_up, n_lo = len(pattern.upper), len(pattern.lower)
    n_var = dim + n_up + n_lo
    sig_up = {a: dim + i for i, a in enumerate(pattern.upper)}
    sig_lo = {a: dim + n_up + i for i, a in enumerate(pattern.lower)}

    rows, rhs = [], []
    for a in range(m):
        row = np.zeros(n_var)
        row[:dim] = grad[a]
        if a in sig_up:
            row[sig_up[a]] = 1.0
        if a in sig_lo:
            row[sig_lo[a]] = -1.0
        rows.append(row)
        rhs.append(kappa)
        rows.append(-row)
        rhs.append(kappa)
    for h in envelope.halfspaces:
        row = np.zeros(n_var)
        row[:dim] = h.normal
        rows.append(row)
        rhs.append(h.offset)

    objective = np.zeros(n_var)
    objective[:dim] = g
    lp = LinearProgram(
        objective=objective,
        a_ub=np.array(rows),
        b_ub=np.array(rhs),
        a_eq=np.concatenate([np.ones(dim), np.zeros(n_up + n_lo)])[None, :],
        b_eq=np.array([1.0]),
    )
    try:
        sol = solve_lp(lp)
    except Infeasible as exc:
        raise InfeasibleKkt(
            "no envelope mixture satisfies the stationarity conditions"
        ) from exc
    tau_prime = sol.value
    certificate = KktCertificate(
        mixture=sol.x[:dim],
        sigma_upper=sol.x[dim : dim + n_up],
        sigma_lower=sol.x[dim + n_up :],
    )
    return KktHalfspace(HalfSpace(g, tau_prime), tau_prime, certificate)


def process_demonstration(
    system: LinearQuadraticSystem,
    state: LearnerState,
    demo: Demonstration,
) -> tuple[LearnerState, StepRecord]:
    """Fold one demonstration into the envelope estimate.

    The step record carries tau_prime, the refinement flag and the area of
    the updated envelope; sampled_w and mse are filled by the episode loop.
    """
    result = kkt_halfspace(system, demo.x, demo.u, state.envelope)
    halfspace, tau_prime = result.halfspace, result.tau_prime
    envelope, refined = clip_envelope(state.envelope, halfspace)

    directions = state.directions
    if refined:
        try:
            directions = directions + (project_to_simplex_tangent(halfspace.normal),)
        except DegenerateDirection:
            pass
    new_state = replace(
        state,
        envelope=envelope,
        directions=directions,
        n_steps=state.n_steps + 1,
        n_refined=state.n_refined + int(refined),
    )
    record = StepRecord(
        step=state.n_steps + 1,
        sampled_w=0,
        tau_prime=tau_prime,
        refined=refined,
        area=envelope_area(envelope),
        mse=float("nan"),
        halfspace=halfspace,
    )
    return new_state, record


def predict_action(
    system: LinearQuadraticSystem,
    envelope: Envelope,
    x,
    options: SolverOptions | None = None,
    warm=None,
) -> np.ndarray:
    """Action a worst-case expert with the given envelope would take at x."""
    return solve_minimax(minimax_problem(system, envelope, x), options, warm).u


def _test_set_error(system, envelope, test_states, test_actions, opts, warm):
    """Per-pair squared errors plus the predictions, for warm reuse."""
    preds = np.array(
        [
            predict_action(
                system, envelope, x, opts, None if warm is None else warm[i]
            )
            for i, x in enumerate(test_states)
        ]
    )
    errs = np.sum((preds - test_actions) ** 2, axis=1)
    return float(np.mean(errs) / system.m), preds


def mean_squared_error(
    system: LinearQuadraticSystem,
    envelope: Envelope,
    test_states: np.ndarray,
    test_actions: np.ndarray,
    options: SolverOptions | None = None,
) -> float:
    """Mean over test pairs of |u_predicted - u_expert|^2 / m."""
    opts = options or SolverOptions.fast()
    return _test_set_error(
        system, envelope, test_states, np.asarray(test_actions), opts, None
    )[0]


# -- episode loop -------------------------------------------------------------


def _format(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def episode_csv_rows(records, dim: int, active: bool):
    """Header plus one formatted row per step record."""
    header = ["step", "sampled_w", "tau_prime", "refined", "area", "mse"]
    if active:
        header += [f"U_{j}" for j in range(1, dim + 1)]
        header += [f"p_{j}" for j in range(1, dim + 1)]
    yield header
    for r in records:
        row = [r.step, r.sampled_w, r.tau_prime, r.refined, r.area, r.mse]
        if active:
            prefs = r.preferences if r.preferences is not None else np.zeros(dim)
            probs = (
                r.probabilities
                if r.probabilities is not None
                else np.full(dim, 1.0 / dim)
            )
            row += list(prefs) + list(probs)
        yield [_format(v) for v in row]


def write_episode_csv(path, records, dim: int, active: bool) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(episode_csv_rows(records, dim, active))


def run_episode(
    spec: ExpertSpec,
    n_steps: int,
    seed: int,
    state_mode: str = "renormalize",
    sampler=None,
    solver_options: SolverOptions | None = None,
    eval_options: SolverOptions | None = None,
    test_states=None,
    test_actions=None,
    disturbance_sequence=None,
    eval_every: int = 1,
    snapshot_every: int = 0,
    snapshot_dir=None,
) -> tuple[LearnerState, list[StepRecord]]:
    """Demonstrate, infer, sample a disturbance, advance; repeat n_steps times.

    sampler(step, state, x, u_star, rng) returns (w, preferences,
    probabilities); None means draws from nature's pmf.  disturbance_sequence,
    when given, overrides sampling entirely (testing hook).  eval_every thins
    the held-out evaluation to every k-th step (rows in between carry the
    last value).  snapshot_every > 0 writes the envelope to snapshot_dir as
    envelope_step_NNNN.json at that interval.  Seed-derived streams:
    (seed, 1) disturbance sampling, (seed, 2) state redraws.
    """
    system = spec.system
    opts = solver_options or SolverOptions()
    eval_opts = eval_options or SolverOptions.fast()
    sample_rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    redraw_rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))
    if snapshot_every > 0:
        os.makedirs(snapshot_dir, exist_ok=True)

    state = LearnerState.initial(system.L)
    records: list[StepRecord] = []
    x = system.x0
    mse = float("nan")
    mse_stale = True
    eval_warm = None
    if test_states is not None:
        test_actions = np.asarray(test_actions, dtype=float)

    for step in range(1, n_steps + 1):
        sol = expert_act(spec, x, opts)
        u_star = sol.u
        state, record = process_demonstration(
            system, state, Demonstration(x=x, u=u_star, tau_star=sol.value)
        )
        if snapshot_every > 0 and step % snapshot_every == 0:
            path = os.path.join(snapshot_dir, f"envelope_step_{step:04d}.json")
            with open(path, "w") as fh:
                fh.write(envelope_to_json(state.envelope))
        mse_stale = mse_stale or record.refined
        if test_states is not None and mse_stale and step % eval_every == 0:
            # refinements only shrink the envelope, so each pair's previous
            # prediction warm-starts the next solve
            mse, eval_warm = _test_set_error(
                system, state.envelope, test_states, test_actions,
                eval_opts, eval_warm,
            )
            mse_stale = False

        if disturbance_sequence is not None:
            w, prefs, probs = int(disturbance_sequence[step - 1]), None, None
        elif sampler is None:
            w = int(sample_rng.choice(system.L, p=spec.pmf)) + 1
            prefs, probs = None, None
        else:
            w, prefs, probs = sampler(step, state, x, u_star, sample_rng)
        records.append(
            replace(
                record,
                sampled_w=w,
                mse=mse,
                tau_star=sol.value,
                preferences=prefs,
                probabilities=probs,
            )
        )
        x = step_dynamics(system, x, u_star, w, state_mode, rng=redraw_rng)
    return state, records


def run_passive(
    spec: ExpertSpec,
    n_steps: int,
    seed: int,
    state_mode: str = "renormalize",
    csv_path=None,
    **kw,
) -> tuple[LearnerState, list[StepRecord]]:
    """Episode with disturbances drawn from nature's pmf."""
    state, records = run_episode(
        spec, n_steps, seed, state_mode=state_mode, sampler=None, **kw
    )
    if csv_path is not None:
        write_episode_csv(csv_path, records, spec.system.L, active=False)
    return state, records
