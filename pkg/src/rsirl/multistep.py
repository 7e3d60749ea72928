"""Multi-step stages: car following with per-stage disturbance branches.

A stage is N consecutive steps of a leader-follower pair of double
integrators.  The leader's maneuver realizes mid-stage: the first n_prepare
actions are committed before it is revealed (the previous maneuver still
applies), the last n_react actions react to it, one open-loop sequence per
outcome.  The expert minimizes the deterministic prepare-phase cost plus the
worst case, over its envelope, of the expected tail cost.  Stage costs are
linear in a small set of convex features of the relative state, so observed
react sequences identify the feature weights through their stationarity
conditions, and each stage yields one envelope cut built from the
reconstructed scenario branches.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize as _nlp_minimize
from scipy.special import expit

from .active import PreferenceVector, boltzmann_sample
from .errors import (
    AllDegenerate,
    DegenerateDirection,
    GridTooLarge,
    IllConditioned,
    Infeasible,
    InfeasibleKkt,
    TooFewSequences,
)
from .geometry import (
    Envelope,
    HalfSpace,
    clip_envelope,
    envelope_area,
    project_to_simplex_tangent,
)
from .inference import KktCertificate, KktHalfspace, LearnerState
from .solvers import LinearProgram, solve_lp

_LOG2 = math.log(2.0)
N_FEATURES = 4


@dataclass(frozen=True)
class CarModel:
    """Leader and follower as double integrators on a shared lane.

    State is (x_f, v_f, x_l, v_l): follower position and velocity, then
    leader position and velocity.  The follower's acceleration is the
    action; the leader's is set by the realized maneuver index.
    """

    dt: float = 0.1
    u_lo: float = -4.0
    u_hi: float = 4.0
    accels: tuple[float, ...] = (0.0, 2.0, -2.0)

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if not self.u_lo < self.u_hi:
            raise ValueError("need u_lo < u_hi")

    @property
    def n_outcomes(self) -> int:
        return len(self.accels)


@dataclass(frozen=True)
class StageConfig:
    car: CarModel = field(default_factory=CarModel)
    n_prepare: int = 3
    n_react: int = 3
    gap: float = 7.0
    rates: tuple[float, float, float, float] = (3.0, 0.5, 0.5, 1.0)
    grid_points: int = 7
    grid_rounds: int = 4
    grid_cap: int = 10**6
    ramp_stages: int = 15
    nature_pmf: tuple[float, ...] | None = None
    # planned stages whose trajectories pass closer than this to a feature
    # kink (x_rel = gap, v_rel = 0) are rejected by the stage driver
    kink_margin: float = 0.02

    def __post_init__(self):
        if self.n_prepare < 1 or self.n_react < 1:
            raise ValueError("need at least one prepare and one react step")

    @property
    def n_steps(self) -> int:
        return self.n_prepare + self.n_react

    @property
    def n_outcomes(self) -> int:
        return self.car.n_outcomes

    @classmethod
    def desk(cls) -> "StageConfig":
        return cls()

    @classmethod
    def fidelity(cls) -> "StageConfig":
        # 4 s stages at 10 Hz; the published ramp-up frequencies do not sum
        # to one and are normalized here
        pmf = np.array([0.3, 0.4, 0.4])
        return cls(
            n_prepare=22,
            n_react=18,
            ramp_stages=40,
            nature_pmf=tuple(pmf / pmf.sum()),
        )


@dataclass(frozen=True)
class FeatureWeights:
    """Nonnegative unit-norm weights over the stage cost features.

    conditioning is the second-smallest singular value of the stationarity
    system the weights were recovered from (nan when not recovered).
    """

    alpha: np.ndarray
    conditioning: float = float("nan")

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)
        if a.shape != (N_FEATURES,):
            raise ValueError(f"need {N_FEATURES} weights")
        if a.min() < -1e-9 or abs(float(np.linalg.norm(a)) - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative with unit norm")

    @classmethod
    def uniform(cls) -> "FeatureWeights":
        return cls(np.full(N_FEATURES, 1.0 / math.sqrt(N_FEATURES)))


@dataclass(frozen=True)
class StageDemonstration:
    """One stage as observed by the learner: shared context, the committed
    prepare sequence and the react sequence of the realized outcome only.

    states, when recorded, is the full (n_steps + 1, 4) trajectory of the
    realized branch; stage_consistency_error checks it against the dynamics.
    """

    x0: np.ndarray  # (4,) stage start (x_f, v_f, x_l, v_l)
    w_prev: int  # 1-based maneuver still running through prepare
    u_prev: float  # last action of the previous stage
    prepare: np.ndarray  # (n_prepare,)
    react: np.ndarray  # (n_react,)
    w: int  # 1-based realized maneuver
    states: np.ndarray | None = None


@dataclass(frozen=True)
class StagePlan:
    """Expert solution of one stage: all scenario branches."""

    prepare: np.ndarray  # (n_prepare,)
    reacts: np.ndarray  # (L, n_react)
    tail_costs: np.ndarray  # (L,)
    prepare_cost: float
    value: float  # prepare_cost + worst-case expected tail cost


@dataclass(frozen=True)
class ReactLibrary:
    """Cluster centers of observed react sequences."""

    centers: np.ndarray  # (K, n_react)


@dataclass(frozen=True)
class StageRecord:
    stage: int
    realized_w: int
    tau_prime: float
    refined: bool
    area: float
    preferences: np.ndarray
    probabilities: np.ndarray
    alpha: np.ndarray
    halfspace: HalfSpace | None = None


def car_step(car: CarModel, state, u: float, j: int) -> np.ndarray:
    """One step of both cars: follower accelerates by u, leader by its
    maneuver-j acceleration."""
    if not 1 <= j <= car.n_outcomes:
        raise ValueError(f"maneuver index {j} outside 1..{car.n_outcomes}")
    x_f, v_f, x_l, v_l = np.asarray(state, dtype=float)
    a_l = car.accels[j - 1]
    dt = car.dt
    return np.array(
        [
            x_f + dt * v_f + 0.5 * dt**2 * u,
            v_f + dt * u,
            x_l + dt * v_l + 0.5 * dt**2 * a_l,
            v_l + dt * a_l,
        ]
    )


def _relative(state) -> np.ndarray:
    """(x_rel, v_rel) = leader minus follower position and velocity."""
    s = np.asarray(state, dtype=float)
    return np.array([s[2] - s[0], s[3] - s[1]])


def _rel_step(car: CarModel, rel, u: float, a_lead: float) -> np.ndarray:
    """Double-integrator step of the relative state."""
    x, v = float(rel[0]), float(rel[1])
    a = a_lead - u
    return np.array([x + car.dt * v + 0.5 * car.dt**2 * a, v + car.dt * a])


def car_features(config: StageConfig, next_state, u: float, u_prev: float):
    """Feature vector of one step, evaluated at the successor state.

    Two one-sided gap penalties around config.gap, a squared control
    difference, and a symmetric relative-speed penalty; the state terms
    vanish at (x_rel, v_rel) = (gap, 0).
    """
    phi = _state_features(config, _relative(next_state)[None, :])[0]
    phi[2] = config.rates[2] * (u - u_prev) ** 2
    return phi


def stage_consistency_error(config: StageConfig, demo: StageDemonstration) -> float:
    """Largest deviation of the recorded trajectory from the dynamics."""
    if demo.states is None:
        raise ValueError("demonstration carries no state trajectory")
    controls = np.concatenate([demo.prepare, demo.react])
    err = float(np.max(np.abs(demo.states[0] - np.asarray(demo.x0, dtype=float))))
    for k in range(config.n_steps):
        j = demo.w_prev if k < config.n_prepare - 1 else demo.w
        step = car_step(config.car, demo.states[k], controls[k], j)
        err = max(err, float(np.max(np.abs(demo.states[k + 1] - step))))
    return err


def _state_features(config, states):
    """State-dependent feature columns, shape (..., 4); column 2 is zero.

    states holds relative (x_rel, v_rel) rows.
    """
    r1, r2, _, r4 = config.rates
    x = states[..., 0] - config.gap
    v = states[..., 1]
    phi = np.zeros(states.shape[:-1] + (N_FEATURES,))
    phi[..., 0] = np.where(x < 0.0, np.logaddexp(0.0, -r1 * x) - _LOG2, 0.0)
    phi[..., 1] = np.where(x > 0.0, np.logaddexp(0.0, r2 * x) - _LOG2, 0.0)
    phi[..., 3] = np.logaddexp(0.0, r4 * np.abs(v)) - _LOG2
    return phi


def _state_feature_gradients(config, states):
    """d features / d (x_rel, v_rel) at each state, shape (n, 4, 2)."""
    r1, r2, _, r4 = config.rates
    x = states[:, 0] - config.gap
    v = states[:, 1]
    grad = np.zeros((states.shape[0], N_FEATURES, 2))
    grad[:, 0, 0] = np.where(x < 0.0, -r1 * expit(-r1 * x), 0.0)
    grad[:, 1, 0] = np.where(x > 0.0, r2 * expit(r2 * x), 0.0)
    grad[:, 3, 1] = r4 * np.sign(v) * expit(r4 * np.abs(v))
    return grad


def _stage_accels(config, w_prev: int, w: int) -> np.ndarray:
    """Leader acceleration per step: the previous maneuver carries through
    the committed phase, the new one applies from the realization step on."""
    acc = np.empty(config.n_steps)
    acc[: config.n_prepare - 1] = config.car.accels[w_prev - 1]
    acc[config.n_prepare - 1 :] = config.car.accels[w - 1]
    return acc


def _rollout(config, rel0, controls, accels):
    """Relative states (n_steps + 1, 2) under the given action and leader
    sequences."""
    states = np.empty((config.n_steps + 1, 2))
    states[0] = rel0
    for k in range(config.n_steps):
        states[k + 1] = _rel_step(config.car, states[k], controls[k], accels[k])
    return states


def _rollout_full(config, x0, controls, w_prev: int, w: int):
    """Full states (n_steps + 1, 4) of one realized branch."""
    states = np.empty((config.n_steps + 1, 4))
    states[0] = np.asarray(x0, dtype=float)
    for k in range(config.n_steps):
        j = w_prev if k < config.n_prepare - 1 else w
        states[k + 1] = car_step(config.car, states[k], controls[k], j)
    return states


def _pair_features(config, states, controls, u_prev):
    """Per-step feature rows Psi (n_steps, 4); step k is evaluated at
    states[k + 1] with control difference controls[k] - controls[k - 1]."""
    psi = _state_features(config, states[1:])
    diffs = np.diff(np.concatenate([[u_prev], controls]))
    psi[:, 2] = config.rates[2] * diffs**2
    return psi


def _pair_feature_gradients(config, states, controls, u_prev):
    """dPsi tensor (n_steps, 4, n_steps): derivative of each step's feature
    row with respect to every control.

    The state chain uses the double-integrator sensitivities of states[t] to
    the control of step tau < t: dx/du = -dt^2 (0.5 + t - tau - 1),
    dv/du = -dt.
    """
    n, dt = config.n_steps, config.car.dt
    grads = _state_feature_gradients(config, states[1:])  # (n, 4, 2)
    dpsi = np.zeros((n, N_FEATURES, n))
    for k in range(n):
        t = k + 1
        taus = np.arange(k + 1)
        sx = -(dt**2) * (0.5 + (t - taus - 1))
        dpsi[k, :, : k + 1] = (
            grads[k, :, 0, None] * sx[None, :] + grads[k, :, 1, None] * (-dt)
        )
    diffs = np.diff(np.concatenate([[u_prev], controls]))
    r3 = config.rates[2]
    for k in range(n):
        dpsi[k, 2, k] += 2.0 * r3 * diffs[k]
        if k >= 1:
            dpsi[k, 2, k - 1] -= 2.0 * r3 * diffs[k]
    return dpsi


def _branch_tables(config, alpha, rel0, w_prev, w, prepare, react, u_prev):
    """Cost values and weighted control gradients of one scenario branch.

    Returns (prepare_cost, tail_cost, det_grad (n,), tail_grad (n,)) where
    the gradients are with respect to the full control vector and weighted
    by alpha; the split point between committed and tail steps is
    n_prepare - 1 (the realization step's cost is stochastic).
    """
    controls = np.concatenate([prepare, react])
    states = _rollout(config, rel0, controls, _stage_accels(config, w_prev, w))
    psi = _pair_features(config, states, controls, u_prev)
    dpsi = _pair_feature_gradients(config, states, controls, u_prev)
    split = config.n_prepare - 1
    det_cost = float(alpha @ psi[:split].sum(axis=0))
    tail_cost = float(alpha @ psi[split:].sum(axis=0))
    det_grad = alpha @ dpsi[:split].sum(axis=0)
    tail_grad = alpha @ dpsi[split:].sum(axis=0)
    return det_cost, tail_cost, det_grad, tail_grad


def _branch_feature_rows(config, rel0, w_prev, w, prepare, react, u_prev):
    """Unweighted tail feature gradients, shape (n_steps, 4): row tau is
    d(sum of tail feature rows)/d control tau, one column per feature."""
    controls = np.concatenate([prepare, react])
    states = _rollout(config, rel0, controls, _stage_accels(config, w_prev, w))
    dpsi = _pair_feature_gradients(config, states, controls, u_prev)
    return dpsi[config.n_prepare - 1 :].sum(axis=0).T  # (n, 4)


# -- expert planning ----------------------------------------------------------


def _prefix_batch(config, alpha, rel0, preps, u_prev, w_prev):
    """Shared prepare-phase quantities for a batch of prepare candidates.

    Returns (det_costs (C,), end_states (C, 2)) where end_states is the
    relative state at the realization step (before the realized maneuver
    acts).
    """
    n_pre = config.n_prepare
    a_prev = config.car.accels[w_prev - 1]
    c = preps.shape[0]
    states = np.empty((c, n_pre, 2))
    states[:, 0] = rel0
    for k in range(n_pre - 1):
        rel = a_prev - preps[:, k]
        states[:, k + 1, 0] = (
            states[:, k, 0] + config.car.dt * states[:, k, 1]
            + 0.5 * config.car.dt**2 * rel
        )
        states[:, k + 1, 1] = states[:, k, 1] + config.car.dt * rel
    det = _state_features(config, states[:, 1:]) @ alpha
    det = det.sum(axis=1) if n_pre > 1 else np.zeros(c)
    diffs = np.diff(np.concatenate([np.full((c, 1), u_prev), preps], axis=1), axis=1)
    det += alpha[2] * config.rates[2] * (diffs[:, : n_pre - 1] ** 2).sum(axis=1)
    return det, states[:, -1]


def _tail_values_batch(config, alpha, end_states, preps, reacts, u_prev, w):
    """Tail costs for every (prepare, react) combination, shape (C1, C2)."""
    dt = config.car.dt
    a_new = config.car.accels[w - 1]
    c1, c2 = preps.shape[0], reacts.shape[0]
    u_np = preps[:, -1]  # control of the realization step
    rel = a_new - u_np
    x = end_states[:, 0] + dt * end_states[:, 1] + 0.5 * dt**2 * rel
    v = end_states[:, 1] + dt * rel
    tail = _state_features(config, np.stack([x, v], axis=-1)) @ alpha  # (C1,)
    x = np.broadcast_to(x[:, None], (c1, c2)).copy()
    v = np.broadcast_to(v[:, None], (c1, c2)).copy()
    tail = np.broadcast_to(tail[:, None], (c1, c2)).copy()
    for i in range(config.n_react):
        rel = a_new - reacts[None, :, i]
        x = x + dt * v + 0.5 * dt**2 * rel
        v = v + dt * rel
        tail = tail + _state_features(config, np.stack([x, v], axis=-1)) @ alpha
    r3w = alpha[2] * config.rates[2]
    prev = preps[:, -2] if config.n_prepare >= 2 else np.full(c1, u_prev)
    tail = tail + r3w * ((u_np - prev) ** 2)[:, None]
    tail = tail + r3w * (reacts[None, :, 0] - u_np[:, None]) ** 2
    if config.n_react > 1:
        tail = tail + r3w * (np.diff(reacts, axis=1) ** 2).sum(axis=1)[None, :]
    return tail


def _axis_grid(center, half_width, points, lo, hi):
    g = np.linspace(center - half_width, center + half_width, points)
    return np.clip(g, lo, hi)


def _product_grid(centers, half_width, points, lo, hi, cap):
    if points ** len(centers) > cap:
        raise GridTooLarge(
            f"{points}^{len(centers)} grid candidates exceed cap {cap}"
        )
    axes = [_axis_grid(c, half_width, points, lo, hi) for c in centers]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _react_objective(config, alpha, rel0, w_prev, w, prepare, u_prev):
    def fun(react):
        _, tail, _, tail_grad = _branch_tables(
            config, alpha, rel0, w_prev, w, prepare, react, u_prev
        )
        return tail, tail_grad[config.n_prepare :]

    return fun


def _minimize_react(config, alpha, rel0, w_prev, w, prepare, u_prev, start):
    """Branch react sequence minimizing the tail cost (convex, box-bounded)."""
    fun = _react_objective(config, alpha, rel0, w_prev, w, prepare, u_prev)
    res = _nlp_minimize(
        fun,
        np.clip(start, config.car.u_lo, config.car.u_hi),
        jac=True,
        bounds=[(config.car.u_lo, config.car.u_hi)] * config.n_react,
        method="L-BFGS-B",
        options={"maxiter": 300, "ftol": 1e-15, "gtol": 1e-10},
    )
    return np.clip(res.x, config.car.u_lo, config.car.u_hi)


def plan_stage(
    config: StageConfig,
    weights: FeatureWeights,
    envelope: Envelope,
    x0,
    w_prev: int = 1,
    u_prev: float = 0.0,
) -> StagePlan:
    """Solve one stage as the expert.

    A shrinking product grid localizes the committed sequence jointly with
    per-outcome react sequences (the inner minimization decomposes across
    outcomes because the envelope maximum is monotone in each tail cost);
    convex refinement then drives every branch to stationarity: react
    sequences by bounded quasi-Newton descent, the committed sequence by
    sequential quadratic programming on the epigraph of the worst case.
    """
    alpha = weights.alpha
    rel0 = _relative(x0) if np.asarray(x0).shape == (4,) else np.asarray(x0, float)
    lo, hi, n_pre = config.car.u_lo, config.car.u_hi, config.n_prepare
    vertices = envelope.vertices
    n_out = config.n_outcomes

    prep_inc = np.zeros(n_pre)
    react_inc = np.zeros((n_out, config.n_react))
    half = 0.5 * (hi - lo)
    centers = np.full(n_pre, 0.5 * (lo + hi))
    react_centers = np.full((n_out, config.n_react), 0.5 * (lo + hi))

    for _ in range(config.grid_rounds):
        preps = _product_grid(centers, half, config.grid_points, lo, hi, config.grid_cap)
        det, ends = _prefix_batch(config, alpha, rel0, preps, u_prev, w_prev)
        tails = np.empty((n_out, preps.shape[0]))
        best_react_idx = np.empty((n_out, preps.shape[0]), dtype=int)
        react_grids = []
        for j in range(n_out):
            rg = _product_grid(
                react_centers[j], half, config.grid_points, lo, hi, config.grid_cap
            )
            react_grids.append(rg)
            values = _tail_values_batch(config, alpha, ends, preps, rg, u_prev, j + 1)
            best_react_idx[j] = np.argmin(values, axis=1)
            tails[j] = values[np.arange(preps.shape[0]), best_react_idx[j]]
        worst = np.max(vertices @ tails, axis=0)  # (C1,)
        best = int(np.argmin(det + worst))
        prep_inc = preps[best]
        for j in range(n_out):
            react_inc[j] = react_grids[j][best_react_idx[j, best]]
        centers, react_centers = prep_inc, react_inc.copy()
        spacing = 2.0 * half / (config.grid_points - 1)
        half = 1.5 * spacing

    memo: dict = {}
    warm = react_inc.copy()

    def tail_star(prepare):
        key = prepare.tobytes()
        if key not in memo:
            reacts = np.empty_like(react_inc)
            tails = np.empty(n_out)
            grads = np.empty((n_out, n_pre))
            for j in range(n_out):
                reacts[j] = _minimize_react(
                    config, alpha, rel0, w_prev, j + 1, prepare, u_prev, warm[j]
                )
                _, tails[j], _, tail_grad = _branch_tables(
                    config, alpha, rel0, w_prev, j + 1, prepare, reacts[j], u_prev
                )
                grads[j] = tail_grad[:n_pre]
            warm[:] = reacts
            memo.clear()
            memo[key] = (reacts, tails, grads)
        return memo[key]

    def det_parts(prepare):
        det_cost, _, det_grad, _ = _branch_tables(
            config, alpha, rel0, w_prev, 1, prepare, react_inc[0], u_prev
        )
        return det_cost, det_grad[:n_pre]

    def cons(z):
        _, tails, _ = tail_star(z[:n_pre])
        det_cost, _ = det_parts(z[:n_pre])
        return z[-1] - (det_cost + vertices @ tails)

    def cons_jac(z):
        _, _, grads = tail_star(z[:n_pre])
        _, det_grad = det_parts(z[:n_pre])
        rows = det_grad[None, :] + vertices @ grads  # envelope theorem
        return np.hstack([-rows, np.ones((vertices.shape[0], 1))])

    reacts0, tails0, _ = tail_star(prep_inc)
    det0, _ = det_parts(prep_inc)
    z0 = np.append(prep_inc, det0 + float(np.max(vertices @ tails0)))
    res = _nlp_minimize(
        lambda z: z[-1],
        z0,
        jac=lambda z: np.append(np.zeros(n_pre), 1.0),
        bounds=[(lo, hi)] * n_pre + [(None, None)],
        constraints=[{"type": "ineq", "fun": cons, "jac": cons_jac}],
        method="SLSQP",
        options={"maxiter": 60, "ftol": 1e-14},
    )
    prepare = np.clip(res.x[:n_pre], lo, hi)
    reacts, tails, _ = tail_star(prepare)
    det_cost, _ = det_parts(prepare)
    value = det_cost + float(np.max(vertices @ tails))
    value0 = det0 + float(np.max(vertices @ tails0))
    if value > value0:  # keep the incumbent when refinement went backwards
        prepare, reacts, tails, det_cost, value = (
            prep_inc,
            reacts0,
            tails0,
            det0,
            value0,
        )
    return StagePlan(
        prepare=prepare,
        reacts=reacts,
        tail_costs=tails,
        prepare_cost=det_cost,
        value=value,
    )


def stage_tail_costs(
    config: StageConfig, weights: FeatureWeights, demo_like, reacts
) -> np.ndarray:
    """Tail cost of every outcome branch, shape (L,)."""
    rel0 = _relative(demo_like.x0)
    tails = np.empty(config.n_outcomes)
    for j in range(config.n_outcomes):
        _, tails[j], _, _ = _branch_tables(
            config,
            weights.alpha,
            rel0,
            demo_like.w_prev,
            j + 1,
            demo_like.prepare,
            reacts[j],
            demo_like.u_prev,
        )
    return tails


def stage_kink_clearance(config: StageConfig, plan: StagePlan, x0, w_prev, u_prev):
    """Smallest distance of any planned state to a feature kink."""
    rel0 = _relative(x0)
    margin = np.inf
    for j in range(config.n_outcomes):
        controls = np.concatenate([plan.prepare, plan.reacts[j]])
        states = _rollout(
            config, rel0, controls, _stage_accels(config, w_prev, j + 1)
        )[1:]
        margin = min(
            margin,
            float(np.min(np.abs(states[:, 0] - config.gap))),
            float(np.min(np.abs(states[:, 1]))),
        )
    return margin


# -- inverse side -------------------------------------------------------------


def _interior_mask(config, react):
    tol = 1e-6
    return (react > config.car.u_lo + tol) & (react < config.car.u_hi - tol)


def recover_cost_weights(
    config: StageConfig, demos: list[StageDemonstration]
) -> FeatureWeights:
    """Feature weights from the stationarity of observed react sequences.

    Interior react controls of each realized branch contribute one row of
    feature gradients that the true weights annihilate; the unit null vector
    of the stacked rows recovers them up to sign.  Negative entries in the
    null vector are driven out by re-solving on the nonnegative support.
    Raises IllConditioned when the rows leave more than a one-dimensional
    null space (second-smallest singular value below 1e-8) or none of the
    observed controls is interior.
    """
    rows = []
    for demo in demos:
        feat = _branch_feature_rows(
            config, _relative(demo.x0), demo.w_prev, demo.w, demo.prepare,
            demo.react, demo.u_prev,
        )
        react_rows = feat[config.n_prepare :]
        rows.extend(react_rows[_interior_mask(config, demo.react)])
    if not rows:
        raise IllConditioned("no interior react controls to learn from")
    d = np.array(rows)
    s = np.linalg.svd(d, compute_uv=False)
    s = np.concatenate([s, np.zeros(N_FEATURES - s.size)])
    conditioning = float(s[N_FEATURES - 2])
    if conditioning < 1e-8:
        raise IllConditioned("stationarity rows leave weights underdetermined")

    support = np.ones(N_FEATURES, dtype=bool)
    alpha = None
    while support.any():
        _, _, vt = np.linalg.svd(d[:, support], full_matrices=True)
        candidate = np.zeros(N_FEATURES)
        candidate[support] = vt[-1]
        if candidate.sum() < 0.0:
            candidate = -candidate
        negative = candidate < -1e-6
        if not negative.any():
            alpha = candidate
            break
        support &= ~negative
    if alpha is None:
        raise IllConditioned("no nonnegative weight vector fits the rows")
    alpha = np.clip(np.where(np.abs(alpha) < 1e-12, 0.0, alpha), 0.0, None)
    norm = float(np.linalg.norm(alpha))
    if norm < 1e-12:
        raise IllConditioned("no nonnegative weight vector fits the rows")
    return FeatureWeights(alpha / norm, conditioning=conditioning)


def infer_unrealized_reacts(
    config: StageConfig,
    weights: FeatureWeights,
    demo: StageDemonstration,
    library: ReactLibrary | None = None,
) -> np.ndarray:
    """React sequences for every outcome branch, shape (L, n_react).

    The realized branch keeps the observed sequence; the others minimize the
    branch tail cost under the given weights, warm-started from the best
    library center when one is available.
    """
    rel0 = _relative(demo.x0)
    reacts = np.empty((config.n_outcomes, config.n_react))
    for j in range(config.n_outcomes):
        if j + 1 == demo.w:
            reacts[j] = demo.react
            continue
        start = np.zeros(config.n_react)
        if library is not None and library.centers.shape[0]:
            values = [
                _branch_tables(
                    config, weights.alpha, rel0, demo.w_prev, j + 1,
                    demo.prepare, np.clip(c, config.car.u_lo, config.car.u_hi),
                    demo.u_prev,
                )[1]
                for c in library.centers
            ]
            start = library.centers[int(np.argmin(values))]
        reacts[j] = _minimize_react(
            config, weights.alpha, rel0, demo.w_prev, j + 1, demo.prepare,
            demo.u_prev, start,
        )
    return reacts


def stage_kkt_halfspace(
    config: StageConfig,
    weights: FeatureWeights,
    demo: StageDemonstration,
    reacts,
    envelope: Envelope,
) -> KktHalfspace:
    """One envelope cut from a reconstructed stage.

    Maximizes tail_costs . v over envelope mixtures satisfying the stage
    stationarity system: committed-phase rows combine the deterministic
    prepare cost gradient with the mixture-weighted tail gradients; react
    rows of each branch scale that branch's weight alone.  Interior react
    rows with gradients at the reconstruction noise floor are vacuous at the
    optimum and dropped; all retained rows are relaxed by a scale-aware
    tolerance.  When imperfect weight estimates leave the system infeasible
    at that tolerance, the smallest uniform widening of the stationarity
    rows that restores feasibility is applied instead, up to a cap beyond
    which the reconstruction is rejected.  Returns the half-space
    {v : tail_costs . v <= tau'} with its attaining certificate.
    """
    alpha = weights.alpha
    rel0 = _relative(demo.x0)
    dim = config.n_outcomes
    n_pre = config.n_prepare
    lo, hi = config.car.u_lo, config.car.u_hi
    sat_tol = 1e-6

    tails = np.empty(dim)
    det_grad = None
    tail_grads = np.empty((dim, config.n_steps))
    for j in range(dim):
        det_cost, tails[j], dgrad, tgrad = _branch_tables(
            config, alpha, rel0, demo.w_prev, j + 1, demo.prepare, reacts[j],
            demo.u_prev,
        )
        det_grad = dgrad  # identical across branches (prefix only)
        tail_grads[j] = tgrad
    scale = 1.0 + float(
        max(np.max(np.abs(tail_grads)), np.max(np.abs(det_grad)))
    )
    kappa = 1e-6 * scale

    # reconstruction noise floor: interior react rows of the observed branch
    obs = demo.w - 1
    obs_interior = _interior_mask(config, reacts[obs])
    obs_rows = tail_grads[obs, n_pre:][obs_interior]
    drop_tol = max(1e-4 * scale, 10.0 * float(np.max(np.abs(obs_rows), initial=0.0)))

    upper = {a for a in range(n_pre) if demo.prepare[a] >= hi - sat_tol}
    lower = {a for a in range(n_pre) if demo.prepare[a] <= lo + sat_tol}
    n_sig = len(upper) + len(lower)
    n_var = dim + n_sig
    sig_col = {}
    col = dim
    for a in sorted(upper):
        sig_col[("up", a)] = col
        col += 1
    for a in sorted(lower):
        sig_col[("lo", a)] = col
        col += 1

    rows, rhs = [], []
    for a in range(n_pre):
        row = np.zeros(n_var)
        row[:dim] = tail_grads[:, a]
        if ("up", a) in sig_col:
            row[sig_col[("up", a)]] = 1.0
        if (("lo", a)) in sig_col:
            row[sig_col[("lo", a)]] = -1.0
        rows.append(row)
        rhs.append(kappa - det_grad[a])
        rows.append(-row)
        rhs.append(kappa + det_grad[a])
    for j in range(dim):
        for i, a in enumerate(range(n_pre, config.n_steps)):
            d = tail_grads[j, a]
            u_ji = reacts[j, i]
            row = np.zeros(n_var)
            row[j] = d
            if u_ji >= hi - sat_tol:  # gradient must push upward: v_j d <= 0
                rows.append(row)
                rhs.append(kappa)
            elif u_ji <= lo + sat_tol:
                rows.append(-row)
                rhs.append(kappa)
            elif abs(d) > drop_tol:
                rows.append(row)
                rhs.append(kappa)
                rows.append(-row)
                rhs.append(kappa)
    n_stat = len(rows)
    for h in envelope.halfspaces:
        row = np.zeros(n_var)
        row[:dim] = h.normal
        rows.append(row)
        rhs.append(h.offset)
    a_ub = np.array(rows)
    b_ub = np.array(rhs)
    a_eq = np.concatenate([np.ones(dim), np.zeros(n_sig)])[None, :]
    b_eq = np.array([1.0])

    objective = np.zeros(n_var)
    objective[:dim] = tails
    try:
        sol = solve_lp(LinearProgram(objective, a_ub, b_ub, a_eq, b_eq))
    except Infeasible:
        # minimal uniform widening t of the stationarity rows (envelope rows
        # stay hard), then re-solve with that slack baked in
        widen_col = np.zeros((a_ub.shape[0], 1))
        widen_col[:n_stat, 0] = -1.0
        widened = solve_lp(
            LinearProgram(
                np.append(np.zeros(n_var), -1.0),
                np.hstack([a_ub, widen_col]),
                b_ub,
                np.hstack([a_eq, np.zeros((1, 1))]),
                b_eq,
            )
        )
        t_min = float(widened.x[-1])
        if t_min > 1e-2 * scale:
            raise InfeasibleKkt(
                "stage reconstruction violates stationarity beyond the"
                f" widening cap ({t_min:.3e})"
            )
        b_wide = b_ub.copy()
        b_wide[:n_stat] += t_min * (1.0 + 1e-3) + 1e-12
        sol = solve_lp(LinearProgram(objective, a_ub, b_wide, a_eq, b_eq))
    tau_prime = sol.value
    certificate = KktCertificate(
        mixture=sol.x[:dim],
        sigma_upper=sol.x[dim : dim + len(upper)],
        sigma_lower=sol.x[dim + len(upper) : n_var],
    )
    return KktHalfspace(HalfSpace(tails, tau_prime), tau_prime, certificate)


def cluster_react_sequences(
    sequences, k: int = 15, seed: int = 0, bounds=None
) -> ReactLibrary:
    """K-means centers of observed react sequences.

    Greedy center seeding, 50 iterations, best of 5 restarts; centers are
    clamped to the action bounds when given.
    """
    sequences = np.atleast_2d(np.asarray(sequences, dtype=float))
    if sequences.shape[0] < k:
        raise TooFewSequences(
            f"{sequences.shape[0]} sequences cannot fill {k} clusters"
        )
    import warnings

    from sklearn.cluster import KMeans
    from sklearn.exceptions import ConvergenceWarning

    with warnings.catch_warnings():
        # repeated stages may observe identical react sequences; fewer
        # distinct clusters than requested is expected, not a failure
        warnings.simplefilter("ignore", ConvergenceWarning)
        km = KMeans(
            n_clusters=k, init="k-means++", n_init=5, max_iter=50, random_state=seed
        ).fit(sequences)
    centers = km.cluster_centers_
    if bounds is not None:
        centers = np.clip(centers, bounds[0], bounds[1])
    return ReactLibrary(centers=centers)


def multistep_preferences(
    config: StageConfig,
    weights: FeatureWeights,
    state: LearnerState,
    demo_like,
    baseline_reacts,
    library: ReactLibrary,
    budget: int,
    rng_for,
) -> PreferenceVector:
    """Score outcomes by the novelty of the cuts their reacts could reveal.

    The baseline tail cost vector uses the weight-optimal reacts of every
    branch.  For outcome j, each candidate library sequence replaces branch
    j's entry, and the altered vector's direction in the simplex tangent
    space is compared against the collected refinement directions; U_j is
    the mean negated cosine summed over the collection.  rng_for(j) draws
    the candidate subset when the budget is below the library size,
    otherwise the whole library is averaged.
    """
    rel0 = _relative(demo_like.x0)
    dim = config.n_outcomes
    values = np.zeros(dim)
    n_samples = np.zeros(dim, dtype=int)
    n_discarded = np.zeros(dim, dtype=int)
    basis = (
        np.array([d.direction for d in state.directions])
        if state.directions
        else None
    )
    baseline = stage_tail_costs(config, weights, demo_like, baseline_reacts)
    any_valid = False
    for j in range(dim):
        centers = library.centers
        if budget < centers.shape[0]:
            idx = rng_for(j + 1).choice(centers.shape[0], size=budget, replace=False)
            centers = centers[idx]
        rows = []
        for cand in centers:
            _, tail_j, _, _ = _branch_tables(
                config, weights.alpha, rel0, demo_like.w_prev, j + 1,
                demo_like.prepare,
                np.clip(cand, config.car.u_lo, config.car.u_hi),
                demo_like.u_prev,
            )
            g = baseline.copy()
            g[j] = tail_j
            try:
                rows.append(project_to_simplex_tangent(g).direction)
            except DegenerateDirection:
                n_discarded[j] += 1
        n_samples[j] = len(rows)
        if not rows:
            continue
        any_valid = True
        if basis is not None:
            cosines = np.clip(np.array(rows) @ basis.T, -1.0, 1.0)
            values[j] = float(-cosines.mean(axis=0).sum())
    if not any_valid:
        raise AllDegenerate("no outcome produced a usable cut prediction")
    return PreferenceVector(
        values=values, n_samples=n_samples, n_discarded=n_discarded
    )


# -- stage driver -------------------------------------------------------------


def draw_stage_start(config: StageConfig, rng: np.random.Generator) -> np.ndarray:
    """Initial (x_f, v_f, x_l, v_l) for one stage.

    Starts alternate randomly between the two sides of the preferred gap
    with the relative speed closing toward it; a gap error of a single sign
    would leave the far-side feature inactive in every observation and its
    weight unidentifiable.  The follower cruises at a nominal speed (the
    features depend on the relative state only).
    """
    side = 1.0 if rng.random() < 0.5 else -1.0
    gap_err = side * rng.uniform(1.5, 2.5)
    v_rel = -side * rng.uniform(1.5, 2.5)
    v_f = 10.0
    return np.array([0.0, v_f, config.gap + gap_err, v_f + v_rel])


def _format(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_stage_csv(path, records, dim: int) -> None:
    header = (
        ["stage", "realized_w", "tau_prime", "refined", "area"]
        + [f"U_{j}" for j in range(1, dim + 1)]
        + [f"p_{j}" for j in range(1, dim + 1)]
        + [f"alpha_{h}" for h in range(1, N_FEATURES + 1)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in records:
            row = [r.stage, r.realized_w, r.tau_prime, r.refined, r.area]
            row += list(r.preferences) + list(r.probabilities) + list(r.alpha)
            writer.writerow([_format(v) for v in row])


def run_stages(
    config: StageConfig,
    weights: FeatureWeights,
    envelope: Envelope,
    n_stages: int,
    seed: int,
    known_weights: bool = False,
    active: bool = True,
    budget: int = 8,
    library_size: int = 15,
    temperature: float = 1.0,
    csv_path=None,
    max_redraws: int = 25,
) -> tuple[LearnerState, list[StageRecord], FeatureWeights]:
    """Drive repeated stages: plan as the expert, realize one outcome, learn.

    Stage starts are drawn fresh from the (seed, 10, stage) stream (redrawn
    while the planned trajectories graze a feature kink, where stationarity
    rows would be meaningless).  The first ramp stages realize outcomes from
    the nature distribution while react sequences accumulate; afterwards
    outcomes follow Boltzmann sampling over the multistep preferences,
    falling back to the nature distribution while the weight estimate is
    still ill-conditioned.  With known_weights the learner reconstructs
    stages under the true weights, otherwise it re-runs weight recovery as
    observations arrive.
    """
    dim = config.n_outcomes
    state = LearnerState.initial(dim)
    records: list[StageRecord] = []
    demos: list[StageDemonstration] = []
    library: ReactLibrary | None = None
    alpha_hat = FeatureWeights.uniform()
    recovered = False
    w_prev, u_prev = 1, 0.0
    pmf = np.asarray(
        config.nature_pmf if config.nature_pmf is not None else np.full(dim, 1.0 / dim)
    )
    sample_rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))

    for stage in range(1, n_stages + 1):
        start_rng = np.random.default_rng(np.random.SeedSequence((seed, 10, stage)))
        for _ in range(max_redraws):
            x0 = draw_stage_start(config, start_rng)
            plan = plan_stage(config, weights, envelope, x0, w_prev, u_prev)
            if stage_kink_clearance(config, plan, x0, w_prev, u_prev) >= config.kink_margin:
                break

        ctx = StageDemonstration(
            x0=x0, w_prev=w_prev, u_prev=u_prev, prepare=plan.prepare,
            react=plan.reacts[0], w=1,
        )
        learner_w = weights if known_weights else alpha_hat
        use_active = (
            active
            and stage > config.ramp_stages
            and library is not None
            and (known_weights or recovered)
        )
        if use_active:
            baseline = np.array(
                [
                    _minimize_react(
                        config, learner_w.alpha, _relative(x0), w_prev, j + 1,
                        plan.prepare, u_prev, np.zeros(config.n_react),
                    )
                    for j in range(dim)
                ]
            )

            def rng_for(j):
                return np.random.default_rng(
                    np.random.SeedSequence((seed, 3, stage, j))
                )

            try:
                prefs = multistep_preferences(
                    config, learner_w, state, ctx, baseline, library, budget, rng_for
                ).values
            except AllDegenerate:
                prefs = np.zeros(dim)
            w, probs = boltzmann_sample(prefs, sample_rng, temperature)
        else:
            prefs = np.zeros(dim)
            probs = pmf.copy()
            w = int(sample_rng.choice(dim, p=pmf)) + 1

        controls = np.concatenate([plan.prepare, plan.reacts[w - 1]])
        demo = replace(
            ctx,
            react=plan.reacts[w - 1],
            w=w,
            states=_rollout_full(config, x0, controls, w_prev, w),
        )
        demos.append(demo)
        if len(demos) >= library_size:
            lib_seed = int(
                np.random.SeedSequence((seed, 12, stage)).generate_state(1)[0]
                % 2**31
            )
            library = cluster_react_sequences(
                np.array([d.react for d in demos]),
                library_size,
                lib_seed,
                bounds=(config.car.u_lo, config.car.u_hi),
            )
        if not known_weights and len(demos) >= 2:
            try:
                alpha_hat = recover_cost_weights(config, demos)
                recovered = True
            except IllConditioned:
                pass
        learner_w = weights if known_weights else alpha_hat

        reacts = infer_unrealized_reacts(config, learner_w, demo, library)
        try:
            cut = stage_kkt_halfspace(
                config, learner_w, demo, reacts, state.envelope
            )
            halfspace, tau_prime = cut.halfspace, cut.tau_prime
            envelope_next, refined = clip_envelope(state.envelope, halfspace)
        except InfeasibleKkt:
            # reconstruction too inconsistent for a trustworthy cut (early
            # weight estimates): keep the envelope and move on
            halfspace, tau_prime = None, float("nan")
            envelope_next, refined = state.envelope, False
        directions = state.directions
        if refined:
            try:
                directions = directions + (
                    project_to_simplex_tangent(halfspace.normal),
                )
            except DegenerateDirection:
                pass
        state = replace(
            state,
            envelope=envelope_next,
            directions=directions,
            n_steps=state.n_steps + 1,
            n_refined=state.n_refined + int(refined),
        )
        records.append(
            StageRecord(
                stage=stage,
                realized_w=w,
                tau_prime=tau_prime,
                refined=refined,
                area=envelope_area(envelope_next),
                preferences=prefs,
                probabilities=probs,
                alpha=learner_w.alpha.copy(),
            )
        )
        w_prev, u_prev = w, float(plan.reacts[w - 1][-1])

    if csv_path is not None:
        write_stage_csv(csv_path, records, dim)
    return state, records, (weights if known_weights else alpha_hat)
