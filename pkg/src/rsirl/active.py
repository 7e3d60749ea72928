"""Active disturbance sampling.

The learner steers the system toward states whose demonstrations would cut
the envelope along directions unlike the cuts already collected.  For each
candidate disturbance it propagates the current pair one step, samples
hypothetical expert actions uniformly over the action box (the expert's true
policy being unknown), and scores the implied cut directions by their mean
dissimilarity to the accumulated refinement directions.  Disturbances are
then drawn from a Boltzmann distribution over these scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllDegenerate
from .expert import (
    ExpertSpec,
    LinearQuadraticSystem,
    cost_quadratics,
    step_dynamics,
)
from .inference import (
    LearnerState,
    StepRecord,
    run_episode,
    run_passive,
    write_episode_csv,
)


@dataclass(frozen=True)
class SamplingPolicy:
    """How an episode samples disturbances: the mode, the hypothetical-action
    draws per disturbance, and the Boltzmann temperature."""

    mode: str = "active"
    budget: int = 1000
    temperature: float = 1.0

    def __post_init__(self):
        if self.mode not in ("active", "passive"):
            raise ValueError("mode must be 'active' or 'passive'")
        if self.budget < 1:
            raise ValueError("budget must be at least 1")
        if not self.temperature > 0.0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class RefinementSample:
    """Predicted cut directions for one candidate disturbance.

    directions: (n_valid, L) unit rows in the simplex tangent space.
    n_discarded counts sampled actions whose cost vector had no tangent
    component, leaving the cut direction undefined.
    """

    directions: np.ndarray
    n_discarded: int

    def __len__(self) -> int:
        return self.directions.shape[0]

    def __iter__(self):
        from .geometry import RefinementDirection

        return (RefinementDirection(row) for row in self.directions)


@dataclass(frozen=True)
class PreferenceVector:
    """Per-disturbance exploration scores with their sampling diagnostics."""

    values: np.ndarray  # (L,)
    n_samples: np.ndarray  # (L,) valid draws behind each score
    n_discarded: np.ndarray  # (L,)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("preference values must be finite")


def predict_refinement_directions(
    system: LinearQuadraticSystem,
    x,
    u_star,
    w: int,
    budget: int,
    seed,
    state_mode: str = "renormalize",
) -> RefinementSample:
    """Simulate disturbance w from (x, u_star) and sample cuts there.

    The successor state follows the episode's state_mode; hypothetical next
    actions are drawn component-wise uniform over the box, and each sampled
    cost vector is projected to its direction within the simplex.  Draws
    whose cost vector carries no tangent component are discarded (counted);
    raises AllDegenerate when that leaves nothing.  seed may be anything a
    generator is built from, or a generator itself.
    """
    rng = np.random.default_rng(seed)
    x_next = step_dynamics(system, x, u_star, w, state_mode, rng=rng)
    actions = rng.uniform(system.u_lo, system.u_hi, size=(budget, system.m))
    h, q, c = cost_quadratics(system, x_next)
    costs = (
        0.5 * np.einsum("sm,jmn,sn->sj", actions, h, actions)
        + actions @ q.T
        + c[None, :]
    )
    centered = costs - costs.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    valid = norms >= 1e-12
    if not np.any(valid):
        raise AllDegenerate(
            f"all {budget} sampled cost vectors are proportional to all-ones"
        )
    return RefinementSample(
        directions=centered[valid] / norms[valid, None],
        n_discarded=int(budget - valid.sum()),
    )


def disturbance_preferences(predicted, explored) -> PreferenceVector:
    """Total expected dissimilarity of each disturbance's predicted cuts.

    predicted: per-disturbance RefinementSample (or None where prediction
    degenerated); explored: collected refinement directions.  Entry j sums,
    over the explored directions, the mean negated cosine to the directions
    predicted under disturbance j.  An empty collection or a missing
    prediction scores zero.
    """
    dim = len(predicted)
    values = np.zeros(dim)
    n_samples = np.zeros(dim, dtype=int)
    n_discarded = np.zeros(dim, dtype=int)
    explored = tuple(explored)
    for j, sample in enumerate(predicted):
        if sample is None:
            continue
        n_samples[j] = len(sample)
        n_discarded[j] = sample.n_discarded
        if not explored or len(sample) == 0:
            continue
        basis = np.array([d.direction for d in explored])  # (K, L)
        cosines = np.clip(sample.directions @ basis.T, -1.0, 1.0)  # (s, K)
        values[j] = float(-cosines.mean(axis=0).sum())
    return PreferenceVector(
        values=values, n_samples=n_samples, n_discarded=n_discarded
    )


def boltzmann_sample(
    preferences,
    rng: np.random.Generator,
    temperature: float = 1.0,
) -> tuple[int, np.ndarray]:
    """Draw a 1-based disturbance from softmax(preferences / temperature).

    preferences is a PreferenceVector or a bare score array; the returned
    probability vector is kept for logging.
    """
    values = getattr(preferences, "values", preferences)
    z = np.asarray(values, dtype=float) / temperature
    z = z - z.max()
    p = np.exp(z)
    p = p / p.sum()
    return int(rng.choice(p.size, p=p)) + 1, p


def run_active(
    spec: ExpertSpec,
    n_steps: int,
    seed: int,
    state_mode: str = "renormalize",
    policy: SamplingPolicy | None = None,
    csv_path=None,
    **kw,
) -> tuple[LearnerState, list[StepRecord]]:
    """Episode with Boltzmann-sampled disturbances.

    Per step: predict cut directions under every disturbance, score them
    against the collected directions, draw the next disturbance from the
    Boltzmann distribution over the scores.  Sampling streams are keyed
    (seed, 3, step, w), so the preference of each (step, disturbance) cell
    is reproducible in isolation.  A step where every prediction
    degenerates falls back to uniform sampling.  A passive-mode policy
    delegates to the plain episode loop.
    """
    pol = policy or SamplingPolicy()
    if pol.mode == "passive":
        return run_passive(
            spec, n_steps, seed, state_mode=state_mode, csv_path=csv_path, **kw
        )

    def sampler(step, state, x, u_star, sample_rng):
        predicted = []
        for w in range(1, spec.system.L + 1):
            try:
                predicted.append(
                    predict_refinement_directions(
                        spec.system,
                        x,
                        u_star,
                        w,
                        pol.budget,
                        np.random.SeedSequence((seed, 3, step, w)),
                        state_mode,
                    )
                )
            except AllDegenerate:
                predicted.append(None)
        prefs = disturbance_preferences(predicted, state.directions)
        w, probs = boltzmann_sample(prefs.values, sample_rng, pol.temperature)
        return w, prefs.values, probs

    state, records = run_episode(
        spec, n_steps, seed, state_mode=state_mode, sampler=sampler, **kw
    )
    if csv_path is not None:
        write_episode_csv(csv_path, records, spec.system.L, active=True)
    return state, records
