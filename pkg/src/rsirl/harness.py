"""Paired active/passive benchmark over randomly generated setups.

Each setup is one generated system plus one generated envelope and a test
set of expert state/action pairs collected under the true disturbance
distribution.  For every episode seed the learner runs once per mode from
identical conditions, sampling disturbances either from nature or by
Boltzmann preference, and the held-out prediction error is tracked step by
step.  All runs land in one flat CSV sorted by (setup, mode, episode);
per-step curves, per-setup summaries and the mode comparison go to a report.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .active import SamplingPolicy, run_active
from .errors import RsirlError
from .expert import (
    ExpertSpec,
    expert_act,
    generate_envelope,
    generate_system,
    step_dynamics,
)
from .inference import run_passive
from .kernels import BACKEND
from .solvers import SolverOptions

MODES = ("active", "passive")


@dataclass(frozen=True)
class BenchmarkConfig:
    n: int = 4
    m: int = 2
    dim: int = 3
    n_setups: int = 3
    n_seeds: int = 20
    n_steps: int = 60
    auc_steps: int = 50
    mid_step: int = 25
    envelope_points: int = 20
    test_episodes: int = 20
    test_steps: int = 10
    u_bound: float = 1.0
    modes: tuple[str, ...] = MODES
    state_mode: str = "renormalize"
    mc_samples: int = 1000
    temperature: float = 1.0
    eval_every: int = 1
    base_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        counts = (
            self.n, self.m, self.dim, self.n_setups, self.n_seeds,
            self.n_steps, self.auc_steps, self.mid_step, self.envelope_points,
            self.test_episodes, self.test_steps, self.eval_every,
        )
        if any(c < 1 for c in counts):
            raise ValueError("all counts must be at least 1")
        unknown = sorted(set(self.modes) - set(MODES))
        if unknown or not self.modes:
            raise ValueError(f"modes must be a nonempty subset of {MODES}")

    @classmethod
    def from_json(cls, path) -> "BenchmarkConfig":
        with open(path) as fh:
            data = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def digest(self) -> str:
        doc = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()


@dataclass(frozen=True)
class ModeCurve:
    """Per-step aggregates of one (setup, mode) cell across episodes."""

    mse_mean: np.ndarray  # (n_steps,)
    mse_std: np.ndarray  # (n_steps,)
    area_mean: np.ndarray  # (n_steps,)
    auc_median: float  # median over episodes of the summed early error
    std_mid: float  # episode spread of the error at the comparison step
    n_episodes: int
    n_failed: int


@dataclass(frozen=True)
class SetupStats:
    setup: int
    auc_active: float
    auc_passive: float
    std_mid_active: float
    std_mid_passive: float


@dataclass(frozen=True)
class BenchmarkReport:
    config: BenchmarkConfig
    curves: dict  # (setup, mode) -> ModeCurve
    setups: list[SetupStats]
    auc_wins: int
    std_wins: int
    auc_majority: bool
    std_majority: bool
    n_failed: int
    failures: list[tuple[int, str, int, str]]
    wall_seconds: float
    backend: str
    version: str
    config_hash: str

    def to_json(self, path) -> None:
        curves = {
            f"{setup}/{mode}": {
                "mse_mean": curve.mse_mean.tolist(),
                "mse_std": curve.mse_std.tolist(),
                "area_mean": curve.area_mean.tolist(),
                "auc_median": curve.auc_median,
                "std_mid": curve.std_mid,
                "n_episodes": curve.n_episodes,
                "n_failed": curve.n_failed,
            }
            for (setup, mode), curve in sorted(self.curves.items())
        }
        payload = {
            "config": dataclasses.asdict(self.config),
            "seed": self.config.base_seed,
            "curves": curves,
            "setups": [dataclasses.asdict(s) for s in self.setups],
            "auc_wins": self.auc_wins,
            "std_wins": self.std_wins,
            "auc_majority": self.auc_majority,
            "std_majority": self.std_majority,
            "n_failed": self.n_failed,
            "failures": [list(f) for f in self.failures],
            "wall_seconds": self.wall_seconds,
            "provenance": {
                "config_hash": self.config_hash,
                "backend": self.backend,
                "version": self.version,
            },
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")


def mse(u_pred, u_star) -> float:
    """Dimension-averaged squared action error."""
    u_pred = np.asarray(u_pred, dtype=float)
    u_star = np.asarray(u_star, dtype=float)
    if u_pred.shape != u_star.shape:
        raise ValueError("action shapes differ")
    return float(np.sum((u_pred - u_star) ** 2) / u_pred.size)


def _derived_seed(*key) -> int:
    return int(np.random.SeedSequence(key).generate_state(1)[0] % 2**31)


def build_test_set(
    spec: ExpertSpec,
    n_episodes: int,
    n_steps: int,
    seed: int,
    state_mode: str = "renormalize",
    options: SolverOptions | None = None,
):
    """Expert state/action pairs under the true disturbance distribution.

    Every episode restarts from the system's initial state; episode e draws
    from the (seed, 4, e) stream.  Returns (states, actions).
    """
    opts = options or SolverOptions()
    states, actions = [], []
    for episode in range(1, n_episodes + 1):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 4, episode)))
        x = spec.system.x0
        for _ in range(n_steps):
            u = expert_act(spec, x, opts).u
            states.append(x)
            actions.append(u)
            w = int(rng.choice(spec.system.L, p=spec.pmf)) + 1
            x = step_dynamics(spec.system, x, u, w, state_mode, rng=rng)
    return np.array(states), np.array(actions)


def benchmark_rows(config: BenchmarkConfig):
    """Yield (setup, mode, episode, records-or-error) for every run."""
    policy = SamplingPolicy(
        budget=config.mc_samples, temperature=config.temperature
    )
    for setup in range(1, config.n_setups + 1):
        system = generate_system(
            config.n, config.m, config.dim,
            seed=_derived_seed(config.base_seed, 20, setup),
            u_bound=config.u_bound,
        )
        envelope = generate_envelope(
            config.dim, config.envelope_points,
            seed=_derived_seed(config.base_seed, 22, setup),
        )
        spec = ExpertSpec(system=system, envelope=envelope)
        test_states, test_actions = build_test_set(
            spec, config.test_episodes, config.test_steps,
            seed=_derived_seed(config.base_seed, 24, setup),
            state_mode=config.state_mode,
        )
        common = dict(
            state_mode=config.state_mode,
            test_states=test_states,
            test_actions=test_actions,
            eval_every=config.eval_every,
        )
        for episode in range(1, config.n_seeds + 1):
            ep_seed = _derived_seed(config.base_seed, 26, setup, episode)
            for mode in config.modes:
                try:
                    if mode == "passive":
                        _, records = run_passive(
                            spec, config.n_steps, ep_seed, **common
                        )
                    else:
                        _, records = run_active(
                            spec, config.n_steps, ep_seed, policy=policy, **common
                        )
                except RsirlError as exc:
                    records = exc
                yield setup, mode, episode, records


def _format(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return repr(float(value))


BENCHMARK_HEADER = [
    "setup", "mode", "episode", "step",
    "mse_mean_over_test", "area", "refined", "sampled_w",
]


def run_benchmark(
    config: BenchmarkConfig,
    csv_path=None,
    report_path=None,
) -> BenchmarkReport:
    """Run all episodes, write the flat CSV, and score the modes.

    Per (setup, mode): per-step mean and spread of the held-out error and
    mean envelope area across episodes; the episode AUC is the sum of the
    error over the first auc_steps steps, compared between modes by the
    median over episode seeds; spread is the standard deviation across
    episodes of the error at step mid_step.  Episodes that die in a solver
    are excluded and counted.  The report tallies setups where active
    sampling wins each metric.
    """
    t0 = time.perf_counter()
    mid = config.mid_step
    series = {}  # (setup, mode) -> list of per-step error arrays
    areas = {}  # (setup, mode) -> list of per-step area arrays
    failures = []
    rows = []
    for setup, mode, episode, records in benchmark_rows(config):
        if isinstance(records, RsirlError):
            failures.append((setup, mode, episode, str(records)))
            continue
        series.setdefault((setup, mode), []).append(
            np.array([r.mse for r in records])
        )
        areas.setdefault((setup, mode), []).append(
            np.array([r.area for r in records])
        )
        rows.extend(
            (setup, mode, episode, r.step, r.mse, r.area, r.refined, r.sampled_w)
            for r in records
        )

    rows.sort(key=lambda row: (row[0], row[1], row[2], row[3]))
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(BENCHMARK_HEADER)
            writer.writerows([_format(v) for v in row] for row in rows)

    failed_in = {}
    for setup, mode, _, _ in failures:
        failed_in[(setup, mode)] = failed_in.get((setup, mode), 0) + 1

    curves = {}
    for (setup, mode), errs in sorted(series.items()):
        err = np.array(errs)
        area = np.array(areas[(setup, mode)])
        curves[(setup, mode)] = ModeCurve(
            mse_mean=err.mean(axis=0),
            mse_std=err.std(axis=0),
            area_mean=area.mean(axis=0),
            auc_median=float(np.median(err[:, : config.auc_steps].sum(axis=1))),
            std_mid=float(err[:, mid - 1].std()),
            n_episodes=err.shape[0],
            n_failed=failed_in.get((setup, mode), 0),
        )

    setups = []
    auc_wins = std_wins = 0
    paired = set(config.modes) == set(MODES)
    if paired:
        for setup in range(1, config.n_setups + 1):
            act = curves[(setup, "active")]
            pas = curves[(setup, "passive")]
            stats = SetupStats(
                setup=setup,
                auc_active=act.auc_median,
                auc_passive=pas.auc_median,
                std_mid_active=act.std_mid,
                std_mid_passive=pas.std_mid,
            )
            setups.append(stats)
            auc_wins += int(stats.auc_active <= stats.auc_passive)
            std_wins += int(stats.std_mid_active < stats.std_mid_passive)

    majority = config.n_setups // 2 + 1
    report = BenchmarkReport(
        config=config,
        curves=curves,
        setups=setups,
        auc_wins=auc_wins,
        std_wins=std_wins,
        auc_majority=paired and auc_wins >= majority,
        std_majority=paired and std_wins >= majority,
        n_failed=len(failures),
        failures=failures,
        wall_seconds=time.perf_counter() - t0,
        backend=BACKEND,
        version=__version__,
        config_hash=config.digest(),
    )
    if report_path is not None:
        report.to_json(report_path)
    return report
