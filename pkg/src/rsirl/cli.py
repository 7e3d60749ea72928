"""Command line front end.

All file outputs land under the --out directory with fixed names.  Exit
codes: 0 on success, 1 on usage or configuration errors, 2 on runtime
failures (solver or geometry errors during a run).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .active import SamplingPolicy, run_active
from .errors import RsirlError
from .expert import (
    ExpertSpec,
    generate_envelope,
    generate_system,
    system_from_json,
    system_to_json,
)
from .geometry import envelope_from_json, envelope_to_json
from .harness import BenchmarkConfig, build_test_set, run_benchmark
from .inference import run_passive
from .multistep import FeatureWeights, StageConfig, run_stages

_STATE_MODES = ("raw", "renormalize", "redraw")


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _out_path(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        if isinstance(payload, str):
            fh.write(payload)
        else:
            json.dump(payload, fh, indent=2)
        fh.write("\n")


def _load_spec(args) -> ExpertSpec:
    with open(args.system) as fh:
        system = system_from_json(fh.read())
    with open(args.envelope) as fh:
        envelope = envelope_from_json(fh.read())
    return ExpertSpec(system=system, envelope=envelope)


def _episode_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--system", required=True, help="system JSON path")
    sub.add_argument("--envelope", required=True, help="envelope JSON path")
    sub.add_argument("--steps", type=int, default=100)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--mode", choices=("passive", "active"), default="passive")
    sub.add_argument("--state-mode", choices=_STATE_MODES, default="renormalize")
    sub.add_argument("--mc-samples", type=int, default=1000)
    sub.add_argument("--temperature", type=float, default=1.0)
    sub.add_argument(
        "--snapshot-every",
        type=int,
        default=0,
        help="write the learned envelope as JSON every k steps (0 = never)",
    )


def _run_episode_from_args(args, csv_path=None):
    spec = _load_spec(args)
    test_states, test_actions = build_test_set(
        spec, n_episodes=2, n_steps=10, seed=args.seed, state_mode=args.state_mode
    )
    kw = dict(
        state_mode=args.state_mode,
        csv_path=csv_path,
        test_states=test_states,
        test_actions=test_actions,
        snapshot_every=args.snapshot_every,
        snapshot_dir=args.out,
    )
    if args.mode == "active":
        policy = SamplingPolicy(budget=args.mc_samples, temperature=args.temperature)
        return run_active(spec, args.steps, args.seed, policy=policy, **kw)
    return run_passive(spec, args.steps, args.seed, **kw)


def _cmd_gen_system(args) -> int:
    system = generate_system(
        args.n, args.m, args.dim, seed=args.seed, u_bound=args.u_bound
    )
    _write_json(_out_path(args, "system.json"), system_to_json(system))
    return 0


def _cmd_gen_envelope(args) -> int:
    envelope = generate_envelope(args.dim, args.points, seed=args.seed)
    _write_json(_out_path(args, "envelope.json"), envelope_to_json(envelope))
    return 0


def _cmd_simulate(args) -> int:
    csv_path = _out_path(args, "episode.csv")
    state, records = _run_episode_from_args(args, csv_path=csv_path)
    last = records[-1]
    print(
        f"{args.mode} episode: {state.n_refined}/{state.n_steps} refinements, "
        f"final area {last.area:.6g}, final mse {last.mse:.6g}"
    )
    return 0


def _cmd_export_envelope(args) -> int:
    state, _ = _run_episode_from_args(args)
    _write_json(
        _out_path(args, "learned_envelope.json"), envelope_to_json(state.envelope)
    )
    print(
        f"learned envelope: {len(state.envelope.halfspaces)} halfspaces "
        f"after {state.n_steps} steps"
    )
    return 0


def _cmd_bench(args) -> int:
    config = (
        BenchmarkConfig.from_json(args.config) if args.config else BenchmarkConfig()
    )
    if args.seed is not None:
        import dataclasses

        config = dataclasses.replace(config, base_seed=args.seed)
    report = run_benchmark(
        config,
        csv_path=_out_path(args, "benchmark.csv"),
        report_path=_out_path(args, "report.json"),
    )
    print(
        f"benchmark: active wins AUC in {report.auc_wins}/{config.n_setups} "
        f"setups, spread in {report.std_wins}/{config.n_setups}; "
        f"{report.wall_seconds:.1f}s on {report.backend} backend"
    )
    return 0


def _cmd_multistep(args) -> int:
    config = StageConfig.fidelity() if args.fidelity else StageConfig.desk()
    alpha = np.array([float(v) for v in args.alpha.split(",")])
    weights = FeatureWeights(alpha / np.linalg.norm(alpha))
    envelope = generate_envelope(
        config.n_outcomes, args.envelope_points, seed=args.seed
    )
    state, records, alpha_hat = run_stages(
        config,
        weights,
        envelope,
        n_stages=args.stages,
        seed=args.seed,
        known_weights=args.known_weights,
        active=not args.passive,
        csv_path=_out_path(args, "stages.csv"),
    )
    gap = float(np.linalg.norm(alpha_hat.alpha - weights.alpha))
    print(
        f"{args.stages} stages: {state.n_refined} refinements, "
        f"weight error {gap:.3e}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="rsirl",
        description="risk envelope inference from worst-case expert demonstrations",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-system", help="generate a random system JSON")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--dim", type=int, default=3, help="number of disturbances")
    p.add_argument("--u-bound", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_system)

    p = sub.add_parser("gen-envelope", help="generate a random envelope JSON")
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_envelope)

    p = sub.add_parser("simulate", help="run one learning episode, write step CSV")
    _episode_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser(
        "export-envelope", help="run one episode, write the learned envelope"
    )
    _episode_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_export_envelope)

    p = sub.add_parser("bench", help="paired active/passive benchmark")
    p.add_argument("--config", help="benchmark config JSON")
    p.add_argument("--seed", type=int, default=None, help="override base seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("multistep", help="run car-following stages, write stage CSV")
    p.add_argument("--stages", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", default="1,1,1,1", help="true weights, comma separated")
    p.add_argument("--envelope-points", type=int, default=20)
    p.add_argument("--fidelity", action="store_true", help="full-length stages")
    p.add_argument("--known-weights", action="store_true")
    p.add_argument("--passive", action="store_true", help="nature sampling only")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_multistep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except RsirlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
