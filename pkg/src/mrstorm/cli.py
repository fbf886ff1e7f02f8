"""Command-line interface: scenario generation, single trials, sweeps,
paired-difference reports, and the board/trial HTTP service."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from importlib import resources
from pathlib import Path

from .cost import CostWeights
from .harness import ALGOS, AlgoMode, report, run_trial, run_trial_async, sweep
from .mppi import PlannerConfig
from .world import TASKS, load_scenario, make_scenario, save_scenario


def _add_planner_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--rollouts", type=int, default=400, help="sampled rollouts per iteration")
    parser.add_argument("--iters", type=int, default=5, help="optimization iterations per step")
    parser.add_argument("--horizon", type=int, default=40, help="planning horizon steps")
    parser.add_argument("--sigma-init", type=float, default=2.5)
    parser.add_argument("--weights-json", type=Path, default=None,
                        help="JSON file overriding cost weight fields")


def _add_scenario_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--arm-count", type=int, default=4, choices=[1, 2, 3, 4])
    parser.add_argument("--arm-preset", default="desk6", choices=["desk6", "planar3"])
    parser.add_argument("--tmax", type=int, default=500)
    parser.add_argument("--spheres-per-link", type=int, default=3)


def _parse_levels(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",") if x]


def _load_weights(path: Path | None) -> CostWeights:
    if path is None:
        return CostWeights()
    obj = json.loads(path.read_text())
    valid = {f.name for f in dataclasses.fields(CostWeights)}
    unknown = set(obj) - valid
    if unknown:
        raise ValueError(f"unknown cost weight fields: {sorted(unknown)}")
    return CostWeights(**obj)


def _planner_config(args) -> PlannerConfig:
    return PlannerConfig(horizon=args.horizon, n_rollouts=args.rollouts,
                         opt_iters=args.iters, sigma_init=args.sigma_init)


def _resolve_scenario_path(arg: str) -> Path:
    if arg == "demo":
        return Path(str(resources.files("mrstorm").joinpath("data/demo_scenario.json")))
    return Path(arg)


def _algo_mode(name: str, rollouts: int, iters: int) -> AlgoMode:
    return AlgoMode(name, n_rollouts=rollouts, opt_iters=iters)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrstorm",
                                     description="multi-arm sampling-MPC benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenario", help="generate a scenario JSON file")
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_scenario_flags(p)

    p = sub.add_parser("run", help="run one trial from a scenario file")
    p.add_argument("--scenario", required=True,
                   help="scenario JSON path, or 'demo' for the bundled one")
    p.add_argument("--algo", required=True, choices=list(ALGOS))
    p.add_argument("--seed", type=int, default=None,
                   help="planner seed (defaults to the scenario seed)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-timing", action="store_true",
                   help="write plan_ms as 0 for bit-reproducible logs")
    p.add_argument("--async-mode", action="store_true",
                   help="thread-per-agent run (nondeterministic)")
    _add_planner_flags(p)

    p = sub.add_parser("sweep", help="level x seed x algorithm grid")
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--levels", default="1..5", help="e.g. '1..5' or '2,4'")
    p.add_argument("--seeds-per-level", type=int, default=6)
    p.add_argument("--algos", default="mrs,sd",
                   help=f"comma list from {{{','.join(ALGOS)}}}")
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-timing", action="store_true")
    _add_planner_flags(p)
    _add_scenario_flags(p)

    p = sub.add_parser("report", help="paired-difference tables from a sweep")
    p.add_argument("--in", dest="in_dir", type=Path, required=True)
    p.add_argument("--baseline", default="mrs")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("serve", help="HTTP service: intention board + trials")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--arms", type=int, default=4, help="board slots")
    return parser


def cli_run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "scenario":
        scenario = make_scenario(args.task, args.level, args.seed,
                                 n_arms=args.arm_count, arm_preset=args.arm_preset,
                                 t_max=args.tmax, spheres_per_link=args.spheres_per_link)
        args.out.parent.mkdir(parents=True, exist_ok=True)
        save_scenario(scenario, args.out)
        print(f"wrote {args.out}")
        return 0

    if args.command == "run":
        scenario = load_scenario(_resolve_scenario_path(args.scenario))
        mode = _algo_mode(args.algo, args.rollouts, args.iters)
        weights = _load_weights(args.weights_json)
        config = _planner_config(args)
        if args.async_mode:
            metrics = run_trial_async(scenario, mode, weights, config,
                                      trial_seed=args.seed)
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / "metrics.json").write_text(metrics.to_json())
        else:
            result = run_trial(scenario, mode, weights, config, trial_seed=args.seed,
                               out_dir=args.out, timing=not args.no_timing)
            metrics = result.metrics
        print(f"collision_steps={metrics.collision_steps} "
              f"task_score={metrics.task_score} ({metrics.score_kind}) "
              f"control_frequency={metrics.control_frequency_hz:.1f}Hz")
        return 0

    if args.command == "sweep":
        algos = [_algo_mode(a.strip(), args.rollouts, args.iters)
                 for a in args.algos.split(",") if a.strip()]
        collected = sweep(
            args.task, algos, args.out,
            levels=_parse_levels(args.levels),
            seeds_per_level=args.seeds_per_level,
            base_seed=args.base_seed,
            weights=_load_weights(args.weights_json),
            config=_planner_config(args),
            scenario_kwargs=dict(n_arms=args.arm_count, arm_preset=args.arm_preset,
                                 t_max=args.tmax, spheres_per_link=args.spheres_per_link),
            timing=not args.no_timing,
        )
        print(f"{len(collected)} trials in {args.out}")
        return 0

    if args.command == "report":
        stats = report(args.in_dir, args.baseline, args.out)
        print(f"wrote {args.out} ({sum(len(v) for v in stats.values())} rows)")
        return 0

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(n_arms=args.arms), host=args.host, port=args.port)
        return 0

    raise AssertionError(f"unhandled command {args.command}")


def main() -> None:
    sys.exit(cli_run())


if __name__ == "__main__":
    main()
