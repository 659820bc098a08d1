"""Command-line entry point for the whole pipeline.

Subcommands: gen-envs, gen-dataset, train, plan, bench, ablate, simulate.
All randomness flows from --seed (fallback: the PLANFORMER_SEED environment
variable); every run prints its resolved configuration first.

Exit codes: 0 success, 2 usage, 3 missing input, 4 malformed file,
5 dimension mismatch, 1 other error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import simdyn, train as train_mod, viz
from .env import EnvFormatError, generate_random_env, load_env, save_env
from .model import HybridSampler, ModelConfig, SamplerModel, load_model, save_model
from .nn.serialize import WeightFormatError
from .planner import GoalBiasSampler, PlannerConfig, plan
from .train import TrainConfig, env_spec_for

EXIT_MISSING_INPUT = 3
EXIT_BAD_FILE = 4
EXIT_DIM_MISMATCH = 5


class CliError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def _default_seed() -> int:
    return int(os.environ.get("PLANFORMER_SEED", "0"))


def _print_config(args: argparse.Namespace) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print("config:", json.dumps(cfg, default=str))


def _require_file(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise CliError(f"{what} not found: {path}", EXIT_MISSING_INPUT)
    return path


def _load_model_checked(path: str | None, dim: int | None = None) -> SamplerModel:
    if not path:
        raise CliError("--model-path is required for rrt_star_former", 2)
    _require_file(path, "model file")
    try:
        model = load_model(path)
    except WeightFormatError as exc:
        raise CliError(str(exc), EXIT_BAD_FILE) from exc
    if dim is not None and model.config.d_space != dim:
        raise CliError(
            f"model is {model.config.d_space}D but the run needs {dim}D",
            EXIT_DIM_MISMATCH)
    return model


def model_config_for(dim: int) -> ModelConfig:
    spec = env_spec_for(dim)
    dims = tuple(int(round(s)) for s in spec["size"])
    return ModelConfig(d_space=dim, map_dims=dims)


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_envs(args) -> int:
    spec = env_spec_for(args.dim)
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    written = 0
    while written < args.count:
        env_seed = int(rng.integers(0, 2**31 - 1))
        try:
            env = generate_random_env(seed=env_seed, **spec)
        except RuntimeError:
            continue
        save_env(env, os.path.join(args.out, f"env{written:04d}.json"))
        written += 1
    print(f"wrote {written} environments to {args.out}")
    return 0


def cmd_gen_dataset(args) -> int:
    config = TrainConfig(dim=args.dim, env_count=args.envs, seed=args.seed)
    path = train_mod.build_dataset(config, args.out)
    ds = train_mod.load_dataset(path)
    print(f"wrote dataset {path}: {len(ds)} samples over {len(ds.costmaps)} environments")
    return 0


def cmd_train(args) -> int:
    config = TrainConfig(dim=args.dim, env_count=args.envs,
                         batch_size=args.batch_size or (256 if args.dim == 2 else 128),
                         epochs=args.epochs, lr=args.lr, seed=args.seed)
    if args.dataset:
        ds_path = _require_file(args.dataset, "dataset")
    else:
        ds_path = os.path.join(args.out, "dataset", "dataset.jsonl")
        if not os.path.exists(ds_path):
            print("building dataset...")
            train_mod.build_dataset(config, os.path.join(args.out, "dataset"))
    dataset = train_mod.load_dataset(ds_path)
    if dataset.dim != args.dim:
        raise CliError(f"dataset is {dataset.dim}D, requested {args.dim}D",
                       EXIT_DIM_MISMATCH)
    model = SamplerModel(model_config_for(args.dim), seed=args.seed)
    report = train_mod.train(dataset, model, config, log=print)
    os.makedirs(args.out, exist_ok=True)
    model_path = args.model_path or os.path.join(args.out, f"sampler{args.dim}d.weights")
    save_model(model, model_path)
    curve_path = os.path.join(args.out, "loss_curve.json")
    with open(curve_path, "w") as fh:
        json.dump({"train": report.train_losses, "val": report.val_losses}, fh, indent=2)
    print(f"saved model to {model_path}; loss curve to {curve_path}")
    return 0


def cmd_plan(args) -> int:
    env = _load_env_checked(args.env)
    config = PlannerConfig(step_size=args.step_size, rewire_radius=args.rewire_radius,
                           max_iterations=args.max_iterations,
                           optimization_budget=args.budget)
    if args.method == "rrt_star":
        if args.alpha is not None:
            print("warning: --alpha applies only to rrt_star_former; ignored")
        sampler = GoalBiasSampler()
    else:
        model = _load_model_checked(args.model_path, dim=env.dim)
        sampler = HybridSampler(model, alpha=args.alpha if args.alpha is not None else 0.5)
    result, tree = plan(env, sampler, config, rng_seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "plan.csv")
    with open(csv_path, "w") as fh:
        fh.write(bench_mod.CSV_HEADER + "\n")
        fh.write(result.csv_row(args.method, env.seed, args.seed) + "\n")
    svg_path = os.path.join(args.out, "plan.svg")
    viz.render_svg(env, tree, result.path, svg_path)
    status = "success" if result.success else "FAILED"
    print(f"{status}: nodes={result.nodes_explored} iterations={result.iterations} "
          f"initial={result.initial_cost:.2f} final={result.final_cost:.2f}")
    print(f"wrote {csv_path} and {svg_path}")
    return 0 if result.success else 1


def _load_env_checked(path: str):
    _require_file(path, "environment file")
    try:
        return load_env(path)
    except EnvFormatError as exc:
        raise CliError(str(exc), EXIT_BAD_FILE) from exc


def cmd_bench(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    model = None
    if "rrt_star_former" in methods:
        model = _load_model_checked(args.model_path, dim=args.dim)
    config = PlannerConfig(max_iterations=args.max_iterations,
                           optimization_budget=args.budget,
                           rewire_radius=args.rewire_radius)
    report = bench_mod.compare_methods(model, dim=args.dim, env_count=args.envs,
                                       methods=methods, alpha=args.alpha,
                                       config=config, seed=args.seed, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, f"bench{args.dim}d.csv")
    bench_mod.write_csv(report.trials, csv_path)
    print(bench_mod.summarize(report))
    print(f"wrote {csv_path}")
    return 0


def cmd_ablate(args) -> int:
    model = _load_model_checked(args.model_path, dim=2)
    alphas = [float(a) for a in args.alphas.split(",")]
    config = PlannerConfig(max_iterations=args.max_iterations, optimization_budget=0)
    report = bench_mod.run_ablation(model, env_count=args.envs, alphas=alphas,
                                    config=config, seed=args.seed, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "ablation.csv")
    bench_mod.write_csv(report.trials, csv_path)
    print(bench_mod.summarize(report))
    for alpha, (nodes, rate) in bench_mod.PAPER_ABLATION.items():
        print(f"reference alpha={alpha:g}: {nodes} nodes, {rate}% success")
    print(f"wrote {csv_path}")
    return 0


def cmd_simulate(args) -> int:
    if args.scenario == "reference":
        scenario = simdyn.reference_scenario()
    else:
        _require_file(args.scenario, "scenario file")
        try:
            scenario = simdyn.load_scenario(args.scenario)
        except (EnvFormatError, json.JSONDecodeError, KeyError) as exc:
            raise CliError(f"bad scenario file: {exc}", EXIT_BAD_FILE) from exc
    model = None
    if args.model_path:
        model = _load_model_checked(args.model_path, dim=scenario.truth.dim)
    trace = simdyn.dynamic_sim(scenario, model, seed=args.seed, alpha=args.alpha)
    os.makedirs(args.out, exist_ok=True)
    trace_path = os.path.join(args.out, "sim_trace.json")
    with open(trace_path, "w") as fh:
        json.dump({
            "outcome": trace.outcome,
            "replans": trace.replans,
            "steps": [{"t": s.t, "pose": list(s.pose), "replanned": s.replanned}
                      for s in trace.steps],
        }, fh, indent=2)
    print(f"outcome: {trace.outcome} after {len(trace.steps)} steps "
          f"({trace.replans} replans)")
    print(f"wrote {trace_path}")
    return 0 if trace.outcome == "reached" else 1


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="planformer",
                                description="Transformer-guided RRT* planning toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dim=True):
        sp.add_argument("--seed", type=int, default=_default_seed())
        sp.add_argument("--out", default="out")
        if dim:
            sp.add_argument("--dim", type=int, choices=(2, 3), default=2)

    sp = sub.add_parser("gen-envs", help="generate random environment files")
    common(sp)
    sp.add_argument("--count", type=int, default=10)
    sp.set_defaults(func=cmd_gen_envs)

    sp = sub.add_parser("gen-dataset", help="build the imitation dataset")
    common(sp)
    sp.add_argument("--envs", type=int, default=500)
    sp.set_defaults(func=cmd_gen_dataset)

    sp = sub.add_parser("train", help="train the sampler model")
    common(sp)
    sp.add_argument("--envs", type=int, default=500)
    sp.add_argument("--epochs", type=int, default=20)
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--batch-size", type=int, default=None)
    sp.add_argument("--dataset", default=None, help="use an existing dataset file")
    sp.add_argument("--model-path", default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("plan", help="plan a single query")
    common(sp, dim=False)
    sp.add_argument("--env", required=True, help="environment json file")
    sp.add_argument("--method", choices=("rrt_star", "rrt_star_former"),
                    default="rrt_star")
    sp.add_argument("--model-path", default=None)
    sp.add_argument("--alpha", type=float, default=None)
    sp.add_argument("--step-size", type=float, default=4.0)
    sp.add_argument("--rewire-radius", type=float, default=0.0)
    sp.add_argument("--max-iterations", type=int, default=2000)
    sp.add_argument("--budget", type=int, default=5000)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("bench", help="method comparison over paired environments")
    common(sp)
    sp.add_argument("--methods", default="rrt_star,rrt_star_former")
    sp.add_argument("--envs", type=int, default=100)
    sp.add_argument("--model-path", default=None)
    sp.add_argument("--alpha", type=float, default=0.5)
    sp.add_argument("--rewire-radius", type=float, default=0.0)
    sp.add_argument("--max-iterations", type=int, default=2000)
    sp.add_argument("--budget", type=int, default=2000)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("ablate", help="hybrid sampling ratio ablation (2D)")
    common(sp, dim=False)
    sp.add_argument("--alphas", default="0,0.5,1")
    sp.add_argument("--envs", type=int, default=100)
    sp.add_argument("--model-path", required=True)
    sp.add_argument("--max-iterations", type=int, default=2000)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("simulate", help="dynamic-obstacle replanning simulation")
    common(sp, dim=False)
    sp.add_argument("--scenario", required=True,
                    help="scenario json file, or 'reference' for the built-in scene")
    sp.add_argument("--model-path", default=None)
    sp.add_argument("--alpha", type=float, default=0.5)
    sp.set_defaults(func=cmd_simulate)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _print_config(args)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (EnvFormatError, WeightFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FILE


if __name__ == "__main__":
    sys.exit(main())
