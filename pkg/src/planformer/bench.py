"""Paired-trial benchmarking: the sampling-ratio ablation and the
method comparison, both over identical environment/seed streams so
per-environment deltas isolate the method effect.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .env import Environment, generate_random_env, is_free_point, is_free_segment
from .model import HybridSampler, SamplerModel
from .planner import GoalBiasSampler, PlannerConfig, plan
from .train import env_spec_for

CSV_HEADER = "method,env_seed,rng_seed,success,time_s,nodes,iterations,initial_cost,final_cost"

# reference values reported by the source experiments, for context next to
# desk-scale trend numbers
PAPER_ABLATION = {0.0: (47.02, 84.14), 0.5: (79.70, 100.00), 1.0: (275.14, 100.00)}
PAPER_COMPARISON_2D = {"rrt_star": (286.04, 159.00, 128.67),
                       "rrt_star_former": (79.70, 139.45, 129.36)}
PAPER_COMPARISON_3D = {"rrt_star": (86.45, 105.26, 77.71),
                       "rrt_star_former": (16.65, 94.82, 78.27)}


@dataclass
class TrialMetrics:
    method: str
    env_seed: int
    rng_seed: int
    success: bool
    time_s: float
    nodes: int
    iterations: int
    initial_cost: float
    final_cost: float

    def row(self) -> list[str]:
        return [self.method, str(self.env_seed), str(self.rng_seed),
                str(int(self.success)), f"{self.time_s:.6f}", str(self.nodes),
                str(self.iterations),
                f"{self.initial_cost:.6f}" if self.success else "",
                f"{self.final_cost:.6f}" if self.success else ""]


@dataclass
class AggregateRow:
    method: str
    trials: int
    success_rate: float          # percent
    mean_nodes: float            # over all trials
    mean_iterations: float
    mean_time_s: float
    mean_initial_cost: float     # over successful trials
    mean_final_cost: float


@dataclass
class AggregateReport:
    rows: list[AggregateRow] = field(default_factory=list)
    trials: list[TrialMetrics] = field(default_factory=list)

    def by_method(self) -> dict[str, AggregateRow]:
        return {r.method: r for r in self.rows}


def _aggregate(method: str, trials: Sequence[TrialMetrics]) -> AggregateRow:
    ok = [t for t in trials if t.success]
    return AggregateRow(
        method=method,
        trials=len(trials),
        success_rate=100.0 * len(ok) / len(trials) if trials else 0.0,
        mean_nodes=float(np.mean([t.nodes for t in trials])) if trials else 0.0,
        mean_iterations=float(np.mean([t.iterations for t in trials])) if trials else 0.0,
        mean_time_s=float(np.mean([t.time_s for t in trials])) if trials else 0.0,
        mean_initial_cost=float(np.mean([t.initial_cost for t in ok])) if ok else math.inf,
        mean_final_cost=float(np.mean([t.final_cost for t in ok])) if ok else math.inf,
    )


def validate_path(env: Environment, path: Sequence) -> bool:
    """Re-check the feasibility conditions for a finished path."""
    if not path:
        return False
    if tuple(path[0]) != tuple(env.start) or tuple(path[-1]) != tuple(env.goal):
        return False
    if not all(is_free_point(env, p) for p in path):
        return False
    return all(is_free_segment(env, a, b) for a, b in zip(path, path[1:]))


def benchmark_envs(dim: int, count: int, seed: int) -> list[Environment]:
    """The shared, paired environment set for one benchmark."""
    spec = env_spec_for(dim)
    rng = np.random.default_rng(seed)
    envs = []
    while len(envs) < count:
        env_seed = int(rng.integers(0, 2**31 - 1))
        try:
            envs.append(generate_random_env(seed=env_seed, **spec))
        except RuntimeError:
            continue
    return envs


def _make_sampler(method: str, model: Optional[SamplerModel], alpha: float):
    if method == "rrt_star":
        return GoalBiasSampler()
    if method == "rrt_star_former":
        if model is None:
            raise ValueError("rrt_star_former requires a trained model")
        return HybridSampler(model, alpha=alpha)
    raise ValueError(f"unknown method {method!r}")


def run_trial(env: Environment, method: str, model: Optional[SamplerModel],
              alpha: float, config: PlannerConfig, rng_seed: int) -> TrialMetrics:
    sampler = _make_sampler(method, model, alpha)
    result, _tree = plan(env, sampler, config, rng_seed)
    if result.success and not validate_path(env, result.path):
        raise AssertionError(f"planner returned an infeasible path (env seed {env.seed})")
    return TrialMetrics(
        method=method, env_seed=env.seed, rng_seed=rng_seed, success=result.success,
        time_s=result.time_to_first, nodes=result.nodes_explored,
        iterations=result.iterations, initial_cost=result.initial_cost,
        final_cost=result.final_cost)


def _trial_star(args):
    return run_trial(*args)


def _run_trials(jobs_args, jobs: int) -> list[TrialMetrics]:
    if jobs <= 1:
        return [run_trial(*a) for a in jobs_args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_trial_star, jobs_args, chunksize=1))


def run_ablation(model: SamplerModel, env_count: int = 100,
                 alphas: Sequence[float] = (0.0, 0.5, 1.0),
                 config: Optional[PlannerConfig] = None, seed: int = 0,
                 jobs: int = 1) -> AggregateReport:
    """Hybrid-ratio ablation on shared 2D environments: per-alpha average
    nodes (all trials) and success rate."""
    config = config or PlannerConfig(optimization_budget=0)
    envs = benchmark_envs(2, env_count, seed)
    seed_rng = np.random.default_rng(seed + 1)
    rng_seeds = [int(seed_rng.integers(0, 2**31 - 1)) for _ in envs]
    report = AggregateReport()
    for alpha in alphas:
        args = [(env, "rrt_star_former", model, alpha, config, rs)
                for env, rs in zip(envs, rng_seeds)]
        trials = _run_trials(args, jobs)
        for t in trials:
            t.method = f"rrt_star_former[alpha={alpha:g}]"
        report.trials.extend(trials)
        report.rows.append(_aggregate(f"rrt_star_former[alpha={alpha:g}]", trials))
    return report


def compare_methods(model: Optional[SamplerModel], dim: int = 2, env_count: int = 100,
                    methods: Sequence[str] = ("rrt_star", "rrt_star_former"),
                    alpha: float = 0.5, config: Optional[PlannerConfig] = None,
                    seed: int = 0, jobs: int = 1) -> AggregateReport:
    """Method comparison over identical environments and rng seed streams."""
    config = config or PlannerConfig()
    envs = benchmark_envs(dim, env_count, seed)
    seed_rng = np.random.default_rng(seed + 1)
    rng_seeds = [int(seed_rng.integers(0, 2**31 - 1)) for _ in envs]
    report = AggregateReport()
    for method in methods:
        args = [(env, method, model, alpha, config, rs)
                for env, rs in zip(envs, rng_seeds)]
        trials = _run_trials(args, jobs)
        report.trials.extend(trials)
        report.rows.append(_aggregate(method, trials))
    return report


# ---------------------------------------------------------------------------
# CSV / summaries

def write_csv(trials: Sequence[TrialMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER.split(","))
        for t in trials:
            w.writerow(t.row())


def csv_without_time(path) -> bytes:
    """Metric CSV with the wall-clock column removed, for byte comparisons."""
    out = io.StringIO()
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            keep = [c for i, c in enumerate(row) if i != 4]
            out.write(",".join(keep) + "\n")
    return out.getvalue().encode()


def summarize(report: AggregateReport) -> str:
    lines = [f"{'method':34s} {'trials':>6s} {'succ%':>7s} {'nodes':>9s} "
             f"{'iters':>9s} {'init':>9s} {'final':>9s}"]
    for r in report.rows:
        init = f"{r.mean_initial_cost:9.2f}" if math.isfinite(r.mean_initial_cost) else "      -"
        fin = f"{r.mean_final_cost:9.2f}" if math.isfinite(r.mean_final_cost) else "      -"
        lines.append(f"{r.method:34s} {r.trials:6d} {r.success_rate:7.2f} "
                     f"{r.mean_nodes:9.2f} {r.mean_iterations:9.2f} {init} {fin}")
    return "\n".join(lines)
