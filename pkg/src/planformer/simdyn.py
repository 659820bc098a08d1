"""Desk-scale dynamic-obstacle replanning loop.

The robot holds a plan for the environment as currently known, moves along
it at fixed speed, senses nearby obstacles each step and replans when the
current path is invalidated, when new information arrives, or on a fixed
cadence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .env import (EnvFormatError, Environment, Obstacle,
                  Workspace, apply_delta, env_from_dict, env_to_dict,
                  is_free_point, is_free_segment, sense_update, step_dynamic)
from .model import HybridSampler, SamplerModel
from .planner import GoalBiasSampler, PlannerConfig, Point, plan

REPLAN_CADENCE = 5  # steps between forced replans


@dataclass(frozen=True)
class Scenario:
    truth: Environment
    sensing_radius: float
    robot_speed: float
    max_steps: int = 200
    known_obstacles: tuple[int, ...] = ()  # indices of truth obstacles known upfront

    def initial_known(self) -> Environment:
        obstacles = tuple(self.truth.obstacles[i] for i in self.known_obstacles)
        return Environment(workspace=self.truth.workspace, obstacles=obstacles,
                           start=self.truth.start, goal=self.truth.goal,
                           seed=self.truth.seed)


def save_scenario(sc: Scenario, path) -> None:
    d = env_to_dict(sc.truth)
    d["scenario"] = {
        "sensing_radius": sc.sensing_radius,
        "robot_speed": sc.robot_speed,
        "max_steps": sc.max_steps,
        "known_obstacles": list(sc.known_obstacles),
    }
    with open(path, "w") as fh:
        json.dump(d, fh, indent=2)
        fh.write("\n")


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        d = json.load(fh)
    if not isinstance(d, dict):
        raise EnvFormatError(f"{path}: scenario must be a JSON object")
    sc = d.get("scenario", {})
    return Scenario(
        truth=env_from_dict(d),
        sensing_radius=float(sc.get("sensing_radius", 15.0)),
        robot_speed=float(sc.get("robot_speed", 2.0)),
        max_steps=int(sc.get("max_steps", 200)),
        known_obstacles=tuple(int(i) for i in sc.get("known_obstacles", ())),
    )


def reference_scenario() -> Scenario:
    """Scripted replanning scene: four static obstacles known upfront and one
    unknown moving obstacle that crosses the corridor to the goal; the robot
    senses within a finite radius and must replan around the intruder."""
    width = 100.0
    statics = tuple(Obstacle(center=c, radius=14.0)
                    for c in ((30.0, 30.0), (70.0, 30.0), (30.0, 70.0), (70.0, 70.0)))
    mover = (Obstacle(center=(50.0, 20.0), radius=6.0, velocity=(0.0, 2.0)),)
    truth = Environment(workspace=Workspace(dim=2, size=(width, width)),
                        obstacles=statics + mover,
                        start=(10.0, 10.0), goal=(90.0, 90.0))
    return Scenario(truth=truth, sensing_radius=25.0, robot_speed=2.0,
                    max_steps=250, known_obstacles=(0, 1, 2, 3))


@dataclass
class StepRecord:
    t: int
    pose: Point
    replanned: bool
    path: list[Point]


@dataclass
class SimTrace:
    outcome: str  # reached | collided | timeout | stuck
    steps: list[StepRecord] = field(default_factory=list)
    replans: int = 0


def _path_valid(env: Environment, path: Sequence[Point], from_idx: int) -> bool:
    if len(path) < 2:
        return False
    segs = list(zip(path, path[1:]))[from_idx:]
    return all(is_free_segment(env, a, b) for a, b in segs)


def _advance(pose: Point, path: list[Point], seg_idx: int, dist: float):
    """Move `dist` along the path from pose; returns (pose, seg_idx)."""
    remaining = dist
    pose = tuple(pose)
    while remaining > 1e-12 and seg_idx < len(path) - 1:
        target = path[seg_idx + 1]
        gap = math.dist(pose, target)
        if gap <= remaining:
            pose = tuple(target)
            seg_idx += 1
            remaining -= gap
        else:
            f = remaining / gap
            pose = tuple(p + f * (t - p) for p, t in zip(pose, target))
            remaining = 0.0
    return pose, seg_idx


def dynamic_sim(scenario: Scenario, model: Optional[SamplerModel], seed: int,
                alpha: float = 0.5, config: Optional[PlannerConfig] = None) -> SimTrace:
    """Run the sense / replan / move loop.  Outcome is `reached` when the
    robot enters the goal ball collision-free, `collided` when a truth
    obstacle covers its pose, `timeout` otherwise."""
    config = config or PlannerConfig(optimization_budget=200)
    truth = scenario.truth
    known = scenario.initial_known()
    pose: Point = truth.start
    trace = SimTrace(outcome="timeout")
    path: list[Point] = []
    seg_idx = 0
    rng = np.random.default_rng(seed)
    goal_tol = max(scenario.robot_speed, 1.0)

    for t in range(scenario.max_steps):
        truth = step_dynamic(truth)
        delta = sense_update(truth, known, pose, t, scenario.sensing_radius)
        known = apply_delta(known, truth, delta)
        if not is_free_point(truth, pose):
            trace.outcome = "collided"
            trace.steps.append(StepRecord(t=t, pose=pose, replanned=False, path=list(path)))
            return trace
        need_replan = (
            not path
            or not delta.empty
            or not _path_valid(known, path, seg_idx)
            or (t % REPLAN_CADENCE == 0 and t > 0)
        )
        if need_replan:
            plan_env = Environment(workspace=known.workspace, obstacles=known.obstacles,
                                   start=pose, goal=known.goal, seed=known.seed)
            if not is_free_point(plan_env, pose):
                trace.outcome = "collided"
                return trace
            if model is not None:
                sampler = HybridSampler(model, alpha=alpha)
            else:
                sampler = GoalBiasSampler()
            result, _ = plan(plan_env, sampler, config,
                             rng_seed=int(rng.integers(0, 2**31 - 1)))
            trace.replans += 1
            if result.success:
                path = result.path
                seg_idx = 0
            else:
                path = []
        if path:
            pose, seg_idx = _advance(pose, path, seg_idx, scenario.robot_speed)
        trace.steps.append(StepRecord(t=t, pose=pose, replanned=need_replan, path=list(path)))
        if not is_free_point(truth, pose):
            trace.outcome = "collided"
            return trace
        if math.dist(pose, truth.goal) <= goal_tol:
            trace.outcome = "reached"
            return trace
    return trace
