import math

import numpy as np

from planformer.env import Environment, Obstacle, Workspace
from planformer.planner import PlannerConfig
from planformer.simdyn import (REPLAN_CADENCE, Scenario, dynamic_sim,
                               load_scenario, save_scenario)


def static_scenario():
    env = Environment(workspace=Workspace(dim=2, size=(100.0, 100.0)),
                      obstacles=(Obstacle(center=(50.0, 50.0), radius=10.0),),
                      start=(10.0, 10.0), goal=(90.0, 90.0))
    return Scenario(truth=env, sensing_radius=20.0, robot_speed=2.0,
                    max_steps=200, known_obstacles=(0,))


def hidden_obstacle_scenario():
    # static blocker on the straight line, unknown at start, sensed en route
    env = Environment(workspace=Workspace(dim=2, size=(100.0, 100.0)),
                      obstacles=(Obstacle(center=(50.0, 50.0), radius=8.0),),
                      start=(10.0, 10.0), goal=(90.0, 90.0))
    return Scenario(truth=env, sensing_radius=15.0, robot_speed=2.0,
                    max_steps=200, known_obstacles=())


def moving_obstacle_scenario():
    env = Environment(
        workspace=Workspace(dim=2, size=(100.0, 100.0)),
        obstacles=(Obstacle(center=(50.0, 20.0), radius=6.0, velocity=(0.0, 1.5)),),
        start=(10.0, 50.0), goal=(90.0, 50.0))
    return Scenario(truth=env, sensing_radius=25.0, robot_speed=2.0,
                    max_steps=250, known_obstacles=(0,))


class TestScenarioIO:
    def test_roundtrip(self, tmp_path):
        sc = moving_obstacle_scenario()
        p = tmp_path / "scenario.json"
        save_scenario(sc, p)
        loaded = load_scenario(p)
        assert loaded == sc


class TestDynamicSim:
    def test_reaches_goal_in_static_world(self):
        trace = dynamic_sim(static_scenario(), None, seed=0)
        assert trace.outcome == "reached"
        assert trace.replans >= 1
        assert trace.steps[0].pose != trace.steps[-1].pose

    def test_replans_when_hidden_obstacle_appears(self):
        trace = dynamic_sim(hidden_obstacle_scenario(), None, seed=0)
        assert trace.outcome == "reached"
        # the reveal must trigger at least one replan beyond the initial one
        assert trace.replans >= 2

    def test_avoids_moving_obstacle(self):
        sc = moving_obstacle_scenario()
        trace = dynamic_sim(sc, None, seed=1)
        assert trace.outcome == "reached"

    def test_trace_poses_move_at_bounded_speed(self):
        sc = static_scenario()
        trace = dynamic_sim(sc, None, seed=0)
        poses = [s.pose for s in trace.steps]
        for a, b in zip(poses, poses[1:]):
            assert math.dist(a, b) <= sc.robot_speed + 1e-9

    def test_cadence_forces_periodic_replans(self):
        trace = dynamic_sim(static_scenario(), None, seed=0)
        forced = [s.t for s in trace.steps
                  if s.replanned and s.t > 0 and s.t % REPLAN_CADENCE == 0]
        if len(trace.steps) > REPLAN_CADENCE:
            assert forced

    def test_timeout_when_goal_fenced_off(self):
        ring = tuple(Obstacle(center=(80.0 + 10 * math.cos(t), 80.0 + 10 * math.sin(t)),
                              radius=4.5)
                     for t in np.linspace(0, 2 * math.pi, 14, endpoint=False))
        env = Environment(workspace=Workspace(dim=2, size=(100.0, 100.0)),
                          obstacles=ring, start=(10.0, 10.0), goal=(80.0, 80.0))
        sc = Scenario(truth=env, sensing_radius=20.0, robot_speed=2.0,
                      max_steps=20, known_obstacles=tuple(range(len(ring))))
        trace = dynamic_sim(sc, None, seed=0,
                            config=PlannerConfig(max_iterations=300,
                                                 optimization_budget=0))
        assert trace.outcome == "timeout"

    def test_deterministic(self):
        a = dynamic_sim(moving_obstacle_scenario(), None, seed=3)
        b = dynamic_sim(moving_obstacle_scenario(), None, seed=3)
        assert a.outcome == b.outcome
        assert [s.pose for s in a.steps] == [s.pose for s in b.steps]
