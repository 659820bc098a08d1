"""planformer: sampling-based optimal path planning with a transformer-guided
RRT* sampler, plus the environment, training and benchmarking stack around it.
"""

from .env import (CostMap, Environment, Obstacle, ObstacleDelta, Workspace,
                  generate_random_env, is_free_point, is_free_segment, rasterize,
                  sense_update, step_dynamic)
from .planner import (GoalBiasSampler, PlanResult, PlannerConfig, Tree,
                      extract_path, goal_bias_sampler, nearby, nearest, path_cost,
                      plan, steer)
from .grid_oracle import GridPath, astar, dijkstra, to_waypoints
from .model import (HybridSampler, ModelConfig, SampleContext, SamplerModel,
                    hybrid_sample, load_model, predict_next, save_model, should_stop)

__version__ = "0.1.0"
