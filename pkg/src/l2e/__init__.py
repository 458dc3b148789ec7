"""Learning to execute motion plans with plan-conditioned shaped rewards."""
from .config import ExperimentConfig
from .envs import EnvConfig, MazeEnv, PushingEnv, make_env
from .planmdp import PlanMDP, encode_plan
from .planners import Plan, manhattan_plan, rrt_plan
from .shaping import ShapingConfig, fv_shaping, plan_reward

__all__ = [
    "EnvConfig", "ExperimentConfig", "MazeEnv", "Plan", "PlanMDP", "PushingEnv",
    "ShapingConfig", "encode_plan", "fv_shaping", "make_env", "manhattan_plan",
    "plan_reward", "rrt_plan",
]

__version__ = "0.1.0"
