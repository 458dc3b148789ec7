"""Plan-conditioned MDP built from a goal-conditioned environment and a planner."""
from __future__ import annotations

import numpy as np

from .envs import EnvConfig, MazeEnv, PushingEnv, make_env
from .planners import Plan, PlanningError, manhattan_plan, rrt_plan, subsample_plan
from .shaping import ShapingConfig, plan_reward

ENCODING_DIM = {"push": 4, "obstacle": 6, "maze": 40}


def encode_plan(plan: Plan, task: str) -> np.ndarray:
    """Analytical plan encoding.

    push: (start box xy, goal xy); obstacle: additionally the intermediate
    box xy; maze: all waypoints flattened.
    """
    if task in ("push", "obstacle"):
        if plan.dim != 6:
            raise ValueError(f"{task} plans have 6D waypoints, got {plan.dim}D")
        start = plan.waypoints[0, 3:5]
        if task == "push":
            return np.concatenate([start, plan.goal])
        mid = plan.meta.get("intermediate")
        if mid is None:
            raise ValueError("obstacle plans must record their intermediate box position")
        return np.concatenate([start, np.asarray(mid, dtype=float), plan.goal])
    if task == "maze":
        if plan.dim != 2:
            raise ValueError(f"maze plans have 2D waypoints, got {plan.dim}D")
        return plan.waypoints.reshape(-1).copy()
    raise ValueError(f"unknown task {task!r}")


class PlanMDP:
    """Environment + planner + shaping, sampled as (initial state, plan) tasks.

    The environment's generator is replaced by the MDP's own so that a single
    seed fixes resets, planner draws and transition noise.
    """

    def __init__(self, env, shaping: ShapingConfig | None = None, density: int | None = None,
                 seed=None, max_resamples: int = 100):
        self.env = env
        self.task = env.name
        self.shaping = shaping or ShapingConfig.for_env(env)
        self.density = density
        self.max_resamples = max_resamples
        self.rng = np.random.default_rng(seed)
        env.rng = self.rng
        self.plan = None

    @classmethod
    def make(cls, env_id: str, config: EnvConfig | None = None, sigma: float = 0.5,
             density: int | None = None, seed=None) -> "PlanMDP":
        env = make_env(env_id, config)
        return cls(env, ShapingConfig.for_env(env, sigma), density=density, seed=seed)

    @property
    def plan_length(self) -> int:
        return self.density or self.env.plan_length

    @property
    def encoding_dim(self) -> int:
        if self.task == "maze":
            return 2 * self.plan_length
        return ENCODING_DIM[self.task]

    def make_plan(self, state, goal, obstacles) -> Plan:
        env = self.env
        if isinstance(env, MazeEnv):
            plan = rrt_plan(state, goal, obstacles, self.rng, length=env.plan_length,
                            margin=env.config.maze_clearance)
        elif isinstance(env, PushingEnv):
            contacts = 4 if env.obstacle else 2
            plan = manhattan_plan(state, goal, env.config, contacts=contacts, rng=self.rng,
                                  obstacles=obstacles, length=env.plan_length)
        else:
            raise TypeError(f"no planner for {type(env).__name__}")
        if self.density is not None and self.density != len(plan):
            plan = subsample_plan(plan, self.density)
        return plan

    def sample_task(self):
        """Reset the environment, sample a goal and plan; returns ``(state, plan)``."""
        for _ in range(self.max_resamples):
            state, goal, obstacles = self.env.reset()
            try:
                plan = self.make_plan(state, goal, obstacles)
            except PlanningError:
                continue
            self.plan = plan
            return state, plan
        raise PlanningError(f"no feasible task after {self.max_resamples} resamples")

    def shaped_step(self, state, action, plan: Plan | None = None):
        """Environment step with the reward replaced by the plan-conditioned reward."""
        plan = self.plan if plan is None else plan
        nxt, _, done = self.env.step(action)
        r = plan_reward(state, action, nxt, plan, self.shaping)
        return nxt, r, done

    def encode(self, plan: Plan) -> np.ndarray:
        return encode_plan(plan, self.task)
