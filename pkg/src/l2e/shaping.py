"""Plan-based final-volume-preserving shaping and the plan-conditioned reward.

The shaping term for a transition ``(s, a, s')`` under plan ``p`` with ``L``
waypoints is::

    F = (1 - R_G(s, a, s', goal(p))) / 2 * (k(s) + 1) / L * exp(-d(s, p_k)^2 / (2 sigma^2))

where ``k(s)`` is the nearest waypoint index (lowest index on ties) and
``d`` the Euclidean distance over the position components of the state.
The scalar helpers delegate to the batched ones so that a reward computed
once during a rollout and again during relabeling is bitwise identical.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import PUSH_POSITION_INDEX, goal_reached
from .planners import Plan


@dataclass(frozen=True)
class ShapingConfig:
    sigma: float = 0.5
    # state components compared against waypoint components, in order
    position_index: tuple = PUSH_POSITION_INDEX
    # state components holding the achieved planar goal
    achieved_index: tuple = (3, 4)
    goal_tolerance: float = 0.1

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if len(self.achieved_index) != 2:
            raise ValueError("achieved_index must select two components")

    @classmethod
    def for_env(cls, env, sigma: float = 0.5) -> "ShapingConfig":
        return cls(sigma=sigma, position_index=tuple(env.position_index),
                   achieved_index=tuple(env.achieved_index),
                   goal_tolerance=env.config.goal_tolerance)


def squared_distances(states, waypoints, position_index) -> np.ndarray:
    """``(T, L)`` squared distances between states and waypoints.

    Components are accumulated in index order so every batch shape follows
    the same arithmetic.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    waypoints = np.asarray(waypoints, dtype=float)
    if waypoints.shape[1] != len(position_index):
        raise ValueError(
            f"waypoint dim {waypoints.shape[1]} does not match {len(position_index)} "
            "position components")
    d2 = np.zeros((states.shape[0], waypoints.shape[0]))
    for j, i in enumerate(position_index):
        diff = states[:, i, None] - waypoints[None, :, j]
        d2 += diff * diff
    return d2


def distance(s, w, position_index=PUSH_POSITION_INDEX) -> float:
    """Euclidean distance over position components (orientation ignored)."""
    return float(np.sqrt(squared_distances(s, np.atleast_2d(w), position_index)[0, 0]))


def nearest_indices(states, waypoints, position_index):
    """Nearest waypoint index per state and the corresponding squared distance."""
    d2 = squared_distances(states, waypoints, position_index)
    k = np.argmin(d2, axis=1)  # first occurrence on ties
    return k, d2[np.arange(len(k)), k]


def nearest_index(s, plan: Plan, cfg: ShapingConfig) -> int:
    return int(nearest_indices(s, plan.waypoints, cfg.position_index)[0][0])


def goal_of(plan: Plan) -> np.ndarray:
    return plan.goal


def shaping_terms(states, next_states, waypoints, goal, cfg: ShapingConfig):
    """Sparse reward and shaping values for a batch of transitions under one plan."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    next_states = np.atleast_2d(np.asarray(next_states, dtype=float))
    L = waypoints.shape[0]
    k, d2 = nearest_indices(states, waypoints, cfg.position_index)
    achieved = next_states[:, list(cfg.achieved_index)]
    rg = goal_reached(achieved, goal, cfg.goal_tolerance)
    sig2 = cfg.sigma * cfg.sigma
    f = ((1.0 - rg) / 2.0) * ((k + 1) / L) * np.exp(-d2 / (2.0 * sig2))
    return rg, f


def fv_shaping_batch(states, next_states, plan: Plan, cfg: ShapingConfig) -> np.ndarray:
    return shaping_terms(states, next_states, plan.waypoints, plan.goal, cfg)[1]


def plan_reward_batch(states, next_states, plan: Plan, cfg: ShapingConfig) -> np.ndarray:
    rg, f = shaping_terms(states, next_states, plan.waypoints, plan.goal, cfg)
    return rg + f


def fv_shaping(s, a, s_next, plan: Plan, cfg: ShapingConfig) -> float:
    """Shaping value of a single transition; ``a`` does not enter the value."""
    return float(fv_shaping_batch(s, s_next, plan, cfg)[0])


def plan_reward(s, a, s_next, plan: Plan, cfg: ShapingConfig) -> float:
    """Sparse goal reward of ``goal_of(plan)`` plus the plan shaping term."""
    return float(plan_reward_batch(s, s_next, plan, cfg)[0])
