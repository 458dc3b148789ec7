"""Comparison methods: direct plan execution, inverse-model tracking, planned subgoals."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .envs import PushingEnv
from .nn import Adam, Mlp, geometric_sizes
from .planners import Plan
from .shaping import ShapingConfig, nearest_index


@dataclass
class Rollout:
    success: bool
    steps: int
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)


def controlled_position(plan: Plan, env) -> slice:
    """Waypoint components of the directly actuated body."""
    return slice(0, 3) if isinstance(env, PushingEnv) else slice(0, 2)


def direct_action(state, plan: Plan, env, cfg: ShapingConfig) -> np.ndarray:
    """Plan delta of the actuated body at the nearest waypoint (zero at the end)."""
    k = nearest_index(state, plan, cfg)
    sel = controlled_position(plan, env)
    if k >= len(plan) - 1:
        return np.zeros(env.action_dim)
    delta = plan.waypoints[k + 1, sel] - plan.waypoints[k, sel]
    return env.clamp_action(delta)


def run_controller(env, state, goal, controller, max_steps: int | None = None) -> Rollout:
    """Roll out ``controller(state) -> action`` until success, env termination or the time limit.

    The environment must already hold ``state`` / ``goal`` (after reset or set_task).
    """
    max_steps = max_steps or env.config.episode_length
    out = Rollout(False, 0, [np.array(state)], [])
    s = state
    for _ in range(max_steps):
        a = controller(s)
        s, r, done = env.step(a)
        out.actions.append(np.array(a))
        out.states.append(s)
        out.steps += 1
        if r == 1.0:
            out.success = True
        if done:
            break
    return out


def direct_execute(plan: Plan, env, cfg: ShapingConfig, max_steps: int | None = None) -> Rollout:
    return run_controller(env, env.state, env.goal,
                          lambda s: direct_action(s, plan, env, cfg), max_steps)


# ---------------------------------------------------------------------------
# inverse dynamics model


def collect_im_data(env: PushingEnv, episodes: int, rng, box_fraction: float = 0.1,
                    horizon: int | None = None):
    """Random-action rollouts with ``box_fraction`` of steps heading for the box.

    Returns ``(states, next_states, actions, box_directed)``; episodes always
    run the full horizon.
    """
    if not isinstance(env, PushingEnv):
        raise TypeError("inverse-model data needs a pushing environment")
    horizon = horizon or env.config.episode_length
    b = env.action_bound
    S, S2, A, flags = [], [], [], []
    env.rng = rng
    for _ in range(episodes):
        s, _, _ = env.reset()
        for _ in range(horizon):
            toward = rng.random() < box_fraction
            if toward:
                a = env.clamp_action(s[3:6] - s[0:3])
            else:
                a = rng.uniform(-b, b, size=3)
            s2 = env.transition(s, a, env.sample_noise(rng))
            S.append(s)
            S2.append(s2)
            A.append(a)
            flags.append(toward)
            s = s2
    return np.array(S), np.array(S2), np.array(A), np.array(flags)


class InverseModel:
    """Action predictor ``(s, s_desired) -> a`` with input standardization."""

    def __init__(self, state_dim: int, action_dim: int, action_bound: float,
                 hidden=None, seed: int = 0):
        hidden = list(hidden or geometric_sizes(256, 64, 4))
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.action_bound = float(action_bound)
        self.net = Mlp([2 * state_dim] + hidden + [action_dim], seed, np.float32)
        self.mean = np.zeros(2 * state_dim)
        self.std = np.ones(2 * state_dim)
        self.trained = False
        self.history = []

    def _inputs(self, s, s_desired):
        x = np.concatenate([np.atleast_2d(s), np.atleast_2d(s_desired)], axis=1)
        return ((x - self.mean) / self.std).astype(np.float32)

    def predict(self, s, s_desired) -> np.ndarray:
        if not self.trained:
            raise RuntimeError("inverse model has not been trained")
        y = self.net(self._inputs(s, s_desired))
        a = self.action_bound * np.tanh(y.astype(np.float64))
        return a[0] if np.ndim(s) == 1 else a

    def fit(self, states, next_states, actions, lr=1e-3, batch=256, max_epochs=50,
            patience=3, val_fraction=0.1, seed=0):
        """Mean-squared-error regression; stops when validation loss stops improving."""
        rng = np.random.default_rng(seed)
        x = np.concatenate([states, next_states], axis=1)
        self.mean = x.mean(axis=0)
        self.std = x.std(axis=0) + 1e-6
        self.trained = True
        n = len(x)
        perm = rng.permutation(n)
        n_val = max(1, int(n * val_fraction))
        val, train = perm[:n_val], perm[n_val:]
        opt = Adam(self.net.params, lr)
        best, best_params, stale = np.inf, self.net.flat(), 0
        for _ in range(max_epochs):
            rng.shuffle(train)
            for i in range(0, len(train), batch):
                idx = train[i:i + batch]
                _, grads = self.loss(states[idx], next_states[idx], actions[idx])
                opt.step(grads)
            v = self.loss(states[val], next_states[val], actions[val], grads=False)[0]
            self.history.append(v)
            if v < best - 1e-9:
                best, best_params, stale = v, self.net.flat(), 0
            else:
                stale += 1
                if stale >= patience:
                    break
        self.net.set_flat(best_params)
        return best

    def loss(self, s, s2, a, grads=True):
        y, cache = self.net.forward(self._inputs(s, s2))
        th = np.tanh(y)
        pred = self.action_bound * th
        err = pred - a.astype(np.float32)
        loss = float(np.mean(err * err))
        if not grads:
            return loss, None
        g = (2.0 / err.size) * err * self.action_bound * (1.0 - th * th)
        return loss, self.net.backward(cache, g.astype(np.float32))[0]

    def state_arrays(self) -> dict:
        return {"im_arch": np.array(self.net.sizes), "im_params": self.net.flat(),
                "im_mean": self.mean, "im_std": self.std,
                "im_bound": np.array(self.action_bound)}

    @classmethod
    def from_arrays(cls, data) -> "InverseModel":
        sizes = [int(v) for v in data["im_arch"]]
        model = cls(sizes[0] // 2, sizes[-1], float(data["im_bound"]), hidden=sizes[1:-1])
        model.net.set_flat(data["im_params"])
        model.mean = np.asarray(data["im_mean"])
        model.std = np.asarray(data["im_std"])
        model.trained = True
        return model


def desired_state(plan: Plan, k: int) -> np.ndarray:
    """Waypoint ``k`` as a full pushing state with the box parallel to the table."""
    return np.concatenate([plan.waypoints[k], [0.0]])


def im_action(state, plan: Plan, model: InverseModel, env, cfg: ShapingConfig) -> np.ndarray:
    k = nearest_index(state, plan, cfg)
    if k >= len(plan) - 1:
        return np.zeros(env.action_dim)
    return env.clamp_action(model.predict(state, desired_state(plan, k + 1)))


def im_execute(plan: Plan, model: InverseModel, env, cfg: ShapingConfig,
               max_steps: int | None = None) -> Rollout:
    if not model.trained:
        raise RuntimeError("inverse model has not been trained")
    return run_controller(env, env.state, env.goal,
                          lambda s: im_action(s, plan, model, env, cfg), max_steps)


# ---------------------------------------------------------------------------
# planned subgoals


class SubgoalTracker:
    """Subgoals ``distance`` ahead along the planned box path (arc length).

    The subgoal advances once the box is within ``tolerance`` of it and never
    moves backwards.
    """

    def __init__(self, plan: Plan, distance: float = 0.3, tolerance: float = 0.1):
        self.plan = plan
        self.path = plan.box_path()
        seg = np.linalg.norm(np.diff(self.path, axis=0), axis=1)
        self.arc = np.concatenate([[0.0], np.cumsum(seg)])
        self.distance = distance
        self.tolerance = tolerance
        self.index = self._ahead(0)
        self.history = [self.index]

    def _ahead(self, base: int) -> int:
        hits = np.nonzero(self.arc[base + 1:] - self.arc[base] >= self.distance)[0]
        return base + 1 + int(hits[0]) if len(hits) else len(self.arc) - 1

    @property
    def final(self) -> bool:
        return self.index == len(self.arc) - 1

    @property
    def subgoal(self) -> np.ndarray:
        if self.final:
            return self.plan.goal
        return self.path[self.index]

    def update(self, box_xy) -> np.ndarray:
        box_xy = np.asarray(box_xy, dtype=float)
        if not self.final and np.hypot(*(box_xy - self.subgoal)) <= self.tolerance:
            self.index = self._ahead(self.index)
            self.history.append(self.index)
        return self.subgoal


def subgoal_policy_step(tracker: SubgoalTracker, state, agent, achieved_index=(3, 4),
                        deterministic: bool = True, rng=None) -> np.ndarray:
    """Advance the subgoal from the current box position and query the goal-conditioned agent."""
    state = np.asarray(state, dtype=float)
    sg = tracker.update(state[list(achieved_index)])
    return agent.act(np.concatenate([state, sg]), deterministic=deterministic, rng=rng)
