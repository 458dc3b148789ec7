"""Replay buffers, plan replay strategies and relabeling.

Plans are kept once in a reference-counted :class:`PlanStore`; transitions
refer to them by slot. Goal-conditioned (HER) buffers store the goal inline
instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .envs import goal_reached
from .planners import Plan
from .shaping import ShapingConfig, shaping_terms

CHECKPOINT_VERSION = 1


@dataclass
class Episode:
    """Transitions of a single rollout (``D_ep``)."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    plan: Plan | None = None
    goal: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rewards)

    @classmethod
    def from_lists(cls, states, actions, rewards, next_states, terminals, plan=None, goal=None):
        return cls(np.asarray(states, dtype=float), np.asarray(actions, dtype=float),
                   np.asarray(rewards, dtype=float), np.asarray(next_states, dtype=float),
                   np.asarray(terminals, dtype=float), plan, goal)


class PlanStore:
    """Deduplicated plans with reference counts and dense encoding rows."""

    def __init__(self, cond_dim: int, initial: int = 1024):
        self.cond_dim = cond_dim
        self.encodings = np.zeros((initial, cond_dim))
        self.refcount = np.zeros(initial, dtype=np.int64)
        self.plans: dict[int, Plan] = {}
        self.slot_of: dict[str, int] = {}
        self.key_of: dict[int, str] = {}
        self._free: list[int] = list(range(initial - 1, -1, -1))
        # live slots in insertion order, with positions for O(1) removal
        self._live: list[int] = []
        self._pos: dict[int, int] = {}

    def __len__(self):
        return len(self._live)

    def __contains__(self, plan: Plan):
        return plan.key() in self.slot_of

    def _grow(self):
        n = len(self.refcount)
        self.encodings = np.concatenate([self.encodings, np.zeros((n, self.cond_dim))])
        self.refcount = np.concatenate([self.refcount, np.zeros(n, dtype=np.int64)])
        self._free.extend(range(2 * n - 1, n - 1, -1))

    def intern(self, plan: Plan, encoding) -> int:
        """Slot of ``plan``, inserting it (with zero references) if new."""
        key = plan.key()
        slot = self.slot_of.get(key)
        if slot is not None:
            return slot
        if not self._free:
            self._grow()
        slot = self._free.pop()
        self.encodings[slot] = encoding
        self.refcount[slot] = 0
        self.plans[slot] = plan
        self.slot_of[key] = slot
        self.key_of[slot] = key
        self._pos[slot] = len(self._live)
        self._live.append(slot)
        return slot

    def acquire(self, slot: int, count: int = 1):
        self.refcount[slot] += count

    def release(self, slot: int, count: int = 1):
        self.refcount[slot] -= count
        if self.refcount[slot] <= 0:
            self._drop(slot)

    def release_many(self, slots):
        uniq, counts = np.unique(slots, return_counts=True)
        for s, c in zip(uniq.tolist(), counts.tolist()):
            self.release(s, c)

    def _drop(self, slot: int):
        key = self.key_of.pop(slot)
        del self.slot_of[key]
        del self.plans[slot]
        i = self._pos.pop(slot)
        last = self._live.pop()
        if last != slot:
            self._live[i] = last
            self._pos[last] = i
        self.refcount[slot] = 0
        self._free.append(slot)

    def live_slots(self) -> list[int]:
        return list(self._live)

    def sample_unique(self, n: int, rng) -> list[int]:
        """``n`` distinct live slots uniformly without replacement (all if fewer)."""
        live = len(self._live)
        if live == 0:
            return []
        if n >= live:
            return list(self._live)
        pick = rng.choice(live, size=n, replace=False)
        return [self._live[i] for i in pick]


class ReplayBuffer:
    """FIFO ring of transitions.

    With ``plans=True`` each transition references a plan slot and the
    conditioning vector is that plan's encoding; otherwise a goal vector is
    stored per transition.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int, cond_dim: int,
                 plans: bool = True):
        self.capacity = int(capacity)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.cond_dim = cond_dim
        self.uses_plans = plans
        self.states = np.zeros((self.capacity, state_dim))
        self.actions = np.zeros((self.capacity, action_dim))
        self.rewards = np.zeros(self.capacity)
        self.next_states = np.zeros((self.capacity, state_dim))
        self.terminals = np.zeros(self.capacity)
        if plans:
            self.refs = np.full(self.capacity, -1, dtype=np.int64)
            self.store = PlanStore(cond_dim)
        else:
            self.goals = np.zeros((self.capacity, cond_dim))
            self.store = None
        self.ptr = 0
        self.size = 0
        self.total_added = 0

    def __len__(self):
        return self.size

    def add(self, states, actions, rewards, next_states, terminals, plan: Plan | None = None,
            encoding=None, goals=None):
        """Append a block of transitions sharing one plan (or with per-row goals)."""
        states = np.atleast_2d(states)
        n = len(states)
        if n == 0:
            return
        if n > self.capacity:
            raise ValueError("block larger than buffer capacity")
        idx = (self.ptr + np.arange(n)) % self.capacity
        if self.uses_plans:
            if plan is None or encoding is None:
                raise ValueError("plan-conditioned buffer needs plan and encoding")
            slot = self.store.intern(plan, encoding)
            self.store.acquire(slot, n)
            old = self.refs[idx]
            old = old[old >= 0]
            if len(old):
                self.store.release_many(old)
            self.refs[idx] = slot
        else:
            if goals is None:
                raise ValueError("goal-conditioned buffer needs goals")
            self.goals[idx] = np.broadcast_to(goals, (n, self.cond_dim))
        self.states[idx] = states
        self.actions[idx] = np.atleast_2d(actions)
        self.rewards[idx] = rewards
        self.next_states[idx] = np.atleast_2d(next_states)
        self.terminals[idx] = terminals
        self.ptr = int((self.ptr + n) % self.capacity)
        self.size = min(self.size + n, self.capacity)
        self.total_added += n

    def add_episode(self, episode: Episode, encoding=None):
        if self.uses_plans:
            self.add(episode.states, episode.actions, episode.rewards, episode.next_states,
                     episode.terminals, plan=episode.plan, encoding=encoding)
        else:
            self.add(episode.states, episode.actions, episode.rewards, episode.next_states,
                     episode.terminals, goals=episode.goal)

    def conditioning(self, idx) -> np.ndarray:
        if self.uses_plans:
            return self.store.encodings[self.refs[idx]]
        return self.goals[idx]

    def sample(self, batch_size: int, rng) -> dict:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "s": self.states[idx], "a": self.actions[idx], "r": self.rewards[idx],
            "s2": self.next_states[idx], "terminal": self.terminals[idx],
            "cond": self.conditioning(idx),
        }

    # -- checkpointing -------------------------------------------------------

    def save(self, path):
        n = self.size
        arrays = {
            "version": np.array(CHECKPOINT_VERSION),
            "header": np.array([self.capacity, self.state_dim, self.action_dim, self.cond_dim,
                                int(self.uses_plans), self.ptr, self.size, self.total_added]),
            "states": self.states[:n], "actions": self.actions[:n], "rewards": self.rewards[:n],
            "next_states": self.next_states[:n], "terminals": self.terminals[:n],
        }
        if self.uses_plans:
            slots = self.store.live_slots()
            arrays["refs"] = self.refs[:n]
            arrays["plan_slots"] = np.array(slots, dtype=np.int64)
            arrays["plan_refcount"] = self.store.refcount[slots]
            arrays["plan_encodings"] = self.store.encodings[slots]
            if slots:
                arrays["plan_waypoints"] = np.stack([self.store.plans[s].waypoints for s in slots])
                arrays["plan_goals"] = np.stack([self.store.plans[s].goal for s in slots])
                arrays["plan_intermediate"] = np.stack([
                    np.full(2, np.nan) if self.store.plans[s].meta.get("intermediate") is None
                    else np.asarray(self.store.plans[s].meta["intermediate"], float)
                    for s in slots])
        else:
            arrays["goals"] = self.goals[:n]
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        with np.load(path) as data:
            version = int(data["version"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported buffer checkpoint version {version}")
            cap, sd, ad, cd, plans, ptr, size, total = (int(v) for v in data["header"])
            buf = cls(cap, sd, ad, cd, plans=bool(plans))
            for name in ("states", "actions", "rewards", "next_states", "terminals"):
                getattr(buf, name)[:size] = data[name]
            buf.ptr, buf.size, buf.total_added = ptr, size, total
            if buf.uses_plans:
                buf.refs[:size] = data["refs"]
                slots = data["plan_slots"].tolist()
                store = buf.store
                while slots and max(slots) >= len(store.refcount):
                    store._grow()
                taken = set(slots)
                store._free = [s for s in store._free if s not in taken]
                for i, slot in enumerate(slots):
                    mid = data["plan_intermediate"][i]
                    meta = {"intermediate": None if np.isnan(mid).any() else mid}
                    plan = Plan(data["plan_waypoints"][i], data["plan_goals"][i], meta)
                    key = plan.key()
                    store.plans[slot] = plan
                    store.slot_of[key] = slot
                    store.key_of[slot] = key
                    store.encodings[slot] = data["plan_encodings"][i]
                    store.refcount[slot] = data["plan_refcount"][i]
                    store._pos[slot] = len(store._live)
                    store._live.append(slot)
            else:
                buf.goals[:size] = data["goals"]
        return buf


# ---------------------------------------------------------------------------
# plan replay strategies


def uniform_replay_plans(buffer: ReplayBuffer, n: int, rng) -> list[Plan]:
    """``n`` distinct stored plans, uniformly without replacement."""
    slots = buffer.store.sample_unique(n, rng)
    return [buffer.store.plans[s] for s in slots]


def episode_score(episode: Episode, plan: Plan, cfg: ShapingConfig) -> float:
    """Sum of plan-conditioned rewards the episode would have collected under ``plan``."""
    rg, f = shaping_terms(episode.states, episode.next_states, plan.waypoints, plan.goal, cfg)
    return math.fsum((rg + f).tolist())


def biased_replay_plans(buffer: ReplayBuffer, episode: Episode, n: int, m: int,
                        cfg: ShapingConfig, rng, return_scores: bool = False):
    """Top ``n`` of ``m`` uniformly sampled plans by episode reward sum.

    Ties keep the sampling order.
    """
    if n > m:
        raise ValueError("need n <= m")
    candidates = uniform_replay_plans(buffer, m, rng)
    if not candidates:
        return ([], np.zeros(0)) if return_scores else []
    scores = np.array([episode_score(episode, p, cfg) for p in candidates])
    order = np.argsort(-scores, kind="stable")[:n]
    chosen = [candidates[i] for i in order]
    if return_scores:
        return chosen, scores[order]
    return chosen


def relabel_episode(episode: Episode, plan: Plan, cfg: ShapingConfig) -> Episode:
    """Copy of ``episode`` with rewards and terminals recomputed under ``plan``."""
    rg, f = shaping_terms(episode.states, episode.next_states, plan.waypoints, plan.goal, cfg)
    return Episode(episode.states, episode.actions, rg + f, episode.next_states, rg.copy(),
                   plan=plan)


# ---------------------------------------------------------------------------
# HER goal relabeling

HER_STRATEGIES = ("future", "episode")


def her_replay_goals(achieved: np.ndarray, strategy: str, k: int, rng):
    """Hindsight goals for each transition of an episode.

    ``achieved`` holds the achieved goal after each transition (``(T, 2)``).
    Returns ``(t_index, source_index)`` arrays: transition ``t_index[i]`` is
    replayed with goal ``achieved[source_index[i]]``.
    """
    T = len(achieved)
    if strategy not in HER_STRATEGIES:
        raise ValueError(f"unknown HER strategy {strategy!r}")
    ts, srcs = [], []
    for t in range(T):
        if strategy == "future":
            if t == T - 1:
                continue
            src = rng.integers(t + 1, T, size=k)
        else:
            src = rng.integers(0, T, size=k)
        ts.append(np.full(k, t))
        srcs.append(src)
    if not ts:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return np.concatenate(ts), np.concatenate(srcs)


def her_relabel(episode: Episode, achieved: np.ndarray, strategy: str, k: int, tolerance: float,
                rng):
    """Relabeled transitions ``(s, a, r, s', terminal, goal)`` with sparse rewards."""
    t_idx, src = her_replay_goals(achieved, strategy, k, rng)
    goals = achieved[src]
    r = goal_reached(achieved[t_idx], goals, tolerance)
    return (episode.states[t_idx], episode.actions[t_idx], r, episode.next_states[t_idx],
            r.copy(), goals)


def parse_strategy(spec: str):
    """``'future_5'`` -> ``('future', 5)``."""
    name, _, k = spec.partition("_")
    if name not in HER_STRATEGIES or not k.isdigit():
        raise ValueError(f"bad HER strategy {spec!r}; expected e.g. future_1 or episode_5")
    return name, int(k)
