"""Training and evaluation loops for L2E and the comparison methods.

One call to :func:`train` runs a single agent (one seed). Metrics go to
``metrics.jsonl`` (deterministic for a fixed config and seed) and wall-clock
timings to ``timings.jsonl``.
"""
from __future__ import annotations

import copy
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import (InverseModel, SubgoalTracker, collect_im_data, direct_action,
                        im_action, run_controller)
from .config import ExperimentConfig
from .envs import goal_reached, make_env
from .planmdp import PlanMDP
from .replay import (Episode, ReplayBuffer, biased_replay_plans, her_relabel, parse_strategy,
                     relabel_episode, uniform_replay_plans)
from .sac import SAC, NonFiniteLoss

log = logging.getLogger(__name__)

# independent streams derived from one seed
STREAM_ENV, STREAM_REPLAY, STREAM_EVAL = 0, 1, 2


def stream(seed: int, which: int, *extra) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), which, *map(int, extra)]))


class MetricsLog:
    """Append-only JSON-lines file whose first record describes the run."""

    def __init__(self, path, config: ExperimentConfig, seed: int):
        self.path = Path(path) if path else None
        self.records = []
        header = {"type": "header", "config_hash": config.hash(),
                  "method": config.experiment.method, "env": config.experiment.env,
                  "seed": int(seed)}
        self.write(header)

    def write(self, record: dict):
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_metrics(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class RunResult:
    config: ExperimentConfig
    seed: int
    metrics: list = field(default_factory=list)
    agent: object = None
    buffer: ReplayBuffer | None = None
    episodes: int = 0
    steps: int = 0
    episode_lengths: list = field(default_factory=list)
    replay_counts: list = field(default_factory=list)


def learner_config(config: ExperimentConfig, seed: int):
    cfg = copy.deepcopy(config.learner)
    cfg.seed = int(seed)
    return cfg


def make_agent(config: ExperimentConfig, env, cond_dim: int, seed: int) -> SAC:
    return SAC(env.state_dim + cond_dim, env.action_dim, env.action_bound,
               learner_config(config, seed))


def to_learner_batch(batch: dict) -> dict:
    return {"obs": np.concatenate([batch["s"], batch["cond"]], axis=1),
            "obs2": np.concatenate([batch["s2"], batch["cond"]], axis=1),
            "a": batch["a"], "r": batch["r"], "terminal": batch["terminal"]}


# ---------------------------------------------------------------------------
# policies used for rollouts / evaluation


class Policy:
    """Task sampling plus a per-step controller for one method."""

    def __init__(self, method: str, config: ExperimentConfig, agent=None, model=None):
        self.method = method
        self.config = config
        self.agent = agent
        self.model = model

    def rollout(self, mdp: PlanMDP, deterministic=True, rng=None):
        """Sample a task and run one episode; returns ``(success, steps)``."""
        env = mdp.env
        cfg = self.config
        method = self.method
        if method == "her":
            s, goal, _ = env.reset()
            ctrl = lambda st: self.agent.act(np.concatenate([st, goal]), deterministic, rng)  # noqa: E731
        else:
            s, plan = mdp.sample_task()
            if method == "l2e":
                enc = mdp.encode(plan)
                ctrl = lambda st: self.agent.act(np.concatenate([st, enc]), deterministic, rng)  # noqa: E731
            elif method == "plan":
                ctrl = lambda st: direct_action(st, plan, env, mdp.shaping)  # noqa: E731
            elif method == "plan_im":
                ctrl = lambda st: im_action(st, plan, self.model, env, mdp.shaping)  # noqa: E731
            elif method == "subgoal_rl":
                tracker = SubgoalTracker(plan, cfg.baseline.subgoal_distance,
                                         cfg.baseline.subgoal_tolerance)
                idx = list(env.achieved_index)

                def ctrl(st):
                    sg = tracker.update(st[idx])
                    return self.agent.act(np.concatenate([st, sg]), deterministic, rng)
            else:
                raise ValueError(method)
        res = run_controller(env, s, env.goal, ctrl)
        return res.success, res.steps


def evaluate_policy(policy: Policy, config: ExperimentConfig, rollouts: int, seed: int,
                    label: int) -> dict:
    """``rollouts`` deterministic episodes on freshly sampled tasks."""
    mdp = PlanMDP.make(config.experiment.env, config.env, config.shaping.sigma,
                       config.shaping.density, seed=stream(seed, STREAM_EVAL, label))
    successes = [bool(policy.rollout(mdp)[0]) for _ in range(rollouts)]
    return {"type": "eval", "step": int(label), "successes": [int(s) for s in successes],
            "success_rate": float(np.mean(successes)) if successes else 0.0}


# ---------------------------------------------------------------------------
# training


class _Run:
    """Shared bookkeeping for the learning methods."""

    def __init__(self, config: ExperimentConfig, seed: int, out):
        self.config = config.validate()
        self.seed = int(seed)
        self.out = Path(out) if out else None
        if self.out:
            self.out.mkdir(parents=True, exist_ok=True)
            for name in ("metrics.jsonl", "timings.jsonl"):
                (self.out / name).unlink(missing_ok=True)
            (self.out / "config.txt").write_text(config.dumps())
        self.metrics = MetricsLog(self.out / "metrics.jsonl" if self.out else None, config, seed)
        self.t0 = time.time()
        self.steps = 0
        self.episodes = 0
        self.next_eval = 0
        self.loss_sums = {}
        self.loss_count = 0
        self.update_debt = 0.0
        self.episode_lengths = []
        self.replay_counts = []

    def timing(self, record: dict):
        if self.out:
            with open(self.out / "timings.jsonl", "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def add_losses(self, losses: dict):
        for k, v in losses.items():
            self.loss_sums[k] = self.loss_sums.get(k, 0.0) + float(v)
        self.loss_count += 1

    def maybe_eval(self, policy: Policy, extra_ckpt: dict, force=False):
        if not force and self.steps < self.next_eval:
            return
        exp = self.config.experiment
        rec = evaluate_policy(policy, self.config, exp.eval_rollouts, self.seed, self.steps)
        rec["episodes"] = self.episodes
        rec["losses"] = ({k: v / self.loss_count for k, v in sorted(self.loss_sums.items())}
                         if self.loss_count else {})
        self.metrics.write(rec)
        self.timing({"step": self.steps, "wall": time.time() - self.t0})
        log.info("seed %d step %d success %.3f", self.seed, self.steps, rec["success_rate"])
        self.loss_sums, self.loss_count = {}, 0
        while self.next_eval <= self.steps:
            self.next_eval += exp.eval_interval
        self.checkpoint(extra_ckpt)

    def checkpoint(self, arrays: dict):
        if not self.out:
            return
        arrays = dict(arrays)
        arrays["config"] = np.array(self.config.dumps())
        arrays["method"] = np.array(self.config.experiment.method)
        arrays["step"] = np.array(self.steps)
        arrays["seed"] = np.array(self.seed)
        np.savez(self.out / "checkpoint.npz", **arrays)

    def run_updates(self, agent: SAC, buffer: ReplayBuffer, n_env_steps: int, rng,
                    ckpt: dict):
        exp = self.config.experiment
        if self.steps < exp.warmup or buffer.size < 1:
            return
        self.update_debt += n_env_steps * exp.update_ratio
        n = int(self.update_debt)
        self.update_debt -= n
        bs = self.config.learner.batch
        for _ in range(n):
            batch = to_learner_batch(buffer.sample(bs, rng))
            try:
                losses = agent.update(batch)
            except NonFiniteLoss as err:
                self.checkpoint(ckpt)
                self.metrics.write({"type": "error", "step": self.steps, "loss": err.name,
                                    "diagnostics": err.diagnostics})
                raise
            self.add_losses(losses)

    def result(self, **kw) -> RunResult:
        return RunResult(self.config, self.seed, self.metrics.records, steps=self.steps,
                         episodes=self.episodes, episode_lengths=self.episode_lengths,
                         replay_counts=self.replay_counts, **kw)


def _act(agent: SAC, obs, run: _Run, rng):
    if run.steps < run.config.experiment.warmup:
        b = agent.action_bound
        return rng.uniform(-b, b, size=agent.action_dim)
    return agent.act(obs, deterministic=False)


def collect_plan_episode(mdp: PlanMDP, agent: SAC, run: _Run, rng) -> Episode:
    """Roll out one plan-conditioned episode with shaped rewards."""
    s, plan = mdp.sample_task()
    enc = mdp.encode(plan)
    S, A, R, S2, T = [], [], [], [], []
    done = False
    while not done:
        a = _act(agent, np.concatenate([s, enc]), run, rng)
        s2, r, done = mdp.shaped_step(s, a, plan)
        S.append(s), A.append(a), R.append(r), S2.append(s2), T.append(float(r == 1.0))
        s = s2
        run.steps += 1
    ep = Episode.from_lists(S, A, R, S2, T, plan=plan)
    ep.info["encoding"] = enc
    return ep


def train_l2e(config: ExperimentConfig, seed: int, out=None) -> RunResult:
    run = _Run(config, seed, out)
    exp, rep = config.experiment, config.replay
    mdp = PlanMDP.make(exp.env, config.env, config.shaping.sigma, config.shaping.density,
                       seed=stream(seed, STREAM_ENV))
    env = mdp.env
    agent = make_agent(config, env, mdp.encoding_dim, seed)
    buffer = ReplayBuffer(exp.buffer_capacity, env.state_dim, env.action_dim, mdp.encoding_dim)
    rng = stream(seed, STREAM_REPLAY)
    policy = Policy("l2e", config, agent=agent)
    run.maybe_eval(policy, agent.state_arrays())
    while run.steps < exp.total_steps:
        ep = collect_plan_episode(mdp, agent, run, rng)
        run.episodes += 1
        run.episode_lengths.append(len(ep))
        buffer.add_episode(ep, ep.info["encoding"])
        if rep.strategy == "bias":
            plans = biased_replay_plans(buffer, ep, rep.n, rep.m, mdp.shaping, rng)
        else:
            plans = uniform_replay_plans(buffer, rep.n, rng)
        run.replay_counts.append(len(plans))
        for p in plans:
            buffer.add_episode(relabel_episode(ep, p, mdp.shaping), mdp.encode(p))
        run.run_updates(agent, buffer, len(ep), rng, agent.state_arrays())
        run.maybe_eval(policy, agent.state_arrays())
    run.maybe_eval(policy, agent.state_arrays(), force=run.metrics.records[-1].get("step") != run.steps)
    return run.result(agent=agent, buffer=buffer)


def train_her(config: ExperimentConfig, seed: int, out=None, subgoals: bool = False) -> RunResult:
    """Goal-conditioned SAC with hindsight relabeling.

    With ``subgoals`` the agent is conditioned on planned subgoals during
    training and evaluation.
    """
    method = "subgoal_rl" if subgoals else "her"
    run = _Run(config, seed, out)
    exp = config.experiment
    strategy, k = parse_strategy(config.replay.her)
    mdp = PlanMDP.make(exp.env, config.env, config.shaping.sigma, config.shaping.density,
                       seed=stream(seed, STREAM_ENV))
    env = mdp.env
    tol = env.config.goal_tolerance
    agent = make_agent(config, env, env.goal_dim, seed)
    buffer = ReplayBuffer(exp.buffer_capacity, env.state_dim, env.action_dim, env.goal_dim,
                          plans=False)
    rng = stream(seed, STREAM_REPLAY)
    policy = Policy(method, config, agent=agent)
    idx = list(env.achieved_index)
    run.maybe_eval(policy, agent.state_arrays())
    while run.steps < exp.total_steps:
        if subgoals:
            s, plan = mdp.sample_task()
            tracker = SubgoalTracker(plan, config.baseline.subgoal_distance,
                                     config.baseline.subgoal_tolerance)
        else:
            s, goal, _ = env.reset()
        S, A, R, S2, G = [], [], [], [], []
        done = False
        while not done:
            g = tracker.update(s[idx]) if subgoals else goal
            a = _act(agent, np.concatenate([s, g]), run, rng)
            s2, _, done = env.step(a)
            S.append(s), A.append(a), S2.append(s2), G.append(np.array(g))
            R.append(float(goal_reached(s2[idx], g, tol)))
            s = s2
            run.steps += 1
        ep = Episode.from_lists(S, A, R, S2, R)
        run.episodes += 1
        run.episode_lengths.append(len(ep))
        buffer.add(ep.states, ep.actions, ep.rewards, ep.next_states, ep.terminals,
                   goals=np.array(G))
        achieved = ep.next_states[:, idx]
        hs, ha, hr, hs2, ht, hg = her_relabel(ep, achieved, strategy, k, tol, rng)
        if len(hs):
            for i in range(0, len(hs), buffer.capacity):
                sl = slice(i, i + buffer.capacity)
                buffer.add(hs[sl], ha[sl], hr[sl], hs2[sl], ht[sl], goals=hg[sl])
        run.run_updates(agent, buffer, len(ep), rng, agent.state_arrays())
        run.maybe_eval(policy, agent.state_arrays())
    run.maybe_eval(policy, agent.state_arrays(), force=run.metrics.records[-1].get("step") != run.steps)
    return run.result(agent=agent, buffer=buffer)


def train_plan(config: ExperimentConfig, seed: int, out=None) -> RunResult:
    """Direct plan execution: nothing to learn, evaluated on the same schedule."""
    run = _Run(config, seed, out)
    exp = config.experiment
    policy = Policy("plan", config)
    for step in range(0, exp.total_steps + 1, exp.eval_interval):
        run.steps = step
        run.maybe_eval(policy, {}, force=True)
    return run.result()


def train_plan_im(config: ExperimentConfig, seed: int, out=None) -> RunResult:
    """Collect random-interaction data, fit the inverse model, evaluate plan tracking."""
    run = _Run(config, seed, out)
    exp, base = config.experiment, config.baseline
    env = make_env(exp.env, config.env)
    rng = stream(seed, STREAM_ENV)
    S, S2, A, _ = collect_im_data(env, base.im_episodes, rng)
    run.steps = len(S)
    run.episodes = base.im_episodes
    model = InverseModel(env.state_dim, env.action_dim, env.action_bound,
                         hidden=config.learner.hidden, seed=seed)
    val = model.fit(S, S2, A, lr=base.im_lr, batch=config.learner.batch,
                    max_epochs=base.im_max_epochs, seed=seed)
    run.add_losses({"im_val_mse": val})
    run.maybe_eval(Policy("plan_im", config, model=model), model.state_arrays(), force=True)
    return run.result(agent=model)


TRAINERS = {
    "l2e": train_l2e,
    "her": train_her,
    "subgoal_rl": lambda c, s, o=None: train_her(c, s, o, subgoals=True),
    "plan": train_plan,
    "plan_im": train_plan_im,
}


def train(config: ExperimentConfig, seed: int | None = None, out=None) -> RunResult:
    """Train one agent of ``config.experiment.method``."""
    seed = config.experiment.seed if seed is None else seed
    return TRAINERS[config.experiment.method](config, seed, out)


def _train_worker(args):
    text, seed, out = args
    res = train(ExperimentConfig.loads(text), seed, out)
    return [r for r in res.metrics]


def train_agents(config: ExperimentConfig, out, agents: int | None = None, workers=None):
    """Train ``agents`` independent seeds into ``out/agent_<i>``."""
    agents = agents or config.experiment.agents
    base = config.experiment.seed
    jobs = [(config.dumps(), base + i, str(Path(out) / f"agent_{i}")) for i in range(agents)]
    workers = workers or int(os.environ.get("L2E_THREADS", "1"))
    workers = max(1, min(workers, int(os.environ.get("L2E_THREADS", workers)), agents))
    if workers == 1:
        return [_train_worker(j) for j in jobs]
    import multiprocessing as mp

    with mp.get_context("spawn").Pool(workers) as pool:
        return pool.map(_train_worker, jobs)


# ---------------------------------------------------------------------------
# checkpoints


def load_policy(path):
    """Rebuild the policy stored in a checkpoint; returns ``(policy, config, step)``."""
    with np.load(path) as data:
        if "config" not in data:
            raise ValueError(f"{path} is not a run checkpoint")
        config = ExperimentConfig.loads(str(data["config"]))
        method = str(data["method"])
        if method != config.experiment.method:
            raise ValueError("checkpoint method does not match its config")
        step = int(data["step"])
        agent = model = None
        if method in ("l2e", "her", "subgoal_rl"):
            env = make_env(config.experiment.env, config.env)
            if method == "l2e":
                cond = PlanMDP(env, density=config.shaping.density).encoding_dim
            else:
                cond = env.goal_dim
            agent = make_agent(config, env, cond, int(data["seed"]))
            agent.load_arrays(data)
        elif method == "plan_im":
            model = InverseModel.from_arrays(data)
    return Policy(method, config, agent=agent, model=model), config, step


def evaluate(checkpoint, config: ExperimentConfig | None = None, label=None,
             rollouts: int | None = None, seed: int = 12345) -> dict:
    """Success record of ``rollouts`` deterministic episodes for a stored policy."""
    policy, stored, step = load_policy(checkpoint)
    if config is not None and config.hash() != stored.hash():
        raise ValueError("checkpoint was trained with a different configuration")
    config = stored
    rollouts = rollouts or config.experiment.eval_rollouts
    rec = evaluate_policy(policy, config, rollouts, seed, step if label is None else label)
    rec["checkpoint_step"] = step
    return rec


def aggregate(rates) -> dict:
    """Across-agent mean and standard deviation of the mean."""
    rates = np.asarray(rates, dtype=float)
    A = len(rates)
    std = float(np.std(rates, ddof=1)) if A > 1 else 0.0
    return {"mean": float(rates.mean()), "sem": float(std / np.sqrt(A)), "agents": A}
