"""Soft actor-critic on numpy networks.

Inputs are flat observation vectors (state concatenated with the plan
encoding or goal). Actions are tanh-squashed Gaussians scaled to
``[-action_bound, action_bound]``; critics see the squashed action in
``[-1, 1]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import Adam, Mlp, geometric_sizes

LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)
CHECKPOINT_VERSION = 1


class NonFiniteLoss(FloatingPointError):
    def __init__(self, name, diagnostics):
        super().__init__(f"non-finite {name} loss: {diagnostics}")
        self.name = name
        self.diagnostics = diagnostics


@dataclass
class LearnerConfig:
    lr: float = 3e-4
    batch: int = 256
    gamma: float = 0.99
    polyak: float = 0.005
    hidden: tuple = field(default_factory=lambda: tuple(geometric_sizes(256, 64, 4)))
    # None: -action_dim
    entropy_target: float | None = None
    # None: learn the temperature, else keep it fixed
    alpha: float | None = None
    init_alpha: float = 1.0
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 < self.polyak < 1:
            raise ValueError("polyak must lie in (0, 1)")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        self.hidden = tuple(int(h) for h in self.hidden)


def softplus(x):
    return np.logaddexp(0.0, x)


class SAC:
    """Twin-critic SAC with automatic entropy tuning.

    :param obs_dim: size of the (state || conditioning) input
    :param action_dim: action dimensionality
    :param action_bound: per-component action magnitude bound
    """

    def __init__(self, obs_dim: int, action_dim: int, action_bound: float,
                 config: LearnerConfig | None = None):
        self.config = cfg = config or LearnerConfig()
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.action_bound = float(action_bound)
        self.dtype = np.dtype(cfg.dtype)
        self.rng = np.random.default_rng(cfg.seed)
        init = np.random.default_rng(cfg.seed + 7919)
        h = list(cfg.hidden)
        self.actor = Mlp([obs_dim] + h + [2 * action_dim], init, self.dtype)
        self.q1 = Mlp([obs_dim + action_dim] + h + [1], init, self.dtype)
        self.q2 = Mlp([obs_dim + action_dim] + h + [1], init, self.dtype)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.log_alpha = np.array([math.log(cfg.init_alpha if cfg.alpha is None
                                            else max(cfg.alpha, 1e-300))], dtype=np.float64)
        self.entropy_target = (-float(action_dim) if cfg.entropy_target is None
                               else float(cfg.entropy_target))
        self.actor_opt = Adam(self.actor.params, cfg.lr)
        self.q1_opt = Adam(self.q1.params, cfg.lr)
        self.q2_opt = Adam(self.q2.params, cfg.lr)
        self.alpha_opt = Adam([self.log_alpha], cfg.lr)
        self.updates = 0

    @property
    def alpha(self) -> float:
        if self.config.alpha is not None:
            return float(self.config.alpha)
        return float(math.exp(self.log_alpha[0]))

    # -- policy --------------------------------------------------------------

    def policy(self, obs, eps):
        """Reparameterized policy pass with fixed standard-normal noise ``eps``.

        Returns a dict with the squashed action ``t`` in ``[-1, 1]``, its
        log-probability and the intermediates needed for gradients.
        """
        cfg = self.config
        out, cache = self.actor.forward(obs)
        d = self.action_dim
        mu = out[:, :d]
        raw = out[:, d:]
        log_std = np.clip(raw, cfg.log_std_min, cfg.log_std_max)
        std = np.exp(log_std)
        u = mu + std * eps
        t = np.tanh(u)
        # log(1 - tanh(u)^2) in a stable form
        log_det = 2.0 * (LOG_2 - u - softplus(-2.0 * u))
        logp = np.sum(-0.5 * eps * eps - log_std - 0.5 * LOG_2PI - log_det, axis=1)
        return {"cache": cache, "mu": mu, "raw": raw, "log_std": log_std, "std": std,
                "eps": eps, "u": u, "t": t, "logp": logp}

    def act(self, obs, deterministic: bool = False, rng=None) -> np.ndarray:
        obs = np.asarray(obs, dtype=self.dtype)
        if not np.all(np.isfinite(obs)):
            raise ValueError("non-finite policy input")
        single = obs.ndim == 1
        obs = np.atleast_2d(obs)
        if deterministic:
            out = self.actor(obs)
            t = np.tanh(out[:, :self.action_dim])
        else:
            rng = self.rng if rng is None else rng
            eps = rng.standard_normal((len(obs), self.action_dim)).astype(self.dtype)
            t = self.policy(obs, eps)["t"]
        a = self.action_bound * t.astype(np.float64)
        return a[0] if single else a

    # -- losses ---------------------------------------------------------------

    def _q_input(self, obs, t):
        return np.concatenate([obs, t.astype(self.dtype)], axis=1)

    def critic_target(self, batch, eps2, alpha=None):
        """``r + gamma * (1 - terminal) * (min Q_target(s', a') - alpha * log pi(a'|s'))``."""
        alpha = self.alpha if alpha is None else alpha
        obs2 = np.asarray(batch["obs2"], dtype=self.dtype)
        pol = self.policy(obs2, eps2)
        x2 = self._q_input(obs2, pol["t"])
        qmin = np.minimum(self.q1_target(x2)[:, 0], self.q2_target(x2)[:, 0])
        soft = qmin - alpha * pol["logp"]
        r = np.asarray(batch["r"], dtype=self.dtype)
        notdone = 1.0 - np.asarray(batch["terminal"], dtype=self.dtype)
        return r + self.config.gamma * notdone * soft

    def critic_loss(self, net: Mlp, obs, a_norm, y):
        """``0.5 * mean((Q(s, a) - y)^2)`` and its parameter gradients."""
        x = self._q_input(np.asarray(obs, dtype=self.dtype), np.asarray(a_norm))
        q, cache = net.forward(x)
        err = q[:, 0] - y
        loss = 0.5 * float(np.mean(err * err))
        grads, _ = net.backward(cache, (err / len(err))[:, None])
        return loss, grads

    def actor_loss(self, obs, eps, alpha=None, pol=None):
        """``mean(alpha * log pi(a|s) - min_i Q_i(s, a))`` with a reparameterized ``a``.

        Returns ``(loss, actor_grads, logp)``.
        """
        alpha = self.alpha if alpha is None else alpha
        cfg = self.config
        obs = np.asarray(obs, dtype=self.dtype)
        if pol is None:
            pol = self.policy(obs, eps)
        B = len(obs)
        t = pol["t"]
        x = self._q_input(obs, t)
        q1, c1 = self.q1.forward(x)
        q2, c2 = self.q2.forward(x)
        use1 = (q1[:, 0] <= q2[:, 0])
        qmin = np.where(use1, q1[:, 0], q2[:, 0])
        loss = float(np.mean(alpha * pol["logp"] - qmin))
        # d(-qmin/B)/dx through whichever critic attains the minimum
        up1 = np.where(use1, -1.0 / B, 0.0).astype(self.dtype)[:, None]
        up2 = np.where(use1, 0.0, -1.0 / B).astype(self.dtype)[:, None]
        _, gx1 = self.q1.backward(c1, up1, params=False)
        _, gx2 = self.q2.backward(c2, up2, params=False)
        g_t = (gx1 + gx2)[:, self.obs_dim:]
        g_u = g_t * (1.0 - t * t) + (alpha / B) * (2.0 * t)
        g_mu = g_u
        g_logstd = g_u * pol["std"] * pol["eps"] - alpha / B
        inside = (pol["raw"] > cfg.log_std_min) & (pol["raw"] < cfg.log_std_max)
        g_raw = g_logstd * inside
        grads, _ = self.actor.backward(pol["cache"], np.concatenate([g_mu, g_raw], axis=1))
        return loss, grads, pol["logp"]

    def temperature_loss(self, logp):
        """``-mean(log_alpha * (log pi + target_entropy))`` and its gradient."""
        la = float(self.log_alpha[0])
        m = float(np.mean(np.asarray(logp, dtype=np.float64) + self.entropy_target))
        return -la * m, np.array([-m])

    # -- update ---------------------------------------------------------------

    def _check(self, name, loss, **diag):
        if not math.isfinite(loss):
            raise NonFiniteLoss(name, {k: float(np.max(np.abs(v))) if np.size(v) else 0.0
                                       for k, v in diag.items()})

    def update(self, batch) -> dict:
        """One gradient step on temperature, critics and actor; polyak-average targets.

        ``batch`` needs ``obs``, ``a`` (env units), ``r``, ``obs2``, ``terminal``.
        """
        cfg = self.config
        obs = np.asarray(batch["obs"], dtype=self.dtype)
        B = len(obs)
        a_norm = np.asarray(batch["a"], dtype=self.dtype) / self.action_bound
        eps = self.rng.standard_normal((B, self.action_dim)).astype(self.dtype)
        eps2 = self.rng.standard_normal((B, self.action_dim)).astype(self.dtype)

        pol = self.policy(obs, eps)
        losses = {}
        if cfg.alpha is None:
            la_loss, la_grad = self.temperature_loss(pol["logp"])
            self._check("temperature", la_loss, logp=pol["logp"])
            self.alpha_opt.step([la_grad])
            losses["temperature"] = la_loss
        else:
            losses["temperature"] = 0.0
        alpha = self.alpha

        y = self.critic_target(batch, eps2, alpha)
        for name, net, opt in (("critic1", self.q1, self.q1_opt), ("critic2", self.q2, self.q2_opt)):
            loss, grads = self.critic_loss(net, obs, a_norm, y)
            self._check(name, loss, target=y)
            opt.step(grads)
            losses[name] = loss

        loss, grads, _ = self.actor_loss(obs, eps, alpha, pol=pol)
        self._check("actor", loss, logp=pol["logp"], mu=pol["mu"])
        self.actor_opt.step(grads)
        losses["actor"] = loss
        losses["alpha"] = alpha

        self.q1_target.polyak_from(self.q1, cfg.polyak)
        self.q2_target.polyak_from(self.q2, cfg.polyak)
        self.updates += 1
        return losses

    def q_values(self, obs, a):
        x = self._q_input(np.asarray(obs, dtype=self.dtype),
                          np.asarray(a, dtype=self.dtype) / self.action_bound)
        return self.q1(x)[:, 0], self.q2(x)[:, 0]

    # -- persistence ------------------------------------------------------------

    _NETS = ("actor", "q1", "q2", "q1_target", "q2_target")

    def state_arrays(self) -> dict:
        cfg = self.config
        arrays = {
            "version": np.array(CHECKPOINT_VERSION),
            "arch": np.array([self.obs_dim, self.action_dim] + list(cfg.hidden)),
            "action_bound": np.array(self.action_bound),
            "log_alpha": self.log_alpha.copy(),
            "updates": np.array(self.updates),
        }
        for name in self._NETS:
            arrays[name] = getattr(self, name).flat()
        return arrays

    def save(self, path, extra: dict | None = None):
        arrays = self.state_arrays()
        if extra:
            arrays.update(extra)
        np.savez(path, **arrays)

    def load_arrays(self, data):
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported learner checkpoint version {version}")
        arch = [int(v) for v in data["arch"]]
        expect = [self.obs_dim, self.action_dim] + list(self.config.hidden)
        if arch != expect:
            raise ValueError(f"checkpoint architecture {arch} does not match {expect}")
        for name in self._NETS:
            getattr(self, name).set_flat(data[name])
        self.log_alpha[...] = data["log_alpha"]
        self.updates = int(data["updates"])

    @classmethod
    def load(cls, path, config: LearnerConfig | None = None) -> "SAC":
        with np.load(path) as data:
            arch = [int(v) for v in data["arch"]]
            cfg = config or LearnerConfig()
            cfg.hidden = tuple(arch[2:])
            agent = cls(arch[0], arch[1], float(data["action_bound"]), cfg)
            agent.load_arrays(data)
        return agent
