# felrl/sac.py
"""
Soft actor-critic controller used inside the DYNA loop.

Actor: s → (mean, log-std) per action dimension, squashed through tanh onto
the action box. Two critics with soft-updated targets; the temperature α is
fixed or tuned towards a target entropy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .envs import EnvSpec
from .errors import ContractViolation, TrainingDivergence
from .nn import AdamState, Learner, adam_update, init_dense, soft_update
from .policy import Policy
from .replay import Batch

log = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class SacConfig:
    """
    :param alpha: Entropy temperature (initial value when `auto_alpha`).
    :param auto_alpha: Tune α towards `target_entropy`.
    :param target_entropy: None means −act_dim measured on the box rescaled
        to [−1, 1], i.e. −act_dim + Σ log(half range) in action units.
    :param warmup_steps: Uniform random actions before the actor takes over.
    """
    gamma: float = 0.99
    tau: float = 0.005
    alpha: float = 0.2
    auto_alpha: bool = False
    target_entropy: float | None = None
    batch_size: int = 64
    lr: float = 1e-3
    hidden_sizes: tuple[int, ...] = (64, 64)
    buffer_capacity: int = 100_000
    warmup_steps: int = 200
    updates_per_step: int = 1
    reward_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ContractViolation(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ContractViolation(f"tau must lie in (0, 1], got {self.tau}")
        if self.alpha < 0:
            raise ContractViolation("alpha must be non-negative")


def log1m_tanh_sq(u: np.ndarray) -> np.ndarray:
    """log(1 − tanh²u), stable for large |u|."""
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


@dataclass(frozen=True)
class _ActorCache:
    tape: object
    xi: np.ndarray
    std: np.ndarray
    tanh_u: np.ndarray
    in_range: np.ndarray


class SacAgent:
    """Actor, twin critics and twin target critics over small tanh networks."""

    def __init__(self, spec: EnvSpec, config: SacConfig | None = None, seed: int | None = None):
        self.spec = spec
        self.config = config or SacConfig()
        self.center = 0.5 * (spec.action_high + spec.action_low)
        self.half = 0.5 * spec.action_range
        self.target_entropy = (
            -float(spec.act_dim) + float(np.sum(np.log(self.half)))
            if self.config.target_entropy is None else self.config.target_entropy
        )
        self.reset_controller(seed)

    def reset_controller(self, seed: int | None = None) -> "SacAgent":
        """Fresh networks, empty optimiser state, targets equal to the critics."""
        cfg, spec = self.config, self.spec
        self.rng = np.random.default_rng(seed)
        hidden = tuple(cfg.hidden_sizes)
        self.actor = Learner.fresh(init_dense((spec.obs_dim, *hidden, 2 * spec.act_dim), self.rng), cfg.lr)
        self.critics = [
            Learner.fresh(init_dense((spec.obs_dim + spec.act_dim, *hidden, 1), self.rng), cfg.lr)
            for _ in range(2)
        ]
        self.targets = [c.net for c in self.critics]
        self.log_alpha = np.array([np.log(cfg.alpha)]) if cfg.alpha > 0 else np.array([-np.inf])
        self.alpha_opt = AdamState.zeros(1, lr=cfg.lr)
        self.updates = 0
        return self

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    # ─────────────────────────────────────────────────────────────────────
    # Actor
    # ─────────────────────────────────────────────────────────────────────
    def _actor_forward(self, s: np.ndarray, rng: np.random.Generator, deterministic: bool = False):
        out, tape = self.actor.net.forward_tape(np.atleast_2d(s))
        d = self.spec.act_dim
        mean, raw_log_std = out[:, :d], out[:, d:]
        log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
        std = np.exp(log_std)
        xi = np.zeros_like(mean) if deterministic else rng.standard_normal(mean.shape)
        u = mean + std * xi
        t = np.tanh(u)
        action = self.center + self.half * t
        log_prob = np.sum(
            -0.5 * xi ** 2 - log_std - _HALF_LOG_2PI - np.log(self.half) - log1m_tanh_sq(u), axis=1
        )
        in_range = (raw_log_std > LOG_STD_MIN) & (raw_log_std < LOG_STD_MAX)
        return action, log_prob, _ActorCache(tape, xi, std, t, in_range)

    def actor_sample(self, s: np.ndarray, rng: np.random.Generator | None = None
                     ) -> tuple[np.ndarray, float | np.ndarray]:
        """
        a = bound-scale(tanh(mean + std·ξ)) and its log-density, including the
        tanh change-of-variables correction.
        """
        action, log_prob, _ = self._actor_forward(s, rng or self.rng)
        if np.ndim(s) == 1:
            return action[0], float(log_prob[0])
        return action, log_prob

    def act(self, obs: np.ndarray, explore: bool = False) -> np.ndarray:
        if explore:
            return self.actor_sample(obs)[0]
        return self.policy().act(obs)

    def log_std(self, s: np.ndarray) -> np.ndarray:
        out = self.actor.net(np.atleast_2d(s))
        return np.clip(out[:, self.spec.act_dim:], LOG_STD_MIN, LOG_STD_MAX)

    def policy(self) -> Policy:
        return Policy("sac", self.actor.net, self.spec.action_low, self.spec.action_high)

    # ─────────────────────────────────────────────────────────────────────
    # Critics
    # ─────────────────────────────────────────────────────────────────────
    def q_values(self, s: np.ndarray, a: np.ndarray, nets=None) -> list[np.ndarray]:
        x = np.concatenate([np.atleast_2d(s), np.atleast_2d(a)], axis=1)
        return [net(x)[:, 0] for net in (nets or [c.net for c in self.critics])]

    def critic_target(self, batch: Batch) -> np.ndarray:
        """y = r + γ(1 − d)(min_i Q_i,targ(s′, ã′) − α log π(ã′|s′)), ã′ freshly sampled."""
        cfg = self.config
        a_next, logp_next, _ = self._actor_forward(batch.s_next, self.rng)
        q_next = np.min(self.q_values(batch.s_next, a_next, self.targets), axis=0)
        soft = q_next - (self.alpha * logp_next if self.alpha > 0 else 0.0)
        return batch.r * cfg.reward_scale + cfg.gamma * (1.0 - batch.done) * soft

    def critic_update(self, batch: Batch) -> float:
        """One MSE step on both critics, then a soft target update; returns the mean loss."""
        if len(batch) == 0:
            raise ContractViolation("empty batch")
        y = self.critic_target(batch)
        x = np.concatenate([batch.s, batch.a], axis=1)
        losses = []
        for critic in self.critics:
            q, tape = critic.net.forward_tape(x)
            diff = q[:, 0] - y
            loss = float(np.mean(diff ** 2))
            if not np.isfinite(loss):
                raise TrainingDivergence("critic loss diverged")
            critic.apply(critic.net.backward(tape, (2.0 * diff / len(batch))[:, None])[0])
            losses.append(loss)
        self.targets = [
            soft_update(t, c.net, self.config.tau) for t, c in zip(self.targets, self.critics)
        ]
        return float(np.mean(losses))

    # ─────────────────────────────────────────────────────────────────────
    # Actor objective  J = E[α log π(ã|s) − min_i Q_i(s, ã)]
    # ─────────────────────────────────────────────────────────────────────
    def actor_gradient(self, batch: Batch) -> tuple[float, np.ndarray, np.ndarray]:
        """
        :return: (objective J, d J / d actor params, log π of the sampled actions).
        """
        s = batch.s
        n, obs_dim = len(s), self.spec.obs_dim
        alpha = self.alpha
        action, log_prob, cache = self._actor_forward(s, self.rng)
        x = np.concatenate([s, action], axis=1)
        (q1, tape1), (q2, tape2) = (c.net.forward_tape(x) for c in self.critics)
        q1, q2 = q1[:, 0], q2[:, 0]
        pick_first = q1 <= q2
        objective = float(np.mean(alpha * log_prob - np.minimum(q1, q2)))

        d_action = np.zeros_like(action)
        for critic, tape, mask in ((self.critics[0], tape1, pick_first), (self.critics[1], tape2, ~pick_first)):
            grad_in = critic.net.backward(tape, (-mask.astype(float) / n)[:, None])[1]
            d_action += grad_in[:, obs_dim:]
        d_u = d_action * self.half * (1.0 - cache.tanh_u ** 2) + alpha * 2.0 * cache.tanh_u / n
        d_mean = d_u
        d_log_std = (d_u * cache.std * cache.xi - alpha / n) * cache.in_range
        grads = self.actor.net.backward(cache.tape, np.concatenate([d_mean, d_log_std], axis=1))[0]
        return objective, grads, log_prob

    def actor_update(self, batch: Batch) -> float:
        objective, grads, log_prob = self.actor_gradient(batch)
        if not np.isfinite(objective):
            raise TrainingDivergence("actor objective diverged")
        self.actor.apply(grads)
        if self.config.auto_alpha:
            grad = -np.mean(log_prob + self.target_entropy)
            self.log_alpha, self.alpha_opt = adam_update(self.log_alpha, np.array([grad]), self.alpha_opt)
        return objective

    def update(self, batch: Batch) -> dict[str, float]:
        critic_loss = self.critic_update(batch)
        actor_loss = self.actor_update(batch)
        self.updates += 1
        return {"critic_loss": critic_loss, "actor_loss": actor_loss, "alpha": self.alpha}
