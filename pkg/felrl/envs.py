# felrl/envs.py
"""
Environments: the inverted pendulum benchmark and a synthetic replica of the
FEL seed-laser alignment problem (4 piezo voltages, delta actions).
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .errors import ContractViolation

log = logging.getLogger(__name__)

# ─────────────────────────────────────────────────────────────────────────────
# Constants
# ─────────────────────────────────────────────────────────────────────────────
# Canonical pendulum constants
PENDULUM_G = 10.0
PENDULUM_M = 1.0
PENDULUM_L = 1.0
PENDULUM_DT = 0.05
PENDULUM_MAX_TORQUE = 2.0
PENDULUM_MAX_SPEED = 8.0
PENDULUM_HORIZON = 200

# FEL simulator defaults
FEL_A_MAX = 1.0 / 12.0
FEL_THRESHOLD = 0.95
FEL_HORIZON = 500
FEL_COLLECT_HORIZON = 10
# Verification episode cap on the FEL simulator
FEL_VERIFICATION_HORIZON = 200


@dataclass(frozen=True, eq=False)
class EnvSpec:
    """Static description of an environment's interfaces."""
    obs_dim: int
    act_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    horizon: int
    # Reward at or above which an episode counts as solved (None: never)
    done_threshold: float | None = None

    def __post_init__(self):
        low = np.asarray(self.action_low, dtype=np.float64)
        high = np.asarray(self.action_high, dtype=np.float64)
        if low.shape != (self.act_dim,) or high.shape != (self.act_dim,):
            raise ContractViolation("action bounds must have act_dim entries")
        if not np.all(low < high):
            raise ContractViolation("action_low must be below action_high")
        if self.horizon < 1:
            raise ContractViolation(f"horizon must be ≥ 1, got {self.horizon}")
        object.__setattr__(self, "action_low", low)
        object.__setattr__(self, "action_high", high)

    @property
    def action_range(self) -> np.ndarray:
        return self.action_high - self.action_low

    def clip_action(self, action: np.ndarray) -> np.ndarray:
        return np.clip(action, self.action_low, self.action_high)

    def sample_action(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.action_low, self.action_high)


@dataclass(frozen=True)
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    info: dict[str, Any] = field(default_factory=dict)

    @property
    def terminal(self) -> bool:
        """True when the episode ended for a reason other than the time limit."""
        return self.done and not self.info.get("truncated", False)


def add_observation_noise(obs: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """obs + i.i.d. N(0, σ) per component; σ = 0 returns the observation untouched."""
    if sigma < 0:
        raise ContractViolation(f"noise sigma must be non-negative, got {sigma}")
    obs = np.asarray(obs, dtype=np.float64)
    if sigma == 0:
        return obs.copy()
    return obs + rng.normal(0.0, sigma, obs.shape)


# ─────────────────────────────────────────────────────────────────────────────
# Base class
# ─────────────────────────────────────────────────────────────────────────────
class Environment(ABC):
    """
    Episodic environment with a real-step counter.

    `steps_taken` counts every call to `step` over the lifetime of the
    instance; the orchestrators assert on it.
    """

    spec: EnvSpec

    def __init__(self, seed: int | None = None):
        self._rng = np.random.default_rng(seed)
        self._t = 0
        self.steps_taken = 0

    @property
    @abstractmethod
    def state(self) -> np.ndarray:
        """The true (noise-free) internal state."""

    @state.setter
    @abstractmethod
    def state(self, value: np.ndarray) -> None: ...

    @abstractmethod
    def _sample_initial_state(self, rng: np.random.Generator) -> np.ndarray: ...

    @abstractmethod
    def _observe(self, state: np.ndarray) -> np.ndarray:
        """Noise-free observation of a state."""

    @abstractmethod
    def _transition(self, action: np.ndarray) -> tuple[float, dict[str, Any], bool]:
        """Advance the internal state; return (reward, info, solved)."""

    @property
    def obs_noise(self) -> float:
        return 0.0

    def observe(self) -> np.ndarray:
        return add_observation_noise(self._observe(self.state), self.obs_noise, self._rng)

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.state = self._sample_initial_state(self._rng)
        self._t = 0
        return self.observe()

    def step(self, action: np.ndarray) -> StepResult:
        action = np.asarray(action, dtype=np.float64).reshape(self.spec.act_dim)
        if not np.all(np.isfinite(action)):
            raise ContractViolation(f"non-finite action {action}")
        self.steps_taken += 1
        self._t += 1
        reward, info, solved = self._transition(action)
        truncated = not solved and self._t >= self.spec.horizon
        info["truncated"] = truncated
        return StepResult(self.observe(), float(reward), solved or truncated, info)

    def sample_states(self, n: int, seed: int) -> np.ndarray:
        """Noise-free observations of `n` reset states, leaving this instance untouched."""
        rng = np.random.default_rng(seed)
        return np.stack([self._observe(self._sample_initial_state(rng)) for _ in range(n)])


# ─────────────────────────────────────────────────────────────────────────────
# Inverted pendulum
# ─────────────────────────────────────────────────────────────────────────────
def wrap_angle(theta: float) -> float:
    return ((theta + np.pi) % (2.0 * np.pi)) - np.pi


def pendulum_dynamics(theta: float, theta_dot: float, torque: float) -> tuple[float, float, float]:
    """
    One integration step of the canonical pendulum.

    :return: (θ′, θ̇′, reward at the pre-step state).
    """
    u = float(np.clip(torque, -PENDULUM_MAX_TORQUE, PENDULUM_MAX_TORQUE))
    reward = -(wrap_angle(theta) ** 2 + 0.1 * theta_dot ** 2 + 0.001 * u ** 2)
    acc = 3.0 * PENDULUM_G / (2.0 * PENDULUM_L) * np.sin(theta) + 3.0 * u / (PENDULUM_M * PENDULUM_L ** 2)
    new_dot = float(np.clip(theta_dot + acc * PENDULUM_DT, -PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED))
    return theta + new_dot * PENDULUM_DT, new_dot, reward


class PendulumEnv(Environment):
    """Swing-up pendulum; observation (cos θ, sin θ, θ̇), no early termination."""

    def __init__(self, seed: int | None = None, obs_noise: float = 0.0, horizon: int = PENDULUM_HORIZON):
        super().__init__(seed)
        self._noise = float(obs_noise)
        self.spec = EnvSpec(
            obs_dim=3, act_dim=1,
            action_low=np.array([-PENDULUM_MAX_TORQUE]),
            action_high=np.array([PENDULUM_MAX_TORQUE]),
            horizon=horizon,
        )
        self._state = np.zeros(2)

    @property
    def obs_noise(self) -> float:
        return self._noise

    @property
    def state(self) -> np.ndarray:
        return self._state.copy()

    @state.setter
    def state(self, value: np.ndarray) -> None:
        self._state = np.asarray(value, dtype=np.float64).reshape(2).copy()

    def _sample_initial_state(self, rng):
        return np.array([rng.uniform(-np.pi, np.pi), rng.uniform(-1.0, 1.0)])

    def _observe(self, state):
        theta, theta_dot = state
        return np.array([np.cos(theta), np.sin(theta), theta_dot])

    def _transition(self, action):
        theta, theta_dot, reward = pendulum_dynamics(*self._state, action[0])
        self._state = np.array([theta, theta_dot])
        return reward, {}, False


# ─────────────────────────────────────────────────────────────────────────────
# FEL seed-laser alignment simulator
# ─────────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class FelSimConfig:
    """
    Intensity is an isotropic Gaussian bump around the optimum `target`;
    reward = I(s′) − 1, so noise-free rewards lie in [−1, 0].
    """
    target: tuple[float, float, float, float] = (0.65, 0.35, 0.55, 0.45)
    beam_width: float = 0.2
    a_max: float = FEL_A_MAX
    intensity_threshold: float = FEL_THRESHOLD
    obs_noise: float = 0.0
    reward_noise: float = 0.0
    horizon: int = FEL_HORIZON
    fixed_start: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        target = np.asarray(self.target, dtype=np.float64)
        if target.shape != (4,) or np.any(target < 0.2) or np.any(target > 0.8):
            raise ContractViolation(f"target must be a 4-vector in [0.2, 0.8], got {self.target}")
        if not 0.0 < self.beam_width <= 1.0:
            raise ContractViolation(f"beam_width must lie in (0, 1], got {self.beam_width}")
        if self.a_max <= 0:
            raise ContractViolation("a_max must be positive")
        if self.obs_noise < 0 or self.reward_noise < 0:
            raise ContractViolation("noise levels must be non-negative")

    def intensity(self, state: np.ndarray) -> float:
        d2 = float(np.sum((np.asarray(state) - np.asarray(self.target)) ** 2))
        return float(np.exp(-d2 / (2.0 * self.beam_width ** 2)))


class FelSimEnv(Environment):
    """s_{t+1} = clip(s_t + clip(a_t, ±a_max), 0, 1); stops at 95 % intensity."""

    def __init__(self, config: FelSimConfig | None = None, seed: int | None = None):
        super().__init__(seed)
        self.config = config or FelSimConfig()
        a = self.config.a_max
        self.spec = EnvSpec(
            obs_dim=4, act_dim=4,
            action_low=np.full(4, -a), action_high=np.full(4, a),
            horizon=self.config.horizon,
            done_threshold=self.config.intensity_threshold - 1.0,
        )
        self._state = np.zeros(4)

    @property
    def obs_noise(self) -> float:
        return self.config.obs_noise

    @property
    def state(self) -> np.ndarray:
        return self._state.copy()

    @state.setter
    def state(self, value: np.ndarray) -> None:
        self._state = np.clip(np.asarray(value, dtype=np.float64).reshape(4), 0.0, 1.0)

    def _sample_initial_state(self, rng):
        if self.config.fixed_start is not None:
            return np.asarray(self.config.fixed_start, dtype=np.float64)
        return rng.uniform(0.0, 1.0, 4)

    def _observe(self, state):
        return np.array(state, dtype=np.float64)

    def _transition(self, action):
        a = np.clip(action, -self.config.a_max, self.config.a_max)
        self._state = np.clip(self._state + a, 0.0, 1.0)
        intensity = self.config.intensity(self._state)
        reward = intensity - 1.0
        if self.config.reward_noise > 0:
            reward += self._rng.normal(0.0, self.config.reward_noise)
        # termination reads the true intensity, never the noisy reward
        return reward, {"true_intensity": intensity}, intensity >= self.config.intensity_threshold


# ─────────────────────────────────────────────────────────────────────────────
# Factory
# ─────────────────────────────────────────────────────────────────────────────
ENV_NAMES = ("pendulum", "fel-sim")


def make_env(name: str, seed: int | None = None, obs_noise: float = 0.0,
             horizon: int | None = None, **fel_options) -> Environment:
    """
    Build an environment by name.

    :param name: "pendulum" or "fel-sim".
    :param obs_noise: Gaussian observation noise σ_ε.
    :param horizon: Episode cap; environment default when None.
    :param fel_options: Extra `FelSimConfig` fields for the FEL simulator.
    """
    if name == "pendulum":
        return PendulumEnv(seed, obs_noise=obs_noise, horizon=horizon or PENDULUM_HORIZON)
    if name == "fel-sim":
        cfg = FelSimConfig(obs_noise=obs_noise, **fel_options)
        if horizon is not None:
            cfg = replace(cfg, horizon=horizon)
        return FelSimEnv(cfg, seed)
    raise ContractViolation(f"unknown environment {name!r}; expected one of {ENV_NAMES}")
