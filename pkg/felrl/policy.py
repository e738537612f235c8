# felrl/policy.py
"""Deterministic policies extracted from trained agents, with checkpoint I/O."""

from __future__ import annotations

from dataclasses import dataclass
from os import PathLike

import numpy as np

from .envs import EnvSpec
from .errors import CheckpointMismatchError, ContractViolation
from .nn import DenseNet, load_checkpoint, save_checkpoint

POLICY_KINDS = ("naf", "sac")


def squash_to_box(raw: np.ndarray, low: np.ndarray, high: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    center + half·tanh(raw), clipped to [low, high] against rounding.

    :return: (action, d action / d raw).
    """
    center = 0.5 * (high + low)
    half = 0.5 * (high - low)
    t = np.tanh(raw)
    return np.clip(center + half * t, low, high), half * (1.0 - t ** 2)


@dataclass(frozen=True, eq=False)
class Policy:
    """
    Greedy action map read from a network's first `act_dim` outputs.

    Both kinds squash the head into the action box with tanh; naf
    additionally clips the result so it matches `NafAgent.act` bit for bit.
    """
    kind: str
    net: DenseNet
    action_low: np.ndarray
    action_high: np.ndarray

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ContractViolation(f"unknown policy kind {self.kind!r}")

    @property
    def obs_dim(self) -> int:
        return self.net.n_inputs

    @property
    def act_dim(self) -> int:
        return np.asarray(self.action_low).size

    def act(self, obs: np.ndarray) -> np.ndarray:
        out = self.net(obs)
        head = out[..., : self.act_dim]
        if self.kind == "naf":
            return squash_to_box(head, self.action_low, self.action_high)[0]
        center = 0.5 * (self.action_high + self.action_low)
        half = 0.5 * (self.action_high - self.action_low)
        return center + half * np.tanh(head)

    __call__ = act

    def check_spec(self, spec: EnvSpec) -> None:
        if self.obs_dim != spec.obs_dim or self.act_dim != spec.act_dim:
            raise CheckpointMismatchError(
                f"policy is ({self.obs_dim} obs, {self.act_dim} act), "
                f"environment is ({spec.obs_dim} obs, {spec.act_dim} act)"
            )

    def save(self, path: str | PathLike) -> None:
        save_checkpoint(
            path, self.net,
            policy_kind=self.kind,
            action_low=self.action_low, action_high=self.action_high,
        )

    @classmethod
    def load(cls, path: str | PathLike) -> "Policy":
        net, _, extra = load_checkpoint(path)
        try:
            return cls(str(extra["policy_kind"]), net, extra["action_low"], extra["action_high"])
        except KeyError as exc:
            raise CheckpointMismatchError(f"{path} is not a policy checkpoint") from exc
