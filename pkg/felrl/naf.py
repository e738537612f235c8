# felrl/naf.py
"""
NAF2: continuous Q-learning with a quadratic advantage,

    Q(s, a) = −½ (a − μ(s))ᵀ P(s) (a − μ(s)) + V(s),   P = L Lᵀ,

plus the two stabilisers of the model-free baseline: twin networks with a
min-target ("clipping") and clipped Gaussian noise on target actions
("smoothing"). Targets are soft-updated copies of the online networks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .envs import Environment, EnvSpec
from .errors import ContractViolation, TrainingDivergence
from .nn import DenseNet, Learner, init_dense, soft_update
from .policy import Policy, squash_to_box
from .records import RunRecord
from .replay import Batch, Dataset, Transition

log = logging.getLogger(__name__)

EPISODE_COLUMNS = ["episode", "steps", "return", "bellman_error", "mean_v", "total_steps", "solved"]


@dataclass(frozen=True)
class NafConfig:
    """
    :param gamma: Discount γ ∈ (0, 1].
    :param tau: Soft target update rate.
    :param twin: Use two Q networks and the min over their target values.
    :param smoothing: Add clipped noise to target-policy actions.
    :param smoothing_sigma: Target noise σ; None → 0.05·action range.
    :param smoothing_clip: Target noise clip c; None → 2σ.
    :param explore_sigma: Acting noise σ; None → 0.1·action range.
    :param explore_clip: Acting noise clip; None → 3·explore σ.
    :param reward_scale: Multiplier applied to rewards before learning.
    """
    gamma: float = 0.999
    tau: float = 0.005
    twin: bool = True
    smoothing: bool = True
    smoothing_sigma: float | None = None
    smoothing_clip: float | None = None
    explore_sigma: float | None = None
    explore_clip: float | None = None
    batch_size: int = 64
    lr: float = 1e-3
    updates_per_step: int = 1
    hidden_sizes: tuple[int, ...] = (64, 64)
    buffer_capacity: int = 100_000
    reward_scale: float = 1.0
    eval_states: int = 200

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ContractViolation(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ContractViolation(f"tau must lie in (0, 1], got {self.tau}")
        if self.smoothing and self.smoothing_clip is not None and self.smoothing_clip <= 0:
            raise ContractViolation("smoothing clip must be positive")
        if self.batch_size < 1 or self.updates_per_step < 0:
            raise ContractViolation("batch size must be ≥ 1 and updates per step ≥ 0")

    def noise_levels(self, spec: EnvSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(smoothing σ, smoothing c, explore σ, explore c) resolved against the action range."""
        rng_ = spec.action_range
        s_sigma = rng_ * 0.05 if self.smoothing_sigma is None else np.full(spec.act_dim, self.smoothing_sigma)
        s_clip = 2.0 * s_sigma if self.smoothing_clip is None else np.full(spec.act_dim, self.smoothing_clip)
        e_sigma = rng_ * 0.1 if self.explore_sigma is None else np.full(spec.act_dim, self.explore_sigma)
        e_clip = 3.0 * e_sigma if self.explore_clip is None else np.full(spec.act_dim, self.explore_clip)
        return s_sigma, s_clip, e_sigma, e_clip

    @classmethod
    def variant(cls, name: str, **overrides) -> "NafConfig":
        """A named variant from `NAF_VARIANTS`, with further field overrides."""
        try:
            flags = NAF_VARIANTS[name]
        except KeyError:
            raise ContractViolation(f"unknown NAF variant {name!r}; expected one of {list(NAF_VARIANTS)}") from None
        return cls(**{**flags, **overrides})


# (twin, smoothing) switches of the compared NAF flavours; the last is plain NAF
NAF_VARIANTS = {
    "clipping": {"twin": True, "smoothing": True},
    "no-clipping-smoothing": {"twin": False, "smoothing": True},
    "no-clipping-no-smoothing": {"twin": False, "smoothing": False},
}


# ─────────────────────────────────────────────────────────────────────────────
# Quadratic Q-function algebra
# ─────────────────────────────────────────────────────────────────────────────
def n_l_entries(act_dim: int) -> int:
    return act_dim * (act_dim + 1) // 2


def build_P(l_entries: np.ndarray, act_dim: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """
    P = L Lᵀ from the packed lower triangle (row-major); the diagonal of L
    is exp of the raw diagonal entries, so P is positive definite.

    :return: (P, L), batched when `l_entries` is 2-D.
    """
    l_entries = np.asarray(l_entries, dtype=np.float64)
    single = l_entries.ndim == 1
    entries = np.atleast_2d(l_entries)
    k = entries.shape[1]
    d = act_dim if act_dim is not None else int((np.sqrt(8 * k + 1) - 1) / 2)
    if n_l_entries(d) != k:
        raise ContractViolation(f"{k} entries do not pack a lower triangle")
    rows, cols = np.tril_indices(d)
    L = np.zeros((entries.shape[0], d, d))
    values = np.where(rows == cols, np.exp(entries), entries)
    L[:, rows, cols] = values
    P = L @ np.swapaxes(L, 1, 2)
    return (P[0], L[0]) if single else (P, L)


@dataclass(frozen=True, eq=False)
class NafNet:
    """
    A trunk network whose outputs are [raw μ(s) | packed L(s) | V(s)].

    With `bounds` = (low, high), μ = center + half·tanh(raw μ) stays inside
    the action box; without, μ is the raw head.
    """
    trunk: DenseNet
    act_dim: int
    bounds: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        expected = self.act_dim + n_l_entries(self.act_dim) + 1
        if self.trunk.n_outputs != expected:
            raise ContractViolation(f"trunk must emit {expected} outputs, has {self.trunk.n_outputs}")

    @classmethod
    def init(cls, obs_dim: int, act_dim: int, hidden: Sequence[int], rng: np.random.Generator) -> "NafNet":
        sizes = (obs_dim, *hidden, act_dim + n_l_entries(act_dim) + 1)
        return cls(init_dense(sizes, rng), act_dim)

    def squash(self, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(μ, dμ/d raw μ)."""
        if self.bounds is None:
            return raw, np.ones_like(raw)
        return squash_to_box(raw, *self.bounds)

    def split(self, out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        d = self.act_dim
        return self.squash(out[..., :d])[0], out[..., d:-1], out[..., -1]

    def heads(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(μ(s), l_entries(s), V(s))."""
        return self.split(self.trunk(s))

    def mu(self, s: np.ndarray) -> np.ndarray:
        return self.heads(s)[0]

    def value(self, s: np.ndarray) -> np.ndarray:
        return self.heads(s)[2]


@dataclass(frozen=True)
class _QCache:
    tape: object
    u: np.ndarray
    L: np.ndarray
    P: np.ndarray
    mu_slope: np.ndarray


def q_forward(net: NafNet, s: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, _QCache]:
    """Batched Q(s, a) with everything `q_backward` needs."""
    out, tape = net.trunk.forward_tape(np.atleast_2d(s))
    d = net.act_dim
    mu, slope = net.squash(out[:, :d])
    P, L = build_P(out[:, d:-1], d)
    u = np.atleast_2d(a) - mu
    q = -0.5 * np.einsum("bi,bij,bj->b", u, P, u) + out[:, -1]
    return q, _QCache(tape, u, L, P, slope)


def q_backward(net: NafNet, cache: _QCache, dq: np.ndarray) -> np.ndarray:
    """d loss / d trunk params given d loss / d Q per sample."""
    d = net.act_dim
    rows, cols = np.tril_indices(d)
    d_mu = dq[:, None] * np.einsum("bij,bj->bi", cache.P, cache.u) * cache.mu_slope
    w = np.einsum("bji,bj->bi", cache.L, cache.u)  # Lᵀu
    d_L = -dq[:, None, None] * cache.u[:, :, None] * w[:, None, :]
    d_l = d_L[:, rows, cols]
    diag = rows == cols
    d_l[:, diag] *= cache.L[:, rows[diag], cols[diag]]
    grad_out = np.concatenate([d_mu, d_l, dq[:, None]], axis=1)
    return net.trunk.backward(cache.tape, grad_out)[0]


def q_value(net: NafNet, s: np.ndarray, a: np.ndarray) -> float | np.ndarray:
    """Q(s, a) = −½(a − μ)ᵀP(a − μ) + V; scalar for a single (s, a)."""
    q, _ = q_forward(net, s, a)
    return float(q[0]) if np.ndim(s) == 1 else q


def select_action(
    net: NafNet, s: np.ndarray, spec: EnvSpec, mode: str = "eval",
    sigma: float | np.ndarray = 0.0, clip: float | np.ndarray = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """
    eval: clip(μ(s)); train: clip(μ(s) + clip(ε, −c, c)) with ε ~ N(0, σ).
    """
    mu = net.mu(s)
    if mode == "eval" or np.all(np.asarray(sigma) == 0):
        return spec.clip_action(mu)
    if mode != "train":
        raise ContractViolation(f"unknown action mode {mode!r}")
    if rng is None:
        raise ContractViolation("train mode needs a random generator")
    eps = np.clip(rng.normal(0.0, 1.0, np.shape(mu)) * sigma, -clip, clip)
    return spec.clip_action(mu + eps)


def td_target(
    r: np.ndarray, s_next: np.ndarray, done: np.ndarray, targets: Sequence[NafNet],
    gamma: float, spec: EnvSpec | None = None,
    smoothing: tuple[np.ndarray, np.ndarray] | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """
    y = r + γ(1 − d)·min_i V_i,targ(s′).

    With smoothing, each target network is read at its own smoothed greedy
    action Q_i,targ(s′, clip(μ_i + clip(ε, −c, c))), which equals V_i when the
    noise is zero.
    """
    if len(targets) not in (1, 2):
        raise ContractViolation(f"expected 1 or 2 target networks, got {len(targets)}")
    r = np.atleast_1d(np.asarray(r, dtype=np.float64))
    done = np.atleast_1d(np.asarray(done, dtype=np.float64))
    s_next = np.atleast_2d(s_next)
    if smoothing is not None:
        if spec is None or rng is None:
            raise ContractViolation("smoothing needs the env spec and a random generator")
        sigma, clip = smoothing
        eps = np.clip(rng.normal(0.0, 1.0, (s_next.shape[0], spec.act_dim)) * sigma, -clip, clip)
        values = [q_forward(t, s_next, spec.clip_action(t.mu(s_next) + eps))[0] for t in targets]
    else:
        values = [t.value(s_next) for t in targets]
    return r + gamma * (1.0 - done) * np.min(values, axis=0)


# ─────────────────────────────────────────────────────────────────────────────
# Agent
# ─────────────────────────────────────────────────────────────────────────────
class NafAgent:
    """
    One or two online NAF networks with soft-updated targets. μ is
    tanh-squashed into the action box.

    The policy is always read from network 1.
    """

    def __init__(self, spec: EnvSpec, config: NafConfig | None = None, seed: int | None = None):
        self.spec = spec
        self.config = config or NafConfig()
        self.rng = np.random.default_rng(seed)
        n_nets = 2 if self.config.twin else 1
        self.online = [
            Learner.fresh(
                NafNet.init(spec.obs_dim, spec.act_dim, self.config.hidden_sizes, self.rng).trunk,
                self.config.lr,
            )
            for _ in range(n_nets)
        ]
        self.targets = [learner.net for learner in self.online]
        self.smooth_sigma, self.smooth_clip, self.explore_sigma, self.explore_clip = (
            self.config.noise_levels(spec)
        )
        self.updates = 0

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.spec.action_low, self.spec.action_high

    def net(self, i: int = 0) -> NafNet:
        return NafNet(self.online[i].net, self.spec.act_dim, self.bounds)

    def target(self, i: int = 0) -> NafNet:
        return NafNet(self.targets[i], self.spec.act_dim, self.bounds)

    def act(self, obs: np.ndarray, explore: bool = False) -> np.ndarray:
        if not explore:
            return select_action(self.net(0), obs, self.spec)
        return select_action(
            self.net(0), obs, self.spec, "train", self.explore_sigma, self.explore_clip, self.rng
        )

    def update(self, batch: Batch) -> list[float]:
        """
        Regress every online network to the shared target, one Adam step
        each, then soft-update the targets.

        :return: Mean squared TD error per network (before the step).
        """
        if len(batch) == 0:
            raise ContractViolation("empty batch")
        cfg = self.config
        smoothing = (self.smooth_sigma, self.smooth_clip) if cfg.smoothing else None
        y = td_target(
            batch.r * cfg.reward_scale, batch.s_next, batch.done,
            [self.target(i) for i in range(len(self.targets))],
            cfg.gamma, self.spec, smoothing, self.rng,
        )
        losses = []
        for i, learner in enumerate(self.online):
            q, cache = q_forward(self.net(i), batch.s, batch.a)
            diff = q - y
            loss = float(np.mean(diff ** 2))
            if not np.isfinite(loss):
                raise TrainingDivergence(f"NAF loss diverged on network {i + 1}")
            learner.apply(q_backward(self.net(i), cache, 2.0 * diff / len(batch)))
            losses.append(loss)
        self.targets = [
            soft_update(t, learner.net, cfg.tau) for t, learner in zip(self.targets, self.online)
        ]
        self.updates += 1
        return losses

    def policy(self) -> Policy:
        return Policy("naf", self.online[0].net, self.spec.action_low, self.spec.action_high)


# ─────────────────────────────────────────────────────────────────────────────
# Training loop
# ─────────────────────────────────────────────────────────────────────────────
def train_naf(
    env: Environment,
    config: NafConfig | None = None,
    episodes: int = 100,
    seed: int = 0,
    stop_check: Callable[[], None] | None = None,
    record: RunRecord | None = None,
) -> tuple[RunRecord, NafAgent]:
    """
    Episodic NAF2 training.

    Per episode, `bellman_error` is the mean squared TD error of the training
    minibatches drawn during that episode (network 1, before each step) and
    `mean_v` is V(s) averaged over `eval_states` reset states drawn once
    before training.

    :param env: Environment to learn on (its own seed fixes the resets).
    :param episodes: Number of training episodes.
    :param stop_check: Called between episodes; may raise to abort the run.
    :param record: Record to fill in place (keeps finished rows if the run aborts).
    :return: (per-episode record, trained agent).
    """
    config = config or NafConfig()
    agent_seed, buffer_seed, eval_seed = np.random.SeedSequence(seed).generate_state(3)
    agent = NafAgent(env.spec, config, int(agent_seed))
    buffer = Dataset(config.buffer_capacity, int(buffer_seed))
    eval_states = env.sample_states(config.eval_states, int(eval_seed)) if config.eval_states else None
    if record is None:
        record = RunRecord("naf2", list(EPISODE_COLUMNS))
    total_steps = 0

    for episode in range(episodes):
        if stop_check is not None:
            stop_check()
        obs = env.reset()
        ep_return, td_errors, solved, steps = 0.0, [], False, 0
        for t in range(env.spec.horizon):
            action = agent.act(obs, explore=True)
            res = env.step(action)
            buffer.push(Transition(obs, action, res.reward, res.obs, res.terminal, first=t == 0))
            ep_return += res.reward
            steps += 1
            if len(buffer) >= config.batch_size:
                for _ in range(config.updates_per_step):
                    td_errors.append(agent.update(buffer.sample_arrays(config.batch_size))[0])
            obs = res.obs
            if res.done:
                solved = res.terminal
                break
        total_steps += steps
        mean_v = float(np.mean(agent.net(0).value(eval_states))) if eval_states is not None else float("nan")
        record.append({
            "episode": episode,
            "steps": steps,
            "return": ep_return,
            "bellman_error": float(np.mean(td_errors)) if td_errors else float("nan"),
            "mean_v": mean_v,
            "total_steps": total_steps,
            "solved": solved,
        })
        log.info("naf2 episode %d: steps=%d return=%.3f", episode, steps, ep_return)

    record.summary.update(episodes=episodes, total_steps=total_steps, updates=agent.updates)
    return record, agent
