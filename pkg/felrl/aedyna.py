# felrl/aedyna.py
"""
AE-DYNA: collect real data → train the anchored ensemble → train a freshly
reset SAC controller on synthetic rollouts only → validate on every model →
test on the real environment when validation stops improving.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import AnchoredEnsemble, EnsembleConfig, PredictionSampler, Strategy, train_model
from .envs import FEL_COLLECT_HORIZON, FEL_VERIFICATION_HORIZON, EnvSpec, Environment, StepResult
from .errors import ContractViolation
from .policy import Policy
from .records import RunRecord
from .replay import Dataset, Transition
from .sac import SacAgent, SacConfig

log = logging.getLogger(__name__)

# Synthetic / collection episode cap on environments without a success threshold
DEFAULT_OPEN_HORIZON = 100


@dataclass(frozen=True)
class AedynaConfig:
    """
    :param collect_horizon: Real data-collection episode cap; also the
        synthetic episode cap. None: 10 on thresholded envs, else 100.
    :param improvement_fraction: φ; real testing triggers when fewer than
        ceil(φ·M) models improved since the previous validation.
    :param success_return: Mean real test return that counts as success on
        environments without a done threshold.
    :param max_real_steps: Budget of real data points (tests excluded).
    :param explore_sigma: Collection noise σ_x; None means 0.05·action range.
    :param test_horizon: Real test episode cap; None means the environment
        horizon, at most 200 steps.
    :param initial_data: CSV export to seed the dataset instead of the random walk.
    """
    initial_random_steps: int = 200
    batch_steps: int = 50
    controller_steps: int = 2500
    collect_horizon: int | None = None
    strategy: str = Strategy.PER_EPISODE_MODEL.value
    improvement_fraction: float = 1.0
    success_return: float = -200.0
    max_real_steps: int = 2000
    explore_sigma: float | None = None
    test_horizon: int | None = None
    test_episodes: int = 5
    validation_episodes: int = 10
    initial_data: str | None = None

    def __post_init__(self):
        for name in ("initial_random_steps", "batch_steps", "controller_steps",
                     "max_real_steps", "test_episodes", "validation_episodes"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be ≥ 1, got {getattr(self, name)}")
        if not 0.0 < self.improvement_fraction <= 1.0:
            raise ContractViolation(f"improvement fraction must lie in (0, 1], got {self.improvement_fraction}")
        if self.collect_horizon is not None and self.collect_horizon < 1:
            raise ContractViolation("collect_horizon must be ≥ 1")
        if self.test_horizon is not None and self.test_horizon < 1:
            raise ContractViolation("test_horizon must be ≥ 1")
        if self.explore_sigma is not None and self.explore_sigma < 0:
            raise ContractViolation("explore_sigma must be non-negative")
        Strategy.parse(self.strategy)

    def horizon_for(self, spec: EnvSpec) -> int:
        if self.collect_horizon is not None:
            return self.collect_horizon
        if spec.done_threshold is not None:
            return FEL_COLLECT_HORIZON
        return min(spec.horizon, DEFAULT_OPEN_HORIZON)

    def test_horizon_for(self, spec: EnvSpec) -> int:
        if self.test_horizon is not None:
            return self.test_horizon
        return min(spec.horizon, FEL_VERIFICATION_HORIZON)

    def sigma_for(self, spec: EnvSpec) -> np.ndarray:
        if self.explore_sigma is not None:
            return np.full(spec.act_dim, self.explore_sigma)
        return 0.05 * spec.action_range


@dataclass
class EpochRecord:
    epoch: int
    dataset_size: int
    batch_return: float
    model_returns: np.ndarray
    model_return_stds: np.ndarray
    tested_real: bool
    real_test_returns: list[float] = field(default_factory=list)
    best_test_return: float = float("nan")
    policy_log_std: float = float("nan")
    validation_losses: list[float] = field(default_factory=list)

    @property
    def real_test_return(self) -> float:
        return float(np.mean(self.real_test_returns)) if self.real_test_returns else float("nan")

    def as_row(self) -> dict:
        row = {
            "epoch": self.epoch,
            "dataset_size": self.dataset_size,
            "batch_return": self.batch_return,
        }
        for i, (mean, std) in enumerate(zip(self.model_returns, self.model_return_stds)):
            row[f"model_return_{i}"] = float(mean)
            row[f"model_std_{i}"] = float(std)
        row.update(
            tested_real=self.tested_real,
            real_test_return=self.real_test_return,
            best_test_return=self.best_test_return,
            policy_log_std=self.policy_log_std,
        )
        for i, loss in enumerate(self.validation_losses):
            row[f"val_loss_{i}"] = float(loss)
        return row


def epoch_columns(n_models: int) -> list[str]:
    cols = ["epoch", "dataset_size", "batch_return"]
    for i in range(n_models):
        cols += [f"model_return_{i}", f"model_std_{i}"]
    cols += ["tested_real", "real_test_return", "best_test_return", "policy_log_std"]
    return cols + [f"val_loss_{i}" for i in range(n_models)]


# ─────────────────────────────────────────────────────────────────────────────
# Real data
# ─────────────────────────────────────────────────────────────────────────────
def collect_real_data(
    env: Environment,
    policy: Policy | None,
    n_steps: int,
    sigma_x: np.ndarray | float,
    dataset: Dataset,
    horizon: int,
    rng: np.random.Generator,
) -> float:
    """
    Append `n_steps` real transitions to `dataset`.

    Episodes restart every `horizon` steps or on termination. With no policy,
    actions are uniform over the action box; otherwise the greedy action plus
    N(0, σ_x), clipped to the box.

    :return: Sum of the collected rewards.
    """
    if n_steps < 0:
        raise ContractViolation("n_steps must be non-negative")
    spec = env.spec
    total = 0.0
    obs, t = None, 0
    for _ in range(n_steps):
        if obs is None:
            obs, t = env.reset(), 0
        if policy is None:
            action = spec.sample_action(rng)
        else:
            action = spec.clip_action(policy.act(obs) + rng.normal(0.0, 1.0, spec.act_dim) * sigma_x)
        res = env.step(action)
        dataset.push(Transition(obs, action, res.reward, res.obs, res.terminal, first=t == 0))
        total += res.reward
        t += 1
        obs = None if (res.done or t >= horizon) else res.obs
    return total


def evaluate_on_real(env: Environment, policy: Policy, episodes: int,
                     horizon: int | None = None) -> tuple[list[float], list[bool]]:
    """
    Greedy episodes on the real environment, each capped at `horizon` steps
    (environment horizon when None). A capped episode counts as unsolved.

    :return: (returns, solved flags).
    """
    horizon = env.spec.horizon if horizon is None else horizon
    returns, solved = [], []
    for _ in range(episodes):
        obs, ep_return, res = env.reset(), 0.0, None
        for _ in range(horizon):
            res = env.step(policy.act(obs))
            ep_return += res.reward
            obs = res.obs
            if res.done:
                break
        returns.append(ep_return)
        solved.append(bool(res is not None and res.terminal))
    return returns, solved


# ─────────────────────────────────────────────────────────────────────────────
# Synthetic episodes
# ─────────────────────────────────────────────────────────────────────────────
class ModelEnv:
    """
    Environment facade over an ensemble: resets from recorded start states,
    steps through a `PredictionSampler`. Never touches a real environment.
    """

    def __init__(self, spec: EnvSpec, sampler: PredictionSampler, starts: np.ndarray,
                 horizon: int, rng: np.random.Generator):
        self.spec = spec
        self.sampler = sampler
        self.starts = np.atleast_2d(starts)
        self.horizon = horizon
        self.rng = rng
        self.obs = self.starts[0]
        self._t = 0

    def reset(self, start: np.ndarray | None = None) -> np.ndarray:
        self.sampler.reset()
        self.obs = self.starts[self.rng.integers(len(self.starts))] if start is None else np.asarray(start)
        self._t = 0
        return self.obs.copy()

    def step(self, action: np.ndarray) -> StepResult:
        action = self.spec.clip_action(np.asarray(action, dtype=np.float64))
        s_next, reward = self.sampler(self.obs, action)
        self._t += 1
        solved = self.spec.done_threshold is not None and reward >= self.spec.done_threshold
        truncated = not solved and self._t >= self.horizon
        self.obs = s_next
        return StepResult(s_next.copy(), reward, solved or truncated, {"truncated": truncated})


def synthetic_episode(model_env: ModelEnv, policy: Policy, start: np.ndarray | None = None) -> float:
    obs, total = model_env.reset(start), 0.0
    while True:
        res = model_env.step(policy.act(obs))
        total += res.reward
        obs = res.obs
        if res.done:
            return total


def train_controller_on_model(
    agent: SacAgent,
    ensemble: AnchoredEnsemble,
    dataset: Dataset,
    config: AedynaConfig,
    rng: np.random.Generator,
    steps: int | None = None,
) -> tuple[SacAgent, list[float]]:
    """
    SAC interaction against synthetic episodes only.

    Episodes start from the dataset's recorded episode starts and step under
    `config.strategy`.

    :return: (agent, returns of the completed synthetic episodes).
    """
    steps = config.controller_steps if steps is None else steps
    episode_returns: list[float] = []
    if steps == 0:
        return agent, episode_returns
    spec, sac_cfg = agent.spec, agent.config
    model_env = ModelEnv(
        spec, PredictionSampler(ensemble, config.strategy, rng),
        dataset.episode_starts(), config.horizon_for(spec), rng,
    )
    buffer = Dataset(sac_cfg.buffer_capacity, int(rng.integers(2 ** 31)))
    obs, ep_return = model_env.reset(), 0.0
    for step in range(steps):
        if step < sac_cfg.warmup_steps:
            action = spec.sample_action(rng)
        else:
            action = agent.act(obs, explore=True)
        res = model_env.step(action)
        buffer.push(Transition(obs, action, res.reward, res.obs, res.terminal))
        ep_return += res.reward
        if res.done:
            episode_returns.append(ep_return)
            obs, ep_return = model_env.reset(), 0.0
        else:
            obs = res.obs
        if len(buffer) >= sac_cfg.batch_size:
            for _ in range(sac_cfg.updates_per_step):
                agent.update(buffer.sample_arrays(sac_cfg.batch_size))
    log.debug("controller trained for %d synthetic steps (%d episodes)", steps, len(episode_returns))
    return agent, episode_returns


def validate_on_models(
    agent: SacAgent,
    ensemble: AnchoredEnsemble,
    starts: np.ndarray,
    config: AedynaConfig,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Greedy synthetic episodes on each member individually.

    Every member sees the same start states (drawn with `seed`).

    :return: (per-model mean return, per-model return std), each of length M.
    """
    policy = agent.policy()
    horizon = config.horizon_for(agent.spec)
    picks = np.random.default_rng(seed).integers(len(starts), size=config.validation_episodes)
    means, stds = [], []
    for m in range(len(ensemble)):
        rng = np.random.default_rng(seed)
        model_env = ModelEnv(agent.spec, PredictionSampler(ensemble, config.strategy, rng, model_index=m),
                             starts, horizon, rng)
        returns = [synthetic_episode(model_env, policy, starts[i]) for i in picks]
        means.append(np.mean(returns))
        stds.append(np.std(returns))
    return np.asarray(means), np.asarray(stds)


def improvement_gate(history: list[np.ndarray], improvement_fraction: float = 1.0) -> bool:
    """
    True when the controller should be tested on the real environment:
    on the first validation, or when fewer than ceil(φ·M) models improved
    over the previous validation.
    """
    if len(history) < 2:
        return True
    current, previous = np.asarray(history[-1]), np.asarray(history[-2])
    improved = int(np.sum(current > previous))
    return improved < math.ceil(improvement_fraction * len(current))


# ─────────────────────────────────────────────────────────────────────────────
# Orchestrator
# ─────────────────────────────────────────────────────────────────────────────
def run_aedyna(
    env: Environment,
    config: AedynaConfig | None = None,
    ensemble_config: EnsembleConfig | None = None,
    sac_config: SacConfig | None = None,
    seed: int = 0,
    stop_check: Callable[[], None] | None = None,
    record: RunRecord | None = None,
) -> tuple[RunRecord, SacAgent, AnchoredEnsemble]:
    """
    Full AE-DYNA-SAC loop.

    The real-step counter ends at
    initial_random_steps + collections·batch_steps + test steps.
    Budget exhaustion is reported in `record.summary`, never raised.
    """
    config = config or AedynaConfig()
    ensemble_config = ensemble_config or EnsembleConfig()
    spec = env.spec
    data_seq, model_seq, ctrl_seq, val_seq = np.random.SeedSequence(seed).spawn(4)
    data_rng = np.random.default_rng(data_seq)
    ctrl_rng = np.random.default_rng(ctrl_seq)
    val_rng = np.random.default_rng(val_seq)
    horizon = config.horizon_for(spec)
    sigma_x = config.sigma_for(spec)

    if record is None:
        record = RunRecord("aedyna", epoch_columns(ensemble_config.n_models))
    steps_at_start = env.steps_taken
    collected = test_steps = 0

    # 1) real dataset: imported export or the initial random walk
    if config.initial_data is not None:
        dataset = Dataset.from_csv(config.initial_data, seed=int(data_rng.integers(2 ** 31)))
        batch_return = float("nan")
    else:
        dataset = Dataset(seed=int(data_rng.integers(2 ** 31)))
        if config.max_real_steps < config.initial_random_steps:
            log.warning("budget %d below the initial random walk %d; nothing to do",
                        config.max_real_steps, config.initial_random_steps)
            record.summary.update(epochs=0, success=False, real_steps=0, data_points=0, test_steps=0)
            return record, SacAgent(spec, sac_config, seed), AnchoredEnsemble.for_env(spec, ensemble_config, seed)
        batch_return = collect_real_data(env, None, config.initial_random_steps, sigma_x, dataset, horizon, data_rng)
        collected += config.initial_random_steps

    ensemble = AnchoredEnsemble.for_env(spec, ensemble_config, int(model_seq.generate_state(1)[0]))
    agent = SacAgent(spec, sac_config, int(ctrl_rng.integers(2 ** 31)))
    history: list[np.ndarray] = []
    best_test, success, epoch = -math.inf, False, 0

    while True:
        if stop_check is not None:
            stop_check()
        # 2) model
        ensemble, val_losses = train_model(ensemble, dataset)
        # 3) controller, reset after every model retraining
        agent.reset_controller(int(ctrl_rng.integers(2 ** 31)))
        agent, _ = train_controller_on_model(agent, ensemble, dataset, config, ctrl_rng)
        # 4) validation on every member
        starts = dataset.episode_starts()
        means, stds = validate_on_models(agent, ensemble, starts, config, int(val_rng.integers(2 ** 31)))
        history.append(means)
        # 5) gated real test
        tested = improvement_gate(history, config.improvement_fraction)
        test_returns: list[float] = []
        if tested:
            before = env.steps_taken
            test_returns, solved = evaluate_on_real(
                env, agent.policy(), config.test_episodes, config.test_horizon_for(spec))
            test_steps += env.steps_taken - before
            best_test = max(best_test, float(np.mean(test_returns)))
            if spec.done_threshold is not None:
                success = all(solved)
            else:
                success = float(np.mean(test_returns)) >= config.success_return
        epoch_rec = EpochRecord(
            epoch=epoch,
            dataset_size=len(dataset),
            batch_return=batch_return,
            model_returns=means,
            model_return_stds=stds,
            tested_real=tested,
            real_test_returns=test_returns,
            best_test_return=best_test if math.isfinite(best_test) else float("nan"),
            policy_log_std=float(np.mean(agent.log_std(starts))),
            validation_losses=list(val_losses),
        )
        record.append(epoch_rec.as_row())
        log.info(
            "aedyna epoch %d: data=%d model_returns=[%s] tested=%s real=%.3f",
            epoch, len(dataset), ", ".join(f"{m:.2f}" for m in means), tested, epoch_rec.real_test_return,
        )
        epoch += 1
        if success:
            break
        # 6) more real data, within budget
        if collected + config.batch_steps > config.max_real_steps:
            log.info("aedyna stopped: real-step budget %d exhausted", config.max_real_steps)
            break
        batch_return = collect_real_data(env, agent.policy(), config.batch_steps, sigma_x, dataset, horizon, data_rng)
        collected += config.batch_steps

    record.summary.update(
        epochs=epoch,
        success=success,
        data_points=collected,
        test_steps=test_steps,
        real_steps=env.steps_taken - steps_at_start,
        dataset_size=len(dataset),
    )
    return record, agent, ensemble
