# felrl/dynamics.py
"""
Uncertainty-aware dynamics and reward model.

Each ensemble member is a small tanh network trained with an anchored
MAP loss

    L_j = (1/N)‖f − f̂_j‖² + (1/N)‖Γ^{1/2}(θ_j − θ_anc,j)‖²,
    diag(Γ)_i = σ_ε² / σ²_prior,i,

where θ_anc,j is drawn once from the prior and never trained. Disagreement
between members measures epistemic uncertainty; Γ carries the aleatoric
noise level σ_ε.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from os import PathLike

import numpy as np

from .envs import EnvSpec
from .errors import (
    CheckpointMismatchError,
    ContractViolation,
    DatasetTooSmallError,
    TrainingDivergence,
    UnknownStrategyError,
)
from .nn import DenseNet, Learner, checkpoint_arrays, net_from_arrays
from .replay import Dataset

log = logging.getLogger(__name__)

# Noise level assumed on noiseless data; keeps Γ finite but negligible
NOISELESS_SIGMA = 1e-3
# Noise level of the noisy studies in normalised observation space
NOISY_SIGMA = 0.05


@dataclass(frozen=True)
class EnsembleConfig:
    """
    :param n_models: Ensemble size M.
    :param hidden_sizes: Widths of the two tanh hidden layers.
    :param noise_sigma: Homoscedastic target noise σ_ε.
    :param prior_delta: Half-width Δ of the uniform weight initialisation.
    :param anchored: False drops the anchor term (Γ = 0): a plain ensemble.
    :param patience: Non-improving validation evaluations tolerated.
    :param loss_threshold: Training stops once the training loss falls below it.
    :param predict_delta: Model s′ − s (True) or s′ itself (False).
    """
    n_models: int = 3
    hidden_sizes: tuple[int, ...] = (20, 20)
    noise_sigma: float = NOISELESS_SIGMA
    prior_delta: float = 0.1
    anchored: bool = True
    patience: int = 20
    lr: float = 1e-3
    max_epochs: int = 300
    loss_threshold: float = 1e-4
    batch_size: int = 32
    validation_ratio: float = 0.2
    predict_delta: bool = True

    def __post_init__(self):
        if self.n_models < 1:
            raise ContractViolation(f"ensemble needs at least one model, got {self.n_models}")
        if not 0.0 < self.prior_delta <= 0.1:
            raise ContractViolation(f"prior half-range must lie in (0, 0.1], got {self.prior_delta}")
        if self.noise_sigma < 0:
            raise ContractViolation("noise sigma must be non-negative")
        if self.patience < 0 or self.max_epochs < 1 or self.batch_size < 1:
            raise ContractViolation("patience ≥ 0, max_epochs ≥ 1 and batch_size ≥ 1 required")


# ─────────────────────────────────────────────────────────────────────────────
# Normalisation
# ─────────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class RangeNormalizer:
    """Affine map of the observed per-column range onto [−1, 1]."""
    low: np.ndarray
    high: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray) -> "RangeNormalizer":
        data = np.atleast_2d(data)
        return cls(data.min(axis=0), data.max(axis=0))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.high + self.low)

    @property
    def half_span(self) -> np.ndarray:
        half = 0.5 * (self.high - self.low)
        return np.where(half > 1e-12, half, 1.0)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.center) / self.half_span

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) * self.half_span + self.center


# ─────────────────────────────────────────────────────────────────────────────
# Anchored members
# ─────────────────────────────────────────────────────────────────────────────
def prior_sigmas(layer_sizes: tuple[int, ...], delta: float) -> np.ndarray:
    """
    Per-parameter prior std matching the uniform initialisation:
    Δ/√3 everywhere, divided by the fan-in for the last layer's weights.
    """
    chunks = []
    n_layers = len(layer_sizes) - 1
    for idx, (n_in, n_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
        scale = n_in if idx == n_layers - 1 else 1
        chunks.append(np.full(n_in * n_out, delta / np.sqrt(3.0) / scale))
        chunks.append(np.full(n_out, delta / np.sqrt(3.0)))
    return np.concatenate(chunks)


def gamma_matrix(prior_sigma: np.ndarray, noise_sigma: float) -> np.ndarray:
    """Diagonal of Γ: σ_ε² / σ²_prior,i."""
    return noise_sigma ** 2 / prior_sigma ** 2


@dataclass(eq=False)
class AnchoredNet:
    """A trainable network tied to its fixed anchor vector θ_anc."""
    learner: Learner
    anchor: np.ndarray
    gamma: np.ndarray
    prior_sigma: np.ndarray

    @property
    def net(self) -> DenseNet:
        return self.learner.net


def init_anchored(
    in_dim: int, out_dim: int, config: EnsembleConfig, rng: np.random.Generator
) -> AnchoredNet:
    """
    Weights ~ U[−Δ, Δ] (last-layer weights divided by their fan-in) and an
    anchor ~ N(0, σ_prior²) drawn once.
    """
    sizes = (in_dim, *config.hidden_sizes, out_dim)
    delta = config.prior_delta
    chunks = []
    for idx, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.uniform(-delta, delta, n_in * n_out)
        if idx == len(sizes) - 2:
            w = w / n_in
        chunks += [w, rng.uniform(-delta, delta, n_out)]
    acts = ("tanh",) * (len(sizes) - 2) + ("linear",)
    net = DenseNet(sizes, acts, np.concatenate(chunks))
    sigma = prior_sigmas(sizes, delta)
    anchor = rng.normal(0.0, sigma)
    anchor.setflags(write=False)
    gamma = gamma_matrix(sigma, config.noise_sigma) if config.anchored else np.zeros_like(sigma)
    return AnchoredNet(Learner.fresh(net, config.lr), anchor, gamma, sigma)


def data_mse(net: DenseNet, x: np.ndarray, y: np.ndarray) -> float:
    """(1/N) Σ_n ‖y_n − f̂(x_n)‖²."""
    return float(np.sum((y - net(x)) ** 2) / len(x))


def anchored_loss(
    member: AnchoredNet, x: np.ndarray, y: np.ndarray, n_data: int | None = None,
    params: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """
    Anchored MAP loss and its parameter gradient.

    :param n_data: N of the regulariser; the batch size when None.
    :param params: Evaluate at these parameters instead of the member's own.
    :return: (loss, d loss / d params).
    """
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    if len(x) < 1:
        raise ContractViolation("anchored loss needs at least one sample")
    n = n_data or len(x)
    net = member.net if params is None else member.net.with_params(params)
    out, tape = net.forward_tape(x)
    err = out - y
    offset = net.params - member.anchor
    loss = np.sum(err ** 2) / len(x) + np.sum(member.gamma * offset ** 2) / n
    grads = net.backward(tape, 2.0 * err / len(x))[0] + 2.0 * member.gamma * offset / n
    return float(loss), grads


def fit_member(
    member: AnchoredNet, x: np.ndarray, y: np.ndarray, config: EnsembleConfig,
    rng: np.random.Generator,
) -> float:
    """
    Early-stopped minibatch training of one member on normalised arrays.

    The member keeps its best-validation parameters.

    :return: Best validation data MSE.
    """
    n = len(x)
    n_val = min(max(int(np.floor(config.validation_ratio * n + 0.5)), 1), n - 1)
    order = rng.permutation(n)
    xv, yv = x[order[:n_val]], y[order[:n_val]]
    xt, yt = x[order[n_val:]], y[order[n_val:]]

    best_val = data_mse(member.net, xv, yv)
    best_params = member.net.params
    waited = 0
    for epoch in range(config.max_epochs):
        perm = rng.permutation(len(xt))
        for start in range(0, len(xt), config.batch_size):
            idx = perm[start:start + config.batch_size]
            loss, grads = anchored_loss(member, xt[idx], yt[idx], n_data=len(xt))
            if not np.isfinite(loss):
                raise TrainingDivergence("dynamics model loss diverged")
            member.learner.apply(grads)
        val = data_mse(member.net, xv, yv)
        if val < best_val:
            best_val, best_params, waited = val, member.net.params, 0
        else:
            waited += 1
            if waited > config.patience:
                break
        if anchored_loss(member, xt, yt)[0] <= config.loss_threshold:
            break
    log.debug("member trained for %d epochs, best validation %.3g", epoch + 1, best_val)
    member.learner.net = member.net.with_params(best_params)
    return best_val


# ─────────────────────────────────────────────────────────────────────────────
# Ensemble
# ─────────────────────────────────────────────────────────────────────────────
class AnchoredEnsemble:
    """
    M anchored members over a shared input/target normalisation.

    Works on raw arrays (`fit_arrays`, `predict_arrays`); when built with
    `for_env` it also serves as a (s, a) → (s′, r) dynamics model.
    """

    def __init__(self, in_dim: int, out_dim: int, config: EnsembleConfig | None = None,
                 seed: int | None = None, obs_dim: int | None = None):
        self.config = config or EnsembleConfig()
        self.in_dim, self.out_dim, self.obs_dim = in_dim, out_dim, obs_dim
        seqs = np.random.SeedSequence(seed).spawn(self.config.n_models)
        self.rngs = [np.random.default_rng(s) for s in seqs]
        self.members = [init_anchored(in_dim, out_dim, self.config, rng) for rng in self.rngs]
        self.input_norm = RangeNormalizer(-np.ones(in_dim), np.ones(in_dim))
        self.target_norm = RangeNormalizer(-np.ones(out_dim), np.ones(out_dim))
        self.validation_losses: list[float] = []

    @classmethod
    def for_env(cls, spec: EnvSpec, config: EnsembleConfig | None = None,
                seed: int | None = None) -> "AnchoredEnsemble":
        return cls(spec.obs_dim + spec.act_dim, spec.obs_dim + 1, config, seed, obs_dim=spec.obs_dim)

    def __len__(self) -> int:
        return len(self.members)

    def fit_arrays(self, x: np.ndarray, y: np.ndarray) -> list[float]:
        """Refit normalisers, then train every member independently."""
        x, y = np.atleast_2d(x), np.atleast_2d(y)
        if len(x) < 5:
            raise DatasetTooSmallError(f"model training needs ≥ 5 samples, have {len(x)}")
        self.input_norm = RangeNormalizer.fit(x)
        self.target_norm = RangeNormalizer.fit(y)
        xn, yn = self.input_norm.normalize(x), self.target_norm.normalize(y)
        self.validation_losses = [
            fit_member(m, xn, yn, self.config, rng) for m, rng in zip(self.members, self.rngs)
        ]
        return self.validation_losses

    def predict_arrays(self, x: np.ndarray) -> np.ndarray:
        """Raw-space predictions of every member, shape (M, B, out_dim)."""
        xn = self.input_norm.normalize(np.atleast_2d(x))
        return np.stack([self.target_norm.denormalize(m.net(xn)) for m in self.members])

    # ─────────────────────────────────────────────────────────────────────
    # Dynamics view
    # ─────────────────────────────────────────────────────────────────────
    def _require_dynamics(self) -> int:
        if self.obs_dim is None:
            raise ContractViolation("ensemble was not built as a dynamics model")
        return self.obs_dim

    def targets(self, s: np.ndarray, r: np.ndarray, s_next: np.ndarray) -> np.ndarray:
        next_part = s_next - s if self.config.predict_delta else s_next
        return np.concatenate([next_part, np.reshape(r, (-1, 1))], axis=1)

    def predict_members(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Per-member [s′ | r], shape (M, B, obs_dim + 1)."""
        obs_dim = self._require_dynamics()
        s, a = np.atleast_2d(s), np.atleast_2d(a)
        out = self.predict_arrays(np.concatenate([s, a], axis=1))
        if self.config.predict_delta:
            out[..., :obs_dim] += s
        return out

    # ─────────────────────────────────────────────────────────────────────
    # Checkpoints
    # ─────────────────────────────────────────────────────────────────────
    def save(self, path: str | PathLike) -> None:
        arrays = {
            "dims": np.asarray([self.in_dim, self.out_dim, -1 if self.obs_dim is None else self.obs_dim]),
            "predict_delta": np.asarray(self.config.predict_delta),
            "input_low": self.input_norm.low, "input_high": self.input_norm.high,
            "target_low": self.target_norm.low, "target_high": self.target_norm.high,
        }
        for i, m in enumerate(self.members):
            arrays.update(checkpoint_arrays(m.net, prefix=f"m{i}_"))
            arrays[f"m{i}_anchor"] = m.anchor
            arrays[f"m{i}_gamma"] = m.gamma
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    def load(self, path: str | PathLike) -> None:
        """Restore members, anchors, Γ and normalisers into this ensemble."""
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
        in_dim, out_dim, _ = (int(v) for v in arrays["dims"])
        if (in_dim, out_dim) != (self.in_dim, self.out_dim):
            raise CheckpointMismatchError("ensemble checkpoint dimensions differ")
        for i, m in enumerate(self.members):
            if f"m{i}_params" not in arrays:
                raise CheckpointMismatchError(f"checkpoint holds fewer than {len(self)} members")
            net, _ = net_from_arrays(arrays, prefix=f"m{i}_")
            m.learner = Learner.fresh(net, self.config.lr)
            m.anchor = arrays[f"m{i}_anchor"]
            m.gamma = arrays[f"m{i}_gamma"]
        self.input_norm = RangeNormalizer(arrays["input_low"], arrays["input_high"])
        self.target_norm = RangeNormalizer(arrays["target_low"], arrays["target_high"])


def train_model(ensemble: AnchoredEnsemble, dataset: Dataset) -> tuple[AnchoredEnsemble, list[float]]:
    """Train the ensemble on a transition dataset; returns per-model validation losses."""
    if len(dataset) < 5:
        raise DatasetTooSmallError(f"model training needs ≥ 5 transitions, have {len(dataset)}")
    batch = dataset.arrays()
    x = np.concatenate([batch.s, batch.a], axis=1)
    losses = ensemble.fit_arrays(x, ensemble.targets(batch.s, batch.r, batch.s_next))
    log.info("ensemble trained on %d transitions, validation losses %s",
             len(dataset), ", ".join(f"{v:.3g}" for v in losses))
    return ensemble, losses


def predict_ensemble(ensemble: AnchoredEnsemble, s: np.ndarray, a: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population std across members of [s′ | r]."""
    preds = ensemble.predict_members(s, a)
    mean, std = preds.mean(axis=0), preds.std(axis=0)
    return (mean[0], std[0]) if np.ndim(s) == 1 else (mean, std)


# ─────────────────────────────────────────────────────────────────────────────
# Sampling strategies
# ─────────────────────────────────────────────────────────────────────────────
class Strategy(str, Enum):
    GAUSSIAN = "gaussian"
    PER_STEP_MODEL = "per-step-model"
    PER_EPISODE_MODEL = "per-episode-model"
    PESSIMISTIC = "pessimistic"

    @classmethod
    def parse(cls, name: "str | Strategy") -> "Strategy":
        try:
            return cls(name)
        except ValueError:
            raise UnknownStrategyError(f"unknown uncertainty strategy {name!r}") from None


class PredictionSampler:
    """
    Draws (s′, r) from an ensemble under one uncertainty strategy.

    Call `reset()` at each synthetic episode start; the per-episode strategy
    keeps its model until then. `model_index` pins one member (validation).
    """

    def __init__(self, ensemble: AnchoredEnsemble, strategy: "str | Strategy",
                 rng: np.random.Generator, model_index: int | None = None):
        self.ensemble = ensemble
        self.strategy = Strategy.parse(strategy)
        self.rng = rng
        self.model_index = model_index
        self.current: int | None = None

    def reset(self) -> None:
        if self.strategy is Strategy.PER_EPISODE_MODEL and self.model_index is None:
            self.current = int(self.rng.integers(len(self.ensemble)))

    def __call__(self, s: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, float]:
        obs_dim = self.ensemble._require_dynamics()
        preds = self.ensemble.predict_members(s, a)[:, 0, :]
        if self.model_index is not None:
            out = preds[self.model_index]
        elif self.strategy is Strategy.GAUSSIAN:
            out = self.rng.normal(preds.mean(axis=0), preds.std(axis=0))
        elif self.strategy is Strategy.PER_STEP_MODEL:
            out = preds[self.rng.integers(len(preds))]
        elif self.strategy is Strategy.PER_EPISODE_MODEL:
            if self.current is None:
                self.reset()
            out = preds[self.current]
        else:
            out = preds[int(np.argmin(preds[:, -1]))]
        return out[:obs_dim], float(out[-1])


def sample_prediction(ensemble: AnchoredEnsemble, s: np.ndarray, a: np.ndarray,
                      strategy: "str | Strategy", rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """One-shot draw; per-episode-model picks a fresh model for this call."""
    sampler = PredictionSampler(ensemble, strategy, rng)
    sampler.reset()
    return sampler(s, a)
