# felrl/nn.py
"""
Minimal dense-network engine shared by every learner in the package.

A network is a flat float64 parameter vector plus the layer shapes needed to
read it. The flat vector is the single source of truth: anchoring, soft
updates and checkpoints all operate on it directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from os import PathLike
from typing import Callable, Sequence

import numpy as np

from .errors import CheckpointMismatchError, ContractViolation, TrainingDivergence

log = logging.getLogger(__name__)

# ─────────────────────────────────────────────────────────────────────────────
# Constants
# ─────────────────────────────────────────────────────────────────────────────
ACTIVATIONS = ("tanh", "linear")
# Bumped whenever the checkpoint layout changes
FORMAT_VERSION = 1

# A loss maps network outputs to (scalar loss, d loss / d outputs)
LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


def param_count(layer_sizes: Sequence[int]) -> int:
    """Σ_l (n_l·n_{l+1} + n_{l+1}) for the given layer widths."""
    return sum(n_in * n_out + n_out for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]))


# ─────────────────────────────────────────────────────────────────────────────
# Network value type
# ─────────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class Tape:
    """Activations recorded by a forward pass, consumed by `DenseNet.backward`."""
    layers: list[np.ndarray]
    single: bool


@dataclass(frozen=True, eq=False)
class DenseNet:
    """
    Fully connected feed-forward network over a flat parameter vector.

    Parameters are laid out layer by layer, weights (row-major, shape
    n_in x n_out) followed by the bias of that layer. The params array is
    read-only; training produces new instances via `with_params`.
    """
    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        acts = tuple(self.activations)
        if len(sizes) < 2 or any(n < 1 for n in sizes):
            raise ContractViolation(f"layer_sizes must hold ≥ 2 positive widths, got {sizes}")
        if len(acts) != len(sizes) - 1:
            raise ContractViolation(f"need {len(sizes) - 1} activations, got {len(acts)}")
        if any(a not in ACTIVATIONS for a in acts):
            raise ContractViolation(f"unknown activation in {acts}")
        if acts[-1] != "linear":
            raise ContractViolation("the output layer must be linear")
        params = np.array(self.params, dtype=np.float64, copy=True).ravel()
        if params.size != param_count(sizes):
            raise ContractViolation(
                f"params length {params.size} != param_count {param_count(sizes)}"
            )
        params.setflags(write=False)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", acts)
        object.__setattr__(self, "params", params)

    @property
    def param_count(self) -> int:
        return self.params.size

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def with_params(self, params: np.ndarray) -> "DenseNet":
        return replace(self, params=params)

    def same_architecture(self, other: "DenseNet") -> bool:
        return self.layer_sizes == other.layer_sizes and self.activations == other.activations

    def layer_slices(self) -> list[tuple[slice, slice]]:
        """(weight slice, bias slice) into the flat vector for each layer."""
        out, offset = [], 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = slice(offset, offset + n_in * n_out)
            offset += n_in * n_out
            b = slice(offset, offset + n_out)
            offset += n_out
            out.append((w, b))
        return out

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Read-only (W, b) views for each layer."""
        shapes = zip(self.layer_sizes[:-1], self.layer_sizes[1:])
        return [
            (self.params[w].reshape(n_in, n_out), self.params[b])
            for (w, b), (n_in, n_out) in zip(self.layer_slices(), shapes)
        ]

    # ─────────────────────────────────────────────────────────────────────
    # Forward / reverse passes
    # ─────────────────────────────────────────────────────────────────────
    def forward_tape(self, x: np.ndarray) -> tuple[np.ndarray, Tape]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = np.atleast_2d(x)
        if h.ndim != 2 or h.shape[1] != self.n_inputs:
            raise ContractViolation(
                f"input has shape {x.shape}, network expects {self.n_inputs} features"
            )
        recorded = [h]
        for (W, b), act in zip(self.layers(), self.activations):
            h = h @ W + b
            if act == "tanh":
                h = np.tanh(h)
            recorded.append(h)
        return (h[0] if single else h), Tape(recorded, single)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward_tape(x)[0]

    def backward(self, tape: Tape, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """
        Pull an output gradient back through a recorded forward pass.

        :param tape: Record returned by `forward_tape`.
        :param grad_out: d loss / d outputs, same shape as the forward output.
        :return: (d loss / d params as a flat vector, d loss / d inputs).
        """
        g = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        if g.shape != tape.layers[-1].shape:
            raise ContractViolation(
                f"output gradient shape {g.shape} != output shape {tape.layers[-1].shape}"
            )
        grads = np.empty(self.param_count)
        layers = self.layers()
        slices = self.layer_slices()
        for idx in reversed(range(len(layers))):
            h_out, h_in = tape.layers[idx + 1], tape.layers[idx]
            if self.activations[idx] == "tanh":
                g = g * (1.0 - h_out ** 2)
            w_slice, b_slice = slices[idx]
            grads[w_slice] = (h_in.T @ g).ravel()
            grads[b_slice] = g.sum(axis=0)
            g = g @ layers[idx][0].T
        return grads, (g[0] if tape.single else g)


# ─────────────────────────────────────────────────────────────────────────────
# Construction
# ─────────────────────────────────────────────────────────────────────────────
def init_dense(
    layer_sizes: Sequence[int],
    rng: np.random.Generator,
    hidden_activation: str = "tanh",
) -> DenseNet:
    """
    Build a network with fan-in scaled uniform weights and biases.

    :param layer_sizes: Widths from input to output.
    :param rng: Source of randomness (fully determines the result).
    :param hidden_activation: Tag used for every layer but the last.
    """
    sizes = tuple(int(n) for n in layer_sizes)
    chunks = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        chunks.append(rng.uniform(-bound, bound, n_in * n_out))
        chunks.append(rng.uniform(-bound, bound, n_out))
    acts = (hidden_activation,) * (len(sizes) - 2) + ("linear",)
    return DenseNet(sizes, acts, np.concatenate(chunks))


def forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    return net(x)


def gradient(net: DenseNet, x: np.ndarray, loss_fn: LossFn) -> np.ndarray:
    """
    d loss / d params for a loss defined on the network outputs at `x`.

    :param loss_fn: Maps outputs to (loss, d loss / d outputs).
    """
    out, tape = net.forward_tape(x)
    _, grad_out = loss_fn(out)
    return net.backward(tape, np.reshape(grad_out, np.shape(out)))[0]


# ─────────────────────────────────────────────────────────────────────────────
# Optimisation
# ─────────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class AdamState:
    """Bias-corrected Adam moments for one parameter vector."""
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr: float = 1e-3, **kwargs) -> "AdamState":
        if lr <= 0:
            raise ContractViolation(f"learning rate must be positive, got {lr}")
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kwargs)


def adam_update(
    params: np.ndarray, grads: np.ndarray, state: AdamState
) -> tuple[np.ndarray, AdamState]:
    """One Adam step on a raw parameter vector."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != state.m.shape or np.shape(params) != state.m.shape:
        raise ContractViolation(
            f"gradient length {grads.size} does not match optimiser state {state.m.size}"
        )
    if not np.all(np.isfinite(grads)):
        raise TrainingDivergence("non-finite gradient component")
    t = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads ** 2
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, step_count=t)


def adam_step(net: DenseNet, grads: np.ndarray, state: AdamState) -> tuple[DenseNet, AdamState]:
    params, state = adam_update(net.params, grads, state)
    return net.with_params(params), state


def soft_update(target: DenseNet, online: DenseNet, tau: float) -> DenseNet:
    """θ_targ ← τ·θ + (1 − τ)·θ_targ."""
    if not target.same_architecture(online):
        raise ContractViolation("soft update between different architectures")
    if not 0.0 <= tau <= 1.0:
        raise ContractViolation(f"tau must lie in [0, 1], got {tau}")
    if tau == 1.0:
        return target.with_params(online.params)
    return target.with_params(tau * online.params + (1.0 - tau) * target.params)


@dataclass
class Learner:
    """A privately owned network together with its optimiser state."""
    net: DenseNet
    opt: AdamState

    @classmethod
    def fresh(cls, net: DenseNet, lr: float) -> "Learner":
        return cls(net, AdamState.zeros(net.param_count, lr=lr))

    def apply(self, grads: np.ndarray) -> None:
        self.net, self.opt = adam_step(self.net, grads, self.opt)


# ─────────────────────────────────────────────────────────────────────────────
# Checkpoints
# ─────────────────────────────────────────────────────────────────────────────
def checkpoint_arrays(net: DenseNet, prefix: str = "", opt: AdamState | None = None) -> dict:
    """Flatten a network (and optionally its optimiser) into npz-ready arrays."""
    arrays = {
        f"{prefix}layer_sizes": np.asarray(net.layer_sizes, dtype=np.int64),
        f"{prefix}activations": np.asarray(net.activations),
        f"{prefix}params": net.params,
    }
    if opt is not None:
        arrays[f"{prefix}adam_m"] = opt.m
        arrays[f"{prefix}adam_v"] = opt.v
        arrays[f"{prefix}adam_hyper"] = np.asarray(
            [opt.step_count, opt.lr, opt.beta1, opt.beta2, opt.eps], dtype=np.float64
        )
    return arrays


def net_from_arrays(arrays, prefix: str = "") -> tuple[DenseNet, AdamState | None]:
    try:
        net = DenseNet(
            tuple(int(n) for n in arrays[f"{prefix}layer_sizes"]),
            tuple(str(a) for a in arrays[f"{prefix}activations"]),
            arrays[f"{prefix}params"],
        )
    except KeyError as exc:
        raise CheckpointMismatchError(f"checkpoint lacks entry {exc}") from exc
    opt = None
    if f"{prefix}adam_m" in arrays:
        step, lr, b1, b2, eps = arrays[f"{prefix}adam_hyper"]
        opt = AdamState(
            np.array(arrays[f"{prefix}adam_m"]), np.array(arrays[f"{prefix}adam_v"]),
            int(step), float(lr), float(b1), float(b2), float(eps),
        )
    return net, opt


def save_checkpoint(
    path: str | PathLike, net: DenseNet, opt: AdamState | None = None, **extra
) -> None:
    """
    Write a versioned `.npz` checkpoint.

    :param extra: Additional arrays / scalars stored alongside the network.
    """
    arrays = checkpoint_arrays(net, opt=opt)
    arrays["format_version"] = np.asarray(FORMAT_VERSION)
    arrays.update({k: np.asarray(v) for k, v in extra.items()})
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    log.debug("saved checkpoint %s (%d params)", path, net.param_count)


def load_checkpoint(path: str | PathLike) -> tuple[DenseNet, AdamState | None, dict]:
    """
    :return: (network, optimiser state or None, remaining stored entries).
    """
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files}
    version = int(arrays.pop("format_version", -1))
    if version != FORMAT_VERSION:
        raise CheckpointMismatchError(f"unsupported checkpoint version {version}")
    net, opt = net_from_arrays(arrays)
    own = set(checkpoint_arrays(net, opt=opt))
    return net, opt, {k: v for k, v in arrays.items() if k not in own}
