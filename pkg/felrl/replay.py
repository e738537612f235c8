# felrl/replay.py
"""
Transition storage: uniform minibatches for the off-policy learners and
shuffled train/validation splits for the dynamics-model trainer.
"""

from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass
from os import PathLike
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ContractViolation, DatasetTooSmallError, EmptyDatasetError

log = logging.getLogger(__name__)


def _frozen(x) -> np.ndarray:
    arr = np.array(x, dtype=np.float64, copy=True).ravel()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Transition:
    """
    One (s, a, r, s′, done) record.

    `done` marks a true terminal (no bootstrapping); time-limit truncation is
    stored as done = False. `first` flags the opening step of an episode.
    """
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool = False
    first: bool = False

    def __post_init__(self):
        object.__setattr__(self, "s", _frozen(self.s))
        object.__setattr__(self, "a", _frozen(self.a))
        object.__setattr__(self, "s_next", _frozen(self.s_next))
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "done", bool(self.done))
        object.__setattr__(self, "first", bool(self.first))
        if not np.isfinite(self.r):
            raise ContractViolation(f"non-finite reward {self.r}")
        if self.s.shape != self.s_next.shape:
            raise ContractViolation("s and s_next differ in length")


@dataclass(frozen=True, eq=False)
class Batch:
    """Column-stacked view of a sequence of transitions."""
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    @classmethod
    def of(cls, transitions: Sequence[Transition]) -> "Batch":
        if not transitions:
            raise EmptyDatasetError("cannot stack an empty batch")
        return cls(
            np.stack([t.s for t in transitions]),
            np.stack([t.a for t in transitions]),
            np.array([t.r for t in transitions]),
            np.stack([t.s_next for t in transitions]),
            np.array([float(t.done) for t in transitions]),
        )

    def __len__(self) -> int:
        return self.r.size


class Dataset:
    """
    Insertion-ordered transition store with optional FIFO capacity.

    :param capacity: Maximum size; the oldest transition is evicted beyond it.
    :param seed: Seed of the sampling generator used when no per-call seed is given.
    """

    def __init__(self, capacity: int | None = None, seed: int | None = None):
        if capacity is not None and capacity < 1:
            raise ContractViolation(f"capacity must be ≥ 1, got {capacity}")
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)
        self._rng = np.random.default_rng(seed)
        self._dims: tuple[int, int] | None = None

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Transition]:
        return iter(self._items)

    def __getitem__(self, idx: int) -> Transition:
        return self._items[idx]

    @property
    def dims(self) -> tuple[int, int] | None:
        """(obs_dim, act_dim) fixed by the first insertion."""
        return self._dims

    def push(self, transition: Transition) -> None:
        dims = (transition.s.size, transition.a.size)
        if self._dims is None:
            self._dims = dims
        elif dims != self._dims:
            raise ContractViolation(f"transition dims {dims} != dataset dims {self._dims}")
        self._items.append(transition)

    def extend(self, transitions: Iterable[Transition]) -> None:
        for t in transitions:
            self.push(t)

    def sample_batch(self, n: int, seed: int | None = None) -> list[Transition]:
        """`n` uniform draws with replacement; deterministic for a given seed."""
        if not self._items:
            raise EmptyDatasetError("cannot sample from an empty dataset")
        rng = np.random.default_rng(seed) if seed is not None else self._rng
        return [self._items[i] for i in rng.integers(0, len(self._items), n)]

    def sample_arrays(self, n: int, rng: np.random.Generator | None = None) -> Batch:
        if not self._items:
            raise EmptyDatasetError("cannot sample from an empty dataset")
        rng = rng or self._rng
        return Batch.of([self._items[i] for i in rng.integers(0, len(self._items), n)])

    def split(self, validation_ratio: float, rng: np.random.Generator | int | None = None
              ) -> tuple["Dataset", "Dataset"]:
        """
        Shuffled disjoint (train, validation) partition.

        |validation| = round(ratio·N), kept within [1, N − 1] so both parts are usable.
        """
        if not 0.0 < validation_ratio < 1.0:
            raise ContractViolation(f"validation ratio must lie in (0, 1), got {validation_ratio}")
        n = len(self._items)
        if n < 2:
            raise DatasetTooSmallError(f"need at least 2 transitions to split, have {n}")
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        n_val = min(max(int(np.floor(validation_ratio * n + 0.5)), 1), n - 1)
        order = rng.permutation(n)
        val, train = Dataset(), Dataset()
        val.extend(self._items[i] for i in order[:n_val])
        train.extend(self._items[i] for i in order[n_val:])
        return train, val

    def arrays(self) -> Batch:
        return Batch.of(list(self._items))

    def episode_starts(self) -> np.ndarray:
        """States that opened an episode (the empirical start-state distribution)."""
        starts = [t.s for t in self._items if t.first]
        if not starts:
            starts = [t.s for t in self._items]
        if not starts:
            raise EmptyDatasetError("no start states recorded")
        return np.stack(starts)

    # ─────────────────────────────────────────────────────────────────────
    # CSV export / import, one transition per row
    # ─────────────────────────────────────────────────────────────────────
    def to_csv(self, path: str | PathLike) -> None:
        if self._dims is None:
            raise EmptyDatasetError("nothing to export")
        obs_dim, act_dim = self._dims
        header = (
            [f"s{i}" for i in range(obs_dim)] + [f"a{i}" for i in range(act_dim)] + ["r"]
            + [f"s_next{i}" for i in range(obs_dim)] + ["done", "first"]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t in self._items:
                writer.writerow(
                    [repr(float(x)) for x in t.s] + [repr(float(x)) for x in t.a] + [repr(t.r)]
                    + [repr(float(x)) for x in t.s_next] + [int(t.done), int(t.first)]
                )
        log.info("exported %d transitions to %s", len(self), path)

    @classmethod
    def from_csv(cls, path: str | PathLike, capacity: int | None = None,
                 seed: int | None = None) -> "Dataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            obs_dim = sum(1 for h in header if h.startswith("s") and not h.startswith("s_next"))
            act_dim = sum(1 for h in header if h.startswith("a"))
            data = cls(capacity, seed)
            for row in reader:
                vals = [float(x) for x in row]
                s = vals[:obs_dim]
                a = vals[obs_dim:obs_dim + act_dim]
                r = vals[obs_dim + act_dim]
                s_next = vals[obs_dim + act_dim + 1: 2 * obs_dim + act_dim + 1]
                done, first = vals[-2], vals[-1]
                data.push(Transition(s, a, r, s_next, bool(done), bool(first)))
        log.info("imported %d transitions from %s", len(data), path)
        return data
