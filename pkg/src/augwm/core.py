"""Shared domain types: transitions, datasets, normalization stats, and RNG streams.

Everything downstream (environments, models, policies, evaluation) is built on
the containers defined here. Datasets are stored columnar (numpy arrays) for
fast batch access but expose a per-record ``Transition`` view.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

STD_FLOOR = 1e-8
_MASK64 = (1 << 64) - 1

DATASET_FORMAT_VERSION = 1


class ValidationError(ValueError):
    """A record or container violates one of its invariants."""


class DatasetIOError(IOError):
    """Reading or writing a dataset file failed."""


# ---------------------------------------------------------------------------
# RNG
# ---------------------------------------------------------------------------


class Rng:
    """Counter-based random stream, identified by a (seed, stream) pair.

    Wraps numpy's Philox generator keyed with the 128-bit value
    ``(stream << 64) | seed``, so two instances built from the same pair
    always produce the same draw sequence. Instances are single-owner;
    parallel work derives disjoint child streams via :meth:`split`.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = (self.stream << 64) | self.seed
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def split(self, child: int) -> "Rng":
        """Derive an independent stream; splitmix-style mix keeps ids distinct."""
        mixed = (self.stream * 0x9E3779B97F4A7C15 + int(child) + 1) & _MASK64
        return Rng(self.seed, mixed)

    def uniform(self, lo: float = 0.0, hi: float = 1.0, size=None) -> np.ndarray | float:
        return self._gen.uniform(lo, hi, size)

    def normal(self, size=None) -> np.ndarray | float:
        return self._gen.standard_normal(size)

    def integers(self, lo: int, hi: int, size=None) -> np.ndarray | int:
        return self._gen.integers(lo, hi, size)

    def shuffle(self, x: np.ndarray) -> None:
        self._gen.shuffle(x)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"


# ---------------------------------------------------------------------------
# Transitions and datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Transition:
    """One (s, a, r, s', done) record; the atom of datasets and replay buffers."""

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool

    def validate(self) -> None:
        if self.state.shape != self.next_state.shape or self.state.ndim != 1:
            raise ValidationError(
                f"state {self.state.shape} / next_state {self.next_state.shape} mismatch"
            )
        if self.state.size == 0:
            raise ValidationError("empty state vector")
        for name, arr in (("state", self.state), ("action", self.action),
                          ("next_state", self.next_state)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite values in {name}")
        if not np.isfinite(self.reward):
            raise ValidationError("non-finite reward")
        if np.any(np.abs(self.action) > 1.0 + 1e-12):
            raise ValidationError("action component outside [-1, 1]")


@dataclass
class Dataset:
    """Columnar transition store with fixed state/action dimensions.

    Arrays share a leading length ``n``; ``transitions`` materializes the
    row-wise view. Immutable by convention once constructed.
    """

    s_dim: int
    a_dim: int
    states: np.ndarray = field(default=None)  # (n, s_dim)
    actions: np.ndarray = field(default=None)  # (n, a_dim)
    rewards: np.ndarray = field(default=None)  # (n,)
    next_states: np.ndarray = field(default=None)  # (n, s_dim)
    dones: np.ndarray = field(default=None)  # (n,) bool

    def __post_init__(self):
        if self.s_dim <= 0 or self.a_dim <= 0:
            raise ValidationError("s_dim and a_dim must be positive")
        if self.states is None:
            self.states = np.zeros((0, self.s_dim))
            self.actions = np.zeros((0, self.a_dim))
            self.rewards = np.zeros(0)
            self.next_states = np.zeros((0, self.s_dim))
            self.dones = np.zeros(0, dtype=bool)
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.next_states = np.asarray(self.next_states, dtype=np.float64)
        self.dones = np.asarray(self.dones, dtype=bool)
        self.validate()

    def validate(self) -> None:
        n = len(self)
        if self.states.shape != (n, self.s_dim) or self.next_states.shape != (n, self.s_dim):
            raise ValidationError("state array shape does not match s_dim")
        if self.actions.shape != (n, self.a_dim):
            raise ValidationError("action array shape does not match a_dim")
        if self.rewards.shape != (n,) or self.dones.shape != (n,):
            raise ValidationError("reward/done array shape mismatch")
        for i in np.flatnonzero(~np.isfinite(self.states).all(axis=1)
                                | ~np.isfinite(self.actions).all(axis=1)
                                | ~np.isfinite(self.next_states).all(axis=1)
                                | ~np.isfinite(self.rewards)):
            raise ValidationError(f"non-finite values in record {i}")
        bad = np.flatnonzero(np.abs(self.actions).max(axis=1) > 1.0 + 1e-12)
        if bad.size:
            raise ValidationError(f"action outside [-1, 1] in record {bad[0]}")

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, i: int) -> Transition:
        return Transition(
            state=self.states[i].copy(),
            action=self.actions[i].copy(),
            reward=float(self.rewards[i]),
            next_state=self.next_states[i].copy(),
            done=bool(self.dones[i]),
        )

    @property
    def transitions(self) -> Iterator[Transition]:
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_transitions(cls, ts: Sequence[Transition], s_dim: int, a_dim: int) -> "Dataset":
        for i, t in enumerate(ts):
            try:
                t.validate()
            except ValidationError as e:
                raise ValidationError(f"record {i}: {e}") from e
            if t.state.shape != (s_dim,) or t.action.shape != (a_dim,):
                raise ValidationError(f"record {i}: dimension mismatch")
        if ts:
            return cls(
                s_dim=s_dim,
                a_dim=a_dim,
                states=np.stack([t.state for t in ts]),
                actions=np.stack([t.action for t in ts]),
                rewards=np.array([t.reward for t in ts]),
                next_states=np.stack([t.next_state for t in ts]),
                dones=np.array([t.done for t in ts], dtype=bool),
            )
        return cls(s_dim=s_dim, a_dim=a_dim)


# ---------------------------------------------------------------------------
# Dataset file I/O (JSON lines: header object, then one object per record)
# ---------------------------------------------------------------------------


def save_dataset(d: Dataset, path: str | Path) -> None:
    """Write a dataset as JSON lines; round-trips bit-exactly via load_dataset."""
    d.validate()
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as f:
            header = {"s_dim": d.s_dim, "a_dim": d.a_dim, "version": DATASET_FORMAT_VERSION}
            f.write(json.dumps(header) + "\n")
            for i in range(len(d)):
                rec = {
                    "s": d.states[i].tolist(),
                    "a": d.actions[i].tolist(),
                    "r": float(d.rewards[i]),
                    "s2": d.next_states[i].tolist(),
                    "d": bool(d.dones[i]),
                }
                f.write(json.dumps(rec) + "\n")
    except OSError as e:
        raise DatasetIOError(f"cannot write dataset to {path}: {e}") from e


def load_dataset(path: str | Path) -> Dataset:
    """Parse a JSON-lines dataset file; errors carry the offending line number."""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as e:
        raise DatasetIOError(f"cannot read dataset from {path}: {e}") from e
    if not lines:
        raise DatasetIOError(f"{path}: empty file, missing header")
    try:
        header = json.loads(lines[0])
        s_dim, a_dim = int(header["s_dim"]), int(header["a_dim"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DatasetIOError(f"{path}:1: bad header: {e}") from e

    n = len(lines) - 1
    states = np.zeros((n, s_dim))
    actions = np.zeros((n, a_dim))
    rewards = np.zeros(n)
    next_states = np.zeros((n, s_dim))
    dones = np.zeros(n, dtype=bool)
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        try:
            rec = json.loads(line)
            states[i] = rec["s"]
            actions[i] = rec["a"]
            rewards[i] = rec["r"]
            next_states[i] = rec["s2"]
            dones[i] = rec["d"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DatasetIOError(f"{path}:{lineno}: malformed record: {e}") from e
        if not (np.all(np.isfinite(states[i])) and np.all(np.isfinite(actions[i]))
                and np.isfinite(rewards[i]) and np.all(np.isfinite(next_states[i]))):
            raise ValidationError(f"{path}:{lineno}: non-finite value in record")
    return Dataset(s_dim=s_dim, a_dim=a_dim, states=states, actions=actions,
                   rewards=rewards, next_states=next_states, dones=dones)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormStats:
    """Per-component mean/std over concatenated (state, action) inputs.

    Population std, floored at STD_FLOOR so constant dimensions stay usable
    as whitening divisors.
    """

    mean: np.ndarray
    std: np.ndarray

    def whiten(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


def compute_norm_stats(d: Dataset) -> NormStats:
    if len(d) == 0:
        raise ValidationError("cannot compute normalization stats on an empty dataset")
    inputs = np.concatenate([d.states, d.actions], axis=1)
    mean = inputs.mean(axis=0)
    std = np.maximum(inputs.std(axis=0), STD_FLOOR)
    return NormStats(mean=mean, std=std)


# ---------------------------------------------------------------------------
# Context vectors
# ---------------------------------------------------------------------------


def default_context(s_dim: int) -> np.ndarray:
    """The neutral context: all-ones, meaning 'unmodified dynamics'."""
    return np.ones(s_dim)


@dataclass(frozen=True)
class ContextVector:
    """Per-timestep dynamics context z, one strictly positive entry per state dim."""

    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        object.__setattr__(self, "z", z)
        if z.ndim != 1 or z.size == 0:
            raise ValidationError("context must be a non-empty vector")
        if not np.all(np.isfinite(z)) or np.any(z <= 0):
            raise ValidationError("context components must be finite and positive")

    @classmethod
    def ones(cls, s_dim: int) -> "ContextVector":
        return cls(default_context(s_dim))
