"""Dynamics augmentation operators and the context sampling distribution.

Each operator rescales part of a transition by a per-dimension vector z,
leaving action, reward, and done untouched:

  NONE  identity
  RAD   state and next_state both multiplied by z
  RANS  next_state multiplied by z
  DAS   next_state replaced by state + z * (next_state - state)

RAD/RANS perturb observations; DAS perturbs the state *change*, which is
what actually varies when physical properties (mass, damping) change.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import ContextVector, Rng, Transition, ValidationError


class AugKind(str, enum.Enum):
    NONE = "none"
    RAD = "rad"
    RANS = "rans"
    DAS = "das"


@dataclass(frozen=True)
class AugRange:
    """Uniform sampling interval [a, b] for context components, 0 < a <= b."""

    a: float = 0.5
    b: float = 1.5

    def __post_init__(self):
        if not (0 < self.a <= self.b):
            raise ValidationError(f"require 0 < a <= b, got [{self.a}, {self.b}]")


def sample_z(rng_range: AugRange, s_dim: int, rng: Rng) -> ContextVector:
    """Draw z with independent Uniform[a, b] components."""
    return ContextVector(np.asarray(rng.uniform(rng_range.a, rng_range.b, s_dim)))


def apply(kind: AugKind, z: ContextVector, t: Transition) -> Transition:
    """Apply one augmentation operator to a single transition."""
    kind = AugKind(kind)
    zv = z.z
    if zv.shape != t.state.shape:
        raise ValidationError(f"context length {zv.shape} != state length {t.state.shape}")
    if kind is AugKind.NONE:
        return t
    if kind is AugKind.RAD:
        state, nxt = zv * t.state, zv * t.next_state
    elif kind is AugKind.RANS:
        state, nxt = t.state, zv * t.next_state
    else:  # DAS: s + z*(s'-s), written as a mix so z=1 is the exact identity
        state = t.state
        nxt = t.state * (1.0 - zv) + zv * t.next_state
    return Transition(state=state, action=t.action, reward=t.reward,
                      next_state=nxt, done=t.done)


def apply_batch(kind: AugKind, z: np.ndarray, states: np.ndarray,
                next_states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized form of :func:`apply` over row-aligned arrays.

    ``z`` has shape (batch, s_dim). Actions/rewards/dones are untouched by
    every operator, so only the state columns are taken and returned.
    """
    kind = AugKind(kind)
    if kind is AugKind.NONE:
        return states, next_states
    if kind is AugKind.RAD:
        return z * states, z * next_states
    if kind is AugKind.RANS:
        return states, z * next_states
    return states, states * (1.0 - z) + z * next_states
