"""Parametric continuous-control toy environments.

Three small second-order systems (mass-spring-damper, planar point mass,
damped pendulum) stepped with semi-implicit Euler. Dynamics variants are
described by :class:`DynamicsParams`: multiplicative mass and damping
factors, a per-actuator enable mask, and a per-dimension observation scale.
The same family serves as data-collection environment, model ground truth,
and modified test environment.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import Dataset, Rng, ValidationError

DT = 0.05
FORCE_GAIN = 1.0
BASE_MASS = 1.0
BASE_DAMPING = 0.1
SPRING_K = 0.5
GRAVITY = 2.0
GOAL = 1.0
CONTROLLER_GAIN = 0.8
DEFAULT_HORIZON = 200
RESET_BOX = 0.1


class EnvKind(str, enum.Enum):
    MASS_SPRING_DAMPER = "msd"
    POINT_MASS_2D = "pointmass"
    DAMPED_PENDULUM = "pendulum"


# state layout: positions first, then velocities, one velocity per position
_DIMS = {
    EnvKind.MASS_SPRING_DAMPER: (2, 1),
    EnvKind.POINT_MASS_2D: (4, 2),
    EnvKind.DAMPED_PENDULUM: (2, 1),
}


def env_dims(kind: EnvKind) -> tuple[int, int]:
    """(s_dim, a_dim) for an environment kind."""
    return _DIMS[EnvKind(kind)]


@dataclass(frozen=True)
class DynamicsParams:
    """Environment variant descriptor.

    ``actuator_mask`` disables actuators (analog of crippled joints);
    ``dim_scale`` rescales observation components (analog of resized body
    parts). ``None`` means the respective identity default.
    """

    mass_scale: float = 1.0
    damping_scale: float = 1.0
    actuator_mask: np.ndarray | None = None
    dim_scale: np.ndarray | None = None

    def __post_init__(self):
        if self.mass_scale <= 0 or self.damping_scale <= 0:
            raise ValidationError("mass_scale and damping_scale must be positive")
        if self.actuator_mask is not None:
            object.__setattr__(self, "actuator_mask",
                               np.asarray(self.actuator_mask, dtype=bool))
        if self.dim_scale is not None:
            ds = np.asarray(self.dim_scale, dtype=np.float64)
            if np.any(ds <= 0):
                raise ValidationError("dim_scale components must be positive")
            object.__setattr__(self, "dim_scale", ds)

    def mask_for(self, a_dim: int) -> np.ndarray:
        if self.actuator_mask is None:
            return np.ones(a_dim, dtype=bool)
        if self.actuator_mask.shape != (a_dim,):
            raise ValidationError(f"actuator_mask length != a_dim {a_dim}")
        return self.actuator_mask

    def scale_for(self, s_dim: int) -> np.ndarray:
        if self.dim_scale is None:
            return np.ones(s_dim)
        if self.dim_scale.shape != (s_dim,):
            raise ValidationError(f"dim_scale length != s_dim {s_dim}")
        return self.dim_scale


@dataclass(frozen=True)
class EnvState:
    observation: np.ndarray
    step_count: int = 0


def env_reset(kind: EnvKind, params: DynamicsParams, rng: Rng) -> EnvState:
    """Draw the initial observation uniformly from the per-component reset box."""
    kind = EnvKind(kind)
    s_dim, _ = env_dims(kind)
    internal = np.asarray(rng.uniform(-RESET_BOX, RESET_BOX, s_dim))
    obs = internal * params.scale_for(s_dim)
    return EnvState(observation=obs, step_count=0)


def _restoring(kind: EnvKind, pos: np.ndarray) -> np.ndarray:
    if kind is EnvKind.DAMPED_PENDULUM:
        return GRAVITY * np.sin(pos)
    return SPRING_K * pos


def env_step(kind: EnvKind, params: DynamicsParams, s: EnvState,
             action: np.ndarray, horizon: int = DEFAULT_HORIZON
             ) -> tuple[EnvState, float, bool]:
    """Deterministic semi-implicit Euler step (velocities updated first).

    Reward is computed on the unscaled internal next state so it never
    depends on ``dim_scale``; the control cost uses the masked action so
    disabled actuators are free.
    """
    kind = EnvKind(kind)
    s_dim, a_dim = env_dims(kind)
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (a_dim,):
        raise ValidationError(f"action shape {action.shape} != ({a_dim},)")
    if np.any(np.abs(action) > 1.0 + 1e-12):
        raise ValidationError("action component outside [-1, 1]")
    if s.step_count >= horizon:
        raise ValidationError("step() called on a finished episode")

    scale = params.scale_for(s_dim)
    internal = s.observation / scale
    n_pos = s_dim // 2
    pos, vel = internal[:n_pos], internal[n_pos:]

    a_eff = action * params.mask_for(a_dim)
    accel = (FORCE_GAIN * a_eff / (BASE_MASS * params.mass_scale)
             - BASE_DAMPING * params.damping_scale * vel
             - _restoring(kind, pos))
    new_vel = vel + DT * accel
    new_pos = pos + DT * new_vel

    reward = float(-np.sum((new_pos - GOAL) ** 2) - 0.01 * np.sum(a_eff ** 2))
    obs = np.concatenate([new_pos, new_vel]) * scale
    count = s.step_count + 1
    return EnvState(observation=obs, step_count=count), reward, count >= horizon


def controller_action(kind: EnvKind, obs: np.ndarray) -> np.ndarray:
    """Scripted proportional controller pushing each position toward the goal."""
    _, a_dim = env_dims(EnvKind(kind))
    pos = obs[:a_dim]
    return np.clip(CONTROLLER_GAIN * (GOAL - pos), -1.0, 1.0)


class ToyEnv:
    """Stateful convenience wrapper over the pure reset/step functions.

    One instance per rollout; ``step`` takes only the action and tracks
    the episode internally.
    """

    def __init__(self, kind: EnvKind, params: DynamicsParams | None = None,
                 horizon: int = DEFAULT_HORIZON):
        self.kind = EnvKind(kind)
        self.params = params or DynamicsParams()
        self.horizon = horizon
        self.s_dim, self.a_dim = env_dims(self.kind)
        self._state: EnvState | None = None

    def reset(self, rng: Rng) -> np.ndarray:
        self._state = env_reset(self.kind, self.params, rng)
        return self._state.observation

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
        if self._state is None:
            raise ValidationError("step() before reset()")
        self._state, r, done = env_step(self.kind, self.params, self._state,
                                        action, self.horizon)
        return self._state.observation, r, done


class SwitchingEnv(ToyEnv):
    """ToyEnv whose dynamics parameters change mid-episode at ``t_switch``."""

    def __init__(self, kind: EnvKind, params_before: DynamicsParams,
                 params_after: DynamicsParams, t_switch: int,
                 horizon: int = DEFAULT_HORIZON):
        super().__init__(kind, params_before, horizon)
        if not 0 < t_switch < horizon:
            raise ValidationError("t_switch must fall strictly inside the episode")
        self.params_before = params_before
        self.params_after = params_after
        self.t_switch = t_switch

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
        assert self._state is not None, "step() before reset()"
        self.params = (self.params_before if self._state.step_count < self.t_switch
                       else self.params_after)
        return super().step(action)


def generate_offline_dataset(kind: EnvKind, params: DynamicsParams,
                             policy_mix: dict[str, float], n_transitions: int,
                             rng: Rng, horizon: int = DEFAULT_HORIZON) -> Dataset:
    """Collect transitions with a mix of random and scripted-controller episodes.

    ``policy_mix`` holds ``random_frac`` and ``mediocre_frac`` (non-negative,
    summing to 1). Each episode commits to one behavior; the final episode is
    truncated so the dataset holds exactly ``n_transitions`` records.
    """
    rf = float(policy_mix.get("random_frac", 0.0))
    mf = float(policy_mix.get("mediocre_frac", 0.0))
    if rf < 0 or mf < 0 or abs(rf + mf - 1.0) > 1e-9:
        raise ValidationError(f"policy mix fractions must be >= 0 and sum to 1, got "
                              f"random={rf} mediocre={mf}")
    if n_transitions <= 0:
        raise ValidationError("n_transitions must be positive")

    kind = EnvKind(kind)
    s_dim, a_dim = env_dims(kind)
    states = np.zeros((n_transitions, s_dim))
    actions = np.zeros((n_transitions, a_dim))
    rewards = np.zeros(n_transitions)
    next_states = np.zeros((n_transitions, s_dim))
    dones = np.zeros(n_transitions, dtype=bool)

    i = 0
    while i < n_transitions:
        use_controller = rng.uniform() < mf
        st = env_reset(kind, params, rng)
        done = False
        while not done and i < n_transitions:
            if use_controller:
                a = controller_action(kind, st.observation)
            else:
                a = np.asarray(rng.uniform(-1.0, 1.0, a_dim))
            nxt, r, done = env_step(kind, params, st, a, horizon)
            states[i] = st.observation
            actions[i] = a
            rewards[i] = r
            next_states[i] = nxt.observation
            dones[i] = done
            st = nxt
            i += 1
    return Dataset(s_dim=s_dim, a_dim=a_dim, states=states, actions=actions,
                   rewards=rewards, next_states=next_states, dones=dones)
