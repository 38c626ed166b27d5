"""Offline training loop: model fitting, penalized model rollouts, SAC updates.

One call to :func:`train` runs the whole offline pipeline on a dataset:
fit the ensemble once, then alternate between short stochastic rollouts
inside the model (uncertainty-penalized rewards, stored in a replay buffer)
and SAC gradient steps on mixed real/model batches. Each drawn tuple is
independently re-augmented, and when the policy is context-conditioned the
sampled augmentation vector doubles as that tuple's context input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import model as wm
from . import sac
from .augment import AugKind, AugRange, apply_batch
from .core import Dataset, Rng, ValidationError, default_context
from .model import EnsembleModel


@dataclass
class TrainConfig:
    h: int = 5                      # model rollout horizon
    lam: float = 1.0                # uncertainty penalty coefficient
    b: int = 256                    # parallel rollout batch
    epochs: int = 100
    real_data_frac: float = 0.05    # share of each SAC batch from the real dataset
    aug_kind: AugKind = AugKind.NONE
    aug_range: AugRange = field(default_factory=AugRange)
    use_context: bool = False
    grad_steps: int = 10            # SAC updates per epoch
    sac_batch: int = 256
    gamma: float = 0.99
    tau: float = 0.005
    alpha: float = 0.2
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    policy_hidden: tuple[int, ...] = (64, 64)
    buffer_capacity: int = 200_000
    model_n: int = 5
    model_epochs: int = 50
    model_batch: int = 256
    model_lr: float = 1e-3
    model_hidden: tuple[int, ...] = (64, 64)

    def validate(self) -> None:
        if self.h < 1 or self.b < 1 or self.epochs < 0:
            raise ValidationError("require h >= 1, b >= 1, epochs >= 0")
        if not (0.0 <= self.real_data_frac <= 1.0):
            raise ValidationError("real_data_frac must lie in [0, 1]")
        if self.lam < 0:
            raise ValidationError("penalty coefficient must be non-negative")
        if self.buffer_capacity < 1 or self.grad_steps < 0:
            raise ValidationError("buffer capacity and grad_steps must be positive")


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions, stored columnar."""

    def __init__(self, capacity: int, s_dim: int, a_dim: int):
        if capacity < 1:
            raise ValidationError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, s_dim))
        self.actions = np.zeros((capacity, a_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, s_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.cursor = 0

    def __len__(self) -> int:
        return self.size

    def add_batch(self, s: np.ndarray, a: np.ndarray, r: np.ndarray,
                  s2: np.ndarray, done: np.ndarray) -> None:
        n = s.shape[0]
        if n > self.capacity:  # only the newest rows can survive FIFO overwrite
            s, a, r, s2, done = (x[-self.capacity:] for x in (s, a, r, s2, done))
            n = self.capacity
        pos = (self.cursor + np.arange(n)) % self.capacity
        self.states[pos] = s
        self.actions[pos] = a
        self.rewards[pos] = r
        self.next_states[pos] = s2
        self.dones[pos] = done
        self.cursor = int((self.cursor + n) % self.capacity)
        self.size = int(min(self.size + n, self.capacity))

    def sample(self, n: int, rng: Rng) -> tuple[np.ndarray, ...]:
        idx = np.asarray(rng.integers(0, self.size, n))
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.dones[idx])


class RolloutStats(NamedTuple):
    added: int
    mean_return: float   # penalized return per started rollout
    dropped: int         # branches terminated by non-finite model output


def _rollout(ens: EnsembleModel, actor: sac.Actor, d_env: Dataset,
             cfg: TrainConfig, buf: ReplayBuffer, rng: Rng) -> RolloutStats:
    starts = np.asarray(rng.integers(0, len(d_env), cfg.b))
    states = d_env.states[starts].copy()
    alive = np.ones(cfg.b, dtype=bool)
    ones_ctx = np.broadcast_to(default_context(ens.s_dim), (cfg.b, ens.s_dim))
    added = 0
    return_sum = 0.0
    for step in range(cfg.h):
        z = ones_ctx if actor.ctx_dim else None
        acts = sac.act(actor, states, z, mode="stochastic", rng=rng.split(2 * step))
        nxt, rew, u = wm.sample_step_batch(ens, states, acts, rng.split(2 * step + 1))
        pen = rew - cfg.lam * u
        ok = alive & np.isfinite(nxt).all(axis=1) & np.isfinite(pen)
        if ok.any():
            done = np.zeros(int(ok.sum()), dtype=bool)
            buf.add_batch(states[ok], acts[ok], pen[ok], nxt[ok], done)
            added += int(ok.sum())
            return_sum += float(pen[ok].sum())
        alive = ok
        states = np.where(ok[:, None], nxt, states)
    return RolloutStats(added=added, mean_return=return_sum / cfg.b,
                        dropped=int(cfg.b - alive.sum()))


def rollout_batch(ens: EnsembleModel, actor: sac.Actor, d_env: Dataset,
                  cfg: TrainConfig, buf: ReplayBuffer, rng: Rng) -> int:
    """Roll B starting states h steps through the model, penalize, store.

    Starting states are drawn uniformly from the real dataset. Actions use
    the all-ones context when the policy is context-conditioned (the same
    neutral context a fresh test episode starts from). Rollout branches
    that turn non-finite are dropped from that step onward. Returns the
    number of transitions appended.
    """
    cfg.validate()
    if len(d_env) == 0:
        raise ValidationError("cannot roll out from an empty dataset")
    return _rollout(ens, actor, d_env, cfg, buf, rng).added


def _mixed_batch(d_env: Dataset, buf: ReplayBuffer, cfg: TrainConfig, rng: Rng) -> dict:
    """One SAC batch: a real-data slice plus model-rollout data, every tuple
    freshly augmented (and context-labeled when requested)."""
    n_real = int(round(cfg.sac_batch * cfg.real_data_frac))
    if len(buf) == 0:
        n_real = cfg.sac_batch
    n_model = cfg.sac_batch - n_real

    cols = [np.zeros((cfg.sac_batch, d_env.s_dim)),
            np.zeros((cfg.sac_batch, d_env.a_dim)),
            np.zeros(cfg.sac_batch),
            np.zeros((cfg.sac_batch, d_env.s_dim)),
            np.zeros(cfg.sac_batch, dtype=bool)]
    if n_real:
        idx = np.asarray(rng.integers(0, len(d_env), n_real))
        real = (d_env.states[idx], d_env.actions[idx], d_env.rewards[idx],
                d_env.next_states[idx], d_env.dones[idx])
        for c, part in zip(cols, real):
            c[:n_real] = part
    if n_model:
        for c, part in zip(cols, buf.sample(n_model, rng)):
            c[n_real:] = part
    s, a, r, s2, done = cols

    batch = {"a": a, "r": r, "done": done.astype(np.float64)}
    if cfg.aug_kind is not AugKind.NONE:
        z = np.asarray(rng.uniform(cfg.aug_range.a, cfg.aug_range.b, s.shape))
        s, s2 = apply_batch(cfg.aug_kind, z, s, s2)
    else:
        z = np.ones_like(s)
    batch["s"], batch["s2"] = s, s2
    if cfg.use_context:
        batch["z"] = z
        batch["z2"] = z  # one augmentation per tuple covers both state inputs
    return batch


def train(d_env: Dataset, cfg: TrainConfig, rng: Rng,
          ens: EnsembleModel | None = None,
          epoch_callback=None) -> tuple[sac.Actor, sac.Critics, EnsembleModel, list[dict]]:
    """Full offline run: returns (actor, critics, ensemble, per-epoch metrics).

    Pass a pre-trained ``ens`` to skip the model-fitting stage (the trained
    ensemble is reusable across policy configurations on the same dataset).
    """
    cfg.validate()
    if len(d_env) == 0:
        raise ValidationError("offline dataset is empty")

    if ens is None:
        ens = wm.train_ensemble(d_env, n=cfg.model_n, epochs=cfg.model_epochs,
                                batch=cfg.model_batch, lr=cfg.model_lr,
                                rng=rng.split(0), hidden=cfg.model_hidden)
    ctx_dim = d_env.s_dim if cfg.use_context else 0
    actor = sac.make_actor(d_env.s_dim, d_env.a_dim, ctx_dim, rng.split(1),
                           hidden=cfg.policy_hidden, lr=cfg.actor_lr)
    critics = sac.make_critics(d_env.s_dim, d_env.a_dim, ctx_dim, rng.split(2),
                               hidden=cfg.policy_hidden, lr=cfg.critic_lr,
                               gamma=cfg.gamma, alpha=cfg.alpha)
    buf = ReplayBuffer(cfg.buffer_capacity, d_env.s_dim, d_env.a_dim)

    metrics: list[dict] = []
    for epoch in range(cfg.epochs):
        ep_rng = rng.split(1000 + epoch)
        stats = _rollout(ens, actor, d_env, cfg, buf, ep_rng.split(0))
        critic_losses, actor_losses = [], []
        for g in range(cfg.grad_steps):
            g_rng = ep_rng.split(1 + g)
            batch = _mixed_batch(d_env, buf, cfg, g_rng.split(0))
            critic_losses.append(sac.critic_update(critics, actor, batch,
                                                   g_rng.split(1)))
            actor_losses.append(sac.actor_update(actor, critics, batch,
                                                 g_rng.split(2)))
            sac.target_sync(critics, cfg.tau)
        row = {
            "epoch": epoch,
            "mean_model_return": stats.mean_return,
            "critic_loss": float(np.mean(critic_losses)) if critic_losses else float("nan"),
            "actor_loss": float(np.mean(actor_losses)) if actor_losses else float("nan"),
            "buffer_size": len(buf),
            "dropped_rollouts": stats.dropped,
        }
        metrics.append(row)
        if epoch_callback is not None:
            epoch_callback(epoch, actor, critics, ens, row)
    return actor, critics, ens, metrics
