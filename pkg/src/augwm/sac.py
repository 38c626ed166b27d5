"""Context-conditioned soft actor-critic on hand-rolled MLPs.

Actor is a squashed diagonal Gaussian over (state, context) inputs; twin
critics with polyak-averaged targets score (state, context, action). The
context input is optional (``ctx_dim`` 0 or s_dim): the no-context, no-
augmentation configuration is the pessimistic-baseline pipeline, and the
context-conditioned one is what the test-time adapter drives.

Gradients are derived by hand through the reparameterized sample and the
tanh change-of-variables term; ``actor_loss_and_grads`` and
``critic_loss_and_grads`` are pure so tests can check them against finite
differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .core import Rng, ValidationError

PRE_TANH_LIMIT = 10.0
_TANH_EPS = 1e-6
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class Actor:
    net: nn.Mlp  # (s_dim + ctx_dim) -> 2 * a_dim
    s_dim: int
    a_dim: int
    ctx_dim: int
    opt: nn.AdamState | None = None

    def __post_init__(self):
        if self.ctx_dim not in (0, self.s_dim):
            raise ValidationError("ctx_dim must be 0 or s_dim")
        if self.net.in_dim != self.s_dim + self.ctx_dim or self.net.out_dim != 2 * self.a_dim:
            raise ValidationError("actor network dimensions do not match")


@dataclass
class Critics:
    q1: nn.Mlp
    q2: nn.Mlp
    q1_target: nn.Mlp
    q2_target: nn.Mlp
    gamma: float = 0.99
    alpha: float = 0.2
    q1_opt: nn.AdamState | None = None
    q2_opt: nn.AdamState | None = None

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise ValidationError("gamma must lie in (0, 1)")
        if self.alpha < 0:
            raise ValidationError("alpha must be non-negative")  # 0 = no entropy bonus


def make_actor(s_dim: int, a_dim: int, ctx_dim: int, rng: Rng,
               hidden: tuple[int, ...] = (64, 64), lr: float = 3e-4,
               activation: str = "relu") -> Actor:
    net = nn.init_mlp((s_dim + ctx_dim, *hidden, 2 * a_dim), activation, rng)
    return Actor(net=net, s_dim=s_dim, a_dim=a_dim, ctx_dim=ctx_dim,
                 opt=nn.AdamState.for_params(net.params(), lr=lr))


def make_critics(s_dim: int, a_dim: int, ctx_dim: int, rng: Rng,
                 hidden: tuple[int, ...] = (64, 64), lr: float = 3e-4,
                 gamma: float = 0.99, alpha: float = 0.2,
                 activation: str = "relu") -> Critics:
    sizes = (s_dim + ctx_dim + a_dim, *hidden, 1)
    q1 = nn.init_mlp(sizes, activation, rng.split(0))
    q2 = nn.init_mlp(sizes, activation, rng.split(1))
    return Critics(q1=q1, q2=q2, q1_target=q1.copy(), q2_target=q2.copy(),
                   gamma=gamma, alpha=alpha,
                   q1_opt=nn.AdamState.for_params(q1.params(), lr=lr),
                   q2_opt=nn.AdamState.for_params(q2.params(), lr=lr))


def _with_context(s: np.ndarray, z: np.ndarray | None, ctx_dim: int) -> np.ndarray:
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    if ctx_dim == 0:
        if z is not None:
            raise ValidationError("actor has no context input but a context was given")
        return s
    if z is None:
        raise ValidationError("context-conditioned actor called without a context")
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[0] == 1 and s.shape[0] > 1:
        z = np.broadcast_to(z, (s.shape[0], z.shape[1]))
    return np.concatenate([s, z], axis=1)


def act(actor: Actor, s: np.ndarray, z: np.ndarray | None = None,
        mode: str = "stochastic", rng: Rng | None = None) -> np.ndarray:
    """Sample (or take the mode of) the squashed-Gaussian policy.

    ``s`` may be a single state or a batch; the result matches. Components
    always lie strictly inside (-1, 1).
    """
    single = np.asarray(s).ndim == 1
    x = _with_context(s, z, actor.ctx_dim)
    raw, _ = nn.forward(actor.net, x)
    mu = raw[:, :actor.a_dim]
    if mode == "deterministic":
        u = mu
    elif mode == "stochastic":
        if rng is None:
            raise ValidationError("stochastic mode needs an rng")
        log_std = np.clip(raw[:, actor.a_dim:], nn.LOG_STD_MIN, nn.LOG_STD_MAX)
        u = mu + np.exp(log_std) * np.asarray(rng.normal(mu.shape))
    else:
        raise ValidationError(f"unknown act mode: {mode}")
    a = np.tanh(np.clip(u, -PRE_TANH_LIMIT, PRE_TANH_LIMIT))
    return a[0] if single else a


def sample_with_logp(actor: Actor, s: np.ndarray, z: np.ndarray | None,
                     rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Batched reparameterized sample plus its tanh-corrected log-density."""
    x = _with_context(s, z, actor.ctx_dim)
    raw, _ = nn.forward(actor.net, x)
    mu = raw[:, :actor.a_dim]
    log_std = np.clip(raw[:, actor.a_dim:], nn.LOG_STD_MIN, nn.LOG_STD_MAX)
    sigma = np.exp(log_std)
    u = mu + sigma * np.asarray(rng.normal(mu.shape))
    u_c = np.clip(u, -PRE_TANH_LIMIT, PRE_TANH_LIMIT)
    a = np.tanh(u_c)
    w = (u_c - mu) / sigma
    logp = np.sum(-0.5 * w * w - log_std - _HALF_LOG_2PI
                  - np.log(1.0 - a * a + _TANH_EPS), axis=1)
    return a, logp


# ---------------------------------------------------------------------------
# Critic update
# ---------------------------------------------------------------------------


def bellman_targets(c: Critics, actor: Actor, r: np.ndarray, s2: np.ndarray,
                    z2: np.ndarray | None, done: np.ndarray, rng: Rng) -> np.ndarray:
    """Soft Bellman targets y = r + gamma * (1-done) * (min Q_target - alpha*logp)."""
    a2, logp2 = sample_with_logp(actor, s2, z2, rng)
    x2 = np.concatenate([_with_context(s2, z2, actor.ctx_dim), a2], axis=1)
    q1t, _ = nn.forward(c.q1_target, x2)
    q2t, _ = nn.forward(c.q2_target, x2)
    qmin = np.minimum(q1t[:, 0], q2t[:, 0])
    mask = 1.0 - np.asarray(done, dtype=np.float64)
    return r + c.gamma * mask * (qmin - c.alpha * logp2)


def critic_loss_and_grads(c: Critics, x: np.ndarray, y: np.ndarray
                          ) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Squared Bellman residuals against fixed targets ``y``.

    Returns the residual averaged over the two critics plus each critic's
    gradient of its *own* mean squared residual (the quantity its Adam
    step descends).
    """
    b = x.shape[0]
    loss = 0.0
    grads = []
    for net in (c.q1, c.q2):
        pred, cache = nn.forward(net, x)
        err = pred[:, 0] - y
        loss += float(np.mean(err * err))
        g, _ = nn.backward(net, cache, (2.0 * err / b)[:, None])
        grads.append(g)
    return loss / 2.0, grads[0], grads[1]


def critic_update(c: Critics, actor: Actor, batch: dict, rng: Rng,
                  lr: float | None = None) -> float:
    """One gradient step on both critics toward the soft Bellman targets.

    ``batch`` holds arrays s, a, r, s2, done and optional contexts z, z2.
    Returns the mean squared residual before the step.
    """
    y = bellman_targets(c, actor, batch["r"], batch["s2"], batch.get("z2"),
                        batch["done"], rng)
    x = np.concatenate(
        [_with_context(batch["s"], batch.get("z"), actor.ctx_dim), batch["a"]],
        axis=1)
    loss, g1, g2 = critic_loss_and_grads(c, x, y)
    if lr is not None:
        c.q1_opt.lr = c.q2_opt.lr = lr
    nn.adam_step(c.q1.params(), g1, c.q1_opt)
    nn.adam_step(c.q2.params(), g2, c.q2_opt)
    return loss


# ---------------------------------------------------------------------------
# Actor update
# ---------------------------------------------------------------------------


def actor_loss_and_grads(actor: Actor, c: Critics, s: np.ndarray,
                         z: np.ndarray | None, eps: np.ndarray
                         ) -> tuple[float, list[np.ndarray]]:
    """Loss mean(alpha*logp - min Q) and exact actor-parameter gradients.

    ``eps`` is the fixed standard-normal draw for the reparameterized
    sample, which makes the whole map a deterministic function of the
    actor parameters (finite-difference checkable).
    """
    x = _with_context(s, z, actor.ctx_dim)
    b = x.shape[0]
    raw, cache = nn.forward(actor.net, x)
    a_dim = actor.a_dim
    mu = raw[:, :a_dim]
    ls_raw = raw[:, a_dim:]
    ls = np.clip(ls_raw, nn.LOG_STD_MIN, nn.LOG_STD_MAX)
    sigma = np.exp(ls)
    u = mu + sigma * eps
    inside = (np.abs(u) < PRE_TANH_LIMIT).astype(np.float64)
    u_c = np.clip(u, -PRE_TANH_LIMIT, PRE_TANH_LIMIT)
    a = np.tanh(u_c)
    w = (u_c - mu) / sigma
    one_m_a2 = 1.0 - a * a
    logp = np.sum(-0.5 * w * w - ls - _HALF_LOG_2PI
                  - np.log(one_m_a2 + _TANH_EPS), axis=1)

    xq = np.concatenate([x, a], axis=1)
    q1v, cache1 = nn.forward(c.q1, xq)
    q2v, cache2 = nn.forward(c.q2, xq)
    take1 = (q1v[:, 0] <= q2v[:, 0]).astype(np.float64)
    qmin = np.minimum(q1v[:, 0], q2v[:, 0])
    loss = float(np.mean(c.alpha * logp - qmin))

    # dLoss/da: through -min(Q) via the achieving critic's input gradient,
    # and through the tanh correction term of logp.
    _, dx1 = nn.backward(c.q1, cache1, (-take1 / b)[:, None])
    _, dx2 = nn.backward(c.q2, cache2, (-(1.0 - take1) / b)[:, None])
    d_a = (dx1 + dx2)[:, -a_dim:]
    d_a = d_a + (c.alpha / b) * (2.0 * a / (one_m_a2 + _TANH_EPS))

    # chain through a = tanh(clip(mu + sigma*eps)) and the explicit w, ls terms
    d_uc = d_a * one_m_a2
    d_mu = d_uc * inside + (c.alpha / b) * (-w * (inside - 1.0) / sigma)
    d_ls = (d_uc * inside * sigma * eps
            + (c.alpha / b) * (-w * (inside * eps - w) - 1.0))
    d_ls_raw = d_ls * ((ls_raw > nn.LOG_STD_MIN) & (ls_raw < nn.LOG_STD_MAX))
    grads, _ = nn.backward(actor.net, cache, np.concatenate([d_mu, d_ls_raw], axis=1))
    return loss, grads


def actor_update(actor: Actor, c: Critics, batch: dict, rng: Rng,
                 lr: float | None = None) -> float:
    """Ascend min(Q) - alpha*logp via the reparameterization path."""
    s = batch["s"]
    eps = np.asarray(rng.normal((np.atleast_2d(s).shape[0], actor.a_dim)))
    loss, grads = actor_loss_and_grads(actor, c, s, batch.get("z"), eps)
    if lr is not None:
        actor.opt.lr = lr
    nn.adam_step(actor.net.params(), grads, actor.opt)
    return loss


def target_sync(c: Critics, tau: float) -> Critics:
    """Polyak-average the online critics into the targets."""
    if not (0.0 < tau <= 1.0):
        raise ValidationError("tau must lie in (0, 1]")
    for online, target in ((c.q1, c.q1_target), (c.q2, c.q2_target)):
        for p_o, p_t in zip(online.params(), target.params()):
            p_t *= 1.0 - tau
            p_t += tau * p_o
    return c


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def policy_to_dict(actor: Actor, critics: Critics) -> dict:
    return {
        "s_dim": actor.s_dim,
        "a_dim": actor.a_dim,
        "ctx_dim": actor.ctx_dim,
        "gamma": critics.gamma,
        "alpha": critics.alpha,
        "actor": nn.mlp_to_dict(actor.net),
        "q1": nn.mlp_to_dict(critics.q1),
        "q2": nn.mlp_to_dict(critics.q2),
        "q1_target": nn.mlp_to_dict(critics.q1_target),
        "q2_target": nn.mlp_to_dict(critics.q2_target),
    }


def policy_from_dict(d: dict) -> tuple[Actor, Critics]:
    actor_net = nn.mlp_from_dict(d["actor"])
    actor = Actor(net=actor_net, s_dim=int(d["s_dim"]), a_dim=int(d["a_dim"]),
                  ctx_dim=int(d["ctx_dim"]),
                  opt=nn.AdamState.for_params(actor_net.params()))
    q1 = nn.mlp_from_dict(d["q1"])
    q2 = nn.mlp_from_dict(d["q2"])
    critics = Critics(q1=q1, q2=q2,
                      q1_target=nn.mlp_from_dict(d["q1_target"]),
                      q2_target=nn.mlp_from_dict(d["q2_target"]),
                      gamma=float(d["gamma"]), alpha=float(d["alpha"]),
                      q1_opt=nn.AdamState.for_params(q1.params()),
                      q2_opt=nn.AdamState.for_params(q2.params()))
    return actor, critics


def save_policy(actor: Actor, critics: Critics, path: str | Path) -> None:
    Path(path).write_text(json.dumps(policy_to_dict(actor, critics)))


def load_policy(path: str | Path) -> tuple[Actor, Critics]:
    return policy_from_dict(json.loads(Path(path).read_text()))
