"""Zero-shot test-time adaptation: infer the dynamics context during one episode.

While a trained policy runs in an unseen environment, an online linear model
is refit each step on the (state, state-change) pairs observed so far. The
context handed to the policy is the component-wise ratio between the linear
model's predicted state change and the world model's predicted state change,
floored against tiny denominators, clipped to a trusted band, and optionally
smoothed. No reward ever reaches the adapter; rewards are only accumulated
for reporting.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import sac
from .core import Rng, ValidationError, default_context
from .model import EnsembleModel, mean_delta


@dataclass
class LinearDynModel:
    """Ridge-regressed map from state to expected state change."""

    weight: np.ndarray | None = None  # (s_dim, s_dim)
    bias: np.ndarray | None = None    # (s_dim,)
    lam_reg: float = 0.0
    fitted: bool = False

    def predict(self, s: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise ValidationError("linear model is not fitted")
        return self.weight @ np.asarray(s, dtype=np.float64) + self.bias


@dataclass
class AdaptConfig:
    k: int = 50                 # warmup steps before the learned context is used
    clip_lo: float = 0.93
    clip_hi: float = 1.07
    delta_floor: float = 1e-3   # minimum |predicted delta| for the ratio division
    ema: float = 0.0            # 0 disables smoothing
    window: int = 100           # sliding window over (s, delta) pairs
    ridge: float = 1e-6

    def __post_init__(self):
        if not (self.clip_lo <= 1.0 <= self.clip_hi):
            raise ValidationError("clip bounds must bracket 1")
        if self.k < 1:
            raise ValidationError("warmup k must be >= 1")
        if not (0.0 <= self.ema < 1.0):
            raise ValidationError("ema must lie in [0, 1)")
        if self.window < 2 or self.delta_floor <= 0 or self.ridge < 0:
            raise ValidationError("bad window/delta_floor/ridge")


def fit_linear(data, lam_reg: float = 0.0) -> LinearDynModel:
    """Closed-form ridge regression of deltas on (state, 1).

    ``data`` is a sequence of (s, delta) pairs. The solution minimizes
    mean squared error plus ``lam_reg * ||W||^2`` per output dimension
    (bias unpenalized). Fewer than 2 pairs yields an unfitted model.
    """
    pairs = list(data)
    if len(pairs) < 2:
        return LinearDynModel(lam_reg=lam_reg, fitted=False)
    states = np.stack([np.asarray(p[0], dtype=np.float64) for p in pairs])
    deltas = np.stack([np.asarray(p[1], dtype=np.float64) for p in pairs])
    n, s_dim = states.shape
    x = np.concatenate([states, np.ones((n, 1))], axis=1)
    a = x.T @ x / n
    a[np.arange(s_dim), np.arange(s_dim)] += lam_reg
    b = x.T @ deltas / n
    try:
        beta = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        beta = np.linalg.lstsq(a, b, rcond=None)[0]  # degenerate window
    return LinearDynModel(weight=beta[:s_dim].T, bias=beta[s_dim],
                          lam_reg=lam_reg, fitted=True)


def r_squared(m: LinearDynModel, data) -> float:
    """Coefficient of determination averaged over output dimensions.

    Dimensions whose observed deltas have zero variance are excluded.
    """
    if not m.fitted:
        raise ValidationError("linear model is not fitted")
    pairs = list(data)
    if len(pairs) < 2:
        raise ValidationError("need at least 2 pairs")
    states = np.stack([np.asarray(p[0], dtype=np.float64) for p in pairs])
    deltas = np.stack([np.asarray(p[1], dtype=np.float64) for p in pairs])
    pred = states @ m.weight.T + m.bias
    ss_res = np.sum((deltas - pred) ** 2, axis=0)
    ss_tot = np.sum((deltas - deltas.mean(axis=0)) ** 2, axis=0)
    keep = ss_tot > 0
    if not keep.any():
        raise ValidationError("all output dimensions have zero variance")
    return float(np.mean(1.0 - ss_res[keep] / ss_tot[keep]))


def estimate_context(delta_pred: np.ndarray, delta_hat: np.ndarray,
                     cfg: AdaptConfig, prev: np.ndarray) -> np.ndarray:
    """Component-wise ratio delta_pred / delta_hat with guard rails.

    Components whose reference delta is below the floor inherit the
    previous context; the result is clipped to [clip_lo, clip_hi] and
    EMA-blended with the previous context when smoothing is on.
    """
    delta_pred = np.asarray(delta_pred, dtype=np.float64)
    delta_hat = np.asarray(delta_hat, dtype=np.float64)
    prev = np.asarray(prev, dtype=np.float64)
    if delta_pred.shape != delta_hat.shape or delta_pred.shape != prev.shape:
        raise ValidationError("context estimate shape mismatch")
    safe = np.abs(delta_hat) >= cfg.delta_floor
    z = np.where(safe, delta_pred / np.where(safe, delta_hat, 1.0), prev)
    z = np.clip(z, cfg.clip_lo, cfg.clip_hi)
    if cfg.ema > 0.0:
        z = cfg.ema * prev + (1.0 - cfg.ema) * z
    return z


@dataclass
class RolloutLog:
    """Per-step record of one adaptive rollout."""

    mode: str
    t: np.ndarray             # (T,)
    reward: np.ndarray        # (T,)
    context: np.ndarray       # (T, s_dim), context used when acting at t
    r2: np.ndarray            # (T,), NaN until the linear model is fitted
    oracle_ratio: np.ndarray  # (T, s_dim), clipped true-vs-model delta ratio

    def csv_rows(self) -> list[list]:
        rows = []
        for i in range(self.t.size):
            rows.append([int(self.t[i]), float(self.reward[i]),
                         *map(float, self.context[i]), float(self.r2[i]), self.mode])
        return rows


def _select_action(actor, obs: np.ndarray, z: np.ndarray | None,
                   deterministic: bool, rng: Rng) -> np.ndarray:
    if isinstance(actor, sac.Actor):
        mode = "deterministic" if deterministic else "stochastic"
        return sac.act(actor, obs, z if actor.ctx_dim else None, mode=mode, rng=rng)
    return np.asarray(actor(obs, z))  # scripted policies take (obs, context)


def adapt_rollout(actor, model: EnsembleModel | None, env, H: int,
                  cfg: AdaptConfig, mode: str, rng: Rng,
                  deterministic: bool = True) -> tuple[float, RolloutLog]:
    """Run one episode with per-step context inference.

    Modes: ``default`` keeps the all-ones context throughout; ``learned``
    infers it from the online linear model after ``cfg.k`` warmup steps;
    ``oracle`` uses the privileged observed-delta ratio (retrospective,
    applied from the following step). ``env`` needs ``reset(rng)`` and
    ``step(action) -> (obs, reward, done)``.

    Returns the episode return and the per-step log. Rewards are never fed
    back into the adaptation machinery.
    """
    if mode not in ("default", "learned", "oracle"):
        raise ValidationError(f"unknown rollout mode: {mode}")
    if H < 1:
        raise ValidationError("horizon must be >= 1")
    ctx_dim = getattr(actor, "ctx_dim", None)
    if ctx_dim == 0 and mode != "default":
        raise ValidationError("a context-free policy only supports default mode")
    if model is None and mode != "default":
        raise ValidationError(f"{mode} mode needs a world model")

    obs = np.asarray(env.reset(rng.split(0)), dtype=np.float64)
    s_dim = obs.shape[0]
    zhat = default_context(s_dim)
    oracle_prev = default_context(s_dim)
    pairs: deque = deque(maxlen=cfg.window)
    lin = LinearDynModel(fitted=False)

    t_log, r_log, ctx_log, r2_log, oracle_log = [], [], [], [], []
    total = 0.0
    act_rng = rng.split(1)
    for t in range(H):
        ctx_log.append(zhat.copy())
        a = _select_action(actor, obs, zhat, deterministic, act_rng)
        obs2, reward, done = env.step(a)
        obs2 = np.asarray(obs2, dtype=np.float64)
        total += float(reward)
        delta = obs2 - obs

        pairs.append((obs.copy(), delta))
        lin = fit_linear(pairs, cfg.ridge)
        try:
            r2 = r_squared(lin, pairs) if lin.fitted else float("nan")
        except ValidationError:
            r2 = float("nan")

        if model is not None:
            oracle_prev = estimate_context(
                delta, mean_delta(model, obs, a), cfg, oracle_prev)
            oracle_log.append(oracle_prev.copy())
        else:
            oracle_log.append(np.full(s_dim, np.nan))

        if mode == "learned" and t + 1 >= cfg.k and lin.fitted:
            a_cand = _select_action(actor, obs2, zhat, deterministic, act_rng)
            delta_hat = mean_delta(model, obs2, a_cand)
            zhat = estimate_context(lin.predict(obs2), delta_hat, cfg, zhat)
        elif mode == "oracle":
            zhat = oracle_prev

        t_log.append(t)
        r_log.append(float(reward))
        r2_log.append(r2)
        obs = obs2
        if done:
            break

    log = RolloutLog(mode=mode, t=np.asarray(t_log), reward=np.asarray(r_log),
                     context=np.stack(ctx_log), r2=np.asarray(r2_log),
                     oracle_ratio=np.stack(oracle_log))
    return total, log
