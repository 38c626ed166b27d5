"""Probabilistic ensemble dynamics model with an uncertainty-penalized reward.

Each member maps whitened (state, action) inputs to a diagonal Gaussian over
(state delta, reward). Pessimism about model error comes from penalizing the
predicted reward by the largest member's predicted-std norm, so the policy is
discouraged from exploiting regions the ensemble is unsure about.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .core import Dataset, NormStats, Rng, ValidationError, compute_norm_stats


@dataclass
class EnsembleModel:
    """N probabilistic dynamics members sharing one input whitener.

    Immutable once trained; safe to share across concurrent rollouts.
    """

    members: list[nn.Mlp]
    norm: NormStats
    s_dim: int
    a_dim: int
    val_nll: list[float] | None = None
    train_info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 2:
            raise ValidationError("ensemble needs at least 2 members")
        in_dim = self.s_dim + self.a_dim
        out_dim = 2 * (self.s_dim + 1)
        for i, m in enumerate(self.members):
            if m.in_dim != in_dim or m.out_dim != out_dim:
                raise ValidationError(f"member {i} has wrong dimensions")

    @property
    def n(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class ModelPrediction:
    delta_mean: np.ndarray
    delta_std: np.ndarray
    reward_mean: float
    reward_std: float
    member_index: int


def _whiten_inputs(m: EnsembleModel, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    x = np.concatenate([np.atleast_2d(s), np.atleast_2d(a)], axis=1)
    return m.norm.whiten(x)


def _member_outputs(m: EnsembleModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stacked (means, stds) of every member on whitened input rows.

    Shapes (n, batch, s_dim + 1); reward occupies the trailing column.
    """
    means, stds = [], []
    for net in m.members:
        raw, _ = nn.forward(net, x)
        head = nn.gaussian_head(raw)
        means.append(head.mean)
        stds.append(np.exp(head.log_std))
    return np.stack(means), np.stack(stds)


def train_ensemble(d: Dataset, n: int, epochs: int, batch: int, lr: float,
                   rng: Rng, hidden: tuple[int, ...] = (64, 64),
                   activation: str = "tanh", bootstrap: bool = True,
                   val_frac: float = 0.1) -> EnsembleModel:
    """Fit an ensemble by Gaussian NLL on whitened (s, a) -> (s' - s, r).

    Each member sees an independent bootstrap resample of the training split
    (``bootstrap=False`` is a determinism test mode: shared data and shared
    init, so members come out identical). Per-member held-out NLL lands in
    ``val_nll``. The tanh trunk matters: relu members extrapolate their
    predicted stds down to the clamp floor off-distribution, which would
    blind the uncertainty penalty.
    """
    if len(d) == 0:
        raise ValidationError("cannot train on an empty dataset")
    if n < 2:
        raise ValidationError("ensemble size must be >= 2")
    if len(d) < batch:
        raise ValidationError(f"dataset ({len(d)}) smaller than batch size ({batch})")

    norm = compute_norm_stats(d)
    inputs = norm.whiten(np.concatenate([d.states, d.actions], axis=1))
    targets = np.concatenate([d.next_states - d.states, d.rewards[:, None]], axis=1)

    n_val = max(1, int(round(val_frac * len(d)))) if epochs > 0 else 0
    perm = np.arange(len(d))
    split_rng = rng.split(0)
    split_rng.shuffle(perm)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size == 0:
        raise ValidationError("dataset too small for a validation split")

    sizes = (d.s_dim + d.a_dim, *hidden, 2 * (d.s_dim + 1))
    members, val_nlls = [], []
    for i in range(n):
        member_rng = rng.split(1) if not bootstrap else rng.split(1 + i)
        net = nn.init_mlp(sizes, activation, member_rng.split(0))
        if bootstrap:
            rows = train_idx[np.asarray(member_rng.split(1).integers(
                0, train_idx.size, train_idx.size))]
        else:
            rows = train_idx
        xs, ys = inputs[rows], targets[rows]
        opt = nn.AdamState.for_params(net.params(), lr=lr)
        order_rng = member_rng.split(2)
        for _ in range(epochs):
            order = np.arange(xs.shape[0])
            order_rng.shuffle(order)
            for lo in range(0, xs.shape[0], batch):
                sel = order[lo:lo + batch]
                raw, cache = nn.forward(net, xs[sel])
                head = nn.gaussian_head(raw)
                _, d_mean, d_ls = nn.gaussian_nll(head.mean, head.log_std, ys[sel])
                # mean over batch keeps the step size batch-size independent
                d_raw = nn.gaussian_head_backward(raw, d_mean, d_ls) / sel.size
                grads, _ = nn.backward(net, cache, d_raw)
                nn.adam_step(net.params(), grads, opt)
        members.append(net)
        if n_val:
            raw, _ = nn.forward(net, inputs[val_idx])
            head = nn.gaussian_head(raw)
            loss, _, _ = nn.gaussian_nll(head.mean, head.log_std, targets[val_idx])
            val_nlls.append(loss / val_idx.size)

    return EnsembleModel(members=members, norm=norm, s_dim=d.s_dim, a_dim=d.a_dim,
                         val_nll=val_nlls or None,
                         train_info={"epochs": epochs, "batch": batch, "lr": lr,
                                     "hidden": list(hidden), "bootstrap": bootstrap})


def predict(m: EnsembleModel, s: np.ndarray, a: np.ndarray, mode: str,
            rng: Rng | None = None) -> ModelPrediction:
    """Predict (delta, reward) Gaussians for one state-action pair.

    ``sample_member`` draws one member uniformly; ``mean_of_means`` averages
    member means (member_index -1) and is what the context adapter queries.
    """
    means, stds = _member_outputs(m, _whiten_inputs(m, s, a))
    if mode == "sample_member":
        if rng is None:
            raise ValidationError("sample_member mode needs an rng")
        idx = int(rng.integers(0, m.n))
        mean, std = means[idx, 0], stds[idx, 0]
    elif mode == "mean_of_means":
        idx = -1
        mean, std = means[:, 0].mean(axis=0), stds[:, 0].mean(axis=0)
    else:
        raise ValidationError(f"unknown prediction mode: {mode}")
    return ModelPrediction(delta_mean=mean[:-1], delta_std=std[:-1],
                           reward_mean=float(mean[-1]), reward_std=float(std[-1]),
                           member_index=idx)


def mean_delta(m: EnsembleModel, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Ensemble-mean state change; the adapter's reference prediction."""
    means, _ = _member_outputs(m, _whiten_inputs(m, s, a))
    return means[:, 0, :-1].mean(axis=0)


def uncertainty(m: EnsembleModel, s: np.ndarray, a: np.ndarray) -> float:
    """Largest member's 2-norm of predicted stds over (delta, reward)."""
    _, stds = _member_outputs(m, _whiten_inputs(m, s, a))
    return float(np.linalg.norm(stds[:, 0, :], axis=1).max())


def penalized_reward(r_hat: float, u: float, lam: float) -> float:
    """Pessimistic reward r_hat - lam * u; lam = 0 disables the penalty."""
    if lam < 0:
        raise ValidationError("penalty coefficient must be non-negative")
    return r_hat - lam * u


def sample_step_batch(m: EnsembleModel, states: np.ndarray, actions: np.ndarray,
                      rng: Rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One stochastic model step for a batch of rollouts.

    Each row gets a uniformly drawn member whose Gaussian is sampled for
    (delta, reward); returns (next_states, rewards, uncertainties).
    """
    b = states.shape[0]
    means, stds = _member_outputs(m, _whiten_inputs(m, states, actions))
    idx = np.asarray(rng.integers(0, m.n, b))
    rows = np.arange(b)
    mean, std = means[idx, rows], stds[idx, rows]
    sample = mean + std * np.asarray(rng.normal(mean.shape))
    u = np.linalg.norm(stds, axis=2).max(axis=0)
    return states + sample[:, :-1], sample[:, -1], u


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def ensemble_to_dict(m: EnsembleModel) -> dict:
    return {
        "n": m.n,
        "s_dim": m.s_dim,
        "a_dim": m.a_dim,
        "norm": {"mean": m.norm.mean.tolist(), "std": m.norm.std.tolist()},
        "members": [nn.mlp_to_dict(net) for net in m.members],
        "val_nll": m.val_nll,
        "train_info": m.train_info,
    }


def ensemble_from_dict(d: dict) -> EnsembleModel:
    norm = NormStats(mean=np.asarray(d["norm"]["mean"], dtype=np.float64),
                     std=np.asarray(d["norm"]["std"], dtype=np.float64))
    return EnsembleModel(members=[nn.mlp_from_dict(md) for md in d["members"]],
                         norm=norm, s_dim=int(d["s_dim"]), a_dim=int(d["a_dim"]),
                         val_nll=d.get("val_nll"), train_info=d.get("train_info", {}))


def save_ensemble(m: EnsembleModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(ensemble_to_dict(m)))


def load_ensemble(path: str | Path) -> EnsembleModel:
    return ensemble_from_dict(json.loads(Path(path).read_text()))
