"""Dense-network machinery: MLP forward/backward, Adam, Gaussian NLL head.

Small fully-connected networks with hand-written reverse-mode gradients,
kept in float64 so finite-difference checks are meaningful. Layouts are
plain numpy arrays: ``weights[i]`` has shape (fan_in, fan_out).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Rng

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)

_ACTIVATIONS = ("tanh", "relu")


@dataclass
class Mlp:
    """Fully-connected network; hidden layers share one activation, output is linear."""

    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.sizes[i], self.sizes[i + 1])
            if w.shape != expect or b.shape != (self.sizes[i + 1],):
                raise ValueError(f"layer {i}: parameter shape mismatch {w.shape} vs {expect}")

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def params(self) -> list[np.ndarray]:
        """Flat parameter list, weights and biases interleaved per layer."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.activation)


def init_mlp(sizes: tuple[int, ...], activation: str, rng: Rng, scale: float | None = None) -> Mlp:
    """Gaussian fan-in init; ``scale`` overrides the 1/sqrt(fan_in) default."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        s = scale if scale is not None else 1.0 / math.sqrt(fan_in)
        weights.append(np.asarray(rng.normal((fan_in, fan_out))) * s)
        biases.append(np.zeros(fan_out))
    return Mlp(tuple(sizes), weights, biases, activation)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


@dataclass
class ForwardCache:
    """Intermediates needed by backward: layer inputs and pre-activations."""

    inputs: list[np.ndarray]
    pre_acts: list[np.ndarray]
    squeezed: bool


def forward(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Compute the network output for ``x`` of shape (in,) or (batch, in)."""
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.shape[1] != net.in_dim:
        raise ValueError(f"input dim {x.shape[1]} != network input {net.in_dim}")
    inputs, pre_acts = [], []
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w + b
        pre_acts.append(z)
        if i < last:
            h = np.tanh(z) if net.activation == "tanh" else np.maximum(z, 0.0)
        else:
            h = z
    out = h[0] if squeezed else h
    return out, ForwardCache(inputs, pre_acts, squeezed)


def backward(net: Mlp, cache: ForwardCache, grad_out: np.ndarray
             ) -> tuple[list[np.ndarray], np.ndarray]:
    """Exact reverse-mode gradients of a scalar loss.

    ``grad_out`` is dLoss/d(output), same shape as the forward output.
    Returns (parameter gradients in ``params()`` order, dLoss/d(input));
    batch contributions are summed into the parameter gradients.
    """
    if cache is None or not cache.inputs:
        raise ValueError("missing forward cache")
    g = np.asarray(grad_out, dtype=np.float64)
    if cache.squeezed:
        g = g[None, :]
    grads: list[np.ndarray] = [None] * (2 * len(net.weights))
    last = len(net.weights) - 1
    for i in range(last, -1, -1):
        if i < last:
            z = cache.pre_acts[i]
            if net.activation == "tanh":
                g = g * (1.0 - np.tanh(z) ** 2)
            else:
                g = g * (z > 0.0)
        grads[2 * i] = cache.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i].T
    grad_in = g[0] if cache.squeezed else g
    return grads, grad_in


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second-moment accumulators plus the step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float = 1e-3, **kw) -> "AdamState":
        return cls(lr=lr, m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], **kw)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], st: AdamState
              ) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Parameters are updated in place."""
    if len(params) != len(grads) or len(params) != len(st.m):
        raise ValueError("parameter/gradient/state length mismatch")
    st.t += 1
    b1t = 1.0 - st.beta1 ** st.t
    b2t = 1.0 - st.beta2 ** st.t
    for p, g, m, v in zip(params, grads, st.m, st.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= st.beta1
        m += (1.0 - st.beta1) * g
        v *= st.beta2
        v += (1.0 - st.beta2) * g * g
        p -= st.lr * (m / b1t) / (np.sqrt(v / b2t) + st.eps)
    return params, st


# ---------------------------------------------------------------------------
# Gaussian head
# ---------------------------------------------------------------------------


@dataclass
class GaussianHead:
    """Mean and clamped log-std halves of a raw network output."""

    mean: np.ndarray
    log_std: np.ndarray


def gaussian_head(raw: np.ndarray) -> GaussianHead:
    """Split a raw output of even width into (mean, log_std) with the log-std clamped."""
    k = raw.shape[-1]
    if k % 2 != 0:
        raise ValueError("raw output width must be even")
    half = k // 2
    mean = raw[..., :half]
    log_std = np.clip(raw[..., half:], LOG_STD_MIN, LOG_STD_MAX)
    return GaussianHead(mean=mean, log_std=log_std)


def gaussian_head_backward(raw: np.ndarray, d_mean: np.ndarray, d_log_std: np.ndarray
                           ) -> np.ndarray:
    """Map head gradients back through the split+clamp onto the raw output."""
    half = raw.shape[-1] // 2
    raw_ls = raw[..., half:]
    in_range = (raw_ls > LOG_STD_MIN) & (raw_ls < LOG_STD_MAX)
    return np.concatenate([d_mean, d_log_std * in_range], axis=-1)


def gaussian_nll(mean: np.ndarray, log_std: np.ndarray, target: np.ndarray
                 ) -> tuple[float, np.ndarray, np.ndarray]:
    """Negative log-likelihood of ``target`` under a diagonal Gaussian.

    loss = sum_i [ log_std_i + 0.5*ln(2*pi) + 0.5*((target_i - mean_i)/sigma_i)^2 ]
    summed over every element (batch included). Returns the loss and its
    exact gradients w.r.t. mean and log_std.
    """
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if mean.shape != log_std.shape or mean.shape != target.shape:
        raise ValueError("mean/log_std/target shape mismatch")
    inv_var = np.exp(-2.0 * log_std)
    diff = target - mean
    loss = float(np.sum(log_std + 0.5 * LOG_2PI + 0.5 * diff * diff * inv_var))
    d_mean = -diff * inv_var
    d_log_std = 1.0 - diff * diff * inv_var
    return loss, d_mean, d_log_std


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def mlp_to_dict(net: Mlp) -> dict:
    return {
        "sizes": list(net.sizes),
        "activation": net.activation,
        "weights": [w.flatten().tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def mlp_from_dict(d: dict) -> Mlp:
    sizes = tuple(int(s) for s in d["sizes"])
    weights = [np.asarray(w, dtype=np.float64).reshape(sizes[i], sizes[i + 1])
               for i, w in enumerate(d["weights"])]
    biases = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
    return Mlp(sizes, weights, biases, d["activation"])


def save_mlp(net: Mlp, path: str | Path) -> None:
    Path(path).write_text(json.dumps(mlp_to_dict(net)))


def load_mlp(path: str | Path) -> Mlp:
    return mlp_from_dict(json.loads(Path(path).read_text()))
