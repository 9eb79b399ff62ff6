"""Parameter containers and composite neural layers on the autodiff core."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError


class ParameterSet:
    """Named map of trainable tensors with paired gradient slots."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ShapeError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def n_weights(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for k, v in state.items():
            if k not in self._params:
                raise ShapeError(f"unknown parameter {k!r}")
            if self._params[k].data.shape != v.shape:
                raise ShapeError(f"shape mismatch for {k!r}: {self._params[k].data.shape} vs {v.shape}")
            self._params[k].data = np.asarray(v, dtype=self._params[k].data.dtype).copy()


def fan_in_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype=np.float32) -> np.ndarray:
    """Uniform init scaled by 1/sqrt(fan_in)."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def add_linear(params: ParameterSet, name: str, d_in: int, d_out: int, rng: np.random.Generator):
    params.add(f"{name}.W", fan_in_uniform(rng, (d_in, d_out), d_in))
    params.add(f"{name}.b", np.zeros(d_out, dtype=np.float32))


def linear(x, params: ParameterSet, name: str) -> Tensor:
    return ad.add(ad.matmul(x, params[f"{name}.W"]), params[f"{name}.b"])


def add_conv(params: ParameterSet, name: str, c_in: int, c_out: int, k: int, rng: np.random.Generator):
    fan_in = c_in * k * k
    params.add(f"{name}.W", fan_in_uniform(rng, (c_out, c_in, k, k), fan_in))
    params.add(f"{name}.b", np.zeros(c_out, dtype=np.float32))


def add_layer_norm(params: ParameterSet, name: str, dim: int):
    params.add(f"{name}.gamma", np.ones(dim, dtype=np.float32))
    params.add(f"{name}.beta", np.zeros(dim, dtype=np.float32))


def layer_norm(x, params: ParameterSet, name: str, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = ad.tmean(x, axis=-1, keepdims=True)
    centered = ad.sub(x, mu)
    var = ad.tmean(ad.mul(centered, centered), axis=-1, keepdims=True)
    normed = ad.div(centered, ad.sqrt(ad.add(var, eps)))
    return ad.add(ad.mul(normed, params[f"{name}.gamma"]), params[f"{name}.beta"])


class BatchNormState:
    """Running per-channel statistics, frozen for inference."""

    def __init__(self, channels: int):
        self.mean = np.zeros(channels, dtype=np.float32)
        self.var = np.ones(channels, dtype=np.float32)
        self.momentum = 0.9


def add_batch_norm(params: ParameterSet, name: str, channels: int):
    params.add(f"{name}.gamma", np.ones(channels, dtype=np.float32))
    params.add(f"{name}.beta", np.zeros(channels, dtype=np.float32))


def batch_norm2d(x, params: ParameterSet, name: str, state: BatchNormState, training: bool, eps: float = 1e-5) -> Tensor:
    """Channel-wise batch norm over [N,C,H,W]; inference uses running stats."""
    c = x.data.shape[1]
    if training:
        out, mu, var = ad.batch_norm_train(x, params[f"{name}.gamma"], params[f"{name}.beta"], eps)
        m = state.momentum
        state.mean = m * state.mean + (1 - m) * mu
        state.var = m * state.var + (1 - m) * var
        return out
    gamma = ad.reshape(params[f"{name}.gamma"], (1, c, 1, 1))
    beta = ad.reshape(params[f"{name}.beta"], (1, c, 1, 1))
    mu = Tensor(state.mean.reshape(1, c, 1, 1))
    var = Tensor(state.var.reshape(1, c, 1, 1))
    normed = ad.div(ad.sub(x, mu), ad.sqrt(ad.add(var, eps)))
    return ad.add(ad.mul(normed, gamma), beta)


def add_attention(params: ParameterSet, name: str, d_model: int, rng: np.random.Generator):
    for proj in ("q", "k", "v", "o"):
        add_linear(params, f"{name}.{proj}", d_model, d_model, rng)


def multi_head_attention(x, params: ParameterSet, name: str, n_heads: int, causal: bool = False) -> Tensor:
    """Scaled dot-product self-attention with head concat + output projection.

    Accepts [T, d] or a batched [N, T, d]; attention is within each sequence.
    """
    batched = x.data.ndim == 3
    t, d = x.data.shape[-2:]
    if d % n_heads:
        raise ShapeError(f"model dim {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    n = x.data.shape[0] if batched else 1

    def split_heads(v):
        v = ad.reshape(v, (n, t, n_heads, dh))
        return ad.transpose(v, (0, 2, 1, 3))  # [N, H, T, dh]

    q = split_heads(linear(x, params, f"{name}.q"))
    k = split_heads(linear(x, params, f"{name}.k"))
    v = split_heads(linear(x, params, f"{name}.v"))

    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    if causal:
        mask = np.triu(np.full((t, t), -1e30, dtype=scores.data.dtype), k=1)
        scores = ad.add(scores, Tensor(mask))
    attn = ad.softmax(scores, axis=-1)
    mixed = ad.matmul(attn, v)
    merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (n, t, d) if batched else (t, d))
    return linear(merged, params, f"{name}.o")


def add_encoder_block(params: ParameterSet, name: str, d_model: int, d_ff: int, rng: np.random.Generator):
    add_attention(params, f"{name}.attn", d_model, rng)
    add_layer_norm(params, f"{name}.ln1", d_model)
    add_linear(params, f"{name}.ff1", d_model, d_ff, rng)
    add_linear(params, f"{name}.ff2", d_ff, d_model, rng)
    add_layer_norm(params, f"{name}.ln2", d_model)


def transformer_encoder_block(x, params: ParameterSet, name: str, n_heads: int, causal: bool = False) -> Tensor:
    """Post-norm block: attention + residual + LN, then FFN + residual + LN."""
    attended = multi_head_attention(x, params, f"{name}.attn", n_heads, causal=causal)
    x = layer_norm(ad.add(x, attended), params, f"{name}.ln1")
    ff = linear(ad.relu(linear(x, params, f"{name}.ff1")), params, f"{name}.ff2")
    return layer_norm(ad.add(x, ff), params, f"{name}.ln2")


def sinusoidal_positions(t: int, d: int, dtype=np.float32) -> np.ndarray:
    """Fixed sin/cos position table, shape [t, d]."""
    pos = np.arange(t)[:, None].astype(np.float64)
    idx = np.arange(d)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, (2 * (idx // 2)) / d)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


def global_average_pool(x) -> Tensor:
    """Mean over spatial dims of [N,C,H,W] (or [C,H,W]) down to [N,C] / [C]."""
    axes = (1, 2) if x.data.ndim == 3 else (2, 3)
    return ad.tmean(x, axis=axes)


def conv_stack_weight_count(layers: int, kernel: int, channels: int) -> int:
    """Kernel weights (biases excluded) in a stack of same-channel conv layers."""
    return layers * kernel * kernel * channels * channels
