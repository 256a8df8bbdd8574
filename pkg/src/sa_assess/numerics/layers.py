"""Parameter containers for the layers both models use."""

from __future__ import annotations

import math

import numpy as np

from .functional import dropout, linear_forward, multi_head_self_attention
from .tensor import Tensor, relu


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class Module:
    """Collects named :class:`Tensor` parameters from attributes and children."""

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + key] = value
            elif isinstance(value, Module):
                out.update(value.parameters(prefix + key + "."))
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, child in enumerate(value):
                    out.update(child.parameters(f"{prefix}{key}.{i}."))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=p.data.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True, dtype=np.float64):
        self.weight = Tensor(glorot(rng, in_dim, out_dim, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear_forward(x, self.weight, self.bias)


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float64):
        self.heads = heads
        self.wq = Tensor(glorot(rng, dim, dim, dtype), requires_grad=True)
        self.wk = Tensor(glorot(rng, dim, dim, dtype), requires_grad=True)
        self.wv = Tensor(glorot(rng, dim, dim, dtype), requires_grad=True)
        self.wo = Tensor(glorot(rng, dim, dim, dtype), requires_grad=True)

    def __call__(self, x, dropout_rate=0.0, training=False, rng=None, return_weights=False):
        return multi_head_self_attention(
            x, self.wq, self.wk, self.wv, self.wo, self.heads,
            dropout_rate=dropout_rate, training=training, rng=rng, return_weights=return_weights,
        )


class TransformerBlock(Module):
    """Self-attention then a ReLU feed-forward (dim -> ff_dim -> dim).

    Each sublayer output passes through dropout and, when ``residual`` is on,
    is added to its input. There is no layer normalization.
    """

    def __init__(self, dim: int, ff_dim: int, heads: int, dropout_rate: float,
                 rng: np.random.Generator, residual: bool = True, dtype=np.float64):
        self.attn = MultiHeadSelfAttention(dim, heads, rng, dtype)
        self.ff1 = Linear(dim, ff_dim, rng, dtype=dtype)
        self.ff2 = Linear(ff_dim, dim, rng, dtype=dtype)
        self.dropout_rate = dropout_rate
        self.residual = residual

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        a = self.attn(x, self.dropout_rate, training, rng)
        x = x + a if self.residual else a
        h = dropout(self.ff2(relu(self.ff1(x))), self.dropout_rate, training, rng)
        return x + h if self.residual else h
