"""Neural-network building blocks on top of :mod:`sa_assess.numerics.tensor`."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigurationError, DimensionError, NonFiniteError
from .tensor import Tensor, as_tensor, matmul, relu, sigmoid, softmax

PROB_CLAMP = 1e-7


def linear_forward(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x``."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"linear: input shape {x.shape} does not match weight shape {weight.shape}"
        )
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias shape {bias.shape} != ({weight.shape[1]},)")
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(1, x.shape[0])
    y = matmul(x, weight)
    if bias is not None:
        y = y + bias
    if squeeze:
        y = y.reshape(weight.shape[1])
    return y


def activation(kind: str, x: Tensor, axis: int = -1) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax":
        if not -x.ndim <= axis < x.ndim:
            raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
        return softmax(x, axis=axis)
    if kind in ("identity", "linear", None):
        return x
    raise ConfigurationError(f"unknown activation {kind!r}")


def positional_encoding(seq_len: int, model_dim: int) -> np.ndarray:
    """Fixed sinusoidal table: sin on even channels, cos on odd channels."""
    if model_dim % 2:
        raise ConfigurationError(f"positional encoding needs an even model_dim, got {model_dim}")
    if seq_len < 1:
        raise ConfigurationError(f"seq_len must be positive, got {seq_len}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    freq = np.exp(-math.log(10000.0) * np.arange(0, model_dim, 2, dtype=np.float64) / model_dim)
    table = np.zeros((seq_len, model_dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity outside training."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigurationError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * Tensor(keep)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """Returns (output, weights); weights softmax over the key axis."""
    d = q.shape[-1]
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
    weights = softmax(scores, axis=-1)
    return matmul(weights, v), weights


def multi_head_self_attention(
    x: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    heads: int,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    return_weights: bool = False,
):
    """Self-attention over ``x`` of shape (b, l, d) with ``heads`` heads.

    Projections are bias-free d x d matrices. Dropout, when training, is
    applied to the projected output.
    """
    if x.ndim != 3:
        raise DimensionError(f"attention expects (batch, length, dim), got {x.shape}")
    b, l, d = x.shape
    if heads < 1 or d % heads:
        raise ConfigurationError(f"model dim {d} not divisible by {heads} heads")
    dh = d // heads

    def split(t: Tensor) -> Tensor:
        return t.reshape(b, l, heads, dh).transpose(0, 2, 1, 3)

    q, k, v = split(matmul(x, wq)), split(matmul(x, wk)), split(matmul(x, wv))
    ctx, weights = scaled_dot_attention(q, k, v)
    merged = ctx.transpose(0, 2, 1, 3).reshape(b, l, d)
    out = dropout(matmul(merged, wo), dropout_rate, training, rng)
    if return_weights:
        return out, weights
    return out


def loss(kind: str, prediction: Tensor, target) -> Tensor:
    """Mean loss over the batch (first axis).

    ``bce``: element-wise binary cross-entropy on probabilities, averaged over
    every output of every row. ``cce``: categorical cross-entropy with
    ``target`` either one-hot rows or integer class indices. ``mse``: mean of
    squared differences over all elements.
    """
    prediction = as_tensor(prediction)
    tgt = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=prediction.dtype)
    if kind == "mse":
        if tgt.shape != prediction.shape:
            raise DimensionError(f"mse: shapes {prediction.shape} and {tgt.shape} differ")
        diff = prediction - Tensor(tgt)
        return (diff * diff).mean()

    if kind == "cce" and tgt.ndim == prediction.ndim - 1:
        onehot = np.zeros(prediction.shape, dtype=prediction.dtype)
        np.put_along_axis(onehot, tgt.astype(int)[..., None], 1.0, axis=-1)
        tgt = onehot
    if tgt.shape != prediction.shape:
        raise DimensionError(f"{kind}: shapes {prediction.shape} and {tgt.shape} differ")
    p = prediction.data
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise NonFiniteError(f"{kind}: predictions outside [0, 1]")
    rows = prediction.shape[0] if prediction.ndim > 1 else 1
    clamped = prediction.clip(PROB_CLAMP, 1.0 - PROB_CLAMP)
    if kind == "bce":
        t = Tensor(tgt)
        ll = t * clamped.log() + (1.0 - t) * (1.0 - clamped).log()
        return -ll.mean()
    if kind == "cce":
        return -(Tensor(tgt) * clamped.log()).sum() * (1.0 / rows)
    raise ConfigurationError(f"unknown loss {kind!r}")
