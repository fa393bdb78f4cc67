"""Transformer building blocks: attention, feed-forward, embeddings, gates.

All parameters are float64 Tensors. Affine weights are drawn from
Normal(0, 0.02), biases start at zero (the gate bias may be overridden to
saturate the gate for ablation/identity tests).
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import CapacityError, ConfigError, DegenerateAttentionError, ShapeError
from .tensor import Tensor

INIT_STD = 0.02


class Module:
    """Minimal parameter container with dotted-name introspection."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}" if not prefix else f"{prefix}.{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def parameter_census(self) -> int:
        """Total scalar parameter count."""
        return sum(p.size for _, p in self.named_parameters())


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = Tensor(rng.normal(0.0, INIT_STD, size=(in_dim, out_dim)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class FeedForward(Module):
    """Position-wise feed-forward: Linear -> GELU -> Linear."""

    def __init__(self, model_dim: int, inner_dim: int, rng: np.random.Generator):
        self.lin1 = Linear(model_dim, inner_dim, rng)
        self.lin2 = Linear(inner_dim, model_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(T.gelu(self.lin1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention with head split/merge and output projection."""

    def __init__(self, model_dim: int, num_heads: int, rng: np.random.Generator):
        if model_dim % num_heads != 0:
            raise ConfigError(f"model_dim {model_dim} not divisible by num_heads {num_heads}")
        self.model_dim = model_dim
        self.num_heads = num_heads
        self.head_dim = model_dim // num_heads
        self.q_proj = Linear(model_dim, model_dim, rng)
        self.k_proj = Linear(model_dim, model_dim, rng)
        self.v_proj = Linear(model_dim, model_dim, rng)
        self.out_proj = Linear(model_dim, model_dim, rng)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor,
                 key_padding_mask: Optional[np.ndarray] = None) -> Tensor:
        if q.shape[-1] != self.model_dim:
            raise ShapeError(f"query width {q.shape[-1]} != model_dim {self.model_dim}")
        t_q, t_k = q.shape[0], k.shape[0]
        if key_padding_mask is not None:
            key_padding_mask = np.asarray(key_padding_mask, dtype=bool)
            if key_padding_mask.shape != (t_k,):
                raise ShapeError(f"key mask length {key_padding_mask.shape} != key count {t_k}")
            if not key_padding_mask.any():
                raise DegenerateAttentionError("all keys masked; attention undefined")
        h, dh = self.num_heads, self.head_dim
        qh = T.transpose(T.reshape(self.q_proj(q), (t_q, h, dh)), (1, 0, 2))
        kh = T.transpose(T.reshape(self.k_proj(k), (t_k, h, dh)), (1, 0, 2))
        vh = T.transpose(T.reshape(self.v_proj(v), (t_k, h, dh)), (1, 0, 2))
        scores = T.scale(T.matmul(qh, T.transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(dh))
        if key_padding_mask is not None:
            # -1e30 underflows to exactly zero weight after max-subtraction
            scores = T.masked_fill(scores, ~key_padding_mask[None, None, :], -1e30)
        weights = T.softmax(scores, axis=-1)
        ctx = T.matmul(weights, vh)
        merged = T.reshape(T.transpose(ctx, (1, 0, 2)), (t_q, self.model_dim))
        return self.out_proj(merged)


class GatedWeighting(Module):
    """Sigmoid gate over [context; residual] producing per-element weights in (0,1)."""

    def __init__(self, model_dim: int, rng: np.random.Generator):
        self.proj = Linear(2 * model_dim, model_dim, rng)

    def __call__(self, context: Tensor, residual: Tensor) -> Tensor:
        return T.sigmoid(self.proj(T.concat([context, residual], axis=-1)))


def gated_fuse(context: Tensor, residual: Tensor,
               gate: Optional[GatedWeighting], enabled: bool) -> Tensor:
    """residual + gate * context; with the gate disabled, plain residual add."""
    if context.shape != residual.shape:
        raise ShapeError(f"gated_fuse shapes differ: {context.shape} vs {residual.shape}")
    if not enabled:
        return residual + context
    return residual + gate(context, residual) * context


class PositionalEmbedding(Module):
    """Learned absolute position table."""

    def __init__(self, max_len: int, model_dim: int, rng: np.random.Generator):
        self.table = Tensor(rng.normal(0.0, INIT_STD, size=(max_len, model_dim)),
                            requires_grad=True)

    def __call__(self, length: int) -> Tensor:
        if length > self.table.shape[0]:
            raise CapacityError(
                f"sequence length {length} exceeds positional capacity {self.table.shape[0]}")
        return T.embedding_lookup(self.table, np.arange(length))


class TransformerBlock(Module):
    """Pre-norm self-attention block: x + Attn(LN(x)); x + FFN(LN(x))."""

    def __init__(self, model_dim: int, num_heads: int, inner_dim: int,
                 rng: np.random.Generator, dropout_rate: float = 0.0):
        self.ln_attn = LayerNorm(model_dim)
        self.attn = MultiHeadAttention(model_dim, num_heads, rng)
        self.ln_ffn = LayerNorm(model_dim)
        self.ffn = FeedForward(model_dim, inner_dim, rng)
        self.dropout_rate = dropout_rate

    def __call__(self, x: Tensor, key_padding_mask: Optional[np.ndarray] = None,
                 rng: Optional[np.random.Generator] = None) -> Tensor:
        normed = self.ln_attn(x)
        a = self.attn(normed, normed, normed, key_padding_mask)
        if self.dropout_rate > 0.0 and rng is not None:
            a = T.dropout(a, self.dropout_rate, rng)
        x = x + a
        f = self.ffn(self.ln_ffn(x))
        if self.dropout_rate > 0.0 and rng is not None:
            f = T.dropout(f, self.dropout_rate, rng)
        return x + f


def attention_block_param_count(model_dim: int, num_heads: int, inner_dim: int) -> int:
    """Closed-form parameter count of one TransformerBlock."""
    mha = 4 * (model_dim * model_dim + model_dim)
    ffn = model_dim * inner_dim + inner_dim + inner_dim * model_dim + model_dim
    ln = 2 * (2 * model_dim)
    return mha + ffn + ln
