"""Multi-head self-attention, its low-rank linear-time variant, and the output head.

``SelfAttention`` computes ``softmax(QWq (KWk)^T / sqrt(d)) VWv`` per head.
Given projection banks ``E, F`` of shape ``[p, N_max]`` it instead attends
over ``E_N KWk`` and ``F_N VWv`` (the first ``N`` columns), so the score
matrix is ``N x p`` rather than ``N x N``.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Module, param
from .tensor import Tensor

N_MAX = 4096


class CapacityError(ValueError):
    """Sequence longer than the projection banks."""


def split_heads(x: Tensor, heads: int) -> Tensor:
    """``[..., T, C] -> [..., heads, T, C // heads]``."""
    *lead, t, c = x.shape
    x = T.reshape(x, (*lead, t, heads, c // heads))
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return T.transpose(x, axes)


def merge_heads(x: Tensor) -> Tensor:
    *lead, h, t, dh = x.shape
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return T.reshape(T.transpose(x, axes), (*lead, t, h * dh))


def attend(q: Tensor, k: Tensor, v: Tensor, heads: int, return_probs: bool = False):
    """Scaled dot-product attention of queries ``[..., Tq, C]`` over ``[..., Tk, C]``."""
    dh = q.shape[-1] // heads
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    scores = T.scale(T.matmul(qh, T.swap_last(kh)), 1.0 / math.sqrt(dh))
    probs = T.softmax(scores)
    out = merge_heads(T.matmul(probs, vh))
    return (out, probs) if return_probs else out


class SelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 low_rank: int | None = None, n_max: int = N_MAX):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.wq = Linear(dim, dim, rng, init="lecun")
        self.wk = Linear(dim, dim, rng, init="lecun")
        self.wv = Linear(dim, dim, rng, init="lecun")
        self.wo = Linear(dim, dim, rng, init="lecun")
        self.low_rank = low_rank
        if low_rank is not None:
            if not 0 < low_rank < n_max:
                raise ValueError("low-rank dimension must satisfy 0 < p < N_max")
            std = math.sqrt(1.0 / low_rank)
            # one pair of banks shared by every head
            self.proj_e = param(rng.normal(0.0, std, size=(low_rank, n_max)))
            self.proj_f = param(rng.normal(0.0, std, size=(low_rank, n_max)))

    def heads_output(self, x: Tensor, return_probs: bool = False):
        """Concatenated head outputs before the output mixing ``wo``."""
        q, k, v = self.wq(x), self.wk(x), self.wv(x)
        if self.low_rank is not None:
            n = x.shape[-2]
            if x.ndim != 2:
                raise T.ShapeError("low-rank attention runs on one [N, C] sequence")
            if n > self.proj_e.shape[1]:
                raise CapacityError(f"{n} units exceed capacity {self.proj_e.shape[1]}")
            k = T.matmul(T.getitem(self.proj_e, (slice(None), slice(0, n))), k)
            v = T.matmul(T.getitem(self.proj_f, (slice(None), slice(0, n))), v)
        return attend(q, k, v, self.heads, return_probs)

    def __call__(self, x: Tensor) -> Tensor:
        return self.wo(self.heads_output(x))


class EncoderLayer(Module):
    """Post-norm transformer layer: attention, add & norm, ReLU FFN, add & norm."""

    def __init__(self, dim: int, heads: int, ffn: int, rng: np.random.Generator,
                 low_rank: int | None = None, n_max: int = N_MAX):
        self.attn = SelfAttention(dim, heads, rng, low_rank, n_max)
        self.norm1 = LayerNorm(dim)
        self.ff1 = Linear(dim, ffn, rng)
        self.ff2 = Linear(ffn, dim, rng, init="lecun")
        self.norm2 = LayerNorm(dim)

    def __call__(self, x: Tensor) -> Tensor:
        x = self.norm1(T.add(x, self.attn(x)))
        return self.norm2(T.add(x, self.ff2(T.relu(self.ff1(x)))))


def exact_attention(f: Tensor, layer: EncoderLayer) -> Tensor:
    if layer.attn.low_rank is not None:
        raise ValueError("layer carries low-rank projections; use linear_attention")
    return layer(f)


def linear_attention(f: Tensor, layer: EncoderLayer) -> Tensor:
    if layer.attn.low_rank is None:
        raise ValueError("layer has no projection banks")
    return layer(f)


class ClassifierHead(Module):
    """Per-row linear map to one logit, then sigmoid."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.proj = Linear(dim, 1, rng, init="lecun")

    def logits(self, h: Tensor) -> Tensor:
        return T.reshape(self.proj(h), (h.shape[0],))

    def __call__(self, h: Tensor) -> Tensor:
        return T.sigmoid(self.logits(h))


def classifier_head(h: Tensor, head: ClassifierHead) -> Tensor:
    return head(h)
