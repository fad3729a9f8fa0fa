"""Local context windows and their fusion by a small encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import EncoderLayer
from .nn import Module, param
from .tensor import Tensor


@dataclass
class ContextTensor:
    values: Tensor  # [N, 2k+1, C]
    k: int
    padding_mask: np.ndarray  # [N, 2k+1], True where the slot is zero padding

    @property
    def width(self) -> int:
        return 2 * self.k + 1


def spos_contexts(features: Tensor, k: int) -> ContextTensor:
    """Slot ``j`` of row ``i`` holds feature row ``i - k + j`` or zeros."""
    n = features.shape[0]
    if n < 1:
        raise ValueError("need at least one feature row")
    values = T.windows(features, k)
    pos = np.arange(n)[:, None] - k + np.arange(2 * k + 1)[None, :]
    return ContextTensor(values, k, (pos < 0) | (pos >= n))


class LocalEncoder(Module):
    """Learned slot embeddings plus a stack of encoder layers over each window."""

    def __init__(self, dim: int, k: int, layers: int, heads: int, ffn: int, rng: np.random.Generator):
        self.k = k
        self.pos = param(rng.normal(0.0, 0.02, size=(2 * k + 1, dim)))
        self.layers = [EncoderLayer(dim, heads, ffn, rng) for _ in range(layers)]

    def __call__(self, ctx: ContextTensor) -> Tensor:
        if ctx.k != self.k:
            raise ValueError(f"encoder built for k={self.k}, got contexts with k={ctx.k}")
        x = T.add(ctx.values, self.pos)
        for layer in self.layers:
            x = layer(x)
        return T.getitem(x, (slice(None), self.k, slice(None)))


def local_fuse(ctx: ContextTensor, encoder: LocalEncoder) -> Tensor:
    """Encode every window independently and keep its middle token: ``[N, C]``."""
    return encoder(ctx)
