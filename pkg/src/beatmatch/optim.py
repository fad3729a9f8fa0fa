"""AdamW with decoupled weight decay and the step-halving learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamWState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adamw_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamWState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> None:
    """Update ``params`` in place.

    Decay is applied to the weights directly (``p *= 1 - lr * wd``) before the
    bias-corrected Adam step, matching the decoupled formulation.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("optimizer state does not match parameter list")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch in adamw_step: {p.shape} vs {g.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p *= p.dtype.type(1.0 - lr * weight_decay)
        denom = np.sqrt(v / bc2) + eps
        p -= (lr / bc1) * m / denom


class AdamW:
    """Thin stateful wrapper around :func:`adamw_step` for a list of tensors."""

    def __init__(self, params: list[Tensor], lr: float = 2e-4, weight_decay: float = 0.01,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.state = AdamWState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, scale: float = 1.0) -> None:
        grads = []
        for p in self.params:
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            grads.append(g * p.data.dtype.type(scale) if scale != 1.0 else g)
        adamw_step([p.data for p in self.params], grads, self.state, self.lr,
                   self.betas[0], self.betas[1], self.eps, self.weight_decay)


def step_lr(epoch: int, lr0: float = 2e-4, period: int = 20, factor: float = 0.5) -> float:
    """Learning rate for ``epoch`` (0-based): ``lr0 * factor ** (epoch // period)``."""
    return lr0 * factor ** (epoch // period)
