"""Parameter containers and basic layers on top of :mod:`beatmatch.tensor`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


def param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    # variance 2/fan_in, suited to ReLU layers
    return param(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape))


def lecun_normal(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    return param(rng.normal(0.0, np.sqrt(1.0 / fan_in), size=shape))


def zeros(shape) -> Tensor:
    return param(np.zeros(shape))


class Buffer(Tensor):
    """Non-trainable state that is saved and loaded with the parameters."""

    __slots__ = ()


class Module:
    """Walks its attributes (in definition order) to enumerate parameters."""

    def _walk(self, prefix: str, want) -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and want(value):
                yield full, value
            elif isinstance(value, Module):
                yield from value._walk(full + ".", want)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._walk(f"{full}.{i}.", want)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        return self._walk(prefix, lambda t: t.requires_grad)

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        """Parameters and buffers: everything a checkpoint stores."""
        return self._walk("", lambda t: t.requires_grad or isinstance(t, Buffer))

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_tensors())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, init: str = "he"):
        if init == "he":
            self.weight = he_normal(rng, (n_in, n_out), n_in)
        elif init == "lecun":
            self.weight = lecun_normal(rng, (n_in, n_out), n_in)
        elif init == "zeros":
            self.weight = zeros((n_in, n_out))
        else:
            raise ValueError(f"unknown init {init!r}")
        self.bias = zeros((n_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = param(np.ones(dim))
        self.bias = zeros((dim,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, pad: int = 0):
        self.weight = he_normal(rng, (kernel, c_in, c_out), kernel * c_in)
        self.bias = zeros((c_out,))
        self.stride, self.pad = stride, pad

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, self.bias, self.stride, self.pad)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, pad: int = 0):
        self.weight = he_normal(rng, (kernel, kernel, c_in, c_out), kernel * kernel * c_in)
        self.bias = zeros((c_out,))
        self.stride, self.pad = stride, pad

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.pad)
