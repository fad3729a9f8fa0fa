"""Dense tensors with tape-based reverse-mode differentiation.

Arrays are numpy ``float32`` by default. Every op records a closure that
maps the output gradient back onto its inputs; ``Tensor.backward`` walks
the tape in reverse topological order. Broadcasting is limited to adding a
trailing-shaped bias and to multiplying a stack of rows by one weight
matrix, so shape bugs surface as errors instead of silent expansion.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_state = threading.local()


def _dtype():
    return getattr(_state, "dtype", np.float32)


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily change the dtype new tensors are created with.

    Gradient checking runs under ``float64``; everything else stays float32.
    """
    prev = _dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def trace_shapes() -> Iterator[list]:
    """Record the shape of every tensor created inside the block."""
    shapes: list = []
    prev = getattr(_state, "tracer", None)
    _state.tracer = shapes
    try:
        yield shapes
    finally:
        _state.tracer = prev


@contextlib.contextmanager
def count_flops() -> Iterator[list]:
    """Tally ``2*m*k*n`` for every matmul and convolution run inside the block.

    The running total is ``counter[0]``.
    """
    counter = [0]
    prev = getattr(_state, "flops", None)
    _state.flops = counter
    try:
        yield counter
    finally:
        _state.flops = prev


def _tally(n: int) -> None:
    counter = getattr(_state, "flops", None)
    if counter is not None:
        counter[0] += int(n)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype != _dtype():
            arr = arr.astype(_dtype())
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple = _parents
        self._backward: Callable[[np.ndarray], None] | None = _backward
        tracer = getattr(_state, "tracer", None)
        if tracer is not None:
            tracer.append(arr.shape)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # interior buffers are not needed once propagated
                    node.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    needs = _grad_enabled() and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    """Elementwise sum. ``b`` may be a bias whose shape is a suffix of ``a``'s."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        lead = None
    elif b.ndim < a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        lead = tuple(range(a.ndim - b.ndim))
    else:
        raise ShapeError(f"add: cannot combine {a.shape} and {b.shape}")
    out = a.data + b.data

    def _bw(g):
        a._accum(g)
        b._accum(g if lead is None else g.sum(axis=lead))

    return _make(out, (a, b), _bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes differ {a.shape} vs {b.shape}")

    def _bw(g):
        a._accum(g)
        b._accum(-g)

    return _make(a.data - b.data, (a, b), _bw)


def mul(a, b) -> Tensor:
    """Elementwise product of equal shapes, or scaling by a python number."""
    if not isinstance(b, Tensor) and np.isscalar(b):
        return scale(a, float(b))
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def _bw(g):
        a._accum(g * bd)
        b._accum(g * ad)

    return _make(ad * bd, (a, b), _bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)

    def _bw(g):
        a._accum(g * c)

    return _make(a.data * c, (a,), _bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def _bw(g):
        a._accum(g * mask)

    return _make(np.where(mask, a.data, a.data.dtype.type(0)), (a,), _bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)

    def _bw(g):
        a._accum(g * out * (1 - out))

    return _make(out, (a,), _bw)


def log(a: Tensor) -> Tensor:
    x = a.data

    def _bw(g):
        a._accum(g / x)

    return _make(np.log(x), (a,), _bw)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp into ``[lo, hi]``; gradient is zero where clamping was active."""
    x = a.data
    inside = (x >= lo) & (x <= hi)

    def _bw(g):
        a._accum(g * inside)

    return _make(np.clip(x, lo, hi), (a,), _bw)


# ---------------------------------------------------------------- reductions


def tsum(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)
    shape = a.shape

    def _bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, shape))

    return _make(np.asarray(out), (a,), _bw)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return scale(tsum(a, axis), 1.0 / float(n))


# ---------------------------------------------------------------- shape ops


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape

    def _bw(g):
        a._accum(g.reshape(src))

    return _make(a.data.reshape(shape), (a,), _bw)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def _bw(g):
        a._accum(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), _bw)


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def getitem(a: Tensor, idx) -> Tensor:
    shape, dtype = a.shape, a.data.dtype

    def _bw(g):
        full = np.zeros(shape, dtype=dtype)
        if _needs_add_at(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        a._accum(full)

    return _make(a.data[idx], (a,), _bw)


def _needs_add_at(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Join along ``axis``; every other dimension must agree."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    ref = list(tensors[0].shape)
    ax = axis % len(ref)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or other[:ax] + other[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeError(f"concat: {t.shape} does not line up with {tuple(ref)}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def _bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(lo, hi)
            t._accum(g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, _bw)


def split(a: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    ax = axis % a.ndim
    if sum(sizes) != a.shape[ax]:
        raise ShapeError(f"split sizes {list(sizes)} do not cover axis of length {a.shape[ax]}")
    out, lo = [], 0
    for s in sizes:
        sl = [slice(None)] * a.ndim
        sl[ax] = slice(lo, lo + s)
        out.append(getitem(a, tuple(sl)))
        lo += s
    return out


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Leading axes of ``a`` and ``b`` must match exactly, except that a 2-D
    ``b`` is applied to every matrix in a stacked ``a`` (a shared weight).
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    shared = b.ndim == 2 and a.ndim > 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)
    _tally(2 * out.size * a.shape[-1])

    def _bw(g):
        if a.requires_grad:
            a._accum(np.matmul(g, np.swapaxes(bd, -1, -2)))
        if b.requires_grad:
            if shared:
                k, n = bd.shape
                b._accum(ad.reshape(-1, k).T @ g.reshape(-1, n))
            else:
                b._accum(np.matmul(np.swapaxes(ad, -1, -2), g))

    return _make(out, (a, b), _bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by subtracting the row max."""
    x = a.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        a._accum(out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return _make(out, (a,), _bw)


def softmax_rows(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got {a.shape}")
    return softmax(a)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row over the last axis, then apply ``gain``/``bias``."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    if gd.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm params must have shape {x.shape[-1:]}")
    lead = tuple(range(x.ndim - 1))

    def _bw(g):
        if gain.requires_grad:
            gain._accum((g * xhat).sum(axis=lead))
        if bias.requires_grad:
            bias._accum(g.sum(axis=lead))
        if a.requires_grad:
            gx = g * gd
            c = x.shape[-1]
            a._accum(inv / c * (c * gx - gx.sum(axis=-1, keepdims=True)
                                - xhat * (gx * xhat).sum(axis=-1, keepdims=True)))

    return _make(xhat * gd + bias.data, (a, gain, bias), _bw)


def weighted_bce(p: Tensor, y: np.ndarray, weights: np.ndarray, eps: float = 1e-7) -> Tensor:
    """``-(1/N) sum w_i [y_i log p_i + (1 - y_i) log(1 - p_i)]`` with ``p`` clamped to ``[eps, 1-eps]``.

    Accumulated in float64 so the clamp bound survives float32 rounding.
    """
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if p.shape != y.shape or w.shape != y.shape:
        raise ShapeError(f"weighted_bce: shapes {p.shape}, {y.shape}, {w.shape} differ")
    n = y.size
    raw = p.data.astype(np.float64)
    pc = np.clip(raw, eps, 1.0 - eps)
    loss = -(w * (y * np.log(pc) + (1.0 - y) * np.log1p(-pc))).sum() / n
    inside = (raw >= eps) & (raw <= 1.0 - eps)

    def _bw(g):
        dp = -w * (y / pc - (1.0 - y) / (1.0 - pc)) / n
        p._accum((float(g) * dp * inside).astype(p.data.dtype))

    return _make(np.asarray(loss), (p,), _bw)


# ---------------------------------------------------------------- windows & convolution


def _pad_axis(x: np.ndarray, axis: int, lo: int, hi: int) -> np.ndarray:
    if lo == 0 and hi == 0:
        return x
    width = [(0, 0)] * x.ndim
    width[axis] = (lo, hi)
    return np.pad(x, width)


def windows(a: Tensor, k: int) -> Tensor:
    """Zero-padded neighbourhoods: ``[N, C] -> [N, 2k+1, C]``.

    Built from a single ``k zeros | rows | k zeros`` buffer viewed with a
    strided window, then materialized once.
    """
    if a.ndim != 2:
        raise ShapeError(f"windows expects [N, C], got {a.shape}")
    if k < 0:
        raise ValueError("semi-window k must be >= 0")
    n, c = a.shape
    width = 2 * k + 1
    padded = _pad_axis(a.data, 0, k, k)
    view = sliding_window_view(padded, width, axis=0)  # [N, C, 2k+1]
    out = np.ascontiguousarray(view.transpose(0, 2, 1))

    def _bw(g):
        gp = np.zeros((n + 2 * k, c), dtype=g.dtype)
        for j in range(width):
            gp[j:j + n] += g[:, j, :]
        a._accum(gp[k:k + n])

    return _make(out, (a,), _bw)


def _conv_out(size: int, kernel: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - kernel
    if span < 0:
        raise ShapeError(f"kernel {kernel} larger than padded input {size + 2 * pad}")
    return span // stride + 1


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation along axis -2.

    ``x``: ``[..., L, C_in]``; ``w``: ``[K, C_in, C_out]``; output
    ``[..., L', C_out]`` with ``L' = (L + 2 pad - K) // stride + 1``.
    """
    kk, cin, cout = w.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"conv1d expects {cin} input channels, got {x.shape[-1]}")
    length = x.shape[-2]
    lout = _conv_out(length, kk, stride, pad)
    xp = _pad_axis(x.data, x.ndim - 2, pad, pad)
    cols = sliding_window_view(xp, kk, axis=x.ndim - 2)  # [..., L+2p-K+1, C_in, K]
    cols = cols[..., ::stride, :, :][..., :lout, :, :]
    cols = np.swapaxes(cols, -1, -2).reshape(*cols.shape[:-2], kk * cin)
    wmat = w.data.reshape(kk * cin, cout)
    out = cols @ wmat
    _tally(2 * out.size * kk * cin)
    if b is not None:
        out = out + b.data
    xshape, dtype = x.shape, x.data.dtype

    def _bw(g):
        if w.requires_grad:
            w._accum((cols.reshape(-1, kk * cin).T @ g.reshape(-1, cout)).reshape(kk, cin, cout))
        if b is not None and b.requires_grad:
            b._accum(g.reshape(-1, cout).sum(axis=0))
        if x.requires_grad:
            gcols = (g @ wmat.T).reshape(*g.shape[:-1], kk, cin)
            gxp = np.zeros(xp.shape, dtype=dtype)
            ax = x.ndim - 2
            for t in range(kk):
                sl = [slice(None)] * gxp.ndim
                sl[ax] = slice(t, t + stride * (lout - 1) + 1, stride)
                gxp[tuple(sl)] += gcols[..., t, :]
            sl = [slice(None)] * gxp.ndim
            sl[ax] = slice(pad, pad + length)
            x._accum(gxp[tuple(sl)].reshape(xshape))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, _bw)


def convolve1d(x: Tensor, kernels: Tensor, stride: int = 1, pad: int = 0, bias: Tensor | None = None) -> Tensor:
    return conv1d(x, kernels, bias, stride=stride, pad=pad)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation over axes (-3, -2) of a channels-last input.

    ``x``: ``[..., H, W, C_in]``; ``w``: ``[KH, KW, C_in, C_out]``.
    """
    kh, kw, cin, cout = w.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"conv2d expects {cin} input channels, got {x.shape[-1]}")
    h, wd = x.shape[-3], x.shape[-2]
    hout = _conv_out(h, kh, stride, pad)
    wout = _conv_out(wd, kw, stride, pad)
    ah, aw = x.ndim - 3, x.ndim - 2
    xp = _pad_axis(_pad_axis(x.data, ah, pad, pad), aw, pad, pad)
    cols = sliding_window_view(xp, (kh, kw), axis=(ah, aw))  # [..., H', W', C_in, KH, KW]
    cols = cols[..., ::stride, ::stride, :, :, :][..., :hout, :wout, :, :, :]
    cols = cols.transpose(*range(cols.ndim - 3), cols.ndim - 2, cols.ndim - 1, cols.ndim - 3)
    cols = cols.reshape(*cols.shape[:-3], kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = cols @ wmat
    _tally(2 * out.size * kh * kw * cin)
    if b is not None:
        out = out + b.data
    xshape, dtype = x.shape, x.data.dtype

    def _bw(g):
        if w.requires_grad:
            w._accum((cols.reshape(-1, kh * kw * cin).T @ g.reshape(-1, cout)).reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accum(g.reshape(-1, cout).sum(axis=0))
        if x.requires_grad and stride == 1 and pad < min(kh, kw):
            # full correlation of g with the flipped kernel
            gp = _pad_axis(_pad_axis(g, ah, kh - 1 - pad, kh - 1 - pad), aw, kw - 1 - pad, kw - 1 - pad)
            gc = sliding_window_view(gp, (kh, kw), axis=(ah, aw))[..., :h, :wd, :, :, :]
            gc = gc.transpose(*range(gc.ndim - 3), gc.ndim - 2, gc.ndim - 1, gc.ndim - 3)
            wflip = w.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(kh * kw * cout, cin)
            x._accum((gc.reshape(*gc.shape[:-3], kh * kw * cout) @ wflip).reshape(xshape))
        elif x.requires_grad:
            gcols = (g @ wmat.T).reshape(*g.shape[:-1], kh, kw, cin)
            gxp = np.zeros(xp.shape, dtype=dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[..., i:i + stride * (hout - 1) + 1:stride,
                        j:j + stride * (wout - 1) + 1:stride, :] += gcols[..., i, j, :]
            x._accum(gxp[..., pad:pad + h, pad:pad + wd, :].reshape(xshape))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, _bw)


def convolve2d(x: Tensor, kernels: Tensor, stride: int = 1, pad: int = 0, bias: Tensor | None = None) -> Tensor:
    return conv2d(x, kernels, bias, stride=stride, pad=pad)


# ---------------------------------------------------------------- gradient checking


def grad_check(
    f: Callable[[], Tensor],
    inputs: Iterable[Tensor],
    eps: float = 1e-3,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    joint: bool = False,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``f`` is re-evaluated from scratch for each perturbation, so it must read
    the current ``.data`` of ``inputs``. The error for one input is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-12)``;
    the worst input is returned. With ``joint`` the denominator is taken over
    all inputs together, so an input whose true gradient is zero is judged
    against the scale of the whole gradient rather than its own rounding
    noise. ``max_coords`` samples that many entries per input instead of
    perturbing all of them.
    """
    inputs = list(inputs)
    for t in inputs:
        t.grad = None
    f().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    worst = 0.0
    pairs = []
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        num = np.empty(len(idx))
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                up = f().item()
            flat[i] = orig - eps
            with no_grad():
                down = f().item()
            flat[i] = orig
            num[n] = (up - down) / (2 * eps)
        pairs.append((ga.reshape(-1)[idx], num))
    if joint:
        denom = max(max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0)) for a, n in pairs)
        return float(max(np.abs(a - n).max(initial=0.0) for a, n in pairs) / max(denom, 1e-12))
    for an, num in pairs:
        denom = max(np.abs(an).max(initial=0.0), np.abs(num).max(initial=0.0), 1e-12)
        worst = max(worst, float(np.abs(an - num).max(initial=0.0) / denom))
    return worst
