"""Gaussian label scope: per-unit loss weights, PN ratio and radius selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

DEFAULT_SIGMA = 0.9
SIGMA_GRID = tuple(round(0.6 + 0.1 * i, 1) for i in range(8))  # 0.6 .. 1.3
BCE_EPS = 1e-7


class UndefinedRatioError(ValueError):
    pass


def gaussian_scope(i, k, sigma: float):
    """Influence of a positive label at ``i`` on unit ``k``: ``exp(-(i-k)^2 / (2 sigma^2))``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d = np.asarray(i, dtype=np.float64) - np.asarray(k, dtype=np.float64)
    out = np.exp(-(d * d) / (2.0 * sigma * sigma))
    return float(out) if out.ndim == 0 else out


@dataclass
class ScopeMask:
    weights: np.ndarray
    sigma_hat: float
    enabled: bool

    def effective(self) -> np.ndarray:
        """Weights the loss actually uses (all ones when disabled)."""
        return self.weights if self.enabled else np.ones_like(self.weights)


def scope_mask(y, sigma_hat: float = DEFAULT_SIGMA) -> ScopeMask:
    """Sum of the scopes of every positive label, divided by its maximum.

    An all-negative ``y`` yields a disabled mask (uniform weighting).
    """
    y = np.asarray(y)
    n = y.size
    pos = np.flatnonzero(y)
    if pos.size == 0:
        return ScopeMask(np.ones(n), sigma_hat, enabled=False)
    units = np.arange(n)
    u = gaussian_scope(pos[:, None], units[None, :], sigma_hat).sum(axis=0)
    return ScopeMask(u / u.max(), sigma_hat, enabled=True)


def pn_ratio(y, sigma_hat: float = DEFAULT_SIGMA) -> float:
    """Scope-weighted positive mass over scope-weighted negative mass."""
    y = np.asarray(y, dtype=np.float64)
    n_pos = y.sum()
    if n_pos == 0 or n_pos == y.size:
        raise UndefinedRatioError("PN ratio needs at least one positive and one negative unit")
    s = scope_mask(y, sigma_hat).weights
    neg = float((s * (1.0 - y)).sum())
    if neg == 0.0:
        raise UndefinedRatioError("scope carries no negative mass")
    return float((s * y).sum()) / neg


def _eligible(labels: Iterable) -> list[np.ndarray]:
    out = []
    for y in labels:
        y = np.asarray(y)
        if 0 < y.sum() < y.size:
            out.append(y)
    return out


def mean_pn_ratio(labels: Iterable, sigma_hat: float) -> float:
    eligible = _eligible(labels)
    if not eligible:
        raise UndefinedRatioError("no label vector has both classes")
    return float(np.mean([pn_ratio(y, sigma_hat) for y in eligible]))


def pn_table(labels: Iterable, grid: Sequence[float] = SIGMA_GRID) -> list[tuple[float, float]]:
    eligible = _eligible(labels)
    return [(float(s), mean_pn_ratio(eligible, s)) for s in grid]


def estimate_sigma(labels: Iterable, grid: Sequence[float] = SIGMA_GRID) -> float:
    """Grid radius whose dataset-mean PN ratio is closest to 1 (ties go to the smaller)."""
    table = pn_table(labels, sorted(grid))
    best = min(table, key=lambda row: (abs(row[1] - 1.0), row[0]))
    return best[0]


def weighted_bce_loss(p: Tensor, y, mask: ScopeMask | None = None, eps: float = BCE_EPS) -> Tensor:
    """Scope-weighted mean binary cross-entropy; ``mask=None`` or disabled means unit weights."""
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise T.ShapeError(f"predictions {p.shape} and labels {y.shape} differ in length")
    w = np.ones_like(y) if mask is None else mask.effective()
    return T.weighted_bce(p, y, w, eps)
