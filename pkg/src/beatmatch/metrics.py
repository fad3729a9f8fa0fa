"""hit@k matching, P@k / R@k / F1, per-unit accuracy and audio-wise averaging.

A predicted cut counts as a hit when a ground-truth cut lies within ``k``
units of it, and each ground-truth cut can absorb at most one prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

KS = (0, 1, 2)


def threshold_predictions(p, tau: float = 0.5) -> np.ndarray:
    """``1`` where the probability is strictly above ``tau``."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    return (np.asarray(p) > tau).astype(np.int8)


def _check_lengths(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y, yhat = np.asarray(y), np.asarray(yhat)
    if y.shape != yhat.shape:
        raise ValueError(f"label lengths differ: {y.shape} vs {yhat.shape}")
    return y, yhat


def match_hits(y, yhat, k: int) -> int:
    """Size of a maximum one-to-one matching with ``|i - j| <= k``.

    Predictions are visited left to right and each takes the earliest
    still-free truth inside its window. Windows share one width, so this
    earliest-deadline greedy is optimal.
    """
    y, yhat = _check_lengths(y, yhat)
    truth = np.flatnonzero(y)
    hits = 0
    t = 0
    for j in np.flatnonzero(yhat):
        while t < truth.size and truth[t] < j - k:
            t += 1
        if t < truth.size and truth[t] <= j + k:
            hits += 1
            t += 1
    return hits


def pr_at_k(y, yhat, k: int) -> tuple[float, float]:
    """Precision and recall at tolerance ``k``.

    With no predictions precision is 1; with no ground truth recall is 1.
    """
    y, yhat = _check_lengths(y, yhat)
    hits = match_hits(y, yhat, k)
    n_pred, n_true = int(yhat.sum()), int(y.sum())
    precision = hits / n_pred if n_pred else 1.0
    recall = hits / n_true if n_true else 1.0
    return precision, recall


def f1_score(precision: float, recall: float) -> float:
    s = precision + recall
    return 0.0 if s == 0 else 2.0 * precision * recall / s


def audio_accuracy(y, yhat) -> float:
    y, yhat = _check_lengths(y, yhat)
    return float((y == yhat).mean())


@dataclass
class AudioResult:
    precision: dict
    recall: dict
    f1: dict
    acc: float


def evaluate_audio(y, yhat, ks: Sequence[int] = KS) -> AudioResult:
    prec, rec, f1 = {}, {}, {}
    for k in ks:
        p, r = pr_at_k(y, yhat, k)
        prec[k], rec[k], f1[k] = p, r, f1_score(p, r)
    return AudioResult(prec, rec, f1, audio_accuracy(y, yhat))


@dataclass
class EvalReport:
    """Audio-wise averaged metrics, in percent."""

    precision: dict = field(default_factory=dict)
    recall: dict = field(default_factory=dict)
    f1: dict = field(default_factory=dict)
    acc: float = 0.0
    n_audios: int = 0

    def to_dict(self) -> dict:
        return {
            "n_audios": self.n_audios,
            "acc": self.acc,
            "hit": {str(k): {"precision": self.precision[k], "recall": self.recall[k], "f1": self.f1[k]}
                    for k in sorted(self.f1)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        hit = {int(k): v for k, v in d["hit"].items()}
        return cls({k: v["precision"] for k, v in hit.items()}, {k: v["recall"] for k, v in hit.items()},
                   {k: v["f1"] for k, v in hit.items()}, d["acc"], d["n_audios"])

    def table(self, name: str = "model") -> str:
        ks = sorted(self.f1)
        head = f"{'Method':<12} {'ACC':>6} " + " ".join(f"{'P@' + str(k):>6} {'R@' + str(k):>6} {'F1@' + str(k):>6}" for k in ks)
        row = f"{name:<12} {self.acc:6.2f} " + " ".join(
            f"{self.precision[k]:6.2f} {self.recall[k]:6.2f} {self.f1[k]:6.2f}" for k in ks)
        return head + "\n" + row


def aggregate(results: Sequence[AudioResult]) -> EvalReport:
    """Unweighted mean over audios of each per-audio metric, scaled to percent."""
    if not results:
        raise ValueError("cannot aggregate an empty result set")
    ks = sorted(results[0].f1)

    def avg(get):
        return 100.0 * float(np.mean([get(r) for r in results]))

    return EvalReport(
        precision={k: avg(lambda r: r.precision[k]) for k in ks},
        recall={k: avg(lambda r: r.recall[k]) for k in ks},
        f1={k: avg(lambda r: r.f1[k]) for k in ks},
        acc=avg(lambda r: r.acc),
        n_audios=len(results),
    )


def evaluate(labels: Sequence, probs: Sequence, tau: float = 0.5, ks: Sequence[int] = KS) -> EvalReport:
    """Threshold each audio's probabilities and aggregate against its labels."""
    if len(labels) != len(probs):
        raise ValueError("labels and predictions cover different audio counts")
    return aggregate([evaluate_audio(y, threshold_predictions(p, tau), ks) for y, p in zip(labels, probs)])
