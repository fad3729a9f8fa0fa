"""Training loop, ablation grid, throughput benchmark and FLOP estimate."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import tensor as T
from .audio import (ManifestEntry, TimeUnitSequence, cut_times_to_labels, load_audio, read_manifest,
                    resolve_wav, split_time_units)
from .features import TFEInputs, extract_inputs, n_frames
from .metrics import EvalReport, evaluate
from .models import Model, ModelConfig, build
from .optim import AdamW, step_lr
from .scope import DEFAULT_SIGMA, scope_mask, weighted_bce_loss

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 300
    lr0: float = 2e-4
    lr_period: int = 20
    batch_size: int = 1
    sigma_hat: float = DEFAULT_SIGMA
    use_scope: bool = True
    weight_decay: float = 0.01
    seed: int = 0
    val_fraction: float = 0.2
    tau: float = 0.5

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.batch_size < 1 or self.lr_period < 1:
            raise ValueError("batch_size and lr_period must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def desk_train_config(**overrides) -> TrainConfig:
    """Short schedule used for CPU-scale experiments."""
    return replace(TrainConfig(epochs=12, lr0=1e-3, lr_period=4, batch_size=1, weight_decay=0.1), **overrides)


@dataclass
class Sample:
    id: str
    inputs: TFEInputs
    labels: np.ndarray
    unit_seconds: float


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_f1: dict

    def to_json(self) -> str:
        return json.dumps({"epoch": self.epoch, "lr": self.lr, "train_loss": self.train_loss,
                           "val_f1": {str(k): v for k, v in sorted(self.val_f1.items())}})


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best(self) -> EpochRecord:
        return self.epochs[self.best_epoch]

    def to_jsonl(self) -> str:
        lines = [r.to_json() for r in self.epochs]
        lines.append(json.dumps({"best_epoch": self.best_epoch}))
        return "\n".join(lines) + "\n"


def make_sample(entry_id: str, seq: TimeUnitSequence, cuts, model_config: ModelConfig) -> Sample:
    if seq.unit_len != model_config.unit_len:
        raise ValueError(f"unit length {seq.unit_len} does not match model ({model_config.unit_len})")
    return Sample(entry_id, extract_inputs(seq), cut_times_to_labels(cuts, seq), seq.unit_seconds)


def load_dataset(manifest, config: ModelConfig) -> list[Sample]:
    """Load and featurize every audio listed in a JSON-lines manifest."""
    entries: list[ManifestEntry] = read_manifest(manifest)
    samples = []
    for e in entries:
        sig = load_audio(resolve_wav(manifest, e), config.sample_rate)
        seq = split_time_units(sig, config.unit_seconds)
        samples.append(make_sample(e.id, seq, e.cuts_s, config))
    return samples


def split_dataset(samples: Sequence[Sample], val_fraction: float, seed: int) -> tuple[list, list]:
    """Random by-audio split; validation gets ``round(n * val_fraction)`` audios (at least one)."""
    n = len(samples)
    n_val = min(n - 1, max(1, int(round(n * val_fraction)))) if n > 1 else 0
    order = np.random.default_rng(seed).permutation(n)
    val_idx = set(order[:n_val].tolist())
    train = [s for i, s in enumerate(samples) if i not in val_idx]
    val = [s for i, s in enumerate(samples) if i in val_idx]
    return train, val


def predict_samples(model: Model, samples: Sequence[Sample]) -> list[np.ndarray]:
    return [model.predict(s.inputs) for s in samples]


def evaluate_model(model: Model, samples: Sequence[Sample], tau: float = 0.5) -> EvalReport:
    return evaluate([s.labels for s in samples], predict_samples(model, samples), tau)


def sample_loss(model: Model, sample: Sample, config: TrainConfig) -> T.Tensor:
    p = model.forward_inputs(sample.inputs)
    mask = scope_mask(sample.labels, config.sigma_hat) if config.use_scope else None
    return weighted_bce_loss(p, sample.labels, mask)


def train(model: Model, train_set: Sequence[Sample], val_set: Sequence[Sample],
          config: TrainConfig) -> tuple[dict, TrainHistory]:
    """Optimize ``model`` in place; returns the best-by-validation-F1@0 weights and the history.

    Input standardization is fitted on ``train_set`` first. The model is left
    holding the best weights.
    """
    config.validate()
    if not train_set:
        raise ValueError("training set is empty")
    if not val_set:
        raise ValueError("validation set is empty")
    model.tfe.fit_input_norm(s.inputs for s in train_set)
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = AdamW(params, lr=config.lr0, weight_decay=config.weight_decay)
    history = TrainHistory()
    best_state, best_f1 = None, -math.inf
    for epoch in range(config.epochs):
        opt.lr = step_lr(epoch, config.lr0, config.lr_period)
        order = rng.permutation(len(train_set))
        losses = []
        opt.zero_grad()
        pending = 0
        for pos, idx in enumerate(order):
            sample = train_set[idx]
            loss = sample_loss(model, sample, config)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLossError(f"loss is {value} at epoch {epoch} on audio {sample.id}")
            loss.backward()
            losses.append(value)
            pending += 1
            if pending == config.batch_size or pos == len(order) - 1:
                opt.step(scale=1.0 / pending)
                opt.zero_grad()
                pending = 0
        report = evaluate_model(model, val_set, config.tau)
        record = EpochRecord(epoch, opt.lr, float(np.mean(losses)), dict(report.f1))
        history.epochs.append(record)
        log.info("epoch %d lr %.2e loss %.5f val F1@0 %.2f F1@1 %.2f", epoch, opt.lr,
                 record.train_loss, report.f1[0], report.f1[1])
        if report.f1[0] > best_f1:
            best_f1 = report.f1[0]
            best_state = model.state_dict()
            history.best_epoch = epoch
    model.load_state_dict(best_state)
    return best_state, history


# ---------------------------------------------------------------- cost accounting


def _encoder_flops(tokens: int, queries: int, keys: int, c: int, ffn: int, contexts: int = 1) -> int:
    """One post-norm encoder layer over ``contexts`` independent sequences."""
    proj = 2 * tokens * c * c * 3 + 2 * queries * c * c  # q/k/v over all tokens, output mix
    scores = 2 * queries * keys * c * 2  # QK^T and PV, summed over heads
    ff = 2 * queries * c * ffn * 2
    return contexts * (proj + scores + ff)


def flops_estimate(config: ModelConfig, n_units: int, k: int | None = None) -> float:
    """Analytic forward-pass GFLOPs (``2*m*k*n`` per matrix product) for ``n_units`` units."""
    if k is not None:
        config = replace(config, k=k)
    n, d, c = n_units, config.proj_dim, config.channels
    total = 0
    frames = n_frames(config.unit_len)
    if "mel" in config.sources:
        pos = n * frames * 13
        ch = config.mel_channels
        total += 2 * pos * 9 * ch + 4 * 2 * pos * 9 * ch * ch + 2 * n * ch * d
    if "energy" in config.sources:
        total += 2 * n * frames * d
    if "raw" in config.sources:
        total += 2 * n * config.unit_len * d
    if config.kind == "beatx":
        w = 2 * config.k + 1
        total += config.lcg_layers * _encoder_flops(w, w, w, c, config.lcg_ffn, contexts=n)
        p = config.low_rank
        for _ in range(config.lgf_layers):
            total += _encoder_flops(n, n, p, c, config.lgf_ffn) + 2 * 2 * p * n * c
    elif config.kind == "encoder":
        total += config.enc_layers * _encoder_flops(n, n, n, c, config.enc_ffn)
    elif config.kind == "linear":
        total += 3 * 2 * n * c * c
    elif config.kind == "cnn1d":
        total += 4 * 2 * n * 3 * c * c + 2 * n * c * c
    total += 2 * n * c  # classifier head
    return total / 1e9


def _noise_inputs(config: ModelConfig, n_units: int, seed: int = 0) -> TFEInputs:
    from .audio import SignalBuffer

    rng = np.random.default_rng(seed)
    sig = SignalBuffer(rng.uniform(-0.5, 0.5, n_units * config.unit_len), config.sample_rate)
    return extract_inputs(split_time_units(sig, config.unit_seconds))


def benchmark_throughput(model: Model, n_list: Sequence[int], repeats: int = 5) -> dict[int, float]:
    """Units per second of a gradient-free forward pass, median over ``repeats`` runs."""
    out = {}
    for n in n_list:
        inputs = _noise_inputs(model.config, n)
        model.predict(inputs)  # warm-up
        times = []
        for _ in range(max(5, repeats)):
            t0 = time.perf_counter()
            model.predict(inputs)
            times.append(time.perf_counter() - t0)
        out[n] = n / statistics.median(times)
    return out


# ---------------------------------------------------------------- ablations

_TRAIN_KEYS = {f for f in TrainConfig.__dataclass_fields__}
_MODEL_KEYS = {f for f in ModelConfig.__dataclass_fields__}


def expand_grid(grid: dict) -> list[dict]:
    if not grid:
        return []
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def run_ablation(grid: dict, base_model: ModelConfig, base_train: TrainConfig,
                 train_set: Sequence[Sample], val_set: Sequence[Sample], flops_units: int = 600) -> list[dict]:
    """Train and evaluate one model per grid point.

    Keys of ``grid`` name fields of either config. Rows carry hit@0 P/R/F1,
    ACC, F1@1/@2, parameter count, GFLOPs for ``flops_units`` units, and an
    ``f1_gain`` column (scope on minus scope off) when ``use_scope`` varies.
    """
    rows = []
    for point in expand_grid(grid):
        unknown = set(point) - _TRAIN_KEYS - _MODEL_KEYS
        if unknown:
            raise ValueError(f"unknown ablation keys {sorted(unknown)}")
        mcfg = replace(base_model, **{k: v for k, v in point.items() if k in _MODEL_KEYS})
        tcfg = replace(base_train, **{k: v for k, v in point.items() if k in _TRAIN_KEYS})
        model = build(mcfg)
        train(model, train_set, val_set, tcfg)
        rep = evaluate_model(model, val_set, tcfg.tau)
        row = {k: (list(v) if isinstance(v, tuple) else v) for k, v in point.items()}
        row.update({"P": rep.precision[0], "R": rep.recall[0], "F1": rep.f1[0], "ACC": rep.acc,
                    "F1@1": rep.f1[1], "F1@2": rep.f1[2], "params": model.parameter_count(),
                    "gflops": flops_estimate(mcfg, flops_units)})
        rows.append(row)
    if "use_scope" in grid:
        _add_scope_gain(rows, [k for k in grid if k != "use_scope"])
    return rows


def _add_scope_gain(rows: list[dict], other_keys: list[str]) -> None:
    def key(r):
        return tuple(json.dumps(r[k], sort_keys=True) for k in other_keys)

    off = {key(r): r["F1"] for r in rows if not r["use_scope"]}
    for r in rows:
        base = off.get(key(r))
        r["f1_gain"] = None if (not r["use_scope"] or base is None) else r["F1"] - base


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(dict.fromkeys(k for r in rows for k in r))
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: ("+".join(v) if isinstance(v, list) else v) for k, v in r.items()})
    return buf.getvalue()


def rows_to_text(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(dict.fromkeys(k for r in rows for k in r))

    def fmt(v):
        if isinstance(v, float):
            return f"{v:.4f}" if abs(v) < 1 else f"{v:.2f}"
        if isinstance(v, list):
            return "+".join(map(str, v))
        return "/" if v is None else str(v)

    cells = [[fmt(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"
