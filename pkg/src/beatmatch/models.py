"""BeatX and the three comparison baselines behind one interface.

Every model starts with the same per-unit feature extractor and ends with a
per-unit probability. What differs is how far information travels along the
unit axis in between: not at all (``linear``), a fixed conv stack extent
(``cnn1d``), or the whole audio (``encoder``, ``beatx``).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from . import checkpoint
from . import tensor as T
from .attention import N_MAX, CapacityError, ClassifierHead, EncoderLayer
from .audio import CANONICAL_RATE, DEFAULT_UNIT_SECONDS, TimeUnitSequence
from .context import LocalEncoder, spos_contexts
from .features import SOURCES, TFE, MelConfig, TFEInputs, extract_inputs
from .nn import Conv1d, Linear, Module
from .tensor import Tensor

KINDS = ("beatx", "linear", "cnn1d", "encoder")


@dataclass
class ModelConfig:
    kind: str = "beatx"
    sources: tuple = SOURCES
    k: int = 5
    proj_dim: int = 128
    mel_channels: int = 64
    lcg_layers: int = 2
    lcg_heads: int = 4
    lcg_ffn: int = 512
    lgf_layers: int = 1
    lgf_heads: int = 4
    lgf_ffn: int = 512
    low_rank: int = 64
    n_max: int = N_MAX
    enc_layers: int = 4
    enc_heads: int = 8
    enc_ffn: int = 512
    unit_seconds: float = DEFAULT_UNIT_SECONDS
    sample_rate: int = CANONICAL_RATE
    seed: int = 0

    def __post_init__(self):
        self.sources = tuple(s for s in SOURCES if s in set(self.sources))

    @property
    def channels(self) -> int:
        return self.proj_dim * len(self.sources)

    @property
    def unit_len(self) -> int:
        return int(round(self.unit_seconds * self.sample_rate))

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; choose from {KINDS}")
        if not self.sources:
            raise ValueError("at least one feature source must be active")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        c = self.channels
        for name, heads in (("lcg", self.lcg_heads), ("lgf", self.lgf_heads), ("encoder", self.enc_heads)):
            if c % heads:
                raise ValueError(f"{name}: channel width {c} not divisible by {heads} heads")
        if not 0 < self.low_rank < self.n_max:
            raise ValueError("need 0 < low_rank < n_max")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sources"] = list(self.sources)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["sources"] = tuple(d.get("sources", SOURCES))
        return cls(**d)


def full_config(kind: str = "beatx", **overrides) -> ModelConfig:
    return replace(ModelConfig(kind=kind), **overrides)


def desk_config(kind: str = "beatx", **overrides) -> ModelConfig:
    """Narrow preset that trains in minutes on one CPU core."""
    base = ModelConfig(kind=kind, proj_dim=32, mel_channels=8, lcg_ffn=128, lgf_ffn=128,
                       low_rank=16, enc_ffn=128)
    return replace(base, **overrides)


class Model(Module):
    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        self.mel_cfg = MelConfig()
        rng = np.random.default_rng(config.seed)
        self.tfe = TFE(config.sources, config.proj_dim, config.unit_len, config.mel_channels, rng, self.mel_cfg)
        self._build_body(rng)

    def _build_body(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def _body(self, g: Tensor) -> Tensor:
        raise NotImplementedError

    @property
    def attention_bearing(self) -> bool:
        return False

    def inputs(self, seq: TimeUnitSequence) -> TFEInputs:
        if seq.unit_len != self.config.unit_len:
            raise ValueError(f"model expects {self.config.unit_len}-sample units, got {seq.unit_len}")
        return extract_inputs(seq, self.mel_cfg)

    def forward_inputs(self, inputs: TFEInputs) -> Tensor:
        if self.attention_bearing and inputs.n_units > self.config.n_max:
            raise CapacityError(f"{inputs.n_units} units exceed capacity {self.config.n_max}")
        return self._body(self.tfe(inputs))

    def forward(self, seq: TimeUnitSequence) -> Tensor:
        return self.forward_inputs(self.inputs(seq))

    __call__ = forward

    def predict(self, seq_or_inputs) -> np.ndarray:
        inputs = seq_or_inputs if isinstance(seq_or_inputs, TFEInputs) else self.inputs(seq_or_inputs)
        with T.no_grad():
            return self.forward_inputs(inputs).data.copy()


class BeatX(Model):
    """Features -> local windows fused by a small encoder -> low-rank global layer -> head."""

    def _build_body(self, rng):
        c = self.config
        self.lcg = LocalEncoder(c.channels, c.k, c.lcg_layers, c.lcg_heads, c.lcg_ffn, rng)
        self.lgf = [EncoderLayer(c.channels, c.lgf_heads, c.lgf_ffn, rng, low_rank=c.low_rank, n_max=c.n_max)
                    for _ in range(c.lgf_layers)]
        self.head = ClassifierHead(c.channels, rng)

    @property
    def attention_bearing(self) -> bool:
        return True

    def _body(self, g):
        h = self.lcg(spos_contexts(g, self.config.k))
        for layer in self.lgf:
            h = layer(h)
        return self.head(h)


class LinearBaseline(Model):
    """Four ReLU-separated linear layers applied to each unit on its own."""

    def _build_body(self, rng):
        c = self.config.channels
        self.layers = [Linear(c, c, rng), Linear(c, c, rng), Linear(c, c, rng)]
        self.head = ClassifierHead(c, rng)

    def _body(self, g):
        for layer in self.layers:
            g = T.relu(layer(g))
        return self.head(g)


class CNN1dBaseline(Model):
    """Four 1-D convolutions (kernel 3) along the unit axis, then two linear layers."""

    def _build_body(self, rng):
        c = self.config.channels
        self.convs = [Conv1d(c, c, 3, rng, pad=1) for _ in range(4)]
        self.fc = Linear(c, c, rng)
        self.head = ClassifierHead(c, rng)

    def _body(self, g):
        for conv in self.convs:
            g = T.relu(conv(g))
        return self.head(T.relu(self.fc(g)))


class EncoderBaseline(Model):
    """Full quadratic self-attention encoder over all units."""

    def _build_body(self, rng):
        c = self.config
        self.layers = [EncoderLayer(c.channels, c.enc_heads, c.enc_ffn, rng) for _ in range(c.enc_layers)]
        self.head = ClassifierHead(c.channels, rng)

    @property
    def attention_bearing(self) -> bool:
        return True

    def _body(self, g):
        for layer in self.layers:
            g = layer(g)
        return self.head(g)


_KIND_TO_CLASS = {"beatx": BeatX, "linear": LinearBaseline, "cnn1d": CNN1dBaseline, "encoder": EncoderBaseline}


def build(config: ModelConfig) -> Model:
    config.validate()
    return _KIND_TO_CLASS[config.kind](config)


def receptive_radius(config: ModelConfig) -> int | None:
    """How many neighbouring units can influence a prediction; ``None`` for global."""
    return {"linear": 0, "cnn1d": 4}.get(config.kind)


def save_model(model: Model, path) -> None:
    checkpoint.save_model(path, model.state_dict(), model.config.to_dict())


def load_model(path) -> Model:
    state, cfg = checkpoint.load_model_files(path)
    model = build(ModelConfig.from_dict(cfg))
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise checkpoint.CheckpointError(f"checkpoint does not match its config: {exc}") from exc
    return model
