"""Per-unit features: mel cepstrum, short-term energy and a raw projection.

The handcrafted descriptors are fixed functions of the samples and are
computed once per audio (:func:`extract_inputs`). The learned embeddings
(:class:`MelEmbed`, :class:`EnergyEmbed`, :class:`RawProject`) turn them into
``proj_dim``-wide rows, concatenated in mel, energy, raw order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dct, rfft
from scipy.signal import get_window

from . import tensor as T
from .audio import TimeUnitSequence
from .nn import Buffer, Conv2d, LayerNorm, Linear, Module
from .tensor import Tensor

SOURCES = ("mel", "energy", "raw")
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class MelConfig:
    n_fft: int = 400
    hop: int = 160
    n_mels: int = 40
    n_ceps: int = 13
    fmin: float = 0.0
    fmax: float | None = None

    def validate(self, sample_rate: int) -> None:
        if self.n_mels < self.n_ceps:
            raise ValueError(f"n_mels ({self.n_mels}) must be >= n_ceps ({self.n_ceps})")
        fmax = self.fmax if self.fmax is not None else sample_rate / 2
        if fmax > sample_rate / 2:
            raise ValueError(f"fmax {fmax} above Nyquist {sample_rate / 2}")
        if not 0 <= self.fmin < fmax:
            raise ValueError("need 0 <= fmin < fmax")
        if self.n_fft < 1 or self.hop < 1:
            raise ValueError("n_fft and hop must be positive")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular filters on the mel scale, ``[n_mels, n_fft // 2 + 1]``."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def frame_signal(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    """Split the last axis into frames; inputs shorter than one frame are zero padded."""
    n = x.shape[-1]
    if n < frame:
        x = np.concatenate([x, np.zeros(x.shape[:-1] + (frame - n,), dtype=x.dtype)], axis=-1)
        n = frame
    count = 1 + (n - frame) // hop
    view = np.lib.stride_tricks.sliding_window_view(x, frame, axis=-1)
    return view[..., ::hop, :][..., :count, :]


def mel_energies(units: np.ndarray, sample_rate: int, cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Mel filterbank outputs of the Hann-windowed magnitude spectrum."""
    cfg.validate(sample_rate)
    fmax = cfg.fmax if cfg.fmax is not None else sample_rate / 2
    frames = frame_signal(np.asarray(units, dtype=np.float64), cfg.n_fft, cfg.hop)
    spec = np.abs(rfft(frames * get_window("hann", cfg.n_fft), axis=-1))
    return spec @ mel_filterbank(sample_rate, cfg.n_fft, cfg.n_mels, float(cfg.fmin), float(fmax)).T


def mel_cepstrum(units: np.ndarray, sample_rate: int, cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Hann -> |FFT| -> mel filterbank -> log(. + 1e-10) -> DCT-II (orthonormal).

    ``units`` may be one unit ``[L]`` or a stack ``[N, L]``; the output gains
    a ``[frames, n_ceps]`` tail.
    """
    logmel = np.log(mel_energies(units, sample_rate, cfg) + LOG_FLOOR)
    return dct(logmel, type=2, norm="ortho", axis=-1)[..., : cfg.n_ceps]


def short_term_energy(units: np.ndarray, frame: int = 400, hop: int = 160) -> np.ndarray:
    """Mean squared amplitude per frame."""
    frames = frame_signal(np.asarray(units, dtype=np.float64), frame, hop)
    return (frames * frames).mean(axis=-1)


@dataclass
class TFEInputs:
    mel: np.ndarray  # [N, frames, n_ceps]
    energy: np.ndarray  # [N, frames]
    raw: np.ndarray  # [N, unit_len]

    @property
    def n_units(self) -> int:
        return self.raw.shape[0]

    def subset(self, rows) -> "TFEInputs":
        return TFEInputs(self.mel[rows], self.energy[rows], self.raw[rows])


def extract_inputs(seq: TimeUnitSequence, cfg: MelConfig = MelConfig()) -> TFEInputs:
    return TFEInputs(
        mel=mel_cepstrum(seq.units, seq.sample_rate, cfg).astype(np.float32),
        energy=short_term_energy(seq.units, cfg.n_fft, cfg.hop).astype(np.float32),
        raw=seq.units.astype(np.float32),
    )


def n_frames(unit_len: int, cfg: MelConfig = MelConfig()) -> int:
    return 1 + (max(unit_len, cfg.n_fft) - cfg.n_fft) // cfg.hop


# ---------------------------------------------------------------- learned embeddings


class ResidualBlock(Module):
    """conv3x3 -> LN -> ReLU -> conv3x3 -> LN, identity skip, ReLU."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.conv1 = Conv2d(channels, channels, 3, rng, pad=1)
        self.norm1 = LayerNorm(channels)
        self.conv2 = Conv2d(channels, channels, 3, rng, pad=1)
        self.norm2 = LayerNorm(channels)

    def __call__(self, x: Tensor) -> Tensor:
        h = T.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return T.relu(T.add(x, h))


class MelEmbed(Module):
    """Small residual CNN over each unit's frames x coefficients plane."""

    def __init__(self, channels: int, out_dim: int, rng: np.random.Generator):
        # no norm on the stem: per-position LN over a rank-one input would erase the level
        self.stem = Conv2d(1, channels, 3, rng, pad=1)
        self.blocks = [ResidualBlock(channels, rng), ResidualBlock(channels, rng)]
        self.proj = Linear(channels, out_dim, rng, init="lecun")

    def __call__(self, mel: Tensor) -> Tensor:
        n, f, c = mel.shape
        x = T.reshape(mel, (n, f, c, 1))
        x = T.relu(self.stem(x))
        for block in self.blocks:
            x = block(x)
        pooled = T.mean(T.reshape(x, (n, f * c, x.shape[-1])), axis=1)
        return self.proj(pooled)


class EnergyEmbed(Module):
    def __init__(self, frames: int, out_dim: int, rng: np.random.Generator):
        self.proj = Linear(frames, out_dim, rng)

    def __call__(self, energy: Tensor) -> Tensor:
        return T.relu(self.proj(energy))


class RawProject(Module):
    def __init__(self, unit_len: int, out_dim: int, rng: np.random.Generator):
        self.proj = Linear(unit_len, out_dim, rng)
        self.unit_len = unit_len

    def __call__(self, raw: Tensor) -> Tensor:
        if raw.shape[-1] != self.unit_len:
            raise T.ShapeError(f"raw projection expects units of {self.unit_len} samples, got {raw.shape[-1]}")
        return T.relu(self.proj(raw))


class InputNorm(Module):
    """Fixed affine standardization ``(x - shift) / scale`` over the last axis.

    Identity until :meth:`fit` is called; the statistics are buffers, so they
    travel with checkpoints but are never trained. For the energy and raw
    descriptors this only reparameterizes the following linear layer.
    """

    def __init__(self, width: int):
        self.shift = Buffer(np.zeros(width))
        self.scale = Buffer(np.ones(width))

    def fit(self, arrays, per_channel: bool) -> None:
        flat = np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1, a.shape[-1]) for a in arrays])
        if not per_channel:
            flat = flat.reshape(-1, 1)
        std = flat.std(axis=0)
        width = self.shift.shape[0]
        self.shift.data = np.broadcast_to(flat.mean(axis=0), (width,)).astype(self.shift.data.dtype)
        self.scale.data = np.broadcast_to(np.where(std > 0, std, 1.0), (width,)).astype(self.scale.data.dtype)

    def __call__(self, x: np.ndarray) -> Tensor:
        return Tensor((x - self.shift.data) / self.scale.data)


class TFE(Module):
    """Per-unit feature extractor; no interaction between units."""

    def __init__(self, sources, proj_dim: int, unit_len: int, mel_channels: int,
                 rng: np.random.Generator, mel_cfg: MelConfig = MelConfig()):
        sources = tuple(s for s in SOURCES if s in set(sources))
        if not sources:
            raise ValueError("at least one feature source must be active")
        self.sources = sources
        self.proj_dim = proj_dim
        frames = n_frames(unit_len, mel_cfg)
        # build all three so parameter streams stay aligned across ablations
        mel = MelEmbed(mel_channels, proj_dim, rng)
        energy = EnergyEmbed(frames, proj_dim, rng)
        raw = RawProject(unit_len, proj_dim, rng)
        if "mel" in sources:
            self.mel_norm = InputNorm(mel_cfg.n_ceps)
            self.mel = mel
        if "energy" in sources:
            self.energy_norm = InputNorm(frames)
            self.energy = energy
        if "raw" in sources:
            self.raw_norm = InputNorm(unit_len)
            self.raw = raw

    @property
    def out_dim(self) -> int:
        return self.proj_dim * len(self.sources)

    def fit_input_norm(self, inputs) -> None:
        """Standardize each descriptor with statistics of ``inputs`` (training data)."""
        inputs = list(inputs)
        if "mel" in self.sources:
            self.mel_norm.fit([x.mel for x in inputs], per_channel=True)
        if "energy" in self.sources:
            self.energy_norm.fit([x.energy for x in inputs], per_channel=False)
        if "raw" in self.sources:
            self.raw_norm.fit([x.raw for x in inputs], per_channel=False)

    def __call__(self, inputs: TFEInputs) -> Tensor:
        parts = []
        if "mel" in self.sources:
            parts.append(self.mel(self.mel_norm(inputs.mel)))
        if "energy" in self.sources:
            parts.append(self.energy(self.energy_norm(inputs.energy)))
        if "raw" in self.sources:
            parts.append(self.raw(self.raw_norm(inputs.raw)))
        return parts[0] if len(parts) == 1 else T.concat(parts, axis=-1)


def tfe_forward(seq: TimeUnitSequence, tfe: TFE, mel_cfg: MelConfig = MelConfig()) -> Tensor:
    return tfe(extract_inputs(seq, mel_cfg))
