"""WAV input, resampling, time-unit segmentation and cut-time labels."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

CANONICAL_RATE = 16000
DEFAULT_UNIT_SECONDS = 0.1


class AudioError(Exception):
    """Base class for audio loading failures."""


class AudioFileMissing(AudioError, FileNotFoundError):
    pass


class MalformedWavError(AudioError, ValueError):
    pass


class UnsupportedCodecError(AudioError, ValueError):
    pass


@dataclass
class SignalBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class TimeUnitSequence:
    units: np.ndarray  # [N, unit_len], zero padded at the end only
    unit_seconds: float
    sample_rate: int
    n_samples: int

    @property
    def n_units(self) -> int:
        return self.units.shape[0]

    @property
    def unit_len(self) -> int:
        return self.units.shape[1]

    @property
    def original_duration_s(self) -> float:
        return self.n_samples / self.sample_rate

    def flatten(self) -> np.ndarray:
        """Concatenate the units and drop the end padding."""
        return self.units.reshape(-1)[: self.n_samples]


def load_wav(path) -> SignalBuffer:
    """Read a PCM (8/16/24/32-bit int) or float WAV as mono float32."""
    path = Path(path)
    if not path.is_file():
        raise AudioFileMissing(f"no such audio file: {path}")
    with open(path, "rb") as fh:
        head = fh.read(12)
    if len(head) < 12 or head[:4] not in (b"RIFF", b"RIFX", b"RF64") or head[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        msg = str(exc)
        if "Unknown wave file format" in msg or "Unsupported" in msg or "bit depth" in msg:
            raise UnsupportedCodecError(f"{path}: {msg}") from exc
        raise MalformedWavError(f"{path}: {msg}") from exc
    except (EOFError, OSError) as exc:
        raise MalformedWavError(f"{path}: {exc}") from exc

    if data.dtype == np.uint8:
        x = (data.astype(np.float32) - 128.0) / 128.0
    elif data.dtype == np.int16:
        x = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        # scipy returns 24-bit PCM left-aligned in int32, so one scale covers both
        x = (data.astype(np.float64) / 2147483648.0).astype(np.float32)
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float32)
    else:
        raise UnsupportedCodecError(f"{path}: sample type {data.dtype} not supported")
    if x.ndim == 2:
        x = x.mean(axis=1, dtype=np.float64).astype(np.float32)
    if x.size == 0:
        raise MalformedWavError(f"{path}: no samples")
    return SignalBuffer(x, int(rate))


def write_wav(path, sig: SignalBuffer) -> None:
    """Write 16-bit mono PCM."""
    q = np.clip(np.round(sig.samples.astype(np.float64) * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, sig.sample_rate, q)


def resample(sig: SignalBuffer, target_rate: int) -> SignalBuffer:
    """Linear-interpolation resampling."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == sig.sample_rate:
        return SignalBuffer(sig.samples.copy(), sig.sample_rate)
    n_out = max(1, int(round(len(sig.samples) * target_rate / sig.sample_rate)))
    pos = np.arange(n_out, dtype=np.float64) * (sig.sample_rate / target_rate)
    out = np.interp(pos, np.arange(len(sig.samples)), sig.samples.astype(np.float64))
    return SignalBuffer(out.astype(np.float32), target_rate)


def load_audio(path, rate: int = CANONICAL_RATE) -> SignalBuffer:
    """``load_wav`` followed by resampling to the working rate."""
    return resample(load_wav(path), rate)


def split_time_units(sig: SignalBuffer, unit_seconds: float = DEFAULT_UNIT_SECONDS) -> TimeUnitSequence:
    if unit_seconds <= 0:
        raise ValueError("unit_seconds must be positive")
    n = len(sig.samples)
    if n == 0:
        raise ValueError("cannot segment an empty signal")
    unit_len = int(round(unit_seconds * sig.sample_rate))
    if unit_len < 1:
        raise ValueError("unit shorter than one sample")
    n_units = math.ceil(n / unit_len)
    buf = np.zeros(n_units * unit_len, dtype=np.float32)
    buf[:n] = sig.samples
    return TimeUnitSequence(buf.reshape(n_units, unit_len), unit_seconds, sig.sample_rate, n)


def time_to_unit(t: float, unit_seconds: float, n_units: int) -> int:
    # tolerance keeps 0.3 / 0.1 from flooring to 2
    return min(int(math.floor(t / unit_seconds + 1e-9)), n_units - 1)


def cut_times_to_labels(cut_times_s, seq: TimeUnitSequence) -> np.ndarray:
    """Binary per-unit labels; a cut at ``t`` marks unit ``floor(t / unit)``."""
    y = np.zeros(seq.n_units, dtype=np.int8)
    dur = seq.original_duration_s
    for t in cut_times_s:
        if not (-1e-9 <= t <= dur + 1e-9):
            raise ValueError(f"cut time {t} outside [0, {dur}]")
        y[time_to_unit(max(t, 0.0), seq.unit_seconds, seq.n_units)] = 1
    return y


# ---------------------------------------------------------------- manifests


@dataclass
class ManifestEntry:
    id: str
    wav: str
    duration_s: float
    cuts_s: list

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "wav": self.wav, "duration_s": self.duration_s,
                           "cuts_s": list(self.cuts_s)})


def read_manifest(path) -> list[ManifestEntry]:
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                entries.append(ManifestEntry(str(rec["id"]), rec["wav"], float(rec["duration_s"]),
                                             [float(t) for t in rec["cuts_s"]]))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest record ({exc})") from exc
    return entries


def write_manifest(path, entries) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(e.to_json() + "\n")


def resolve_wav(manifest_path, entry: ManifestEntry) -> Path:
    return Path(manifest_path).parent / entry.wav
