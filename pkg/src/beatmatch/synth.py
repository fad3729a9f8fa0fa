"""Synthetic click-track audio with labelled cut points.

Each audio is a quiet tonal bed plus noise plus a click on every beat. A
random subset of the downbeats becomes cut points, and those clicks are
played louder. The whole mix is then scaled by a random per-audio gain, so
a cut click in a quiet audio can be as loud as an ordinary click in a loud
one: telling them apart needs the surrounding beats for reference.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audio import CANONICAL_RATE, ManifestEntry, SignalBuffer, write_manifest, write_wav

CLICK_SECONDS = 0.03


@dataclass
class SynthSpec:
    n_audios: int = 200
    duration_range: tuple = (4.0, 8.0)
    tempo_range: tuple = (120.0, 160.0)
    beats_per_bar: int = 4
    cut_fraction: float = 0.5  # probability a downbeat is promoted to a cut
    max_cuts: int = 8
    noise_level: float = 0.005
    gain_range: tuple = (0.3, 0.9)
    accent: float = 3.0  # cut click amplitude relative to an ordinary click
    phase_s: float | None = None  # first downbeat time; random within one bar when None
    sample_rate: int = CANONICAL_RATE
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.duration_range
        if not 0 < lo <= hi:
            raise ValueError("durations must be positive with min <= max")
        tlo, thi = self.tempo_range
        if not 0 < tlo <= thi:
            raise ValueError("tempo range must be positive with min <= max")
        if not 0.0 <= self.cut_fraction <= 1.0:
            raise ValueError("cut_fraction must lie in [0, 1]")
        if self.max_cuts < 0:
            raise ValueError("max_cuts must be >= 0")
        if self.beats_per_bar < 1:
            raise ValueError("beats_per_bar must be >= 1")
        if self.n_audios < 0:
            raise ValueError("n_audios must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _click(sr: int, freq: float) -> np.ndarray:
    t = np.arange(int(CLICK_SECONDS * sr)) / sr
    return np.exp(-t / 0.006) * np.sin(2 * np.pi * freq * t)


def generate_audio(spec: SynthSpec, rng: np.random.Generator) -> tuple[SignalBuffer, list[float]]:
    """One waveform and its sorted cut times in seconds."""
    spec.validate()
    sr = spec.sample_rate
    duration = rng.uniform(*spec.duration_range)
    n = int(round(duration * sr))
    tempo = rng.uniform(*spec.tempo_range)
    period = 60.0 / tempo
    phase = rng.uniform(0.0, period * spec.beats_per_bar) if spec.phase_s is None else spec.phase_s
    # beats before the first downbeat still click
    lead = int(phase // period)

    onsets = []
    t = phase - lead * period
    while t < n / sr - 1e-9:
        onsets.append(int(round(t * sr)))
        t += period
    onsets = [s for s in onsets if s < n]
    if not onsets:
        raise ValueError("spec produces no beats within the audio")

    downbeats = np.arange(lead, len(onsets), spec.beats_per_bar)
    promoted = downbeats[rng.random(downbeats.size) < spec.cut_fraction]
    if promoted.size > spec.max_cuts:
        promoted = np.sort(rng.choice(promoted, spec.max_cuts, replace=False))
    is_cut = np.zeros(len(onsets), dtype=bool)
    is_cut[promoted] = True

    # bed tones change every bar and click pitch every beat, so no stable
    # timbre identifies an audio; only the level is shared within it
    x = np.zeros(n)
    bar = int(round(period * spec.beats_per_bar * sr))
    start = onsets[lead] - bar * -(-onsets[lead] // bar) if lead < len(onsets) else 0
    for b0 in range(start, n, bar):
        lo, hi = max(b0, 0), min(b0 + bar, n)
        ts = np.arange(lo, hi) / sr
        for _ in range(int(rng.integers(2, 4))):
            x[lo:hi] += rng.uniform(0.005, 0.03) * np.sin(2 * np.pi * rng.uniform(110, 440) * ts)
    x += spec.noise_level * rng.standard_normal(n)

    for i, s in enumerate(onsets):
        amp = 0.3 * rng.uniform(0.9, 1.1) * (spec.accent if is_cut[i] else 1.0)
        seg = _click(sr, rng.uniform(900.0, 2000.0))[: n - s]
        x[s:s + seg.size] += amp * seg
    x = np.clip(rng.uniform(*spec.gain_range) * x, -1.0, 1.0)

    cuts = [onsets[i] / sr for i in np.flatnonzero(is_cut)]
    return SignalBuffer(x.astype(np.float32), sr), cuts


def generate_dataset(spec: SynthSpec, out_dir) -> Path:
    """Write ``wav/<id>.wav`` files plus ``manifest.jsonl`` under ``out_dir``."""
    spec.validate()
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(spec.n_audios):
        rng = np.random.default_rng([spec.seed, i])
        sig, cuts = generate_audio(spec, rng)
        aid = f"synth_{i:05d}"
        rel = f"wav/{aid}.wav"
        write_wav(out / rel, sig)
        entries.append(ManifestEntry(aid, rel, len(sig.samples) / sig.sample_rate, cuts))
    manifest = out / "manifest.jsonl"
    write_manifest(manifest, entries)
    return manifest
