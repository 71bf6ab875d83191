"""Synthetic multi-speaker audio: alternating turns of band-limited seeded
noise with silences, plus the exactly matching reference annotation.

Speakers occupy disjoint spectral bands so embeddings of a toy-trained model
can separate them; everything is deterministic given the spec seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import Annotation


@dataclass(frozen=True)
class SynthSpec:
    num_speakers: int = 2
    duration: float = 10.0
    turn_min: float = 0.8
    turn_max: float = 2.5
    silence_fraction: float = 0.15
    bands: tuple[tuple[float, float], ...] | None = None  # per-speaker (low, high) Hz
    sample_rate: int = 16000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_speakers < 1 or self.duration <= 0:
            raise ValueError("num_speakers must be >= 1 and duration > 0")
        if not 0 < self.turn_min <= self.turn_max:
            raise ValueError("need 0 < turn_min <= turn_max")
        if not 0 <= self.silence_fraction < 1:
            raise ValueError(f"silence_fraction must be in [0, 1), "
                             f"got {self.silence_fraction}")
        bands = self.bands if self.bands is not None \
            else default_bands(self.num_speakers, self.sample_rate)
        if len(bands) != self.num_speakers:
            raise ValueError(f"{len(bands)} bands for {self.num_speakers} speakers")
        for low, high in bands:
            if not 0 <= low < high <= self.sample_rate / 2:
                raise ValueError(f"band ({low}, {high}) outside (0, Nyquist)")
        for (_, hi), (lo, _) in zip(sorted(bands), sorted(bands)[1:]):
            if lo < hi:
                raise ValueError("speaker bands must be disjoint")
        object.__setattr__(self, "bands", tuple(bands))


def default_bands(num_speakers: int, sample_rate: int) -> tuple[tuple[float, float], ...]:
    """Disjoint equal-width bands between 200 Hz and 0.9 * Nyquist."""
    low, high = 200.0, 0.45 * sample_rate
    width = (high - low) / num_speakers
    gap = 0.05 * width
    return tuple((low + i * width, low + (i + 1) * width - gap)
                 for i in range(num_speakers))


def _band_noise(rng: np.random.Generator, n: int, band: tuple[float, float],
                sample_rate: int) -> np.ndarray:
    x = rng.standard_normal(n)
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spectrum[(freqs < band[0]) | (freqs > band[1])] = 0
    y = np.fft.irfft(spectrum, n)
    peak = np.max(np.abs(y))
    return (0.6 * y / peak if peak > 0 else y).astype(np.float32)


def synth_generate(spec: SynthSpec) -> tuple[np.ndarray, Annotation]:
    """Waveform plus reference annotation; same spec and seed give bitwise
    identical results."""
    rng = np.random.default_rng(spec.seed)
    sr = spec.sample_rate
    total = int(round(spec.duration * sr))
    wave = np.zeros(total, dtype=np.float32)
    ann = Annotation(file_id="synth")

    sf = spec.silence_fraction
    pos = 0
    speaker = 0
    while pos < total:
        turn = float(rng.uniform(spec.turn_min, spec.turn_max))
        n_turn = min(int(round(turn * sr)), total - pos)
        if n_turn <= 0:
            break
        wave[pos:pos + n_turn] = _band_noise(rng, n_turn, spec.bands[speaker], sr)
        ann.add(pos / sr, n_turn / sr, f"spk{speaker}")
        pos += n_turn
        if sf > 0:
            pos += min(int(round(n_turn * sf / (1 - sf))), total - pos)
        speaker = (speaker + 1) % spec.num_speakers
    return wave, ann.normalized()


def labeled_chunks(waveform: np.ndarray, annotation: Annotation,
                   chunk_duration: float, sample_rate: int
                   ) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Fixed-length single-speaker training chunks cut from labeled segments.

    Returns (chunks (N, L), integer labels (N,), label names); segments
    shorter than the chunk are skipped.
    """
    n_chunk = int(round(chunk_duration * sample_rate))
    names = annotation.labels()
    index = {name: i for i, name in enumerate(names)}
    xs, ys = [], []
    for seg in annotation.normalized().segments:
        start = int(round(seg.onset * sample_rate))
        end = min(int(round(seg.end * sample_rate)), len(waveform))
        for p in range(start, end - n_chunk + 1, n_chunk):
            xs.append(waveform[p:p + n_chunk])
            ys.append(index[seg.label])
    if not xs:
        return (np.empty((0, n_chunk), dtype=np.float32),
                np.empty(0, dtype=np.int64), names)
    return np.stack(xs).astype(np.float32), np.asarray(ys, dtype=np.int64), names
