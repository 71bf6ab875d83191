"""WAV (PCM 16-bit mono) and raw float32 sample file I/O."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np


class AudioFormatError(ValueError):
    pass


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    """Write float samples in [-1, 1] as 16-bit mono PCM."""
    pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def read_wav(path: str | Path, expected_rate: int | None = None) -> tuple[np.ndarray, int]:
    """Read a PCM16 mono WAV into float32 samples in [-1, 1)."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise AudioFormatError(f"{path}: expected mono, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise AudioFormatError(f"{path}: expected 16-bit PCM, got "
                                   f"{8 * w.getsampwidth()}-bit")
        rate = w.getframerate()
        if expected_rate is not None and rate != expected_rate:
            raise AudioFormatError(f"{path}: sample rate {rate} != configured {expected_rate}")
        pcm = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return pcm.astype(np.float32) / 32768.0, rate


def write_raw_f32(path: str | Path, samples: np.ndarray) -> None:
    np.asarray(samples, dtype="<f4").tofile(str(path))


def read_raw_f32(path: str | Path) -> np.ndarray:
    return np.fromfile(str(path), dtype="<f4")


def read_audio(path: str | Path, sample_rate: int) -> np.ndarray:
    """Dispatch on extension: .wav as PCM16 mono, anything else as raw f32."""
    if str(path).lower().endswith(".wav"):
        samples, _ = read_wav(path, expected_rate=sample_rate)
        return samples
    return read_raw_f32(path)
