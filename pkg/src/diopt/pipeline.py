"""Online diarization: sliding-window chunking, per-chunk segmentation and
speaker embedding, incremental centroid clustering, and latency-bounded
label emission.

A stream is processed strictly in chunk order.  Labels for a frame are
finalized once the stream is ``latency`` seconds past it, aggregating the
activity-weighted votes of every chunk seen so far; the wall-clock span from
chunk input to label output is recorded per chunk.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .metrics import Annotation
from .models import ModelGraph, forward
from .tensor import Tensor


@dataclass(frozen=True)
class PipelineConfig:
    window_duration: float = 5.0
    step: float = 0.25
    latency: float = 3.0
    tau_active: float = 0.555
    rho_update: float = 0.422
    delta_new: float = 1.517
    sample_rate: int = 16000
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.step <= self.latency <= self.window_duration:
            raise ValueError(f"need 0 < step <= latency <= window_duration, got "
                             f"step={self.step}, latency={self.latency}, "
                             f"window={self.window_duration}")
        if not 0 < self.tau_active < 1:
            raise ValueError(f"tau_active must be in (0, 1), got {self.tau_active}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")


@dataclass(frozen=True)
class StreamChunk:
    index: int
    start_time: float
    samples: np.ndarray  # window_duration worth, zero-padded if partial


@dataclass
class ClusteringState:
    """Speaker centroids with update counts; label i is centroid i forever."""

    centroids: list[np.ndarray] = field(default_factory=list)
    counts: list[int] = field(default_factory=list)
    next_label: int = 0


@dataclass
class ChunkResult:
    chunk_index: int
    start_time: float
    activities: np.ndarray          # (T, k_max) scores in [0, 1]
    slot_labels: dict[int, int]     # active slot -> global speaker label
    t1: float                       # wall clock at chunk input
    t2: float                       # wall clock at label output


def chunk_stream(samples: np.ndarray, cfg: PipelineConfig) -> list[StreamChunk]:
    """Fixed windows starting at 0, step, 2*step, ... while they fit, plus one
    zero-padded final chunk when audio remains past the last full window."""
    samples = np.asarray(samples, dtype=np.float32)
    n = len(samples)
    if n == 0:
        return []
    win = int(round(cfg.window_duration * cfg.sample_rate))
    hop = int(round(cfg.step * cfg.sample_rate))
    chunks: list[StreamChunk] = []
    start = 0
    while start + win <= n:
        chunks.append(StreamChunk(len(chunks), start / cfg.sample_rate,
                                  samples[start:start + win]))
        start += hop
    covered = start - hop + win if chunks else 0
    if covered < n:  # audio extends past the last full window
        tail = samples[start:n]
        padded = np.zeros(win, dtype=np.float32)
        padded[:len(tail)] = tail
        chunks.append(StreamChunk(len(chunks), start / cfg.sample_rate, padded))
    return chunks


def segment_chunk(segmenter: ModelGraph, chunk: StreamChunk) -> np.ndarray:
    """Per-frame, per-slot activity scores (T, k_max) for one chunk."""
    out = forward(segmenter, Tensor(chunk.samples[None, :]))
    return out.data


def embed_active_speakers(embedder: ModelGraph, chunk: StreamChunk,
                          activities: np.ndarray,
                          tau_active: float) -> list[tuple[int, np.ndarray]]:
    """L2-normalized embedding per slot whose mean activity exceeds the
    threshold; the chunk waveform is weighted by that slot's frame scores."""
    frames = activities.shape[0]
    n = len(chunk.samples)
    per_frame = max(1, n // frames)
    out: list[tuple[int, np.ndarray]] = []
    for slot in range(activities.shape[1]):
        act = activities[:, slot]
        if float(act.mean()) <= tau_active:
            continue
        gain = np.repeat(act, per_frame)
        if len(gain) < n:
            gain = np.concatenate([gain, np.full(n - len(gain), gain[-1])])
        weighted = (chunk.samples * gain[:n]).astype(np.float32)
        emb = forward(embedder, Tensor(weighted[None, :])).data.astype(np.float64)
        norm = float(np.linalg.norm(emb))
        out.append((slot, emb / norm if norm > 1e-12 else emb))
    return out


def cluster_update(state: ClusteringState, embeddings: list[np.ndarray],
                   cfg: PipelineConfig,
                   speech_ratios: list[float] | None = None
                   ) -> tuple[list[int], ClusteringState]:
    """Assign each embedding to the nearest centroid by cosine distance,
    creating a new speaker when the distance exceeds ``delta_new``.

    The matched centroid moves by running mean only when the slot's speech
    ratio reaches ``rho_update``.  Deterministic in input order; returns the
    labels and a new state (the input state is not mutated).
    """
    new = ClusteringState([c.copy() for c in state.centroids],
                          list(state.counts), state.next_label)
    if speech_ratios is None:
        speech_ratios = [1.0] * len(embeddings)
    labels: list[int] = []
    for emb, ratio in zip(embeddings, speech_ratios):
        if emb.ndim != 1 or (new.centroids and emb.shape != new.centroids[0].shape):
            raise ValueError(f"embedding dim {emb.shape} does not match state")
        best, best_dist = -1, np.inf
        for i, c in enumerate(new.centroids):
            denom = np.linalg.norm(emb) * np.linalg.norm(c)
            dist = 1.0 - float(emb @ c) / denom if denom > 1e-12 else 1.0
            if dist < best_dist:
                best, best_dist = i, dist
        if best < 0 or best_dist > cfg.delta_new:
            labels.append(new.next_label)
            new.centroids.append(emb.copy())
            new.counts.append(1)
            new.next_label += 1
        else:
            labels.append(best)
            if ratio >= cfg.rho_update:
                k = new.counts[best]
                new.centroids[best] = (new.centroids[best] * k + emb) / (k + 1)
                new.counts[best] = k + 1
    return labels, new


def run_pipeline(embedder: ModelGraph, segmenter: ModelGraph,
                 audio: np.ndarray, cfg: PipelineConfig,
                 file_id: str = "audio") -> tuple[Annotation, list[ChunkResult]]:
    """Diarize a finite stream; returns the merged annotation and per-chunk
    results carrying the wall-clock latency samples."""
    chunks = chunk_stream(audio, cfg)
    state = ClusteringState()
    results: list[ChunkResult] = []
    votes: dict[int, dict[int, float]] = {}   # frame -> label -> weight
    final: dict[int, int] = {}                # frame -> winning label
    emitted_to = 0                            # frames below this are final
    frame_dur = None

    for chunk in chunks:
        t1 = time.perf_counter()
        activities = segment_chunk(segmenter, chunk)
        frames = activities.shape[0]
        if frame_dur is None:
            frame_dur = cfg.window_duration / frames
        offset = int(round(chunk.start_time / frame_dur))

        embedded = embed_active_speakers(embedder, chunk, activities, cfg.tau_active)
        ratios = [float((activities[:, slot] > cfg.tau_active).mean())
                  for slot, _ in embedded]
        labels, state = cluster_update(state, [e for _, e in embedded], cfg, ratios)
        slot_labels = {slot: lab for (slot, _), lab in zip(embedded, labels)}

        for slot, lab in slot_labels.items():
            act = activities[:, slot]
            for t in np.nonzero(act > cfg.tau_active)[0]:
                votes.setdefault(offset + int(t), {})[lab] = \
                    votes.get(offset + int(t), {}).get(lab, 0.0) + float(act[t])

        # emission horizon: frames latency seconds behind the stream are final
        stream_time = chunk.start_time + cfg.window_duration
        horizon = int(np.floor((stream_time - cfg.latency) / frame_dur + 1e-9)) + 1
        emitted_to = _finalize(votes, final, emitted_to, horizon)
        t2 = time.perf_counter()
        results.append(ChunkResult(chunk.index, chunk.start_time, activities,
                                   slot_labels, t1, t2))

    if votes:
        _finalize(votes, final, emitted_to, max(votes) + 1)
    return _frames_to_annotation(final, frame_dur, file_id), results


def _finalize(votes: dict[int, dict[int, float]], final: dict[int, int],
              emitted_to: int, horizon: int) -> int:
    for f in range(emitted_to, horizon):
        tally = votes.pop(f, None)
        if tally:
            # activity-weighted majority; ties go to the lower label id
            final[f] = min(tally, key=lambda lab: (-tally[lab], lab))
    return max(emitted_to, horizon)


def _frames_to_annotation(final: dict[int, int], frame_dur: float | None,
                          file_id: str) -> Annotation:
    ann = Annotation(file_id=file_id)
    if not final or frame_dur is None:
        return ann
    frames = sorted(final)
    run_start = frames[0]
    prev = frames[0]
    for f in frames[1:] + [None]:
        if f is not None and f == prev + 1 and final[f] == final[run_start]:
            prev = f
            continue
        onset = run_start * frame_dur
        end = (prev + 1) * frame_dur
        ann.add(onset, end - onset, f"spk{final[run_start]}")
        if f is not None:
            run_start = prev = f
    return ann.normalized()
