"""Diarization error rate with optimal speaker mapping, latency statistics
and the benchmark report table.

DER follows the standard rich-transcription decomposition with no collar and
overlapping reference speech counted per speaker-second:

    DER = (missed + false_alarm + confusion) / total_reference_speech

computed by exact piecewise-constant integration over the merged breakpoint
set of both annotations, never by frame sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

_MERGE_EPS = 1e-9  # adjacency tolerance when coalescing same-label segments


@dataclass(frozen=True)
class Segment:
    onset: float
    duration: float
    label: str

    @property
    def end(self) -> float:
        return self.onset + self.duration


@dataclass
class Annotation:
    """Labeled time segments for one audio file (reference or hypothesis)."""

    segments: list[Segment] = field(default_factory=list)
    file_id: str = "audio"

    def add(self, onset: float, duration: float, label: str) -> None:
        self.segments.append(Segment(onset, duration, label))

    def labels(self) -> list[str]:
        return sorted({s.label for s in self.segments})

    def total_duration(self) -> float:
        return sum(s.duration for s in self.segments)

    def normalized(self) -> "Annotation":
        """Sort by onset and merge overlapping/adjacent same-label segments."""
        for s in self.segments:
            if not (math.isfinite(s.onset) and s.duration > 0):
                raise ValueError(f"invalid segment {s}: finite onset and "
                                 f"duration > 0 required")
        per_label: dict[str, list[Segment]] = {}
        for s in sorted(self.segments, key=lambda s: (s.onset, s.label)):
            runs = per_label.setdefault(s.label, [])
            if runs and s.onset <= runs[-1].end + _MERGE_EPS:
                last = runs[-1]
                end = max(last.end, s.end)
                runs[-1] = Segment(last.onset, end - last.onset, s.label)
            else:
                runs.append(s)
        merged = [s for runs in per_label.values() for s in runs]
        merged.sort(key=lambda s: (s.onset, s.label))
        return Annotation(merged, self.file_id)


@dataclass
class DERBreakdown:
    missed: float
    false_alarm: float
    confusion: float
    total_reference_speech: float
    der: float


@dataclass
class LatencyStats:
    samples: list[float]
    mean: float
    std: float


@dataclass
class BenchRow:
    variant: str
    der: DERBreakdown
    latency: LatencyStats
    size_bytes: int


@dataclass
class BenchReport:
    rows: list[BenchRow]
    baseline: str

    CSV_HEADER = "Model,DER,latency mean s,latency % of baseline,size MB"

    def to_csv(self) -> str:
        base = next(r for r in self.rows if r.variant == self.baseline)
        lines = [self.CSV_HEADER]
        for r in self.rows:
            pct = 100.0 * r.latency.mean / base.latency.mean
            lines.append(",".join([
                r.variant,
                repr(r.der.der),
                repr(r.latency.mean),
                repr(pct),
                repr(r.size_bytes / 2 ** 20),
            ]))
        return "\n".join(lines) + "\n"


def _intervals(ref: Annotation, hyp: Annotation):
    """Elementary intervals with the active label sets of both annotations."""
    events: list[tuple[float, int, int, str]] = []  # (time, side, delta, label)
    for side, ann in ((0, ref), (1, hyp)):
        for s in ann.segments:
            events.append((s.onset, side, +1, s.label))
            events.append((s.end, side, -1, s.label))
    times = sorted({e[0] for e in events})
    events.sort(key=lambda e: e[0])

    active: tuple[set[str], set[str]] = (set(), set())
    out = []
    idx = 0
    for i, t in enumerate(times):
        while idx < len(events) and events[idx][0] == t:
            _, side, delta, label = events[idx]
            if delta > 0:
                active[side].add(label)
            else:
                active[side].discard(label)
            idx += 1
        if i + 1 < len(times):
            dur = times[i + 1] - t
            if dur > 0 and (active[0] or active[1]):
                out.append((dur, frozenset(active[0]), frozenset(active[1])))
    return out


def _overlap_matrix(intervals, ref_labels: list[str], hyp_labels: list[str]) -> np.ndarray:
    ri = {lab: i for i, lab in enumerate(ref_labels)}
    hi = {lab: i for i, lab in enumerate(hyp_labels)}
    m = np.zeros((len(ref_labels), len(hyp_labels)))
    for dur, rset, hset in intervals:
        for r in rset:
            for h in hset:
                m[ri[r], hi[h]] += dur
    return m


def optimal_mapping(reference: Annotation, hypothesis: Annotation) -> dict[str, str]:
    """One-to-one partial map hypothesis label -> reference label maximizing
    correctly attributed speech time.

    Exhaustive search up to 6 labels per side, Hungarian assignment above;
    pairs with zero overlap are left unmapped.
    """
    ref = reference.normalized()
    hyp = hypothesis.normalized()
    ref_labels, hyp_labels = ref.labels(), hyp.labels()
    if not ref_labels or not hyp_labels:
        return {}
    overlap = _overlap_matrix(_intervals(ref, hyp), ref_labels, hyp_labels)

    if max(len(ref_labels), len(hyp_labels)) <= 6:
        pairs = _best_assignment_exhaustive(overlap)
    else:
        rows, cols = linear_sum_assignment(-overlap)
        pairs = list(zip(rows, cols))
    return {hyp_labels[h]: ref_labels[r] for r, h in pairs if overlap[r, h] > 0}


def _best_assignment_exhaustive(overlap: np.ndarray) -> list[tuple[int, int]]:
    n_ref, n_hyp = overlap.shape
    best, best_score = [], -1.0
    if n_ref <= n_hyp:
        for cols in permutations(range(n_hyp), n_ref):
            score = sum(overlap[r, c] for r, c in enumerate(cols))
            if score > best_score:
                best_score = score
                best = list(enumerate(cols))
    else:
        for rows in permutations(range(n_ref), n_hyp):
            score = sum(overlap[r, h] for h, r in enumerate(rows))
            if score > best_score:
                best_score = score
                best = [(r, h) for h, r in enumerate(rows)]
    return best


def der(reference: Annotation, hypothesis: Annotation) -> DERBreakdown:
    """Diarization error rate of ``hypothesis`` against ``reference``.

    Uses the confusion-minimizing one-to-one speaker mapping, no collar, and
    per-speaker-second accounting of overlapped speech.  Raises on an empty
    reference (undefined denominator) or mismatched file ids.
    """
    if reference.file_id != hypothesis.file_id:
        raise ValueError(f"file id mismatch: reference {reference.file_id!r} "
                         f"vs hypothesis {hypothesis.file_id!r}")
    ref = reference.normalized()
    hyp = hypothesis.normalized()
    mapping = optimal_mapping(ref, hyp)

    missed = false_alarm = confusion = total = 0.0
    for dur, rset, hset in _intervals(ref, hyp):
        n_ref, n_hyp = len(rset), len(hset)
        n_correct = sum(1 for h in hset if mapping.get(h) in rset)
        missed += dur * max(0, n_ref - n_hyp)
        false_alarm += dur * max(0, n_hyp - n_ref)
        confusion += dur * (min(n_ref, n_hyp) - n_correct)
        total += dur * n_ref
    if total <= 0:
        raise ValueError("reference annotation contains no speech; DER undefined")
    return DERBreakdown(missed, false_alarm, confusion, total,
                        (missed + false_alarm + confusion) / total)


def latency_stats(samples: list[float]) -> LatencyStats:
    """Mean and sample (n-1) standard deviation of latency measurements."""
    if len(samples) < 1:
        raise ValueError("latency_stats requires at least one sample")
    arr = np.asarray(samples, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if len(samples) > 1 else 0.0
    return LatencyStats(list(map(float, samples)), mean, std)


def bench_report(rows: list[BenchRow], baseline: str) -> BenchReport:
    """Table of per-variant DER / latency / size, with latency percentages
    relative to the named baseline row."""
    if not any(r.variant == baseline for r in rows):
        raise ValueError(f"baseline variant {baseline!r} not among "
                         f"{[r.variant for r in rows]}")
    return BenchReport(rows, baseline)
