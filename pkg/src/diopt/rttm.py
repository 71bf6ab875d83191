"""RTTM segment file reading and writing.

Lines follow ``SPEAKER <file> 1 <onset> <dur> <NA> <NA> <label> <NA> <NA>``.
The writer emits onsets/durations with exactly three decimals; the reader
accepts arbitrary precision and reports malformed lines by number.
"""

from __future__ import annotations

from pathlib import Path

from .metrics import Annotation


class RTTMParseError(ValueError):
    pass


def rttm_read(path: str | Path) -> Annotation:
    ann = Annotation(file_id="")
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 10:
            raise RTTMParseError(f"{path}:{lineno}: expected 10 fields, got {len(parts)}")
        if parts[0] != "SPEAKER":
            raise RTTMParseError(f"{path}:{lineno}: expected SPEAKER record, got {parts[0]!r}")
        try:
            onset = float(parts[3])
            duration = float(parts[4])
        except ValueError as err:
            raise RTTMParseError(f"{path}:{lineno}: non-numeric onset/duration") from err
        if not ann.file_id:
            ann.file_id = parts[1]
        elif ann.file_id != parts[1]:
            raise RTTMParseError(f"{path}:{lineno}: mixed file ids "
                                 f"{ann.file_id!r} and {parts[1]!r}")
        ann.add(onset, duration, parts[7])
    if not ann.file_id:
        ann.file_id = "audio"
    return ann


def rttm_write(annotation: Annotation, path: str | Path) -> None:
    lines = []
    for s in sorted(annotation.segments, key=lambda s: (s.onset, s.label)):
        lines.append(f"SPEAKER {annotation.file_id} 1 {s.onset:.3f} {s.duration:.3f} "
                     f"<NA> <NA> {s.label} <NA> <NA>")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
