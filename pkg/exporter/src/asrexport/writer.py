"""Writer for the utterance-export interchange format.

This is an independent implementation of the published byte layout (the
consuming engine has its own reader): a stream of records, each prefixed by
a little-endian u64 byte length and consisting of a one-line canonical JSON
header followed by float32 matrices (encoder frames, per-step taps, and,
when present, per-step logits).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np


@dataclass(frozen=True)
class UtteranceRecord:
    """One utterance's export payload; transcript includes the final eos id."""

    utterance_id: str
    transcript: tuple[int, ...]
    frames: np.ndarray
    taps: np.ndarray
    logits: np.ndarray | None
    frame_duration_s: float
    eos_id: int
    vocab_size: int | None

    def check(self) -> None:
        if len(self.transcript) == 0 or self.transcript[-1] != self.eos_id:
            raise ValueError(f"'{self.utterance_id}': transcript must end with the eos id")
        if self.taps.shape[0] != len(self.transcript):
            raise ValueError(f"'{self.utterance_id}': one tap row per target position required")
        if self.frames.shape[1] != self.taps.shape[1]:
            raise ValueError(f"'{self.utterance_id}': frame and tap dims differ")
        if self.logits is not None and self.logits.shape != (
            len(self.transcript), self.vocab_size or self.logits.shape[1]
        ):
            raise ValueError(f"'{self.utterance_id}': logits shape mismatch")


def record_bytes(rec: UtteranceRecord) -> bytes:
    rec.check()
    header = {
        "dim": int(rec.taps.shape[1]),
        "eos_id": int(rec.eos_id),
        "frame_count": int(rec.frames.shape[0]),
        "frame_duration_s": float(rec.frame_duration_s),
        "has_logits": rec.logits is not None,
        "steps": int(rec.taps.shape[0]),
        "transcript": [int(t) for t in rec.transcript],
        "utterance_id": rec.utterance_id,
        "vocab_size": int(rec.vocab_size) if rec.vocab_size is not None else None,
    }
    body = json.dumps(
        header, ensure_ascii=False, sort_keys=True, separators=(",", ":")
    ).encode("utf-8") + b"\n"
    body += np.ascontiguousarray(rec.frames, dtype="<f4").tobytes()
    body += np.ascontiguousarray(rec.taps, dtype="<f4").tobytes()
    if rec.logits is not None:
        body += np.ascontiguousarray(rec.logits, dtype="<f4").tobytes()
    return struct.pack("<Q", len(body)) + body


def write_records(records: Iterable[UtteranceRecord], path: str | Path) -> int:
    """Stream records to disk; returns how many were written."""
    count = 0
    with open(path, "wb") as fh:
        for rec in records:
            fh.write(record_bytes(rec))
            count += 1
    return count
