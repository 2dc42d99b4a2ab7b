"""Scoring: CER, Levenshtein S/D/I breakdown, relative reduction, RTF, reports."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .pipeline import DecodeResult

__all__ = [
    "ErrorCounts",
    "UtteranceScore",
    "EvalReport",
    "levenshtein_align",
    "cer",
    "relative_reduction",
    "Normalizer",
    "load_mapping_table",
    "build_report",
]


@dataclass(frozen=True)
class ErrorCounts:
    """Substitution/deletion/insertion counts against a reference of ref_len."""

    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    def __post_init__(self) -> None:
        if min(self.substitutions, self.deletions, self.insertions) < 0:
            raise ValueError("error counts must be non-negative")
        if self.ref_len < 1:
            raise ValueError("ref_len must be positive")
        if self.substitutions + self.deletions > self.ref_len:
            raise ValueError("S + D cannot exceed ref_len")

    @property
    def total(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    def __add__(self, other: "ErrorCounts") -> "ErrorCounts":
        return ErrorCounts(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.ref_len + other.ref_len,
        )


def _encode_pair(ref: Sequence, hyp: Sequence) -> tuple[np.ndarray, np.ndarray]:
    # Map arbitrary hashable symbols to small ints for fast numpy comparison.
    table: dict = {}
    def enc(seq):
        out = np.empty(len(seq), dtype=np.int64)
        for i, sym in enumerate(seq):
            out[i] = table.setdefault(sym, len(table))
        return out
    return enc(ref), enc(hyp)


def _distance_matrix(ref_ids: np.ndarray, hyp_ids: np.ndarray) -> np.ndarray:
    """Full unit-cost edit-distance DP matrix, rows vectorized over hyp."""
    m, n = len(ref_ids), len(hyp_ids)
    js = np.arange(n + 1, dtype=np.int64)
    mat = np.empty((m + 1, n + 1), dtype=np.int64)
    mat[0] = js
    prev = mat[0]
    cand = np.empty(n + 1, dtype=np.int64)
    for i in range(1, m + 1):
        sub = (hyp_ids != ref_ids[i - 1]).astype(np.int64)
        cand[0] = i
        np.minimum(prev[:-1] + sub, prev[1:] + 1, out=cand[1:])
        # Close the in-row (insertion) dependency with a skewed prefix min.
        mat[i] = np.minimum.accumulate(cand - js) + js
        prev = mat[i]
    return mat


def levenshtein_align(ref: Sequence, hyp: Sequence) -> ErrorCounts:
    """Count S/D/I from a minimum-edit-distance alignment of hyp against ref.

    The backtrace is deterministic: on cost ties it prefers the diagonal
    move, then up (deletion), then left (insertion), so counts are
    reproducible even when several minimum-cost alignments exist.
    """
    if len(ref) == 0:
        raise ValueError("reference must be non-empty (CER undefined)")
    ref_ids, hyp_ids = _encode_pair(ref, hyp)
    mat = _distance_matrix(ref_ids, hyp_ids)
    i, j = len(ref_ids), len(hyp_ids)
    s = d = ins = 0
    while i > 0 or j > 0:
        here = mat[i, j]
        if i > 0 and j > 0 and here == mat[i - 1, j - 1] + (ref_ids[i - 1] != hyp_ids[j - 1]):
            if ref_ids[i - 1] != hyp_ids[j - 1]:
                s += 1
            i -= 1
            j -= 1
        elif i > 0 and here == mat[i - 1, j] + 1:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return ErrorCounts(s, d, ins, len(ref_ids))


def cer(counts: ErrorCounts) -> float:
    """Character error rate in percent: 100 * (S + D + I) / ref_len."""
    return 100.0 * counts.total / counts.ref_len


def relative_reduction(base_cer: float, new_cer: float) -> float:
    """Relative CER reduction in percent versus a baseline."""
    if base_cer <= 0:
        raise ValueError(f"base CER must be positive, got {base_cer}")
    return 100.0 * (base_cer - new_cer) / base_cer


def load_mapping_table(path: str | Path) -> dict:
    """Load a symbol-mapping table from a JSON object file."""
    try:
        with open(path, encoding="utf-8") as fh:
            table = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"malformed mapping table {path}: {exc}") from exc
    if not isinstance(table, dict):
        raise ValueError(f"mapping table {path} must hold a JSON object")
    return table


@dataclass(frozen=True)
class Normalizer:
    """Sequential symbol-mapping normalization applied before scoring.

    Tables are applied in declared order. A table value may be a string or
    sequence longer than one symbol (e.g. numeral verbalization). With no
    tables the normalizer is the identity.
    """

    tables: tuple[Mapping, ...] = ()

    @classmethod
    def from_files(cls, paths: Iterable[str | Path]) -> "Normalizer":
        return cls(tuple(load_mapping_table(p) for p in paths))

    def __call__(self, seq):
        for table in self.tables:
            seq = self._apply(seq, table)
        return seq

    @staticmethod
    def _apply(seq, table: Mapping):
        if isinstance(seq, str):
            return "".join(str(table.get(ch, ch)) for ch in seq)
        out = []
        for sym in seq:
            mapped = table.get(sym, sym)
            if isinstance(mapped, (list, tuple)):
                out.extend(mapped)
            else:
                out.append(mapped)
        return tuple(out)


@dataclass(frozen=True)
class UtteranceScore:
    utterance_id: str
    counts: ErrorCounts
    wall_time_s: float
    audio_duration_s: float

    @property
    def cer(self) -> float:
        return cer(self.counts)


@dataclass(frozen=True)
class EvalReport:
    """Per-utterance scores plus corpus aggregates (CER, S/D/I, RTF)."""

    per_utterance: tuple[UtteranceScore, ...]
    aggregate_counts: ErrorCounts
    aggregate_cer: float
    rtf: float

    def csv_text(self) -> str:
        lines = ["id,ref_len,S,D,I,cer,wall_time_s,audio_s"]
        for u in self.per_utterance:
            c = u.counts
            lines.append(
                f"{u.utterance_id},{c.ref_len},{c.substitutions},{c.deletions},"
                f"{c.insertions},{u.cer:.6f},{u.wall_time_s:.6f},{u.audio_duration_s:.6f}"
            )
        a = self.aggregate_counts
        lines.append(f"#aggregate,{a.ref_len},{a.substitutions},{a.deletions},"
                     f"{a.insertions},{self.aggregate_cer:.6f},"
                     f"{sum(u.wall_time_s for u in self.per_utterance):.6f},"
                     f"{sum(u.audio_duration_s for u in self.per_utterance):.6f}")
        return "\n".join(lines) + "\n"

    def summary_lines(self) -> list[str]:
        a = self.aggregate_counts
        return [
            f"utterances={len(self.per_utterance)}",
            f"ref_len={a.ref_len}",
            f"substitutions={a.substitutions}",
            f"deletions={a.deletions}",
            f"insertions={a.insertions}",
            f"cer={self.aggregate_cer:.6f}",
            f"rtf={self.rtf:.6f}",
        ]

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.csv_text(), encoding="utf-8")

    def write_summary(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.summary_lines()) + "\n", encoding="utf-8")


def build_report(
    results: Sequence["DecodeResult"],
    refs: Mapping[str, Sequence],
    normalizer: Normalizer | None = None,
) -> EvalReport:
    """Score decode results against references, normalizing both sides first."""
    norm = normalizer if normalizer is not None else Normalizer()
    scores = []
    total: ErrorCounts | None = None
    for res in results:
        if res.utterance_id not in refs:
            raise KeyError(f"no reference for utterance '{res.utterance_id}'")
        ref = norm(refs[res.utterance_id])
        hyp = norm(res.hypothesis)
        counts = levenshtein_align(ref, hyp)
        scores.append(
            UtteranceScore(res.utterance_id, counts, res.wall_time_s, res.audio_duration_s)
        )
        total = counts if total is None else total + counts
    if total is None:
        raise ValueError("cannot build a report from zero results")
    wall = sum(s.wall_time_s for s in scores)
    audio = sum(s.audio_duration_s for s in scores)
    return EvalReport(
        per_utterance=tuple(scores),
        aggregate_counts=total,
        aggregate_cer=cer(total),
        rtf=wall / audio,
    )
