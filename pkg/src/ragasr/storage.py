"""Versioned binary persistence for datastores and the embedding interchange format.

Datastore file layout (all integers little-endian):

    magic  "M2RD" (4 bytes)
    version u32 (currently 1)
    kind    u32 (1 = sentence, 2 = token)
    dim     u32
    count   u64
    keys    count * dim float32, row-major
    values  kind-dependent:
      token:    count u32 token ids
      sentence: offset table (2 * (count + 1) u64: transcript-slot offsets,
                then utterance-id offsets, each cumulative from 0),
                UTF-8 transcript blob (one canonical JSON doc per entry:
                {"ids": [...], "text": ...}),
                duration array (count float64),
                utterance-id blob (UTF-8)

The file ends exactly at the last block; serialization is canonical, so two
saves of the same store are byte-identical.

Utterance-export files are a stream of length-prefixed records:

    record_len u64, then record bytes:
      one-line JSON header (UTF-8, terminated by \\n) with keys
        utterance_id, transcript (target ids, final entry is the
        end-of-sequence id), dim, steps, frame_count, vocab_size (or null),
        frame_duration_s, eos_id, has_logits
      frames  frame_count * dim float32
      taps    steps * dim float32
      logits  steps * vocab_size float32 (only when has_logits)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .index import FlatIndex
from .knn import TokenDatastore
from .model import AsrModel, AudioSegment, EncodeResult, StepOutput, Utterance
from .prompts import SentenceDatastore, SentenceEntry

__all__ = [
    "StorageError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedFileError",
    "SizeMismatchError",
    "ExportFormatError",
    "save_datastore",
    "load_datastore",
    "ExportRecord",
    "write_exports",
    "read_exports",
    "ImportedCorpus",
    "ReplayModel",
    "import_exports",
    "export_records_from_model",
]

MAGIC = b"M2RD"
VERSION = 1
_KIND_SENTENCE = 1
_KIND_TOKEN = 2
_HEADER = struct.Struct("<4sIIIQ")


class StorageError(Exception):
    """Base class for persistence-format failures."""


class BadMagicError(StorageError):
    pass


class UnsupportedVersionError(StorageError):
    pass


class TruncatedFileError(StorageError):
    pass


class SizeMismatchError(StorageError):
    pass


class ExportFormatError(StorageError):
    pass


def _key_bytes(index: FlatIndex) -> bytes:
    return np.ascontiguousarray(index.keys, dtype="<f4").tobytes()


def save_datastore(store: TokenDatastore | SentenceDatastore, path: str | Path) -> None:
    """Serialize a datastore; two saves of equal stores are byte-identical."""
    if isinstance(store, TokenDatastore):
        kind = _KIND_TOKEN
        payload = np.asarray(store.values, dtype="<u4").tobytes()
    elif isinstance(store, SentenceDatastore):
        kind = _KIND_SENTENCE
        payload = _sentence_value_block(store.entries)
    else:
        raise TypeError(f"cannot persist object of type {type(store).__name__}")
    header = _HEADER.pack(MAGIC, VERSION, kind, store.index.dim, len(store.index))
    Path(path).write_bytes(header + _key_bytes(store.index) + payload)


def _sentence_value_block(entries: Sequence[SentenceEntry]) -> bytes:
    transcripts = [
        json.dumps(
            {"ids": list(e.transcript), "text": e.text},
            ensure_ascii=False, sort_keys=True, separators=(",", ":"),
        ).encode("utf-8")
        for e in entries
    ]
    ids = [e.utterance_id.encode("utf-8") for e in entries]
    t_offsets = np.zeros(len(entries) + 1, dtype="<u8")
    t_offsets[1:] = np.cumsum([len(b) for b in transcripts])
    i_offsets = np.zeros(len(entries) + 1, dtype="<u8")
    i_offsets[1:] = np.cumsum([len(b) for b in ids])
    durations = np.asarray([e.duration_s for e in entries], dtype="<f8")
    return (
        t_offsets.tobytes() + i_offsets.tobytes()
        + b"".join(transcripts) + durations.tobytes() + b"".join(ids)
    )


def load_datastore(
    path: str | Path, vocab_size: int | None = None
) -> TokenDatastore | SentenceDatastore:
    """Load a datastore, validating magic, version, and size arithmetic first.

    For token stores, vocab_size may be supplied (it is not serialized);
    otherwise it is inferred as max(token id) + 1.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"{path}: shorter than the fixed header")
    magic, version, kind, dim, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    if kind not in (_KIND_SENTENCE, _KIND_TOKEN):
        raise SizeMismatchError(f"{path}: unknown datastore kind {kind}")
    if dim < 1:
        raise SizeMismatchError(f"{path}: invalid dim {dim}")
    key_bytes = count * dim * 4
    if len(data) < _HEADER.size + key_bytes:
        raise TruncatedFileError(f"{path}: key block truncated")
    keys = np.frombuffer(data, dtype="<f4", count=count * dim, offset=_HEADER.size)
    keys = keys.reshape(count, dim).copy()
    offset = _HEADER.size + key_bytes

    if kind == _KIND_TOKEN:
        expected = offset + count * 4
        if len(data) < expected:
            raise TruncatedFileError(f"{path}: value block truncated")
        if len(data) != expected:
            raise SizeMismatchError(
                f"{path}: file has {len(data)} bytes, layout requires {expected}"
            )
        values = np.frombuffer(data, dtype="<u4", count=count, offset=offset).astype(np.int64)
        if vocab_size is None:
            vocab_size = int(values.max()) + 1 if count else 0
        return TokenDatastore.from_arrays(keys, values, vocab_size)

    table_bytes = 2 * (count + 1) * 8
    if len(data) < offset + table_bytes:
        raise TruncatedFileError(f"{path}: offset table truncated")
    t_offsets = np.frombuffer(data, dtype="<u8", count=count + 1, offset=offset)
    i_offsets = np.frombuffer(
        data, dtype="<u8", count=count + 1, offset=offset + (count + 1) * 8
    )
    for name, offs in (("transcript", t_offsets), ("utterance-id", i_offsets)):
        if offs[0] != 0 or (np.diff(offs.astype(np.int64)) < 0).any():
            raise SizeMismatchError(f"{path}: non-monotone {name} offsets")
    blob_start = offset + table_bytes
    t_size, i_size = int(t_offsets[-1]), int(i_offsets[-1])
    expected = blob_start + t_size + count * 8 + i_size
    if len(data) < expected:
        raise TruncatedFileError(f"{path}: value blobs truncated")
    if len(data) != expected:
        raise SizeMismatchError(
            f"{path}: file has {len(data)} bytes, layout requires {expected}"
        )
    t_blob = data[blob_start:blob_start + t_size]
    durations = np.frombuffer(data, dtype="<f8", count=count, offset=blob_start + t_size)
    i_blob = data[blob_start + t_size + count * 8:expected]

    entries = []
    for row in range(count):
        doc = json.loads(t_blob[t_offsets[row]:t_offsets[row + 1]].decode("utf-8"))
        entries.append(
            SentenceEntry(
                utterance_id=i_blob[i_offsets[row]:i_offsets[row + 1]].decode("utf-8"),
                transcript=tuple(int(t) for t in doc["ids"]),
                duration_s=float(durations[row]),
                text=doc["text"],
                audio=None,
            )
        )
    index = FlatIndex(dim)
    index.insert_batch(keys)
    index.freeze()
    return SentenceDatastore(index=index, entries=tuple(entries))


@dataclass(frozen=True)
class ExportRecord:
    """One exported utterance: target ids plus replayable model matrices.

    transcript holds the teacher-forcing target sequence, whose final entry
    is the end-of-sequence id; taps has one row per target position.
    """

    utterance_id: str
    transcript: tuple[int, ...]
    frames: np.ndarray
    taps: np.ndarray
    frame_duration_s: float
    eos_id: int
    logits: np.ndarray | None = None
    vocab_size: int | None = None

    def validate(self) -> None:
        if len(self.transcript) == 0:
            raise ExportFormatError(f"record '{self.utterance_id}': empty transcript")
        if self.transcript[-1] != self.eos_id:
            raise ExportFormatError(
                f"record '{self.utterance_id}': transcript does not end with eos id {self.eos_id}"
            )
        if self.taps.shape[0] != len(self.transcript):
            raise ExportFormatError(
                f"record '{self.utterance_id}': {self.taps.shape[0]} tap steps != "
                f"{len(self.transcript)} transcript positions"
            )
        if self.frames.ndim != 2 or self.taps.ndim != 2:
            raise ExportFormatError(f"record '{self.utterance_id}': matrices must be 2-D")
        if self.frames.shape[0] == 0:
            raise ExportFormatError(f"record '{self.utterance_id}': no audio frames")
        if self.frames.shape[1] != self.taps.shape[1]:
            raise ExportFormatError(
                f"record '{self.utterance_id}': frame dim {self.frames.shape[1]} != "
                f"tap dim {self.taps.shape[1]}"
            )
        if not (np.isfinite(self.frames).all() and np.isfinite(self.taps).all()):
            raise ExportFormatError(f"record '{self.utterance_id}': non-finite matrix entries")
        if self.logits is not None:
            if self.logits.shape[0] != len(self.transcript):
                raise ExportFormatError(
                    f"record '{self.utterance_id}': logits steps mismatch"
                )
            if self.vocab_size is not None and self.logits.shape[1] != self.vocab_size:
                raise ExportFormatError(
                    f"record '{self.utterance_id}': logits width != vocab_size"
                )
            if not np.isfinite(self.logits).all():
                raise ExportFormatError(f"record '{self.utterance_id}': non-finite logits")
        if self.frame_duration_s <= 0:
            raise ExportFormatError(f"record '{self.utterance_id}': bad frame duration")


def _record_bytes(rec: ExportRecord) -> bytes:
    rec.validate()
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
    body = json.dumps(header, ensure_ascii=False, sort_keys=True,
                      separators=(",", ":")).encode("utf-8") + b"\n"
    body += np.ascontiguousarray(rec.frames, dtype="<f4").tobytes()
    body += np.ascontiguousarray(rec.taps, dtype="<f4").tobytes()
    if rec.logits is not None:
        body += np.ascontiguousarray(rec.logits, dtype="<f4").tobytes()
    return struct.pack("<Q", len(body)) + body


def write_exports(records: Iterable[ExportRecord], path: str | Path) -> int:
    """Write utterance-export records; returns the number written."""
    count = 0
    with open(path, "wb") as fh:
        for rec in records:
            fh.write(_record_bytes(rec))
            count += 1
    return count


def _parse_record(body: bytes, ordinal: int) -> ExportRecord:
    newline = body.find(b"\n")
    if newline < 0:
        raise ExportFormatError(f"record #{ordinal}: missing header line")
    try:
        header = json.loads(body[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ExportFormatError(f"record #{ordinal}: bad JSON header: {exc}") from exc
    required = {"dim", "eos_id", "frame_count", "frame_duration_s", "has_logits",
                "steps", "transcript", "utterance_id", "vocab_size"}
    missing = required - header.keys()
    if missing:
        raise ExportFormatError(f"record #{ordinal}: header missing keys {sorted(missing)}")
    dim = int(header["dim"])
    steps = int(header["steps"])
    frame_count = int(header["frame_count"])
    transcript = tuple(int(t) for t in header["transcript"])
    if steps != len(transcript):
        raise ExportFormatError(
            f"record '{header['utterance_id']}': steps={steps} but transcript has "
            f"{len(transcript)} positions"
        )
    vocab = header["vocab_size"]
    expected = frame_count * dim * 4 + steps * dim * 4
    if header["has_logits"]:
        if vocab is None:
            raise ExportFormatError(
                f"record '{header['utterance_id']}': has_logits without vocab_size"
            )
        expected += steps * int(vocab) * 4
    payload = body[newline + 1:]
    if len(payload) != expected:
        raise SizeMismatchError(
            f"record '{header['utterance_id']}': payload has {len(payload)} bytes, "
            f"header arithmetic requires {expected}"
        )
    frames = np.frombuffer(payload, dtype="<f4", count=frame_count * dim)
    frames = frames.reshape(frame_count, dim).copy()
    off = frame_count * dim * 4
    taps = np.frombuffer(payload, dtype="<f4", count=steps * dim, offset=off)
    taps = taps.reshape(steps, dim).copy()
    logits = None
    if header["has_logits"]:
        off += steps * dim * 4
        logits = np.frombuffer(payload, dtype="<f4", count=steps * int(vocab), offset=off)
        logits = logits.reshape(steps, int(vocab)).copy()
    rec = ExportRecord(
        utterance_id=str(header["utterance_id"]),
        transcript=transcript,
        frames=frames,
        taps=taps,
        frame_duration_s=float(header["frame_duration_s"]),
        eos_id=int(header["eos_id"]),
        logits=logits,
        vocab_size=int(vocab) if vocab is not None else None,
    )
    rec.validate()
    return rec


def read_exports(path: str | Path) -> list[ExportRecord]:
    """Parse an utterance-export file into validated records."""
    data = Path(path).read_bytes()
    records = []
    pos = 0
    ordinal = 0
    while pos < len(data):
        if pos + 8 > len(data):
            raise TruncatedFileError(f"{path}: dangling record length prefix")
        (length,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        if pos + length > len(data):
            raise TruncatedFileError(f"{path}: record #{ordinal} truncated")
        records.append(_parse_record(data[pos:pos + length], ordinal))
        pos += length
        ordinal += 1
    return records


class ReplayModel:
    """Model whose encode/teacher_force replay exported matrices.

    Supports datastore construction only; free decoding requires a live
    model and raises NotImplementedError.
    """

    def __init__(self, records: Sequence[ExportRecord]) -> None:
        self._records = {r.utterance_id: r for r in records}
        first = records[0]
        self.embed_dim = int(first.taps.shape[1])
        self.eos_token_id = int(first.eos_id)
        self.start_token_id = -1
        if first.vocab_size is not None:
            self.vocab_size = int(first.vocab_size)
        else:
            self.vocab_size = max(max(r.transcript) for r in self._records.values()) + 1

    def encode(self, audio: AudioSegment) -> EncodeResult:
        return EncodeResult(
            frame_embeddings=np.asarray(audio.frames, dtype=np.float32),
            valid_frame_count=audio.frames.shape[0],
            utterance_id=audio.utterance_id,
        )

    def teacher_force(self, encoded: EncodeResult, targets: Sequence[int]) -> list[StepOutput]:
        rec = self._records.get(encoded.utterance_id)
        if rec is None:
            raise ValueError(f"no exported record for utterance '{encoded.utterance_id}'")
        if tuple(targets) != rec.transcript:
            raise ValueError(
                f"utterance '{encoded.utterance_id}': targets do not match the exported transcript"
            )
        outputs = []
        for i in range(len(rec.transcript)):
            logits = (rec.logits[i].astype(np.float64) if rec.logits is not None
                      else np.zeros(self.vocab_size))
            outputs.append(StepOutput(logits=logits, knn_query=rec.taps[i]))
        return outputs

    def decode_step(self, encoded, context_tokens, forced_prefix_len):
        raise NotImplementedError("replayed corpora support datastore construction only")


@dataclass(frozen=True)
class ImportedCorpus:
    """Replayable corpus: utterances, the replay model, and an audio resolver."""

    utterances: tuple[Utterance, ...]
    model: ReplayModel | None

    @property
    def audio_resolver(self) -> dict[str, AudioSegment]:
        return {u.utterance_id: u.audio for u in self.utterances}


def import_exports(source: str | Path | Sequence[ExportRecord]) -> ImportedCorpus:
    """Turn export records into a corpus usable by the datastore builders.

    Validates cross-record consistency (dim, vocabulary, eos id, frame
    duration); an empty stream yields an empty corpus whose downstream
    builders report degenerate input.
    """
    records = read_exports(source) if isinstance(source, (str, Path)) else list(source)
    if not records:
        return ImportedCorpus(utterances=(), model=None)
    seen: dict[str, ExportRecord] = {}
    first = records[0]
    for rec in records:
        rec.validate()
        if rec.utterance_id in seen:
            raise ExportFormatError(f"duplicate utterance id '{rec.utterance_id}'")
        for attr, label in (
            ("taps", "key dim"), ("eos_id", "eos id"),
            ("vocab_size", "vocab size"), ("frame_duration_s", "frame duration"),
        ):
            a = rec.taps.shape[1] if attr == "taps" else getattr(rec, attr)
            b = first.taps.shape[1] if attr == "taps" else getattr(first, attr)
            if a != b:
                raise ExportFormatError(
                    f"inconsistent {label} between records '{first.utterance_id}' "
                    f"({b}) and '{rec.utterance_id}' ({a})"
                )
        seen[rec.utterance_id] = rec
    utterances = tuple(
        Utterance(
            audio=AudioSegment(
                frames=rec.frames,
                frame_duration_s=rec.frame_duration_s,
                utterance_id=rec.utterance_id,
            ),
            transcript=rec.transcript[:-1],
        )
        for rec in records
    )
    return ImportedCorpus(utterances=utterances, model=ReplayModel(records))


def export_records_from_model(model: AsrModel, corpus: Sequence[Utterance]) -> list[ExportRecord]:
    """Run encode + teacher forcing over a corpus and capture export records."""
    records = []
    for utt in corpus:
        targets = tuple(utt.transcript) + (model.eos_token_id,)
        encoded = model.encode(utt.audio)
        steps = model.teacher_force(encoded, targets)
        records.append(
            ExportRecord(
                utterance_id=utt.utterance_id,
                transcript=targets,
                frames=np.asarray(encoded.frame_embeddings, dtype=np.float32),
                taps=np.stack([s.knn_query for s in steps]),
                frame_duration_s=utt.audio.frame_duration_s,
                eos_id=model.eos_token_id,
                logits=np.stack([s.logits for s in steps]).astype(np.float32),
                vocab_size=model.vocab_size,
            )
        )
    return records
