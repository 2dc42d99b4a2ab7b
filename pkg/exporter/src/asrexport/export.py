"""Export job orchestration: manifest in, utterance-export file out."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .manifest import ManifestEntry, load_manifest
from .stub import StubAsrModel
from .writer import UtteranceRecord, write_records

logger = logging.getLogger(__name__)


class ExportEmptyError(RuntimeError):
    """Every utterance failed; no records were produced."""


@dataclass(frozen=True)
class ExportJob:
    manifest_path: Path
    model_spec: str = "stub:0"
    out_path: Path = Path("corpus.uex")
    batch_size: int = 8


def resolve_model(spec: str) -> StubAsrModel:
    """Instantiate the model named by the job spec ('stub' or 'stub:<seed>')."""
    name, _, arg = spec.partition(":")
    if name != "stub":
        raise ValueError(f"unknown model spec '{spec}' (supported: stub[:seed])")
    seed = int(arg) if arg else 0
    return StubAsrModel(seed=seed)


def _export_one(model: StubAsrModel, entry: ManifestEntry) -> UtteranceRecord:
    features = np.load(entry.audio_path)
    frames = model.encode(features)
    taps, logits = model.teacher_forced_states(frames, list(entry.tokens))
    return UtteranceRecord(
        utterance_id=entry.utterance_id,
        transcript=tuple(entry.tokens) + (model.eos_id,),
        frames=frames,
        taps=taps,
        logits=logits,
        frame_duration_s=model.frame_duration_s,
        eos_id=model.eos_id,
        vocab_size=model.vocab_size,
    )


def export_corpus(job: ExportJob) -> int:
    """Run the model over the manifest corpus and write export records.

    Per-utterance failures are logged and skipped; an empty result raises
    ExportEmptyError so callers can exit nonzero.
    """
    if job.batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    entries = load_manifest(job.manifest_path)
    model = resolve_model(job.model_spec)
    records: list[UtteranceRecord] = []
    for start in range(0, len(entries), job.batch_size):
        for entry in entries[start:start + job.batch_size]:
            try:
                records.append(_export_one(model, entry))
            except Exception:
                logger.warning("skipping utterance '%s'", entry.utterance_id, exc_info=True)
    if not records:
        raise ExportEmptyError(f"no utterances exported from {job.manifest_path}")
    written = write_records(records, job.out_path)
    logger.info("wrote %d records to %s", written, job.out_path)
    return written
