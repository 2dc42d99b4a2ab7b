"""Sentence-level prompt retrieval: datastore build, retrieval, budget packing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .index import FlatIndex
from .model import AsrModel, AudioSegment, Utterance

__all__ = [
    "SentenceEntry",
    "SentenceDatastore",
    "PromptPlan",
    "pool_mean",
    "build_sentence_datastore",
    "retrieve_prompts",
    "pack_prompts",
]


def pool_mean(frames) -> np.ndarray:
    """Component-wise mean over the given frames (callers exclude padding)."""
    mat = np.asarray(frames, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] == 0:
        raise ValueError("pool_mean requires a non-empty 2-D frame sequence")
    return mat.mean(axis=0).astype(np.float32)


@dataclass(frozen=True)
class SentenceEntry:
    """One datastore row: utterance id, transcript, duration, optional audio.

    audio is present for in-memory stores; stores loaded from disk carry only
    the utterance id, which an audio resolver maps back to an AudioSegment.
    """

    utterance_id: str
    transcript: tuple[int, ...]
    duration_s: float
    text: str | None = None
    audio: AudioSegment | None = None

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if not self.transcript:
            raise ValueError("transcript must be non-empty")


@dataclass(frozen=True)
class SentenceDatastore:
    """Mean-pooled utterance keys aligned with sentence entries."""

    index: FlatIndex
    entries: tuple[SentenceEntry, ...]

    def __post_init__(self) -> None:
        if len(self.index) != len(self.entries):
            raise ValueError("index size must equal the number of entries")

    @property
    def dim(self) -> int:
        return self.index.dim

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class PromptPlan:
    """Ordered prompt selection fitting the duration and count budgets."""

    prompts: tuple[SentenceEntry, ...]
    total_prompt_duration_s: float
    prefix_tokens: tuple[int, ...]

    @classmethod
    def empty(cls) -> "PromptPlan":
        return cls(prompts=(), total_prompt_duration_s=0.0, prefix_tokens=())


def build_sentence_datastore(
    corpus: Sequence[Utterance],
    model: AsrModel,
    on_error: str = "abort",
    failures: list | None = None,
) -> SentenceDatastore:
    """Build the sentence datastore: one mean-pooled key per utterance.

    on_error='skip' drops utterances whose encoding fails and reports them
    through the failures list; 'abort' re-raises with the utterance id.
    """
    if on_error not in ("abort", "skip"):
        raise ValueError(f"on_error must be 'abort' or 'skip', got {on_error!r}")
    if not corpus:
        raise ValueError("cannot build a sentence datastore from an empty corpus")
    index = FlatIndex(model.embed_dim)
    entries: list[SentenceEntry] = []
    keys: list[np.ndarray] = []
    for utt in corpus:
        try:
            encoded = model.encode(utt.audio)
            valid = encoded.frame_embeddings[: encoded.valid_frame_count]
            keys.append(pool_mean(valid))
        except Exception as exc:
            if on_error == "abort":
                raise RuntimeError(f"encoding failed for utterance '{utt.utterance_id}'") from exc
            if failures is not None:
                failures.append((utt.utterance_id, exc))
            continue
        entries.append(
            SentenceEntry(
                utterance_id=utt.utterance_id,
                transcript=tuple(utt.transcript),
                duration_s=utt.audio.duration_s,
                text=utt.text,
                audio=utt.audio,
            )
        )
    if not entries:
        raise ValueError("all utterances failed to encode; datastore would be empty")
    index.insert_batch(np.stack(keys))
    index.freeze()
    return SentenceDatastore(index=index, entries=tuple(entries))


def retrieve_prompts(
    store: SentenceDatastore,
    model: AsrModel,
    audio: AudioSegment,
    k: int,
    exclude_id: str | None = None,
) -> list[SentenceEntry]:
    """Top-k most similar entries for a query utterance, most similar first.

    Entries matching exclude_id are filtered before ranking, so exclusion
    never costs a result slot (utterance ids are assumed unique per store).
    """
    encoded = model.encode(audio)
    key = pool_mean(encoded.frame_embeddings[: encoded.valid_frame_count])
    fetch = k + 1 if exclude_id is not None else k
    neighbors = store.index.query_topk(key, fetch)
    picked = [store.entries[int(i)] for i in neighbors.ids]
    if exclude_id is not None:
        picked = [e for e in picked if e.utterance_id != exclude_id]
    return picked[:k]


def pack_prompts(
    candidates: Sequence[SentenceEntry],
    test_duration_s: float,
    audio_budget_s: float,
    n_max: int,
) -> PromptPlan:
    """Greedily pack candidates under the audio budget and prompt-count cap.

    Scans candidates in order (most similar first), keeps each one whose
    duration still fits the remaining budget, and discards the ones that do
    not -- no backtracking. Stops once n_max prompts are kept.
    """
    if n_max < 0:
        raise ValueError("n_max must be non-negative")
    if test_duration_s > audio_budget_s:
        raise ValueError(
            f"test utterance ({test_duration_s:.3f} s) alone exceeds "
            f"the {audio_budget_s:.3f} s audio budget"
        )
    remaining = audio_budget_s - test_duration_s
    kept: list[SentenceEntry] = []
    total = 0.0
    for cand in candidates:
        if len(kept) >= n_max:
            break
        if total + cand.duration_s <= remaining:
            kept.append(cand)
            total += cand.duration_s
    prefix: list[int] = []
    for entry in kept:
        prefix.extend(entry.transcript)
    return PromptPlan(
        prompts=tuple(kept),
        total_prompt_duration_s=total,
        prefix_tokens=tuple(prefix),
    )
