"""Decode orchestration: prompt retrieval, prefix forcing, greedy + kNN decoding."""

from __future__ import annotations

from dataclasses import dataclass, field
from time import perf_counter
from typing import Mapping, Sequence

import numpy as np

from .knn import KnnParams, TokenDatastore, interpolate, knn_distribution, softmax
from .model import AsrModel, AudioSegment, Utterance, concat_audio
from .prompts import PromptPlan, SentenceDatastore, pack_prompts, retrieve_prompts

__all__ = [
    "MODES",
    "DecodeConfig",
    "DecodeResult",
    "DecodeFailure",
    "decode_greedy",
    "run_batch",
]

MODES = ("baseline", "knn_only", "icl_only", "m2r")

# Deterministic-clock cost model: one unit per encoder frame, plus per decode
# step a fixed charge and one unit per attended frame. Used when
# DecodeConfig.timing == "deterministic" so repeated runs emit identical bytes.
_DET_STEP_CHARGE = 50.0
_DET_SECONDS_PER_UNIT = 1e-6


class DecodeFailure(RuntimeError):
    """Per-utterance decode error carrying the utterance id in its message."""


@dataclass(frozen=True)
class DecodeConfig:
    """Mode selection plus retrieval, budget, and decoding parameters."""

    mode: str = "baseline"
    knn: KnnParams = field(default_factory=KnnParams)
    n_max: int = 10
    audio_budget_s: float = 30.0
    k_sentence: int = 16
    max_decode_len: int = 128
    exclude_self: bool = False
    on_error: str = "abort"
    timing: str = "wall"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.max_decode_len < 1:
            raise ValueError("max_decode_len must be >= 1")
        if self.n_max < 0:
            raise ValueError("n_max must be non-negative")
        if self.on_error not in ("abort", "skip"):
            raise ValueError("on_error must be 'abort' or 'skip'")
        if self.timing not in ("wall", "deterministic"):
            raise ValueError("timing must be 'wall' or 'deterministic'")

    @property
    def uses_knn(self) -> bool:
        return self.mode in ("knn_only", "m2r")

    @property
    def uses_icl(self) -> bool:
        return self.mode in ("icl_only", "m2r")


@dataclass(frozen=True)
class DecodeResult:
    """One decoded utterance: free-position hypothesis plus timing quantities."""

    utterance_id: str
    hypothesis: tuple[int, ...]
    wall_time_s: float
    audio_duration_s: float
    n_prompts_used: int


def _resolve_prompt_audio(
    plan: PromptPlan, audio_resolver: Mapping[str, AudioSegment] | None
) -> list[AudioSegment]:
    segments = []
    for entry in plan.prompts:
        seg = entry.audio
        if seg is None:
            if audio_resolver is None or entry.utterance_id not in audio_resolver:
                raise ValueError(
                    f"prompt '{entry.utterance_id}' has no audio and no resolver entry"
                )
            seg = audio_resolver[entry.utterance_id]
        segments.append(seg)
    return segments


def decode_greedy(
    model: AsrModel,
    audio: AudioSegment,
    plan: PromptPlan | None,
    token_store: TokenDatastore | None,
    config: DecodeConfig,
    audio_resolver: Mapping[str, AudioSegment] | None = None,
) -> DecodeResult:
    """Greedy decode of one utterance with optional prompts and kNN mixing.

    The model input is the concatenation of the plan's prompt audio followed
    by the test audio; the context is initialized with the start token and the
    plan's prefix tokens (forced). At each free step the next token is the
    argmax of the interpolated distribution when kNN is active, else of the
    model distribution. The hypothesis excludes the forced prefix and the
    end-of-sequence token.
    """
    start = perf_counter()
    if plan is None:
        plan = PromptPlan.empty()
    if config.uses_knn and token_store is None:
        raise ValueError(f"mode '{config.mode}' requires a token datastore")
    if plan.prompts and (
        plan.total_prompt_duration_s + audio.duration_s > config.audio_budget_s + 1e-9
    ):
        raise ValueError(
            f"plan violates the audio budget: {plan.total_prompt_duration_s:.3f} s of "
            f"prompts + {audio.duration_s:.3f} s test > {config.audio_budget_s:.3f} s"
        )

    prompt_segments = _resolve_prompt_audio(plan, audio_resolver)
    full_audio = (
        concat_audio([*prompt_segments, audio], audio.utterance_id)
        if prompt_segments else audio
    )
    encoded = model.encode(full_audio)

    prefix = list(plan.prefix_tokens)
    context = [model.start_token_id]
    step_calls = 0
    for j, forced in enumerate(prefix):
        model.decode_step(encoded, context, forced_prefix_len=j)
        context.append(forced)
        step_calls += 1

    knn_active = config.uses_knn and config.knn.lam > 0.0
    hypothesis: list[int] = []
    for _ in range(config.max_decode_len):
        out = model.decode_step(encoded, context, forced_prefix_len=len(prefix))
        step_calls += 1
        probs = softmax(out.logits)
        if knn_active:
            p_knn = knn_distribution(token_store, out.knn_query, config.knn)
            probs = interpolate(probs, p_knn, config.knn.lam)
        token = int(np.argmax(probs))
        if token == model.eos_token_id:
            break
        context.append(token)
        hypothesis.append(token)

    n_frames = encoded.valid_frame_count
    if config.timing == "deterministic":
        wall = (n_frames + step_calls * (_DET_STEP_CHARGE + n_frames)) * _DET_SECONDS_PER_UNIT
    else:
        wall = max(perf_counter() - start, 1e-9)
    return DecodeResult(
        utterance_id=audio.utterance_id,
        hypothesis=tuple(hypothesis),
        wall_time_s=wall,
        audio_duration_s=full_audio.duration_s,
        n_prompts_used=len(plan.prompts),
    )


def run_batch(
    model: AsrModel,
    test_set: Sequence[Utterance],
    sentence_store: SentenceDatastore | None,
    token_store: TokenDatastore | None,
    config: DecodeConfig,
    audio_resolver: Mapping[str, AudioSegment] | None = None,
    failures: list | None = None,
) -> list[DecodeResult]:
    """Decode a test set under the configured mode, preserving input order.

    With on_error='skip', failed utterances are reported through the failures
    list as (utterance_id, exception) and omitted from the results; 'abort'
    raises DecodeFailure naming the utterance.
    """
    if config.uses_icl and sentence_store is None:
        raise ValueError(f"mode '{config.mode}' requires a sentence datastore")
    if config.uses_knn and token_store is None:
        raise ValueError(f"mode '{config.mode}' requires a token datastore")
    results = []
    for utt in test_set:
        try:
            if config.uses_icl:
                exclude = utt.utterance_id if config.exclude_self else None
                candidates = retrieve_prompts(
                    sentence_store, model, utt.audio, config.k_sentence, exclude_id=exclude
                )
                plan = pack_prompts(
                    candidates, utt.audio.duration_s, config.audio_budget_s, config.n_max
                )
            else:
                plan = PromptPlan.empty()
            results.append(
                decode_greedy(model, utt.audio, plan, token_store, config, audio_resolver)
            )
        except Exception as exc:
            if config.on_error == "abort":
                raise DecodeFailure(
                    f"decoding failed for utterance '{utt.utterance_id}': {exc}"
                ) from exc
            if failures is not None:
                failures.append((utt.utterance_id, exc))
    return results
