"""Encoder-decoder ASR model contract and the deterministic toy reference model.

The toy model drives all desk-scale verification. It uses a 1-frame-per-token
latent alignment: each audio frame is the embedding of one latent transcript
token, the decoder reads frames left to right, and all stochastic behaviour
(confusion sampling, deletion/insertion events, tap noise) comes from
counter-based Philox streams keyed by (model seed, utterance id, stream) and
indexed by step, so every operation is bit-reproducible and independent of
the decoding path that led to a step.
"""

from __future__ import annotations

import threading
import zlib
from collections import OrderedDict
from dataclasses import dataclass
from functools import lru_cache
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

__all__ = [
    "START_TOKEN",
    "EOS_TOKEN",
    "AudioSegment",
    "Utterance",
    "EncodeResult",
    "StepOutput",
    "AsrModel",
    "ToyModelConfig",
    "ToyAsrModel",
    "concat_audio",
    "confusable_partner",
]

START_TOKEN = 0
EOS_TOKEN = 1

# Event margins: how far above the unbiased argmax a deletion/insertion event
# lifts its target logit. Kept below typical prefix-bias strengths so prompt
# context can causally override the events.
_EVENT_MARGIN_LO = 0.2
_EVENT_MARGIN_HI = 1.0

_STREAM_DECODE = 1
_STREAM_TEACHER = 2
_PROB_FLOOR = 1e-300
_ATTENTION_SHARPNESS = 8.0


@dataclass(frozen=True)
class AudioSegment:
    """A sequence of acoustic feature frames with a fixed per-frame duration."""

    frames: np.ndarray
    frame_duration_s: float
    utterance_id: str

    def __post_init__(self) -> None:
        if self.frames.ndim != 2:
            raise ValueError("frames must be a 2-D (n_frames, feat_dim) array")
        if self.frame_duration_s <= 0:
            raise ValueError("frame_duration_s must be positive")

    @property
    def duration_s(self) -> float:
        return self.frames.shape[0] * self.frame_duration_s


@dataclass(frozen=True)
class Utterance:
    """Corpus item: audio plus its reference transcript (content tokens only)."""

    audio: AudioSegment
    transcript: tuple[int, ...]
    text: str | None = None

    @property
    def utterance_id(self) -> str:
        return self.audio.utterance_id


@dataclass(frozen=True)
class EncodeResult:
    """Per-frame encoder embeddings; valid_frame_count marks non-padding frames."""

    frame_embeddings: np.ndarray
    valid_frame_count: int
    utterance_id: str

    def __post_init__(self) -> None:
        if self.valid_frame_count > len(self.frame_embeddings):
            raise ValueError("valid_frame_count exceeds frame count")


@dataclass(frozen=True)
class StepOutput:
    """One decode step: next-token logits and the kNN tap embedding."""

    logits: np.ndarray
    knn_query: np.ndarray


@runtime_checkable
class AsrModel(Protocol):
    """Contract any encoder-decoder ASR model must satisfy."""

    vocab_size: int
    embed_dim: int
    start_token_id: int
    eos_token_id: int

    def encode(self, audio: AudioSegment) -> EncodeResult: ...

    def decode_step(
        self, encoded: EncodeResult, context_tokens: Sequence[int], forced_prefix_len: int
    ) -> StepOutput: ...

    def teacher_force(
        self, encoded: EncodeResult, targets: Sequence[int]
    ) -> list[StepOutput]: ...


def confusable_partner(token: int, vocab_size: int) -> int:
    """Designated confusable partner of a content token (identity if unpaired)."""
    if token < 2:
        return token
    partner = token ^ 1
    if partner < 2 or partner >= vocab_size:
        return token
    return partner


@dataclass(frozen=True)
class ToyModelConfig:
    """Configuration of the toy model's noise and bias behaviour.

    confusion is a row-stochastic matrix: row y gives the emission
    probabilities the decoder samples from when the latent token is y.
    del_rate/ins_rate are per-step probabilities of boosting an early
    end-of-sequence or a repeat of the previous free token. prefix_bias_beta
    is added in logit space to every token occurring in the forced prefix.
    """

    confusion: np.ndarray
    vocab_size: int = 64
    embed_dim: int = 32
    noise_sigma: float = 0.0
    prefix_bias_beta: float = 0.0
    del_rate: float = 0.0
    ins_rate: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        conf = np.asarray(self.confusion, dtype=np.float64)
        if conf.shape != (self.vocab_size, self.vocab_size):
            raise ValueError(
                f"confusion must be ({self.vocab_size}, {self.vocab_size}), got {conf.shape}"
            )
        if not np.allclose(conf.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("each confusion row must sum to 1")
        if (conf < 0).any():
            raise ValueError("confusion entries must be non-negative")
        for name in ("del_rate", "ins_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 0.5:
                raise ValueError(f"{name} must lie in [0, 0.5), got {rate}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.embed_dim < 2 or self.embed_dim % 2:
            raise ValueError("embed_dim must be even (sinusoidal position pairs)")
        object.__setattr__(self, "confusion", conf)

    @classmethod
    def paired(
        cls,
        vocab_size: int = 64,
        embed_dim: int = 32,
        sub_mass: float = 0.15,
        **kwargs,
    ) -> "ToyModelConfig":
        """Confusion with sub_mass moved from each content token to its partner."""
        conf = np.zeros((vocab_size, vocab_size), dtype=np.float64)
        conf[START_TOKEN, START_TOKEN] = 1.0
        conf[EOS_TOKEN, EOS_TOKEN] = 1.0
        for tok in range(2, vocab_size):
            partner = confusable_partner(tok, vocab_size)
            if partner == tok:
                conf[tok, tok] = 1.0
            else:
                conf[tok, tok] = 1.0 - sub_mass
                conf[tok, partner] = sub_mass
        return cls(confusion=conf, vocab_size=vocab_size, embed_dim=embed_dim, **kwargs)

    @classmethod
    def identity(cls, vocab_size: int = 64, embed_dim: int = 32, **kwargs) -> "ToyModelConfig":
        return cls(confusion=np.eye(vocab_size), vocab_size=vocab_size,
                   embed_dim=embed_dim, **kwargs)


@lru_cache(maxsize=128)
def _positional_encodings(n_positions: int, dim: int) -> np.ndarray:
    """Sinusoidal positional encodings; self-similarity peaks strictly at lag 0."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    k = np.arange(dim // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * k / dim)
    pe = np.empty((n_positions, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    pe.setflags(write=False)
    return pe


def _utterance_hash(utterance_id: str) -> int:
    # Stable across processes and platforms (unlike builtin hash()).
    return zlib.crc32(utterance_id.encode("utf-8"))


_MASK64 = (1 << 64) - 1


class _NoiseTable:
    """Lazily grown matrix of per-step uniforms from one Philox counter stream.

    Row i holds the uniforms for step i. Regrowing replays the same Philox
    key from counter zero, so earlier rows never change.
    """

    __slots__ = ("key", "width", "rows", "data")

    def __init__(self, key: int, width: int) -> None:
        self.key = key
        self.width = width
        self.rows = 0
        self.data: np.ndarray | None = None

    def row(self, step: int) -> np.ndarray:
        if step >= self.rows:
            rows = max(64, step + 1, 2 * self.rows)
            raw = np.random.Philox(key=self.key).random_raw(rows * self.width)
            uniforms = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
            self.data = uniforms.reshape(rows, self.width)
            self.rows = rows
        return self.data[step]


def _uniform_to_gumbel(u: np.ndarray) -> np.ndarray:
    return -np.log(-np.log(u))


def _uniform_to_normal(u: np.ndarray) -> np.ndarray:
    # Box-Muller over consecutive pairs; len(u) must be even.
    radius = np.sqrt(-2.0 * np.log(u[0::2]))
    angle = 2.0 * np.pi * u[1::2]
    out = np.empty(len(u), dtype=np.float64)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out


def concat_audio(segments: Sequence[AudioSegment], utterance_id: str) -> AudioSegment:
    """Concatenate audio segments; frame durations must agree."""
    if not segments:
        raise ValueError("cannot concatenate zero segments")
    durations = {seg.frame_duration_s for seg in segments}
    if len(durations) != 1:
        raise ValueError("frame durations differ across segments")
    frames = np.concatenate([seg.frames for seg in segments], axis=0)
    return AudioSegment(frames=frames, frame_duration_s=segments[0].frame_duration_s,
                        utterance_id=utterance_id)


class ToyAsrModel:
    """Deterministic toy encoder-decoder model over a latent token alignment.

    The encoder is frame-local (identity on feature frames). The decoder
    locates its current reading position through positional attention over
    all encoder frames, samples emissions from the confusion row of the
    latent token via Gumbel-perturbed log-probabilities (so greedy decoding
    realises the confusion statistics), and layers deletion/insertion events
    plus the forced-prefix bias on top. The kNN tap is the latent token's
    embedding plus seeded Gaussian noise.
    """

    frame_duration_s = 0.02

    def __init__(self, config: ToyModelConfig) -> None:
        self.config = config
        self.vocab_size = config.vocab_size
        self.embed_dim = config.embed_dim
        self.start_token_id = START_TOKEN
        self.eos_token_id = EOS_TOKEN
        rng = np.random.default_rng([config.rng_seed, 0xE0B, 0])
        emb = rng.standard_normal((config.vocab_size, config.embed_dim))
        emb /= np.linalg.norm(emb, axis=1, keepdims=True)
        self._emb32 = emb.astype(np.float32)
        self._emb64 = self._emb32.astype(np.float64)
        self._log_rows = np.log(np.clip(config.confusion, _PROB_FLOOR, None))
        # Per-step uniforms layout: [u_del, u_ins, u_margin, gumbel block,
        # Box-Muller block]. Tables are cached per (utterance, stream).
        self._noise_width = 3 + config.vocab_size + 2 * ((config.embed_dim + 1) // 2)
        self._noise_tables: OrderedDict[int, _NoiseTable] = OrderedDict()
        self._noise_lock = threading.Lock()

    def _step_uniforms(self, utterance_id: str, stream: int, step: int) -> np.ndarray:
        key = (
            ((self.config.rng_seed & _MASK64) << 64)
            | (_utterance_hash(utterance_id) << 24)
            | stream
        )
        with self._noise_lock:
            table = self._noise_tables.get(key)
            if table is None:
                table = _NoiseTable(key, self._noise_width)
                self._noise_tables[key] = table
                if len(self._noise_tables) > 32:
                    self._noise_tables.popitem(last=False)
            else:
                self._noise_tables.move_to_end(key)
            return table.row(step)

    def _step_draws(
        self, utterance_id: str, stream: int, step: int
    ) -> tuple[float, float, float, np.ndarray, np.ndarray]:
        u = self._step_uniforms(utterance_id, stream, step)
        vocab = self.vocab_size
        gumbel = _uniform_to_gumbel(u[3:3 + vocab])
        normal = _uniform_to_normal(u[3 + vocab:])[: self.embed_dim]
        margin = _EVENT_MARGIN_LO + (_EVENT_MARGIN_HI - _EVENT_MARGIN_LO) * u[2]
        return float(u[0]), float(u[1]), float(margin), gumbel, normal

    def token_embedding(self, token: int) -> np.ndarray:
        return self._emb32[token]

    def audio_for_tokens(self, tokens: Sequence[int], utterance_id: str) -> AudioSegment:
        """Synthesize audio whose frames are the latent token embeddings."""
        frames = self._emb32[np.asarray(tokens, dtype=np.int64)]
        return AudioSegment(frames=frames.copy(), frame_duration_s=self.frame_duration_s,
                            utterance_id=utterance_id)

    def encode(self, audio: AudioSegment) -> EncodeResult:
        if audio.frames.shape[0] == 0:
            raise ValueError(f"cannot encode empty audio '{audio.utterance_id}'")
        if audio.frames.shape[1] != self.embed_dim:
            raise ValueError(
                f"audio feature dim {audio.frames.shape[1]} != embed dim {self.embed_dim}"
            )
        return EncodeResult(
            frame_embeddings=np.asarray(audio.frames, dtype=np.float32),
            valid_frame_count=audio.frames.shape[0],
            utterance_id=audio.utterance_id,
        )

    def _read_frame(self, encoded: EncodeResult, pos: int) -> np.ndarray:
        # Positional cross-attention over all encoder frames. Sharpened scores
        # concentrate >0.99 of the weight on frame pos (lag-1 sinusoid dots sit
        # ~0.69 below the peak), keeping the nearest-embedding lookup exact.
        n = encoded.valid_frame_count
        pe = _positional_encodings(n, self.embed_dim)
        scores = _ATTENTION_SHARPNESS * (pe @ pe[pos])
        weights = np.exp(scores - scores.max())
        weights /= weights.sum()
        return weights @ encoded.frame_embeddings[:n].astype(np.float64)

    def _latent_token(self, frame: np.ndarray) -> int:
        diff = self._emb64 - np.asarray(frame, dtype=np.float64)
        return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))

    def decode_step(
        self, encoded: EncodeResult, context_tokens: Sequence[int], forced_prefix_len: int
    ) -> StepOutput:
        context = list(context_tokens)
        if not context or context[0] != self.start_token_id:
            raise ValueError("malformed context: must begin with the start token")
        if not 0 <= forced_prefix_len <= len(context) - 1:
            raise ValueError("forced_prefix_len out of range")
        free = context[1 + forced_prefix_len:]

        # Latent read position: every free token advances the pointer except
        # repeats, which are insertion artifacts under the no-adjacent-repeat
        # corpus convention.
        advanced = sum(1 for i, tok in enumerate(free) if i == 0 or tok != free[i - 1])
        pos = forced_prefix_len + advanced
        n_frames = encoded.valid_frame_count

        u_del, u_ins, margin, gumbel, unit_noise = self._step_draws(
            encoded.utterance_id, _STREAM_DECODE, len(free)
        )
        tap_noise = self.config.noise_sigma * unit_noise

        if pos >= n_frames:
            latent = self.eos_token_id
        else:
            latent = self._latent_token(self._read_frame(encoded, pos))

        logits = self._log_rows[latent] + gumbel

        # Events reference the unbiased maximum so that prefix bias can
        # out-compete them, while plain greedy decoding cannot.
        unbiased_max = float(logits.max())
        if u_del < self.config.del_rate:
            logits[self.eos_token_id] = unbiased_max + margin
        elif u_ins < self.config.ins_rate and free and free[-1] >= 2:
            logits[free[-1]] = unbiased_max + margin

        beta = self.config.prefix_bias_beta
        if beta > 0.0 and forced_prefix_len > 0:
            prefix = np.unique(np.asarray(context[1:1 + forced_prefix_len], dtype=np.int64))
            logits[prefix] += beta

        query = (self._emb64[latent] + tap_noise).astype(np.float32)
        return StepOutput(logits=logits, knn_query=query)

    def teacher_force(self, encoded: EncodeResult, targets: Sequence[int]) -> list[StepOutput]:
        targets = list(targets)
        if not targets:
            raise ValueError("targets must be non-empty")
        n_frames = encoded.valid_frame_count
        if len(targets) != n_frames + 1:
            raise ValueError(
                f"utterance '{encoded.utterance_id}': {len(targets)} target positions do not "
                f"align with {n_frames} frames (expect frame count + end of sequence)"
            )
        outputs = []
        for i in range(len(targets)):
            if i >= n_frames:
                latent = self.eos_token_id
            else:
                latent = self._latent_token(encoded.frame_embeddings[i])
            _, _, _, gumbel, unit_noise = self._step_draws(
                encoded.utterance_id, _STREAM_TEACHER, i
            )
            tap_noise = self.config.noise_sigma * unit_noise
            query = (self._emb64[latent] + tap_noise).astype(np.float32)
            outputs.append(StepOutput(logits=self._log_rows[latent] + gumbel, knn_query=query))
        return outputs
