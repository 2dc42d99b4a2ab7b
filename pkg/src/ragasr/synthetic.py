"""Seeded synthetic corpora: topic-clustered transcripts over the toy model.

Transcripts are drawn from per-topic token subsets so that utterances of the
same topic genuinely resemble each other (retrieved prompts then share
vocabulary with the test utterance). Adjacent tokens never repeat and never
equal the previous token's confusable partner, which keeps substitution,
insertion, and deletion noise cleanly separable in scoring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ToyAsrModel, ToyModelConfig, Utterance, confusable_partner

__all__ = ["Benchmark", "make_benchmark", "make_corpus"]


def _draw_transcript(
    rng: np.random.Generator, topic: np.ndarray, length: int, vocab_size: int
) -> tuple[int, ...]:
    tokens: list[int] = []
    prev = -1
    for _ in range(length):
        if prev < 0:
            pool = topic
        else:
            banned = {prev, confusable_partner(prev, vocab_size)}
            pool = topic[~np.isin(topic, list(banned))]
        tok = int(pool[rng.integers(len(pool))])
        tokens.append(tok)
        prev = tok
    return tuple(tokens)


def make_corpus(
    model: ToyAsrModel,
    rng: np.random.Generator,
    topics: list[np.ndarray],
    size: int,
    id_prefix: str,
    min_len: int = 6,
    max_len: int = 18,
) -> tuple[Utterance, ...]:
    """Draw a corpus of topic-clustered utterances with synthesized audio."""
    out = []
    for i in range(size):
        topic = topics[int(rng.integers(len(topics)))]
        length = int(rng.integers(min_len, max_len + 1))
        transcript = _draw_transcript(rng, topic, length, model.vocab_size)
        audio = model.audio_for_tokens(transcript, f"{id_prefix}-{i:05d}")
        out.append(Utterance(audio=audio, transcript=transcript))
    return tuple(out)


@dataclass(frozen=True)
class Benchmark:
    """Toy model plus disjoint train/test splits drawn from shared topics."""

    model: ToyAsrModel
    train: tuple[Utterance, ...]
    test: tuple[Utterance, ...]
    max_transcript_len: int

    @property
    def refs(self) -> dict[str, tuple[int, ...]]:
        return {u.utterance_id: u.transcript for u in self.test}

    @property
    def default_max_decode_len(self) -> int:
        # Twice the longest target sequence bounds runaway insertion loops.
        return 2 * (self.max_transcript_len + 1)


def make_benchmark(
    seed: int = 0,
    train_size: int = 2000,
    test_size: int = 500,
    *,
    vocab_size: int = 64,
    embed_dim: int = 32,
    sub_mass: float = 0.15,
    del_rate: float = 0.03,
    ins_rate: float = 0.03,
    noise_sigma: float = 0.05,
    prefix_bias_beta: float = 1.6,
    n_topics: int = 24,
    topic_size: int = 10,
    min_len: int = 6,
    max_len: int = 18,
) -> Benchmark:
    """Assemble the standard seeded benchmark (model, train split, test split)."""
    if train_size < 1 or test_size < 1:
        raise ValueError("train_size and test_size must be positive")
    config = ToyModelConfig.paired(
        vocab_size=vocab_size,
        embed_dim=embed_dim,
        sub_mass=sub_mass,
        noise_sigma=noise_sigma,
        prefix_bias_beta=prefix_bias_beta,
        del_rate=del_rate,
        ins_rate=ins_rate,
        rng_seed=seed,
    )
    model = ToyAsrModel(config)
    rng = np.random.default_rng([seed, 0xC057])
    content = np.arange(2, vocab_size)
    topics = [
        np.sort(rng.choice(content, size=min(topic_size, len(content)), replace=False))
        for _ in range(n_topics)
    ]
    train = make_corpus(model, rng, topics, train_size, "train", min_len, max_len)
    test = make_corpus(model, rng, topics, test_size, "test", min_len, max_len)
    return Benchmark(model=model, train=train, test=test, max_transcript_len=max_len)
