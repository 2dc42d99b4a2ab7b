"""Token-level kNN retrieval: datastore build, neighbor distribution, interpolation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .index import FlatIndex
from .model import AsrModel, Utterance

__all__ = [
    "KnnParams",
    "TokenDatastore",
    "build_token_datastore",
    "knn_distribution",
    "knn_distribution_from_neighbors",
    "interpolate",
    "softmax",
    "validate_distribution",
]


@dataclass(frozen=True)
class KnnParams:
    """Neighbor count k, softmax temperature tau, interpolation weight lam."""

    k: int = 16
    tau: float = 1.0
    lam: float = 0.3

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")


@dataclass(frozen=True)
class TokenDatastore:
    """Per-step decoder tap keys aligned with their ground-truth token ids."""

    index: FlatIndex
    values: np.ndarray
    vocab_size: int

    def __post_init__(self) -> None:
        if len(self.index) != len(self.values):
            raise ValueError("index size must equal the number of values")
        if len(self.values) and (self.values.min() < 0 or self.values.max() >= self.vocab_size):
            raise ValueError("token values must lie within the vocabulary range")

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def from_arrays(cls, keys: np.ndarray, values, vocab_size: int) -> "TokenDatastore":
        index = FlatIndex(keys.shape[1] if keys.ndim == 2 else int(keys.shape[-1]))
        index.insert_batch(keys)
        index.freeze()
        return cls(index=index, values=np.asarray(values, dtype=np.int64), vocab_size=vocab_size)


def build_token_datastore(corpus: Sequence[Utterance], model: AsrModel) -> TokenDatastore:
    """Build the token datastore under teacher forcing on ground-truth targets.

    One entry per target position: the target sequence is the transcript plus
    the end-of-sequence token, so EOS has datastore entries while the start
    token never does. Any step-count mismatch aborts with the utterance id.
    """
    if not corpus:
        raise ValueError("cannot build a token datastore from an empty corpus")
    key_blocks: list[np.ndarray] = []
    values: list[int] = []
    for utt in corpus:
        targets = tuple(utt.transcript) + (model.eos_token_id,)
        try:
            encoded = model.encode(utt.audio)
            steps = model.teacher_force(encoded, targets)
        except ValueError as exc:
            if utt.utterance_id in str(exc):
                raise
            raise ValueError(f"utterance '{utt.utterance_id}': {exc}") from exc
        key_blocks.append(np.stack([s.knn_query for s in steps]))
        values.extend(targets)
    keys = np.concatenate(key_blocks, axis=0)
    return TokenDatastore.from_arrays(keys, values, model.vocab_size)


def knn_distribution_from_neighbors(
    distances: np.ndarray, labels: np.ndarray, vocab_size: int, tau: float
) -> np.ndarray:
    """Aggregate exp(-d/tau) neighbor weights per vocabulary unit, normalized.

    Uses max-subtraction (smallest distance pulled to zero) so that large
    absolute distances cannot underflow every weight.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise ValueError("cannot form a kNN distribution from zero neighbors")
    weights = np.exp(-(d - d.min()) / tau)
    probs = np.zeros(vocab_size, dtype=np.float64)
    np.add.at(probs, np.asarray(labels, dtype=np.int64), weights)
    probs /= probs.sum()
    return probs


def knn_distribution(store: TokenDatastore, query: np.ndarray, params: KnnParams) -> np.ndarray:
    """Probability over the vocabulary from the query's k nearest datastore keys."""
    neighbors = store.index.query_topk(query, params.k)
    labels = store.values[neighbors.ids]
    return knn_distribution_from_neighbors(neighbors.distances, labels, store.vocab_size, params.tau)


def interpolate(p_model: np.ndarray, p_knn: np.ndarray, lam: float) -> np.ndarray:
    """Entry-wise mixture lam * p_knn + (1 - lam) * p_model."""
    if p_model.shape != p_knn.shape:
        raise ValueError(f"distribution sizes differ: {p_model.shape} vs {p_knn.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must lie in [0, 1], got {lam}")
    return lam * p_knn + (1.0 - lam) * p_model


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax producing a valid probability vector."""
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def validate_distribution(probs: np.ndarray, atol: float = 1e-9) -> None:
    """Raise unless probs is a probability vector (non-negative, sums to 1)."""
    if (probs < 0).any():
        raise ValueError("distribution has negative entries")
    total = float(probs.sum())
    if abs(total - 1.0) > atol:
        raise ValueError(f"distribution sums to {total!r}, not 1")
