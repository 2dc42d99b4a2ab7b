"""Deterministic stub standing in for a pretrained encoder-decoder ASR model.

The stub maps acoustic feature matrices through a seeded projection (the
"encoder") and produces one decoder-state tap plus one logit row per target
position under teacher forcing, exactly as a hooked real model would: the tap
corresponds to the input of the final decoder layer's feed-forward block
after normalization. All outputs are float32 and bit-reproducible for a
given seed, so re-exports are byte-identical.
"""

from __future__ import annotations

import numpy as np


class StubAsrModel:
    """Seeded fake model with a real model's export-facing surface."""

    def __init__(
        self,
        seed: int = 0,
        embed_dim: int = 32,
        vocab_size: int = 64,
        eos_id: int = 1,
        frame_duration_s: float = 0.02,
    ) -> None:
        self.seed = seed
        self.embed_dim = embed_dim
        self.vocab_size = vocab_size
        self.eos_id = eos_id
        self.frame_duration_s = frame_duration_s
        rng = np.random.default_rng([seed, 0x57AB])
        self._token_states = rng.standard_normal((vocab_size, embed_dim)).astype(np.float32)
        self._position_mix = rng.standard_normal((512, embed_dim)).astype(np.float32)
        self._projections: dict[int, np.ndarray] = {}

    def _projection(self, feature_dim: int) -> np.ndarray:
        proj = self._projections.get(feature_dim)
        if proj is None:
            rng = np.random.default_rng([self.seed, 0xE4C, feature_dim])
            proj = (
                rng.standard_normal((feature_dim, self.embed_dim)) / np.sqrt(feature_dim)
            ).astype(np.float32)
            self._projections[feature_dim] = proj
        return proj

    def encode(self, features: np.ndarray) -> np.ndarray:
        """Project raw feature frames into encoder embeddings."""
        feats = np.asarray(features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise ValueError("features must be a non-empty (frames, dim) matrix")
        return feats @ self._projection(feats.shape[1])

    def teacher_forced_states(
        self, frame_embeddings: np.ndarray, tokens: list[int]
    ) -> tuple[np.ndarray, np.ndarray]:
        """Taps and logits for targets = tokens + end-of-sequence.

        Returns (taps, logits) with one row per target position; the final
        position is the end-of-sequence step.
        """
        if not tokens:
            raise ValueError("transcript is empty")
        if max(tokens) >= self.vocab_size or min(tokens) < 0:
            raise ValueError("token id outside the stub vocabulary")
        targets = list(tokens) + [self.eos_id]
        summary = frame_embeddings.mean(axis=0, dtype=np.float64).astype(np.float32)
        steps = len(targets)
        positions = np.arange(steps) % len(self._position_mix)
        taps = (
            self._token_states[targets]
            + 0.3 * summary
            + 0.1 * self._position_mix[positions]
        ).astype(np.float32)
        logits = np.full((steps, self.vocab_size), -1.0, dtype=np.float32)
        logits[np.arange(steps), targets] = 5.0
        return taps, logits
