"""Exact top-k nearest-neighbor search over fixed-dimension vectors (squared L2)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DimensionMismatchError",
    "EmptyIndexError",
    "FrozenIndexError",
    "NeighborSet",
    "FlatIndex",
]


class DimensionMismatchError(ValueError):
    """Key or query dimension does not match the index dimension."""


class EmptyIndexError(RuntimeError):
    """Query issued against an index that holds no entries."""


class FrozenIndexError(RuntimeError):
    """Insertion attempted after the index was frozen."""


@dataclass(frozen=True)
class NeighborSet:
    """Top-k query result: entry ids with their squared-L2 distances.

    Entries are ordered by non-decreasing distance; exact ties are broken
    by ascending entry id.
    """

    ids: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def entries(self) -> list[tuple[int, float]]:
        return [(int(i), float(d)) for i, d in zip(self.ids, self.distances)]


def _as_key_matrix(keys, dim: int | None) -> np.ndarray:
    mat = np.asarray(keys, dtype=np.float32)
    if mat.ndim == 1:
        mat = mat.reshape(1, -1) if mat.size else mat.reshape(0, dim or 0)
    if mat.ndim != 2:
        raise ValueError(f"keys must be a 2-D batch of vectors, got ndim={mat.ndim}")
    return mat


def _squared_distances(keys64: np.ndarray, query64: np.ndarray) -> np.ndarray:
    # Shared distance kernel for the main path and the oracle: float32 inputs,
    # accumulation in float64, so both paths see bit-identical values.
    diff = keys64 - query64
    return np.einsum("ij,ij->i", diff, diff)


class FlatIndex:
    """Exact flat-scan index: build by batch insertion, freeze, then query.

    Keys are stored as float32; distances are accumulated in float64.
    After :meth:`freeze` the index is immutable and safe for concurrent
    queries.
    """

    def __init__(self, dim: int) -> None:
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = int(dim)
        self._chunks: list[np.ndarray] = []
        self._size = 0
        self._frozen = False
        self._keys64: np.ndarray | None = None

    def __len__(self) -> int:
        return self._size

    @property
    def frozen(self) -> bool:
        return self._frozen

    def insert_batch(self, keys) -> list[int]:
        """Insert a batch of keys, returning their consecutive entry ids.

        A dimension mismatch or non-finite entry rejects the whole batch and
        leaves the index unchanged.
        """
        if self._frozen:
            raise FrozenIndexError("index is frozen; no further insertion allowed")
        mat = _as_key_matrix(keys, self.dim)
        if mat.shape[0] == 0:
            return []
        if mat.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"key dim {mat.shape[1]} does not match index dim {self.dim}"
            )
        if not np.isfinite(mat).all():
            raise ValueError("keys must be finite")
        start = self._size
        self._chunks.append(mat.copy())
        self._size += mat.shape[0]
        self._keys64 = None
        return list(range(start, self._size))

    def freeze(self) -> "FlatIndex":
        """Seal the index; subsequent inserts raise FrozenIndexError."""
        self._frozen = True
        self._materialize()
        return self

    @property
    def keys(self) -> np.ndarray:
        """All stored keys as one float32 matrix (row i = entry id i)."""
        if not self._chunks:
            return np.zeros((0, self.dim), dtype=np.float32)
        if len(self._chunks) > 1:
            self._chunks = [np.concatenate(self._chunks, axis=0)]
        return self._chunks[0]

    def _materialize(self) -> np.ndarray:
        if self._keys64 is None:
            self._keys64 = self.keys.astype(np.float64)
        return self._keys64

    def _prepare_query(self, query, k: int) -> tuple[np.ndarray, np.ndarray]:
        if self._size == 0:
            raise EmptyIndexError("query on empty index")
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        q = np.asarray(query, dtype=np.float32)
        if q.ndim != 1 or q.shape[0] != self.dim:
            raise DimensionMismatchError(
                f"query dim {q.shape} does not match index dim {self.dim}"
            )
        if not np.isfinite(q).all():
            raise ValueError("query must be finite")
        dists = _squared_distances(self._materialize(), q.astype(np.float64))
        return q, dists

    def query_topk(self, query, k: int) -> NeighborSet:
        """Return the min(k, size) nearest entries by squared L2 distance."""
        _, dists = self._prepare_query(query, k)
        n = self._size
        kk = min(k, n)
        if kk == n:
            cand = np.arange(n)
        else:
            part = np.argpartition(dists, kk - 1)[:kk]
            # Pull in every entry tied with the k-th distance so the id tie
            # rule decides the boundary, not argpartition's arbitrary split.
            cand = np.flatnonzero(dists <= dists[part].max())
        order = np.lexsort((cand, dists[cand]))[:kk]
        top = cand[order]
        return NeighborSet(ids=top.astype(np.int64), distances=dists[top])

    def query_topk_oracle(self, query, k: int) -> NeighborSet:
        """Ground truth for query_topk: exhaustive scan plus full sort."""
        _, dists = self._prepare_query(query, k)
        order = np.lexsort((np.arange(self._size), dists))[: min(k, self._size)]
        return NeighborSet(ids=order.astype(np.int64), distances=dists[order])
