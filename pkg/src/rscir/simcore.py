"""Exact cosine scoring, deterministic ranking, and top-k selection.

Scores accumulate in float64 even though storage is float32; ties are
broken by ascending candidate ID everywhere so rankings are reproducible
across runs and platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import errors
from .embedstore import EmbeddingStore
from .numerics import CALIBRATION_RAW, ScoreVector

TIE_BREAK_BY_ID = "by_id"


@dataclass(frozen=True)
class RankedList:
    """Candidate IDs best-first with their scores."""

    ids: tuple[str, ...]
    scores: np.ndarray
    tie_break: str = TIE_BREAK_BY_ID

    def __post_init__(self):
        scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        if len(self.ids) != scores.size:
            raise errors.LengthMismatch(
                f"{len(self.ids)} ids vs {scores.size} scores"
            )

    def __len__(self) -> int:
        return len(self.ids)

    def top(self, k: int) -> tuple[str, ...]:
        return self.ids[:k]


def _pool_indices(store: EmbeddingStore, pool: Sequence[str]) -> np.ndarray:
    return np.fromiter((store.index_of(i) for i in pool), dtype=np.int64, count=len(pool))


def score_against(
    query_vec: np.ndarray, store: EmbeddingStore, pool: Sequence[str]
) -> ScoreVector:
    """Dot products between a unit query vector and the pooled store rows."""
    q = np.asarray(query_vec, dtype=np.float64)
    if q.shape != (store.dim,):
        raise errors.DimensionMismatch(
            f"query vector shape {q.shape} vs store dim {store.dim}"
        )
    if len(pool) == 0:
        raise errors.EmptyPool("candidate pool is empty")
    idx = _pool_indices(store, pool)
    values = store.matrix[idx].astype(np.float64) @ q
    return ScoreVector(values, calibration=CALIBRATION_RAW)


def rank(scores: ScoreVector, pool: Sequence[str]) -> RankedList:
    """Total order: scores descending, ties by ascending candidate ID."""
    values = scores.values
    if len(pool) != values.size:
        raise errors.LengthMismatch(f"{len(pool)} ids vs {values.size} scores")
    ids = np.asarray(pool, dtype=object)
    order = np.lexsort((ids, -values))
    return RankedList(ids=tuple(ids[order]), scores=values[order])


def top_k_neighbors(
    query_vec: np.ndarray,
    store: EmbeddingStore,
    k: int,
    exclude: Iterable[str] = (),
) -> tuple[str, ...]:
    """The k most similar store IDs under the same deterministic order as rank."""
    excluded = frozenset(exclude)
    pool = [i for i in store.ids if i not in excluded]
    if k > len(pool):
        raise errors.KTooLarge(f"k={k} exceeds pool of {len(pool)} candidates")
    if k <= 0:
        raise errors.KTooLarge(f"k must be positive, got {k}")
    ranked = rank(score_against(query_vec, store, pool), pool)
    return ranked.ids[:k]
