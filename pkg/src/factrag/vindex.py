"""Exact in-memory vector index: score-weighted cosine top-k with threshold.

Full scan, no approximation: ranking is cosine(query, item) times the item's
confidence weight, keeping only combined scores strictly above the threshold,
sorted descending with ties broken by id ascending for reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class VectorContractError(ValueError):
    """Dimension mismatch or degenerate (zero-norm) input."""


@dataclass
class RankedHit:
    id: str
    similarity: float
    combined: float
    rank: int


class VectorCollection:
    """Immutable snapshot of id/vector/weight triples of one kind."""

    def __init__(self, kind: str, items: list[tuple[str, np.ndarray, float]]):
        self.kind = kind
        self.ids = [item_id for item_id, _, _ in items]
        if items:
            self.matrix = np.vstack([vec for _, vec, _ in items]).astype(np.float64)
            self.weights = np.asarray([w for _, _, w in items], dtype=np.float64)
            self.dim = self.matrix.shape[1]
            norms = np.linalg.norm(self.matrix, axis=1)
            if np.any(norms == 0):
                raise VectorContractError(f"{kind} collection contains zero vector")
            if kind in ("entity", "hyperedge") and np.any(self.weights <= 0):
                raise VectorContractError(f"{kind} collection has non-positive weight")
            self._norms = norms
        else:
            self.matrix = np.zeros((0, 0))
            self.weights = np.zeros(0)
            self.dim = 0
            self._norms = np.zeros(0)

    def __len__(self) -> int:
        return len(self.ids)


def cosine(u, v) -> float:
    """Cosine similarity, clamped to [-1, 1] against rounding."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise VectorContractError(f"length mismatch {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise VectorContractError("cosine of zero-norm vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def top_k_weighted(
    query_vec, collection: VectorCollection, k: int, tau: float
) -> list[RankedHit]:
    """Up to k hits with combined = cosine x weight strictly above tau."""
    if k < 0:
        raise VectorContractError("k must be >= 0")
    if len(collection) == 0 or k == 0:
        return []
    query = np.asarray(query_vec, dtype=np.float64)
    if query.shape != (collection.dim,):
        raise VectorContractError(
            f"query dim {query.shape} != collection dim {collection.dim}"
        )
    qnorm = np.linalg.norm(query)
    if qnorm == 0:
        raise VectorContractError("all-zero query vector")
    sims = np.clip(
        (collection.matrix @ query) / (collection._norms * qnorm), -1.0, 1.0
    )
    combined = sims * collection.weights
    candidates = [
        (collection.ids[i], float(sims[i]), float(combined[i]))
        for i in np.flatnonzero(combined > tau)
    ]
    candidates.sort(key=lambda c: (-c[2], c[0]))
    return [
        RankedHit(id=cid, similarity=sim, combined=comb, rank=rank)
        for rank, (cid, sim, comb) in enumerate(candidates[:k])
    ]
