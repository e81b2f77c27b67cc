"""Code vectors and the index-space operations built on them.

A codebook is a frozen d_c x V matrix of real code vectors. This module
quantizes vectors to their nearest code, builds per-code synonym lists
(nearest neighbours in code space), and computes popularity-rank
permutations that move frequent indices to the front of the vocabulary.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


@dataclass(frozen=True, eq=False)
class Codebook:
    """Frozen code vectors, one column per code.

    vectors has shape (d_c, V). original_ids, when given, maps each local
    index to the code's id in the tokenizer's full vocabulary.
    """

    vectors: np.ndarray
    original_ids: np.ndarray | None = None

    def __post_init__(self):
        vecs = np.ascontiguousarray(np.asarray(self.vectors, dtype=np.float32))
        if vecs.ndim != 2 or vecs.shape[0] < 1 or vecs.shape[1] < 1:
            raise InputError(f"codebook must be a d_c x V matrix, got shape {vecs.shape}")
        if not np.all(np.isfinite(vecs)):
            raise InputError("codebook contains non-finite entries")
        object.__setattr__(self, "vectors", vecs)
        if self.original_ids is not None:
            ids = np.asarray(self.original_ids, dtype=np.int64)
            if ids.shape != (vecs.shape[1],):
                raise InputError("original_ids length must equal V")
            if len(np.unique(ids)) != len(ids):
                raise InputError("original_ids must be distinct")
            object.__setattr__(self, "original_ids", ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    @property
    def size(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True, eq=False)
class SynonymTable:
    """For each code, its nearest other codes sorted by ascending distance."""

    neighbors: np.ndarray  # (V, min(s, V-1)) int32; empty second axis when V == 1

    @property
    def width(self) -> int:
        return self.neighbors.shape[1]

    def translate(self, perm: np.ndarray) -> "SynonymTable":
        """Re-express the table in a permuted index space.

        Row order and entries are mapped through perm (old index -> new
        index); distances, and therefore within-row order, are unchanged.
        """
        p = np.asarray(perm, dtype=np.int64)
        out = np.empty_like(self.neighbors)
        out[p] = p.astype(np.int32)[self.neighbors]
        return SynonymTable(out)


@dataclass(frozen=True, eq=False)
class PopularityPermutation:
    """Bijection old index -> rank, most frequent first."""

    perm: np.ndarray    # (V,) int64, perm[old] = rank
    counts: np.ndarray  # (V,) int64 occurrence counts, indexed by old index

    inverse: np.ndarray = field(init=False)  # (V,) int64, inverse[rank] = old

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))
        object.__setattr__(self, "inverse", inv)

    def apply(self, tokens: np.ndarray) -> np.ndarray:
        return self.perm[tokens]

    def undo(self, tokens: np.ndarray) -> np.ndarray:
        return self.inverse[tokens]


def quantize(vector, cb: Codebook) -> int:
    """Index of the code nearest to vector in squared Euclidean distance.

    Ties break toward the lowest code index. Distances accumulate in
    float64 so equal-by-construction distances compare equal.
    """
    v = np.asarray(vector, dtype=np.float64).reshape(-1)
    if v.shape[0] != cb.dim:
        raise InputError(f"vector has length {v.shape[0]}, codebook dimension is {cb.dim}")
    if not np.all(np.isfinite(v)):
        raise InputError("vector contains non-finite entries")
    diff = cb.vectors.astype(np.float64) - v[:, None]
    dists = np.einsum("ij,ij->j", diff, diff)
    return int(np.argmin(dists))


def build_synonyms(cb: Codebook, s: int = 5) -> SynonymTable:
    """The min(s, V-1) nearest other codes for every code.

    Each row is sorted ascending by distance, distance ties broken by
    lowest code index, and never contains the row's own index.
    """
    if s < 1:
        raise InputError("synonym count must be >= 1")
    vecs = cb.vectors.astype(np.float64)
    v = cb.size
    width = min(s, v - 1)
    if width == 0:
        return SynonymTable(np.empty((v, 0), dtype=np.int32))
    sq = np.einsum("ij,ij->j", vecs, vecs)
    # Full pairwise distance matrix; V stays small enough for exact search.
    d2 = sq[:, None] + sq[None, :] - 2.0 * (vecs.T @ vecs)
    np.fill_diagonal(d2, np.inf)  # self never qualifies
    order = np.argsort(d2, axis=1, kind="stable")  # stable: ties by lower index
    return SynonymTable(order[:, :width].astype(np.int32))


def rank_by_popularity(token_stream, V: int) -> PopularityPermutation:
    """Permutation assigning rank 0 to the most frequent index.

    Count ties, including never-seen codes, resolve by ascending old
    index, so every code receives a rank and the permutation is total.
    """
    counts = np.zeros(V, dtype=np.int64)
    for chunk in _iter_chunks(token_stream):
        if chunk.size == 0:
            continue
        lo, hi = int(chunk.min()), int(chunk.max())
        if lo < 0 or hi >= V:
            raise InputError(f"token value out of range [0, {V}): {lo if lo < 0 else hi}")
        counts += np.bincount(chunk, minlength=V)
    return ranking_from_counts(counts)


def ranking_from_counts(counts: np.ndarray) -> PopularityPermutation:
    """Popularity ranking from an already-gathered count vector."""
    counts = np.asarray(counts, dtype=np.int64)
    v = counts.shape[0]
    order = np.lexsort((np.arange(v), -counts))  # by (-count, old index)
    perm = np.empty(v, dtype=np.int64)
    perm[order] = np.arange(v)
    return PopularityPermutation(perm=perm, counts=counts)


def _iter_chunks(stream):
    """Normalize an array, sequence, or iterator of indices into int64 chunks."""
    if isinstance(stream, np.ndarray):
        yield stream.reshape(-1).astype(np.int64, copy=False)
        return
    buf = []
    for item in stream:
        arr = np.asarray(item, dtype=np.int64)
        if arr.ndim == 0:
            buf.append(int(arr))
            if len(buf) >= 65536:
                yield np.asarray(buf, dtype=np.int64)
                buf = []
        else:
            yield arr.reshape(-1)
    if buf:
        yield np.asarray(buf, dtype=np.int64)
