"""Vocabulary, token-sequence, and distribution types shared by every module.

Token ids are the unit of everything; surface strings exist only for display.
Core values are immutable after construction and safe to share across
concurrent decode sessions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Literal, Mapping, Sequence

import numpy as np

# Ordered token ids; the common currency of context, prefix, and output.
TokenSeq = tuple[int, ...]

PROB_SUM_TOL = 1e-6

DistributionKind = Literal["conditional", "unconditional"]


def as_token_seq(ids: Sequence[int]) -> TokenSeq:
    """Coerce a sequence of ints to the canonical immutable form."""
    return tuple(int(i) for i in ids)


@dataclass(frozen=True)
class Vocabulary:
    """A token inventory of `size` ids with designated special tokens.

    `special_ids` is the union of sos/eos/pad and any `extra_special_ids`;
    `display` optionally maps ids to surface strings for rendering only.
    """

    size: int
    sos_id: int
    eos_id: int
    pad_id: int | None = None
    extra_special_ids: frozenset[int] = frozenset()
    display: Mapping[int, str] | None = None

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise ValueError("vocabulary size must be positive")
        for name, tid in (("sos_id", self.sos_id), ("eos_id", self.eos_id)):
            if not 0 <= tid < self.size:
                raise ValueError(f"{name}={tid} out of range [0, {self.size})")
        if self.sos_id == self.eos_id:
            raise ValueError("sos_id and eos_id must differ")
        if self.pad_id is not None and not 0 <= self.pad_id < self.size:
            raise ValueError(f"pad_id={self.pad_id} out of range [0, {self.size})")
        object.__setattr__(self, "extra_special_ids", frozenset(int(i) for i in self.extra_special_ids))
        for tid in self.extra_special_ids:
            if not 0 <= tid < self.size:
                raise ValueError(f"special id {tid} out of range [0, {self.size})")

    @cached_property
    def special_ids(self) -> frozenset[int]:
        ids = {self.sos_id, self.eos_id} | self.extra_special_ids
        if self.pad_id is not None:
            ids.add(self.pad_id)
        return frozenset(ids)

    @cached_property
    def special_mask(self) -> np.ndarray:
        """Boolean mask of length `size`, True at special ids. Read-only."""
        mask = np.zeros(self.size, dtype=bool)
        mask[list(self.special_ids)] = True
        mask.setflags(write=False)
        return mask

    def check_seq(self, ids: Sequence[int]) -> TokenSeq:
        """Validate every id is in range and return the canonical tuple."""
        seq = as_token_seq(ids)
        for tid in seq:
            if not 0 <= tid < self.size:
                raise ValueError(f"token id {tid} out of range [0, {self.size})")
        return seq

    def render(self, ids: Sequence[int]) -> str:
        """Display-only join of token surface forms (falls back to `<id>`)."""
        display = self.display or {}
        return " ".join(display.get(int(i), f"<{int(i)}>") for i in ids)


@dataclass(frozen=True)
class NextTokenDistribution:
    """A probability vector over the vocabulary for one decoding step.

    The vector must be non-negative and sum to 1 within ``PROB_SUM_TOL``;
    an un-normalized vector is rejected here, never silently renormalized.
    `kind` records whether the step was conditioned on the context document.
    """

    probs: np.ndarray
    kind: DistributionKind = "conditional"

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probs must be a non-empty 1-D vector")
        if not np.all(np.isfinite(probs)):
            raise ValueError("probs must be finite")
        if np.any(probs < 0.0):
            raise ValueError("probs must be non-negative")
        total = float(probs.sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probs sum to {total}, expected 1 within {PROB_SUM_TOL}")
        probs = probs.copy()
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        if self.kind not in ("conditional", "unconditional"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    def __len__(self) -> int:
        return int(self.probs.size)


@dataclass(frozen=True)
class EmbeddingTable:
    """Per-token static embedding rows, one per vocabulary entry.

    Zero rows are rejected at construction: cosine distance is undefined
    for them and there is no sensible patch.
    """

    vectors: np.ndarray

    def __post_init__(self) -> None:
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] == 0 or vectors.shape[1] == 0:
            raise ValueError("vectors must be a non-empty 2-D array (vocab x dim)")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embedding vectors must be finite")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("embedding table contains an all-zero row")
        vectors = vectors.copy()
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    @cached_property
    def unit_rows(self) -> np.ndarray:
        """Rows scaled to unit norm, for vectorized cosine computations."""
        unit = self.vectors / np.linalg.norm(self.vectors, axis=1, keepdims=True)
        unit.setflags(write=False)
        return unit


def sequence_logprob(dists: Sequence[NextTokenDistribution], seq: Sequence[int]) -> float:
    """Sum of per-step log probabilities of `seq` under `dists`.

    Returns -inf when any step assigns probability zero to its token.
    """
    ids = as_token_seq(seq)
    if len(dists) != len(ids):
        raise ValueError(f"got {len(dists)} distributions for {len(ids)} tokens")
    total = 0.0
    for dist, tid in zip(dists, ids):
        p = float(dist.probs[tid])
        if p == 0.0:
            return -math.inf
        total += math.log(p)
    return total


def cosine_distance(u: Sequence[float], v: Sequence[float]) -> float:
    """1 - cos(u, v), in [0, 2]. Rejects zero vectors and mismatched dims."""
    u_arr = np.asarray(u, dtype=np.float64)
    v_arr = np.asarray(v, dtype=np.float64)
    if u_arr.ndim != 1 or v_arr.ndim != 1 or u_arr.size == 0:
        raise ValueError("inputs must be non-empty 1-D vectors")
    if u_arr.shape != v_arr.shape:
        raise ValueError(f"dimension mismatch: {u_arr.size} vs {v_arr.size}")
    nu = float(np.linalg.norm(u_arr))
    nv = float(np.linalg.norm(v_arr))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine distance is undefined for the zero vector")
    d = 1.0 - float(np.dot(u_arr, v_arr)) / (nu * nv)
    # Guard floating excursions just outside the mathematical range.
    return min(2.0, max(0.0, d))
