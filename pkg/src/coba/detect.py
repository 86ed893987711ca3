"""Hallucination detectors: probability threshold and context-similarity
threshold, evaluated over whole candidate vectors at once.

A candidate is admissible when every active check passes. Checks are
inclusive at the boundary: prob == delta passes, dist == phi passes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import EmbeddingTable, NextTokenDistribution, Vocabulary, as_token_seq


@dataclass(frozen=True)
class DetectorConfig:
    """Thresholds for the two detectors.

    delta: minimum conditional probability; candidates below it are flagged.
    phi: maximum cosine distance to the nearest context token; None disables
    the similarity check entirely. exempt_special keeps control tokens
    (sos/eos/pad/...) out of the similarity check, since they never appear in
    source documents; the probability check still applies to them.
    """

    delta: float = 0.2
    phi: float | None = None
    exempt_special: bool = True

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")
        if self.phi is not None and not 0.0 <= self.phi <= 2.0:
            raise ValueError(f"phi must be in [0, 2], got {self.phi}")


@dataclass(frozen=True)
class TokenVerdict:
    """Per-candidate detector outcome; min_dist is None when the similarity
    check did not apply."""

    token: int
    prob: float
    min_dist: float | None
    passes_prob: bool
    passes_dist: bool

    @property
    def admissible(self) -> bool:
        return self.passes_prob and self.passes_dist


class ContextDistances:
    """Minimum cosine distance from every vocabulary token to the context,
    precomputed once per decode session.

    With an empty context there is nothing to compare against, so the
    similarity check is vacuous and every token passes.
    """

    def __init__(self, embedding: EmbeddingTable, context: Sequence[int]):
        ids = np.unique(np.asarray(as_token_seq(context), dtype=np.int64))
        if ids.size and (ids.min() < 0 or ids.max() >= len(embedding)):
            raise ValueError("context token id out of embedding range")
        self.empty = ids.size == 0
        unit = embedding.unit_rows
        if self.empty:
            values = np.full(len(embedding), np.inf)
        else:
            sims = unit @ unit[ids].T
            values = np.clip(1.0 - sims.max(axis=1), 0.0, 2.0)
        values.setflags(write=False)
        self.values = values

    def passes(self, phi: float) -> np.ndarray:
        if self.empty:
            return np.ones(self.values.shape[0], dtype=bool)
        return self.values <= phi


def min_context_distance(
    token: int, context: Sequence[int], embedding: EmbeddingTable
) -> float:
    """Minimum cosine distance from one token to the distinct context tokens."""
    distances = ContextDistances(embedding, context)
    if distances.empty:
        raise ValueError("context must be non-empty")
    return float(distances.values[token])


def admissible_mask(
    probs: np.ndarray,
    cfg: DetectorConfig,
    distances: ContextDistances | None,
    special_mask: np.ndarray,
) -> np.ndarray:
    """Boolean vector over the vocabulary: True where no active detector
    flags the candidate."""
    ok = probs >= cfg.delta
    if cfg.phi is not None and distances is not None and not distances.empty:
        pass_dist = distances.passes(cfg.phi)
        if cfg.exempt_special:
            pass_dist = pass_dist | special_mask
        ok = ok & pass_dist
    return ok


def classify_candidates(
    dist: NextTokenDistribution,
    context: Sequence[int],
    cfg: DetectorConfig,
    embedding: EmbeddingTable,
    vocab: Vocabulary,
) -> list[TokenVerdict]:
    """One verdict per vocabulary token, mirroring `admissible_mask`."""
    probs = dist.probs
    if probs.shape[0] != vocab.size:
        raise ValueError("distribution size does not match vocabulary")
    distances = ContextDistances(embedding, context) if cfg.phi is not None else None
    passes_prob = probs >= cfg.delta
    if distances is None or distances.empty:
        min_dists = None
        passes_dist = np.ones(vocab.size, dtype=bool)
    else:
        min_dists = distances.values
        passes_dist = distances.passes(cfg.phi)
        if cfg.exempt_special:
            passes_dist = passes_dist | vocab.special_mask
    return [
        TokenVerdict(
            token=tok,
            prob=float(probs[tok]),
            min_dist=None if min_dists is None else float(min_dists[tok]),
            passes_prob=bool(passes_prob[tok]),
            passes_dist=bool(passes_dist[tok]),
        )
        for tok in range(vocab.size)
    ]


def span_profile(
    doc: Sequence[int],
    summary: Sequence[int],
    span_start: int,
    lm,
    cfg: DetectorConfig | None = None,
    window: int = 5,
) -> list[tuple[int, float, float]]:
    """Probability and context distance of summary tokens around a span start.

    Returns (offset, prob, min_dist) rows for offsets -window..+window,
    clipped to the summary bounds; offset 0 is the span's first token. The
    probability of the token at position p is taken under the LM conditioned
    on the document and the summary prefix before p. The detector config is
    accepted for interface symmetry with classification, but thresholds do
    not alter the measured values.
    """
    doc_seq = as_token_seq(doc)
    summary_seq = as_token_seq(summary)
    if not 0 <= span_start < len(summary_seq):
        raise ValueError(f"span_start {span_start} outside summary of length {len(summary_seq)}")
    if window < 0:
        raise ValueError(f"window must be >= 0, got {window}")
    vocab = lm.vocabulary()
    distances = ContextDistances(lm.embeddings(), doc_seq)
    rows: list[tuple[int, float, float]] = []
    for offset in range(-window, window + 1):
        pos = span_start + offset
        if not 0 <= pos < len(summary_seq):
            continue
        prefix = (vocab.sos_id, *summary_seq[:pos])
        probs = lm.next_distribution(doc_seq, prefix, True).probs
        token = summary_seq[pos]
        rows.append((offset, float(probs[token]), float(distances.values[token])))
    return rows
