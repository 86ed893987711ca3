"""Reference-based and reference-free summary metrics, plus the aggregator
for probability/distance profiles around hallucination spans.

All functions here are pure; the harness merges their outputs per document.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import EmbeddingTable, TokenSeq, Vocabulary, as_token_seq
from .detect import ContextDistances


@dataclass(frozen=True)
class DocMetrics:
    """One metrics row: a (document, method) pair. Metric fields are None
    when not computable for the run (no reference, no annotations, or a
    recorded per-document error)."""

    doc_id: str
    method: str
    rouge_l_f1: float | None
    grounding_precision: float | None
    hallucination_rate: float | None
    length_tokens: int
    fallback: bool
    steps_used: int
    error: str | None = None


@dataclass(frozen=True)
class MetricReport:
    rows: tuple[DocMetrics, ...]

    def mean(self, field: str, method: str | None = None) -> float:
        """Arithmetic mean of one metric over rows where it was computed."""
        values = [
            getattr(r, field)
            for r in self.rows
            if (method is None or r.method == method)
            and r.error is None
            and getattr(r, field) is not None
        ]
        if not values:
            raise ValueError(f"no rows carry {field!r}" + (f" for method {method!r}" if method else ""))
        return float(np.mean(values))

    def methods(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.rows:
            seen.setdefault(r.method, None)
        return list(seen)


def lcs_length(a: Sequence[int], b: Sequence[int]) -> int:
    """Longest common subsequence length via the classic quadratic DP,
    rolling a single row."""
    if len(a) < len(b):
        a, b = b, a
    prev = np.zeros(len(b) + 1, dtype=np.int64)
    for x in a:
        curr = prev.copy()
        for j, y in enumerate(b, start=1):
            if x == y:
                curr[j] = prev[j - 1] + 1
            elif curr[j - 1] > curr[j]:
                curr[j] = curr[j - 1]
        prev = curr
    return int(prev[-1])


def rouge_l(candidate: Sequence[int], reference: Sequence[int]) -> tuple[float, float, float]:
    """LCS-based (precision, recall, f1) over token ids."""
    cand = as_token_seq(candidate)
    ref = as_token_seq(reference)
    if not cand or not ref:
        raise ValueError("rouge_l requires non-empty sequences")
    lcs = lcs_length(cand, ref)
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    if precision + recall == 0.0:
        return 0.0, 0.0, 0.0
    f1 = 2.0 * precision * recall / (precision + recall)
    return precision, recall, f1


def grounding_precision(
    summary: Sequence[int],
    context: Sequence[int],
    embedding: EmbeddingTable,
    phi: float,
    vocab: Vocabulary,
) -> float:
    """Fraction of non-special summary tokens whose nearest context token is
    within cosine distance phi."""
    summary_seq = vocab.check_seq(summary)
    if not summary_seq:
        raise ValueError("summary must be non-empty")
    tokens = np.asarray(summary_seq, dtype=np.int64)
    keep = ~vocab.special_mask[tokens]
    if not keep.any():
        raise ValueError("summary contains only special tokens")
    distances = ContextDistances(embedding, context)
    if distances.empty:
        raise ValueError("context must be non-empty")
    within = distances.values[tokens[keep]] <= phi
    return float(within.mean())


def hallucination_rate(summary: Sequence[int], context: Sequence[int], n: int = 1) -> float:
    """Fraction of summary positions whose incoming n-gram (clipped at the
    start) never occurs contiguously in the context. Exact on corpora whose
    grounded continuations are context n-grams by construction."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    summary_seq = as_token_seq(summary)
    context_seq = as_token_seq(context)
    if not summary_seq:
        return 0.0
    attested: set[TokenSeq] = set()
    for k in range(1, n + 1):
        for i in range(len(context_seq) - k + 1):
            attested.add(context_seq[i : i + k])
    misses = 0
    for i in range(len(summary_seq)):
        gram = summary_seq[max(0, i - n + 1) : i + 1]
        if gram not in attested:
            misses += 1
    return misses / len(summary_seq)


@dataclass(frozen=True)
class ProfileRow:
    offset: int
    mean_prob: float
    std_prob: float
    mean_dist: float
    std_dist: float
    n: int


def aggregate_profiles(
    rows: Iterable[Sequence[tuple[int, float, float]]]
) -> list[ProfileRow]:
    """Combine many span_profile outputs into a per-offset table of means and
    population standard deviations, sorted by offset."""
    probs: dict[int, list[float]] = {}
    dists: dict[int, list[float]] = {}
    for row in rows:
        for offset, prob, dist in row:
            probs.setdefault(offset, []).append(prob)
            dists.setdefault(offset, []).append(dist)
    if not probs:
        raise ValueError("no profile samples to aggregate")
    table = []
    for offset in sorted(probs):
        p = np.asarray(probs[offset])
        d = np.asarray(dists[offset])
        table.append(
            ProfileRow(
                offset=offset,
                mean_prob=float(p.mean()),
                std_prob=float(p.std()),
                mean_dist=float(d.mean()),
                std_dist=float(d.std()),
                n=int(p.size),
            )
        )
    return table
