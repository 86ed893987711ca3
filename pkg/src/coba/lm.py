"""Language-model providers: abstract interface, deterministic toy LMs, and
a client for real models behind the wire protocol.

All providers expose probabilities (not logits); `next_distribution` must be
a pure function of (context, prefix, conditioned).
"""

from __future__ import annotations

import threading
import uuid
from collections import OrderedDict
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence, runtime_checkable

import httpx
import numpy as np

from .core import (
    EmbeddingTable,
    NextTokenDistribution,
    TokenSeq,
    Vocabulary,
    as_token_seq,
)


class LmError(Exception):
    """Base class for provider failures surfaced to the decode engine."""


class LmTransportError(LmError):
    """Connection-level failure; safe to retry the same request."""


class LmTimeoutError(LmError):
    """The server did not answer within the configured timeout."""


class LmProtocolError(LmError):
    """The server answered, but the payload violates the wire contract."""


@runtime_checkable
class LmProvider(Protocol):
    """Behavioral interface every language model plugs in through."""

    max_length_hint: int | None

    def vocabulary(self) -> Vocabulary: ...

    def embeddings(self) -> EmbeddingTable: ...

    def next_distribution(
        self, context: Sequence[int], prefix: Sequence[int], conditioned: bool = True
    ) -> NextTokenDistribution: ...


def _validate_prob_vector(vec: np.ndarray, size: int, what: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.shape != (size,):
        raise ValueError(f"{what}: expected shape ({size},), got {arr.shape}")
    NextTokenDistribution(arr)  # reuse boundary validation
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


class TableLm:
    """Exact-lookup toy LM: maps full prefixes to explicit probability vectors.

    Context is ignored unless entries are keyed with a context marker; unlisted
    prefixes fall back to `default`. An optional second map serves
    conditioned=False queries, else the same table answers both.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        entries: Mapping[Sequence[int], Sequence[float]],
        default: Sequence[float],
        embedding: EmbeddingTable,
        entries_unconditional: Mapping[Sequence[int], Sequence[float]] | None = None,
        max_length_hint: int | None = None,
    ):
        if len(embedding) != vocab.size:
            raise ValueError("embedding row count must equal vocabulary size")
        self._vocab = vocab
        self._embedding = embedding
        self._entries = {
            as_token_seq(k): _validate_prob_vector(np.asarray(v), vocab.size, "table entry")
            for k, v in entries.items()
        }
        self._entries_uncond = None
        if entries_unconditional is not None:
            self._entries_uncond = {
                as_token_seq(k): _validate_prob_vector(np.asarray(v), vocab.size, "table entry")
                for k, v in entries_unconditional.items()
            }
        self._default = _validate_prob_vector(np.asarray(default), vocab.size, "table default")
        self.max_length_hint = max_length_hint

    def vocabulary(self) -> Vocabulary:
        return self._vocab

    def embeddings(self) -> EmbeddingTable:
        return self._embedding

    @property
    def entries(self) -> dict[TokenSeq, np.ndarray]:
        return dict(self._entries)

    @property
    def entries_unconditional(self) -> dict[TokenSeq, np.ndarray] | None:
        return None if self._entries_uncond is None else dict(self._entries_uncond)

    @property
    def default(self) -> np.ndarray:
        return self._default

    def next_distribution(
        self, context: Sequence[int], prefix: Sequence[int], conditioned: bool = True
    ) -> NextTokenDistribution:
        table = self._entries
        if not conditioned and self._entries_uncond is not None:
            table = self._entries_uncond
        probs = table.get(as_token_seq(prefix), self._default)
        kind = "conditional" if conditioned else "unconditional"
        return NextTokenDistribution(probs, kind=kind)


class _ContextCounts:
    """N-gram count tables (orders 1..n) built once per context document."""

    def __init__(self, context: TokenSeq, order: int):
        self.order = order
        # follow[k][history] = {next_token: count}; totals[k][history] = sum
        self.follow: list[dict[TokenSeq, dict[int, int]]] = [dict() for _ in range(order)]
        self.totals: list[dict[TokenSeq, int]] = [dict() for _ in range(order)]
        for k in range(1, order + 1):
            fol = self.follow[k - 1]
            tot = self.totals[k - 1]
            for i in range(len(context) - k + 1):
                hist = context[i : i + k - 1]
                nxt = context[i + k - 1]
                bucket = fol.setdefault(hist, {})
                bucket[nxt] = bucket.get(nxt, 0) + 1
                tot[hist] = tot.get(hist, 0) + 1

    def conditional(self, history: TokenSeq, vocab_size: int, eps: float) -> np.ndarray:
        """P(next | history) with add-eps smoothing; at eps=0, backs off to
        shorter histories (down to context unigrams) so the support stays
        confined to context-attested tokens."""
        hist = history[-(self.order - 1) :] if self.order > 1 else ()
        if eps > 0.0:
            fol = self.follow[len(hist)].get(hist, {})
            counts = np.full(vocab_size, eps, dtype=np.float64)
            for tok, c in fol.items():
                counts[tok] += c
            return counts / counts.sum()
        while hist and self.totals[len(hist)].get(hist, 0) == 0:
            hist = hist[1:]
        total = self.totals[len(hist)].get(hist, 0)
        probs = np.zeros(vocab_size, dtype=np.float64)
        if total == 0:
            # Empty context: nothing to ground on; fall back to uniform.
            probs[:] = 1.0 / vocab_size
            return probs
        for tok, c in self.follow[len(hist)][hist].items():
            probs[tok] = c / total
        return probs


class NGramLm:
    """Toy LM mixing context-derived n-gram statistics with a fixed
    "parametric memory" distribution.

    next = (1 - lam) * P_ngram(context) + lam * P_memory, renormalized.
    Counts are rebuilt per context document at query time (and memoized), so
    with lam=0 and eps=0 every token with nonzero probability occurs in the
    context: the exact-labeling property the synthetic benchmarks rely on.
    conditioned=False drops the context: (1 - lam) * uniform + lam * P_memory.
    """

    _CACHE_SIZE = 8

    def __init__(
        self,
        vocab: Vocabulary,
        order: int,
        memory: Sequence[float],
        lam: float,
        eps: float,
        embedding: EmbeddingTable,
        max_length_hint: int | None = None,
    ):
        if order < 1:
            raise ValueError("order must be >= 1")
        if not 0.0 <= lam <= 1.0:
            raise ValueError("mixing weight must be in [0, 1]")
        if eps < 0.0:
            raise ValueError("smoothing eps must be >= 0")
        if len(embedding) != vocab.size:
            raise ValueError("embedding row count must equal vocabulary size")
        self._vocab = vocab
        self.order = order
        self.lam = float(lam)
        self.eps = float(eps)
        self._memory = _validate_prob_vector(np.asarray(memory), vocab.size, "memory distribution")
        self._embedding = embedding
        self.max_length_hint = max_length_hint
        self._counts_cache: OrderedDict[TokenSeq, _ContextCounts] = OrderedDict()
        self._cache_lock = threading.Lock()

    def vocabulary(self) -> Vocabulary:
        return self._vocab

    def embeddings(self) -> EmbeddingTable:
        return self._embedding

    @property
    def memory_distribution(self) -> np.ndarray:
        return self._memory

    def _counts_for(self, context: TokenSeq) -> _ContextCounts:
        with self._cache_lock:
            cached = self._counts_cache.get(context)
            if cached is not None:
                self._counts_cache.move_to_end(context)
                return cached
        counts = _ContextCounts(context, self.order)
        with self._cache_lock:
            self._counts_cache[context] = counts
            if len(self._counts_cache) > self._CACHE_SIZE:
                self._counts_cache.popitem(last=False)
        return counts

    def next_distribution(
        self, context: Sequence[int], prefix: Sequence[int], conditioned: bool = True
    ) -> NextTokenDistribution:
        size = self._vocab.size
        if conditioned:
            counts = self._counts_for(self._vocab.check_seq(context))
            base = counts.conditional(as_token_seq(prefix), size, self.eps)
            kind = "conditional"
        else:
            base = np.full(size, 1.0 / size, dtype=np.float64)
            kind = "unconditional"
        mixed = (1.0 - self.lam) * base + self.lam * self._memory
        mixed /= mixed.sum()
        return NextTokenDistribution(mixed, kind=kind)


class EchoLm:
    """Delta distribution on the last prefix token (sos echoes to eos).

    Useful as a transparent fixture behind the wire protocol.
    """

    max_length_hint: int | None = None

    def __init__(self, vocab: Vocabulary, embedding: EmbeddingTable):
        self._vocab = vocab
        self._embedding = embedding

    def vocabulary(self) -> Vocabulary:
        return self._vocab

    def embeddings(self) -> EmbeddingTable:
        return self._embedding

    def next_distribution(
        self, context: Sequence[int], prefix: Sequence[int], conditioned: bool = True
    ) -> NextTokenDistribution:
        seq = as_token_seq(prefix)
        target = self._vocab.eos_id
        if seq and seq[-1] != self._vocab.sos_id:
            target = seq[-1]
        probs = np.zeros(self._vocab.size, dtype=np.float64)
        probs[target] = 1.0
        kind = "conditional" if conditioned else "unconditional"
        return NextTokenDistribution(probs, kind=kind)


# Wire protocol paths (served by the in-repo fixture server and the bridge).
META_PATH = "/v1/meta"
LOGPROBS_PATH = "/v1/logprobs"
EMBEDDINGS_PATH = "/v1/embeddings"

LOGPROB_SUM_TOL = 1e-4
_EMBEDDING_FETCH_CHUNK = 2048


class RemoteLm:
    """Client for the wire protocol; metadata is fetched once at connect time
    and immutable for the session.

    Concurrent in-flight requests are allowed up to `max_inflight`; ordering
    across requests is not guaranteed.
    """

    def __init__(
        self,
        base_url: str,
        timeout: float = 30.0,
        max_inflight: int = 4,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.session_id = uuid.uuid4().hex
        self.timeout = timeout
        self._sem = threading.BoundedSemaphore(max_inflight)
        self._client = client or httpx.Client(
            timeout=timeout, headers={"x-session-id": self.session_id}
        )
        meta = self._get_json(META_PATH)
        try:
            size = int(meta["vocab_size"])
            sos_id = int(meta["sos_id"])
            eos_id = int(meta["eos_id"])
            special = [int(i) for i in meta.get("special_ids", [])]
            self._embedding_dim = int(meta["embedding_dim"])
        except (KeyError, TypeError, ValueError) as exc:
            raise LmProtocolError(f"malformed metadata: {meta!r}") from exc
        try:
            self._vocab = Vocabulary(
                size=size,
                sos_id=sos_id,
                eos_id=eos_id,
                extra_special_ids=frozenset(special) - {sos_id, eos_id},
            )
        except ValueError as exc:
            raise LmProtocolError(str(exc)) from exc
        self._embedding = self._fetch_embeddings()
        self.max_length_hint = meta.get("max_length_hint")

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "RemoteLm":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _request(self, method: str, path: str, payload: dict | None = None) -> httpx.Response:
        url = self.base_url + path
        try:
            with self._sem:
                if method == "GET":
                    resp = self._client.get(url)
                else:
                    resp = self._client.post(url, json=payload)
        except httpx.TimeoutException as exc:
            raise LmTimeoutError(f"{method} {path}: {exc}") from exc
        except httpx.TransportError as exc:
            raise LmTransportError(f"{method} {path}: {exc}") from exc
        if resp.status_code != 200:
            raise LmProtocolError(f"{method} {path}: HTTP {resp.status_code}: {resp.text[:200]}")
        return resp

    def _get_json(self, path: str, payload: dict | None = None) -> dict:
        method = "GET" if payload is None else "POST"
        resp = self._request(method, path, payload)
        try:
            return resp.json()
        except ValueError as exc:
            raise LmProtocolError(f"{path}: response is not JSON") from exc

    def _fetch_embeddings(self) -> EmbeddingTable:
        rows = []
        for start in range(0, self._vocab.size, _EMBEDDING_FETCH_CHUNK):
            ids = list(range(start, min(start + _EMBEDDING_FETCH_CHUNK, self._vocab.size)))
            body = self._get_json(EMBEDDINGS_PATH, {"ids": ids})
            vectors = body.get("vectors")
            if not isinstance(vectors, list) or len(vectors) != len(ids):
                raise LmProtocolError("embeddings: wrong row count")
            rows.extend(vectors)
        arr = np.asarray(rows, dtype=np.float64)
        if arr.ndim != 2 or arr.shape != (self._vocab.size, self._embedding_dim):
            raise LmProtocolError(f"embeddings: expected shape ({self._vocab.size}, {self._embedding_dim})")
        if not np.all(np.isfinite(arr)):
            raise LmProtocolError("embeddings: non-finite values")
        try:
            return EmbeddingTable(arr)
        except ValueError as exc:
            raise LmProtocolError(str(exc)) from exc

    def vocabulary(self) -> Vocabulary:
        return self._vocab

    def embeddings(self) -> EmbeddingTable:
        return self._embedding

    def next_distribution(
        self, context: Sequence[int], prefix: Sequence[int], conditioned: bool = True
    ) -> NextTokenDistribution:
        body = self._get_json(
            LOGPROBS_PATH,
            {
                "context": [int(i) for i in context],
                "prefix": [int(i) for i in prefix],
                "conditioned": bool(conditioned),
            },
        )
        logprobs = body.get("logprobs")
        if not isinstance(logprobs, list) or len(logprobs) != self._vocab.size:
            raise LmProtocolError("logprobs: wrong vector length")
        arr = np.asarray(logprobs, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise LmProtocolError("logprobs: non-finite values")
        with np.errstate(under="ignore"):
            probs = np.exp(arr)
        total = float(probs.sum())
        if abs(total - 1.0) > LOGPROB_SUM_TOL:
            raise LmProtocolError(f"logprobs: exponentials sum to {total}, outside 1 +/- {LOGPROB_SUM_TOL}")
        # Within-protocol slack is squeezed out here so downstream invariants
        # hold exactly; this renormalization is part of this client's contract.
        probs /= total
        kind = "conditional" if conditioned else "unconditional"
        try:
            return NextTokenDistribution(probs, kind=kind)
        except ValueError as exc:
            raise LmProtocolError(str(exc)) from exc
