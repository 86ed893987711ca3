import json
import math
import threading
import time
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from coba.core import EmbeddingTable, NextTokenDistribution, Vocabulary
from coba.lm import (
    EchoLm,
    LmProtocolError,
    LmProvider,
    LmTimeoutError,
    LmTransportError,
    NGramLm,
    RemoteLm,
    TableLm,
)
from coba.server import serve_lm


def small_vocab(size=6):
    return Vocabulary(size=size, sos_id=0, eos_id=1)


def unit_embedding(size, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    rows = rng.normal(size=(size, dim))
    return EmbeddingTable(rows / np.linalg.norm(rows, axis=1, keepdims=True))


class TestTableLm:
    def make(self):
        v = small_vocab()
        entries = {
            (0,): [0.0, 0.0, 0.9, 0.1, 0.0, 0.0],
            (0, 2): [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        }
        default = [0.0, 0.2, 0.2, 0.2, 0.2, 0.2]
        return TableLm(v, entries, default, unit_embedding(6))

    def test_exact_prefix_lookup(self):
        lm = self.make()
        d = lm.next_distribution((), (0,))
        assert d.probs[2] == pytest.approx(0.9)

    def test_default_for_unknown_prefix(self):
        lm = self.make()
        d = lm.next_distribution((), (0, 5))
        assert d.probs[1] == pytest.approx(0.2)

    def test_context_is_ignored(self):
        lm = self.make()
        a = lm.next_distribution((2, 3), (0,)).probs
        b = lm.next_distribution((), (0,)).probs
        assert np.array_equal(a, b)

    def test_unconditional_table(self):
        v = small_vocab()
        uncond = {(0,): [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]}
        lm = TableLm(
            v,
            {(0,): [0.0, 0.0, 1.0, 0.0, 0.0, 0.0]},
            [0.0, 0.2, 0.2, 0.2, 0.2, 0.2],
            unit_embedding(6),
            entries_unconditional=uncond,
        )
        assert lm.next_distribution((), (0,), conditioned=False).probs[5] == 1.0
        assert lm.next_distribution((), (0,), conditioned=True).probs[2] == 1.0

    def test_rejects_unnormalized_entry(self):
        v = small_vocab()
        with pytest.raises(ValueError):
            TableLm(v, {(0,): [0.5] * 6}, [1 / 6.0] * 6, unit_embedding(6))

    def test_rejects_mismatched_embedding(self):
        with pytest.raises(ValueError):
            TableLm(small_vocab(), {}, [1 / 6.0] * 6, unit_embedding(5))

    def test_satisfies_provider_protocol(self):
        assert isinstance(self.make(), LmProvider)


class TestNGramLm:
    def make(self, order=2, lam=0.0, eps=0.0, size=8, memory=None):
        v = Vocabulary(size=size, sos_id=0, eos_id=1)
        if memory is None:
            memory = np.full(size, 1.0 / size)
        return NGramLm(v, order, memory, lam, eps, unit_embedding(size))

    def test_bigram_counts(self):
        # context "a b a c" with a=2, b=3, c=4: after "a" both b and c once
        lm = self.make(order=2, lam=0.0)
        d = lm.next_distribution((2, 3, 2, 4), (0, 5, 2))
        assert d.probs[3] == pytest.approx(0.5)
        assert d.probs[4] == pytest.approx(0.5)
        assert d.probs[2] == 0.0

    def test_lam_one_returns_memory(self):
        memory = np.array([0.0, 0.0, 0.5, 0.25, 0.25, 0.0, 0.0, 0.0])
        lm = self.make(lam=1.0, memory=memory)
        d = lm.next_distribution((2, 3, 4), (0, 2))
        assert np.allclose(d.probs, memory)

    def test_half_mixture(self):
        # deterministic context bigram P(b|a)=1 mixed with uniform memory over
        # a 4-token vocabulary at lam=0.5: 0.5*1 + 0.5*0.25 = 0.625
        v = Vocabulary(size=4, sos_id=0, eos_id=1)
        lm = NGramLm(v, 2, np.full(4, 0.25), 0.5, 0.0, unit_embedding(4))
        d = lm.next_distribution((2, 3), (0, 2))
        assert d.probs[3] == pytest.approx(0.625)

    def test_backoff_to_unigram(self):
        # token 5 never appears in the context, so the bigram history backs
        # off and the context unigram answers
        lm = self.make(order=2, lam=0.0)
        d = lm.next_distribution((2, 3, 2, 4), (0, 5))
        assert d.probs[2] == pytest.approx(0.5)
        assert d.probs[3] == pytest.approx(0.25)
        assert d.probs[4] == pytest.approx(0.25)

    def test_empty_context_is_uniform(self):
        lm = self.make(order=2, lam=0.0)
        d = lm.next_distribution((), (0,))
        assert np.allclose(d.probs, 1.0 / 8)

    def test_eps_smoothing_covers_vocab(self):
        lm = self.make(order=2, lam=0.0, eps=0.1)
        d = lm.next_distribution((2, 3), (0, 2))
        assert np.all(d.probs > 0.0)
        # counts: after "a": b once; add-eps over 8 tokens
        assert d.probs[3] == pytest.approx(1.1 / 1.8)

    def test_grounding_property(self):
        # lam=0, eps=0: every positive-probability token occurs in the context
        rng = np.random.default_rng(4)
        lm = self.make(order=3, lam=0.0, eps=0.0, size=16)
        for _ in range(25):
            ctx = tuple(int(x) for x in rng.integers(2, 16, size=12))
            prefix = (0,) + tuple(int(x) for x in rng.integers(2, 16, size=3))
            probs = lm.next_distribution(ctx, prefix).probs
            support = set(np.flatnonzero(probs > 0.0).tolist())
            assert support <= set(ctx)

    def test_conditioned_false_ignores_context(self):
        memory = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        lm = self.make(lam=0.5, memory=memory)
        d = lm.next_distribution((3, 4, 5), (0, 3), conditioned=False)
        # (1-lam) * uniform + lam * memory
        assert d.probs[2] == pytest.approx(0.5 + 0.5 / 8)
        assert d.probs[3] == pytest.approx(0.5 / 8)

    def test_cache_is_transparent(self):
        lm = self.make(order=2, lam=0.0)
        ctxs = [tuple(int(x) for x in np.random.default_rng(i).integers(2, 8, size=6)) for i in range(12)]
        first = [lm.next_distribution(c, (0, c[0])).probs.copy() for c in ctxs]
        second = [lm.next_distribution(c, (0, c[0])).probs for c in ctxs]
        for a, b in zip(first, second):
            assert np.array_equal(a, b)

    def test_validation(self):
        with pytest.raises(ValueError):
            self.make(order=0)
        with pytest.raises(ValueError):
            self.make(lam=1.5)
        v = small_vocab()
        with pytest.raises(ValueError):
            NGramLm(v, 2, np.full(6, 1 / 6.0), 0.5, -0.1, unit_embedding(6))


class TestEchoLm:
    def test_echoes_last_token(self):
        lm = EchoLm(small_vocab(), unit_embedding(6))
        assert lm.next_distribution((), (0, 4)).probs[4] == 1.0

    def test_sos_maps_to_eos(self):
        lm = EchoLm(small_vocab(), unit_embedding(6))
        assert lm.next_distribution((), (0,)).probs[1] == 1.0


@contextmanager
def stub_server(routes, delay=0.0):
    """Serve canned JSON bodies: routes maps path -> (status, payload)."""

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _serve(self):
            if delay:
                time.sleep(delay)
            status, payload = routes.get(self.path, (404, {"error": "nope"}))
            body = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("content-type", "application/json")
            self.send_header("content-length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            self._serve()

        def do_POST(self):
            length = int(self.headers.get("content-length", 0))
            self.rfile.read(length)
            self._serve()

    httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{httpd.server_address[1]}"
    finally:
        httpd.shutdown()
        httpd.server_close()
        thread.join()


def good_meta(size=4, dim=2):
    return {
        "vocab_size": size,
        "sos_id": 0,
        "eos_id": 1,
        "special_ids": [0, 1],
        "embedding_dim": dim,
    }


def good_embeddings(size=4, dim=2):
    return {"vectors": [[float(i + 1)] * dim for i in range(size)]}


class TestRemoteLm:
    def test_round_trip_against_fixture_server(self):
        v = small_vocab()
        lm = TableLm(
            v,
            {(0,): [0.0, 0.0, 0.7, 0.3, 0.0, 0.0]},
            [0.0, 0.5, 0.125, 0.125, 0.125, 0.125],
            unit_embedding(6),
        )
        with serve_lm(lm) as url:
            with RemoteLm(url) as remote:
                rv = remote.vocabulary()
                assert rv.size == 6 and rv.sos_id == 0 and rv.eos_id == 1
                got = remote.next_distribution((2, 3), (0,)).probs
                want = lm.next_distribution((2, 3), (0,)).probs
                assert np.allclose(got, want, atol=1e-12)
                assert np.allclose(remote.embeddings().vectors, lm.embeddings().vectors)

    def test_unconditional_round_trip(self):
        v = small_vocab()
        lm = NGramLm(v, 2, np.full(6, 1 / 6.0), 0.5, 0.0, unit_embedding(6))
        with serve_lm(lm) as url:
            with RemoteLm(url) as remote:
                got = remote.next_distribution((2, 3), (0, 2), conditioned=False).probs
                want = lm.next_distribution((2, 3), (0, 2), conditioned=False).probs
                assert np.allclose(got, want, atol=1e-12)

    def test_connection_refused(self):
        with pytest.raises(LmTransportError):
            RemoteLm("http://127.0.0.1:9")

    def test_bad_logprob_sum_rejected(self):
        # exp of the reported vector sums to 0.8: protocol violation
        bad = [math.log(0.2)] * 4
        routes = {
            "/v1/meta": (200, good_meta()),
            "/v1/embeddings": (200, good_embeddings()),
            "/v1/logprobs": (200, {"logprobs": bad}),
        }
        with stub_server(routes) as url:
            remote = RemoteLm(url)
            with pytest.raises(LmProtocolError):
                remote.next_distribution((), (0,))
            remote.close()

    def test_within_tolerance_sum_is_renormalized(self):
        vals = [0.25 + 2e-5] + [0.25] * 3
        routes = {
            "/v1/meta": (200, good_meta()),
            "/v1/embeddings": (200, good_embeddings()),
            "/v1/logprobs": (200, {"logprobs": [math.log(x) for x in vals]}),
        }
        with stub_server(routes) as url:
            remote = RemoteLm(url)
            probs = remote.next_distribution((), (0,)).probs
            assert probs.sum() == pytest.approx(1.0, abs=1e-12)
            remote.close()

    def test_wrong_vector_length(self):
        routes = {
            "/v1/meta": (200, good_meta()),
            "/v1/embeddings": (200, good_embeddings()),
            "/v1/logprobs": (200, {"logprobs": [0.0, 0.0]}),
        }
        with stub_server(routes) as url:
            remote = RemoteLm(url)
            with pytest.raises(LmProtocolError):
                remote.next_distribution((), (0,))
            remote.close()

    def test_http_error_status(self):
        routes = {
            "/v1/meta": (200, good_meta()),
            "/v1/embeddings": (200, good_embeddings()),
            "/v1/logprobs": (500, {"error": "boom"}),
        }
        with stub_server(routes) as url:
            remote = RemoteLm(url)
            with pytest.raises(LmProtocolError):
                remote.next_distribution((), (0,))
            remote.close()

    def test_malformed_meta(self):
        routes = {"/v1/meta": (200, {"vocab_size": "many"})}
        with stub_server(routes) as url:
            with pytest.raises(LmProtocolError):
                RemoteLm(url)

    def test_timeout(self):
        routes = {
            "/v1/meta": (200, good_meta()),
            "/v1/embeddings": (200, good_embeddings()),
            "/v1/logprobs": (200, {"logprobs": [math.log(0.25)] * 4}),
        }
        with stub_server(routes, delay=1.5) as url:
            with pytest.raises(LmTimeoutError):
                RemoteLm(url, timeout=0.2)
