"""Conformance suite for wire-protocol servers: schema, value hygiene,
normalization, error codes, and determinism. Runs against any base URL, so
both the in-repo fixture server and external bridges can be vetted with the
same checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import httpx

from .lm import EMBEDDINGS_PATH, LOGPROBS_PATH, LOGPROB_SUM_TOL, META_PATH


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ConformanceReport:
    results: tuple[CheckResult, ...]

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.results)

    def summary(self) -> str:
        lines = []
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            lines.append(f"[{status}] {r.name}" + (f": {r.detail}" if r.detail else ""))
        return "\n".join(lines)


def _finite_floats(values, n: int | None = None) -> bool:
    if not isinstance(values, list) or (n is not None and len(values) != n):
        return False
    return all(isinstance(v, (int, float)) and math.isfinite(v) for v in values)


class _Checker:
    def __init__(self, base_url: str, timeout: float):
        self.client = httpx.Client(base_url=base_url.rstrip("/"), timeout=timeout)
        self.results: list[CheckResult] = []
        self.meta: dict | None = None

    def record(self, name: str, passed: bool, detail: str = "") -> bool:
        self.results.append(CheckResult(name, bool(passed), detail))
        return bool(passed)

    def check_meta(self) -> None:
        resp = self.client.get(META_PATH)
        if not self.record("meta: HTTP 200", resp.status_code == 200, f"got {resp.status_code}"):
            return
        self.record(
            "meta: content type json",
            resp.headers.get("content-type", "").startswith("application/json"),
            resp.headers.get("content-type", "<none>"),
        )
        meta = resp.json()
        fields_ok = all(
            isinstance(meta.get(k), int) and not isinstance(meta.get(k), bool)
            for k in ("vocab_size", "sos_id", "eos_id", "embedding_dim")
        ) and isinstance(meta.get("special_ids"), list)
        if not self.record("meta: schema", fields_ok, f"payload {meta!r}"):
            return
        size = meta["vocab_size"]
        ids_ok = (
            size >= 2
            and meta["embedding_dim"] >= 1
            and 0 <= meta["sos_id"] < size
            and 0 <= meta["eos_id"] < size
            and meta["sos_id"] != meta["eos_id"]
            and all(isinstance(i, int) and 0 <= i < size for i in meta["special_ids"])
        )
        if self.record("meta: id ranges", ids_ok):
            self.meta = meta

    def _logprobs(self, context, prefix, conditioned=True) -> httpx.Response:
        return self.client.post(
            LOGPROBS_PATH,
            json={"context": context, "prefix": prefix, "conditioned": conditioned},
        )

    def check_logprobs(self) -> None:
        assert self.meta is not None
        size = self.meta["vocab_size"]
        sos = self.meta["sos_id"]
        for conditioned in (True, False):
            tag = "conditional" if conditioned else "unconditional"
            resp = self._logprobs([], [sos], conditioned)
            if not self.record(f"logprobs {tag}: HTTP 200", resp.status_code == 200, f"got {resp.status_code}"):
                continue
            vec = resp.json().get("logprobs")
            if not self.record(f"logprobs {tag}: finite vector of length {size}", _finite_floats(vec, size)):
                continue
            total = sum(math.exp(v) for v in vec)
            self.record(
                f"logprobs {tag}: exponentials normalized",
                abs(total - 1.0) <= LOGPROB_SUM_TOL,
                f"sum {total!r}",
            )
        first = self._logprobs([], [sos]).json().get("logprobs")
        second = self._logprobs([], [sos]).json().get("logprobs")
        drift = max((abs(a - b) for a, b in zip(first, second)), default=math.inf)
        self.record("logprobs: deterministic across repeated calls", drift <= 1e-6, f"max drift {drift!r}")

    def check_embeddings(self) -> None:
        assert self.meta is not None
        size = self.meta["vocab_size"]
        dim = self.meta["embedding_dim"]
        ids = list(range(min(size, 64)))
        resp = self.client.post(EMBEDDINGS_PATH, json={"ids": ids})
        if not self.record("embeddings: HTTP 200", resp.status_code == 200, f"got {resp.status_code}"):
            return
        vectors = resp.json().get("vectors")
        shape_ok = isinstance(vectors, list) and len(vectors) == len(ids) and all(
            _finite_floats(v, dim) for v in vectors
        )
        self.record(f"embeddings: {len(ids)} finite vectors of dim {dim}", shape_ok)
        again = self.client.post(EMBEDDINGS_PATH, json={"ids": ids}).json().get("vectors")
        self.record("embeddings: stable across repeated calls", again == vectors)

    def check_errors(self) -> None:
        assert self.meta is not None
        size = self.meta["vocab_size"]
        sos = self.meta["sos_id"]
        bad_body = self.client.post(LOGPROBS_PATH, json={"context": "nope", "prefix": [sos]})
        self.record("logprobs: malformed body rejected with 400", bad_body.status_code == 400, f"got {bad_body.status_code}")
        missing = self.client.post(LOGPROBS_PATH, json={"context": []})
        self.record("logprobs: missing prefix rejected with 400", missing.status_code == 400, f"got {missing.status_code}")
        out_of_range = self._logprobs([], [size])
        self.record("logprobs: out-of-range id rejected with 422", out_of_range.status_code == 422, f"got {out_of_range.status_code}")
        neg = self.client.post(EMBEDDINGS_PATH, json={"ids": [-1]})
        self.record("embeddings: negative id rejected with 422", neg.status_code == 422, f"got {neg.status_code}")
        not_list = self.client.post(EMBEDDINGS_PATH, json={"ids": 3})
        self.record("embeddings: non-list ids rejected with 400", not_list.status_code == 400, f"got {not_list.status_code}")


def run_conformance(base_url: str, timeout: float = 30.0) -> ConformanceReport:
    """Run every check against a live server and collect the results."""
    checker = _Checker(base_url, timeout)
    try:
        checker.check_meta()
        if checker.meta is not None:
            checker.check_logprobs()
            checker.check_embeddings()
            checker.check_errors()
    except httpx.HTTPError as exc:
        checker.record("transport", False, f"{type(exc).__name__}: {exc}")
    finally:
        checker.client.close()
    return ConformanceReport(tuple(checker.results))
