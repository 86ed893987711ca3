"""Corpus harness: JSONL ingestion, method orchestration, metric and profile
CSV emission, and threshold sweeps.

Determinism contract: identical corpus bytes, settings, and base seed yield
byte-identical CSVs. Every (document, method) pair derives its own decode
seed from the base seed, so runs are reproducible under any parallelism.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import TokenSeq
from .decode import (
    CadConfig,
    DecodeConfig,
    DecodeResult,
    coba_decode,
    baseline_decode,
    lookahead_decode,
)
from .detect import DetectorConfig, span_profile
from .lm import LmError, LmProvider
from .metrics import (
    DocMetrics,
    MetricReport,
    ProfileRow,
    aggregate_profiles,
    grounding_precision,
    hallucination_rate,
    rouge_l,
)

# Named threshold presets matching the models they were tuned on.
THRESHOLD_PRESETS = {
    "flan-t5": (0.2, 0.5),
    "llama": (0.3, 0.9),
}

_METHOD_PARTS = {"greedy", "nucleus", "coba", "coba-d", "cad", "lookahead"}


class CorpusError(Exception):
    """Unreadable or structurally invalid corpus (CLI exit code 2)."""


@dataclass(frozen=True)
class CorpusRecord:
    """One input document. Context and reference each arrive as token ids or
    raw text (exactly one form); text forms parse fine but can only be
    decoded by a provider that tokenizes, which the wire protocol does not
    offer, so they surface as per-row errors at run time."""

    doc_id: str
    context: TokenSeq | None = None
    context_text: str | None = None
    reference: TokenSeq | None = None
    reference_text: str | None = None
    summary: TokenSeq | None = None
    annotations: tuple[int, ...] | None = None


def _parse_record(obj: dict, lineno: int) -> CorpusRecord:
    def fail(msg: str) -> CorpusError:
        return CorpusError(f"line {lineno}: {msg}")

    if not isinstance(obj, dict):
        raise fail("record must be a JSON object")
    doc_id = obj.get("doc_id")
    if not isinstance(doc_id, str) or not doc_id:
        raise fail("missing or empty doc_id")

    def ids_field(name: str) -> TokenSeq | None:
        value = obj.get(name)
        if value is None:
            return None
        if not isinstance(value, list) or any(
            isinstance(v, bool) or not isinstance(v, int) or v < 0 for v in value
        ):
            raise fail(f"{name} must be a list of non-negative integers")
        return tuple(value)

    context = ids_field("context")
    context_text = obj.get("context_text")
    if (context is None) == (context_text is None):
        raise fail("exactly one of context / context_text required")
    if context_text is not None and not isinstance(context_text, str):
        raise fail("context_text must be a string")
    reference = ids_field("reference")
    reference_text = obj.get("reference_text")
    if reference is not None and reference_text is not None:
        raise fail("reference and reference_text are mutually exclusive")
    summary = ids_field("summary")
    annotations = None
    if obj.get("annotations") is not None:
        spans = obj["annotations"]
        if not isinstance(spans, list) or any(
            isinstance(v, bool) or not isinstance(v, int) for v in spans
        ):
            raise fail("annotations must be a list of integer span starts")
        if summary is None:
            raise fail("annotations require a summary")
        if any(s < 0 or s >= len(summary) for s in spans):
            raise fail("annotation span start outside summary")
        annotations = tuple(spans)
    return CorpusRecord(
        doc_id=doc_id,
        context=context,
        context_text=context_text,
        reference=reference,
        reference_text=reference_text,
        summary=summary,
        annotations=annotations,
    )


def load_corpus(path: str | Path) -> list[CorpusRecord]:
    """Parse a JSONL corpus; any structural problem raises CorpusError."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except ValueError as exc:
            raise CorpusError(f"line {lineno}: invalid JSON: {exc}") from exc
        records.append(_parse_record(obj, lineno))
    if not records:
        raise CorpusError(f"corpus {path} contains no records")
    return records


@dataclass(frozen=True)
class RunSettings:
    """Everything a corpus run needs beyond the corpus and the LM."""

    methods: tuple[str, ...] = ("greedy",)
    delta: float = 0.2
    phi: float = 0.5
    top_p: float = 0.9
    alpha: float = 0.5
    min_len: int = 2
    max_len: int = 200
    budget_multiplier: int = 10
    seed: int = 0
    jobs: int = 1
    prepend_reference: bool = False
    lookahead_k: int = 5
    lookahead_interval: int = 1
    trace_dir: str | None = None

    def __post_init__(self):
        if not self.methods:
            raise ValueError("at least one method is required")
        for m in self.methods:
            parse_method(m)


def parse_method(method: str) -> frozenset[str]:
    """Validate a combined method name like "nucleus+coba-d+cad" and return
    its parts."""
    parts = [p for p in method.split("+") if p]
    if not parts or any(p not in _METHOD_PARTS for p in parts) or len(set(parts)) != len(parts):
        raise ValueError(f"unknown method {method!r}; parts must be drawn from {sorted(_METHOD_PARTS)}")
    part_set = frozenset(parts)
    if {"greedy", "nucleus"} <= part_set:
        raise ValueError(f"method {method!r} mixes greedy and nucleus")
    if {"coba", "coba-d"} <= part_set:
        raise ValueError(f"method {method!r} mixes coba and coba-d")
    if "lookahead" in part_set and part_set & {"coba", "coba-d", "nucleus"}:
        raise ValueError(f"method {method!r}: lookahead only combines with cad")
    return part_set


def method_decode_config(method: str, settings: RunSettings, seed: int) -> DecodeConfig:
    parts = parse_method(method)
    detector = None
    if "coba" in parts:
        detector = DetectorConfig(delta=settings.delta, phi=None)
    elif "coba-d" in parts:
        detector = DetectorConfig(delta=settings.delta, phi=settings.phi)
    return DecodeConfig(
        strategy="nucleus" if "nucleus" in parts else "greedy",
        top_p=settings.top_p,
        cad=CadConfig(alpha=settings.alpha) if "cad" in parts else None,
        coba=detector,
        min_len=settings.min_len,
        max_len=settings.max_len,
        budget_multiplier=settings.budget_multiplier,
        seed=seed,
    )


def derive_seed(base_seed: int, doc_index: int, method_index: int) -> int:
    """Stable per-(document, method) decode seed."""
    words = np.random.SeedSequence(base_seed, spawn_key=(doc_index, method_index)).generate_state(2)
    return int(words[0]) | (int(words[1]) << 32)


def _decode_for_method(
    lm: LmProvider, context: TokenSeq, method: str, settings: RunSettings, seed: int
) -> DecodeResult:
    cfg = method_decode_config(method, settings, seed)
    if "lookahead" in parse_method(method):
        return lookahead_decode(
            lm, context, cfg, k=settings.lookahead_k, interval=settings.lookahead_interval
        )
    if cfg.coba is not None:
        return coba_decode(lm, context, cfg)
    return baseline_decode(lm, context, cfg)


def _row_for(
    lm: LmProvider,
    record: CorpusRecord,
    doc_index: int,
    method: str,
    method_index: int,
    settings: RunSettings,
) -> tuple[DocMetrics, DecodeResult | None]:
    if record.context is None:
        return (
            DocMetrics(
                doc_id=record.doc_id, method=method, rouge_l_f1=None,
                grounding_precision=None, hallucination_rate=None, length_tokens=0,
                fallback=False, steps_used=0,
                error="text context requires a tokenizing provider",
            ),
            None,
        )
    context = record.context
    if settings.prepend_reference and record.reference is not None:
        context = record.reference + context
    seed = derive_seed(settings.seed, doc_index, method_index)
    try:
        result = _decode_for_method(lm, context, method, settings, seed)
    except LmError as exc:
        return (
            DocMetrics(
                doc_id=record.doc_id, method=method, rouge_l_f1=None,
                grounding_precision=None, hallucination_rate=None, length_tokens=0,
                fallback=False, steps_used=0, error=f"{type(exc).__name__}: {exc}",
            ),
            None,
        )
    output = result.output

    def safe(fn):
        try:
            return fn()
        except ValueError:
            return None

    rouge = None
    if record.reference is not None:
        rouge = safe(lambda: rouge_l(output, record.reference)[2])
    grounding = safe(
        lambda: grounding_precision(output, context, lm.embeddings(), settings.phi, lm.vocabulary())
    )
    hall = safe(lambda: hallucination_rate(output, context, n=1))
    return (
        DocMetrics(
            doc_id=record.doc_id,
            method=method,
            rouge_l_f1=rouge,
            grounding_precision=grounding,
            hallucination_rate=hall,
            length_tokens=len(output),
            fallback=result.fallback,
            steps_used=result.steps_used,
        ),
        result,
    )


def _write_trace(trace_dir: str, record: CorpusRecord, method: str, result: DecodeResult) -> None:
    path = Path(trace_dir) / f"{record.doc_id}.{method.replace('+', '_')}.json"
    payload = {
        "doc_id": record.doc_id,
        "method": method,
        "output": list(result.output),
        "termination": result.termination,
        "fallback": result.fallback,
        "steps_used": result.steps_used,
        "backtracks": result.backtracks,
        "events": [
            {
                "kind": e.kind,
                "position": e.position,
                "step": e.step,
                "token": e.token,
                "prob": e.prob,
                "min_dist": e.min_dist,
            }
            for e in result.events
        ],
    }
    path.write_text(json.dumps(payload))


def run_corpus(records: Sequence[CorpusRecord], lm: LmProvider, settings: RunSettings) -> MetricReport:
    """Decode every (document, method) pair and compute metric rows, in
    deterministic order regardless of the worker count."""
    if settings.trace_dir:
        Path(settings.trace_dir).mkdir(parents=True, exist_ok=True)
    tasks = [
        (di, mi) for di in range(len(records)) for mi in range(len(settings.methods))
    ]

    def work(task: tuple[int, int]) -> DocMetrics:
        di, mi = task
        row, result = _row_for(lm, records[di], di, settings.methods[mi], mi, settings)
        if settings.trace_dir and result is not None:
            _write_trace(settings.trace_dir, records[di], settings.methods[mi], result)
        return row

    if settings.jobs > 1:
        with ThreadPoolExecutor(max_workers=settings.jobs) as pool:
            rows = list(pool.map(work, tasks))
    else:
        rows = [work(t) for t in tasks]
    return MetricReport(rows=tuple(rows))


def run_profile(
    records: Sequence[CorpusRecord], lm: LmProvider, window: int
) -> list[ProfileRow]:
    """Profile probability and context distance around every annotated span."""
    samples = []
    for record in records:
        if record.summary is None or record.annotations is None:
            raise CorpusError(f"record {record.doc_id}: profile runs require summary and annotations")
        if record.context is None:
            raise CorpusError(f"record {record.doc_id}: profile runs require token-id contexts")
        for start in record.annotations:
            samples.append(span_profile(record.context, record.summary, start, lm, window=window))
    return aggregate_profiles(samples)


@dataclass(frozen=True)
class SweepRow:
    param: str
    value: float
    method: str
    mean_hallucination_rate: float | None
    mean_grounding_precision: float | None
    mean_rouge_l_f1: float | None
    fallback_fraction: float
    rows_ok: int


def run_sweep(
    records: Sequence[CorpusRecord],
    lm: LmProvider,
    settings: RunSettings,
    param: str,
    values: Sequence[float],
) -> list[SweepRow]:
    """Re-run the corpus at each threshold value and aggregate per method."""
    if param not in ("delta", "phi"):
        raise ValueError(f"sweep parameter must be delta or phi, got {param!r}")
    out: list[SweepRow] = []
    for value in values:
        tuned = replace(settings, **{param: float(value)})
        report = run_corpus(records, lm, tuned)
        for method in tuned.methods:
            ok = [r for r in report.rows if r.method == method and r.error is None]

            def mean_of(name: str) -> float | None:
                vals = [getattr(r, name) for r in ok if getattr(r, name) is not None]
                return float(np.mean(vals)) if vals else None

            out.append(
                SweepRow(
                    param=param,
                    value=float(value),
                    method=method,
                    mean_hallucination_rate=mean_of("hallucination_rate"),
                    mean_grounding_precision=mean_of("grounding_precision"),
                    mean_rouge_l_f1=mean_of("rouge_l_f1"),
                    fallback_fraction=float(np.mean([r.fallback for r in ok])) if ok else 0.0,
                    rows_ok=len(ok),
                )
            )
    return out


def _fmt(value, places: int = 6) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.{places}f}"
    return str(value)


def write_metrics_csv(report: MetricReport, path: str | Path) -> None:
    header = (
        "doc_id,method,rouge_l_f1,grounding_precision,hallucination_rate,"
        "length_tokens,fallback,steps_used,error"
    )
    lines = [header]
    for r in report.rows:
        error = (r.error or "").replace(",", ";").replace("\n", " ")
        lines.append(
            ",".join(
                [
                    r.doc_id,
                    r.method,
                    _fmt(r.rouge_l_f1),
                    _fmt(r.grounding_precision),
                    _fmt(r.hallucination_rate),
                    str(r.length_tokens),
                    _fmt(r.fallback),
                    str(r.steps_used),
                    error,
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_profile_csv(rows: Sequence[ProfileRow], path: str | Path) -> None:
    lines = ["offset,mean_prob,std_prob,mean_dist,std_dist,n"]
    for r in rows:
        lines.append(
            f"{r.offset},{_fmt(r.mean_prob)},{_fmt(r.std_prob)},"
            f"{_fmt(r.mean_dist)},{_fmt(r.std_dist)},{r.n}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_sweep_csv(rows: Sequence[SweepRow], path: str | Path) -> None:
    lines = [
        "param,value,method,mean_hallucination_rate,mean_grounding_precision,"
        "mean_rouge_l_f1,fallback_fraction,rows_ok"
    ]
    for r in rows:
        lines.append(
            ",".join(
                [
                    r.param,
                    _fmt(r.value),
                    r.method,
                    _fmt(r.mean_hallucination_rate),
                    _fmt(r.mean_grounding_precision),
                    _fmt(r.mean_rouge_l_f1),
                    _fmt(r.fallback_fraction),
                    str(r.rows_ok),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")
