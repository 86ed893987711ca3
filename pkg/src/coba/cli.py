"""Command line interface.

Subcommands:
  run          decode a JSONL corpus with one or more methods, write metrics.csv
  profile      aggregate probability/distance profiles around annotated spans
  sweep        re-run a corpus across a grid of delta or phi values
  fixture-gen  emit the bundled synthetic corpora and table LM fixtures

Exit codes: 0 success (at least one row), 1 every row failed, 2 unusable
input (corpus, arguments, LM spec), 3 LM connection failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .fixtures import (
    adversarial_table_lm,
    fig1_table_lm,
    ngram_lm_spec,
    profile_corpus,
    save_table_lm,
    synthetic_corpus,
    write_jsonl,
)
from .harness import (
    THRESHOLD_PRESETS,
    CorpusError,
    RunSettings,
    load_corpus,
    run_corpus,
    run_profile,
    run_sweep,
    write_metrics_csv,
    write_profile_csv,
    write_sweep_csv,
)
from .lm import (
    LmError,
    LmProtocolError,
    LmTimeoutError,
    LmTransportError,
    RemoteLm,
)

ENV_LM_URL = "COBA_LM_URL"

_NGRAM_INT_KEYS = {"vocab_size", "order", "seed", "dim"}
_NGRAM_FLOAT_KEYS = {"lam", "eps"}


class UsageError(Exception):
    """Bad arguments or unreadable auxiliary input (exit code 2)."""


def build_lm(spec: str):
    """Instantiate a provider from a spec string:
    table:PATH | ngram:k=v,... | remote:URL."""
    kind, sep, rest = spec.partition(":")
    if not sep:
        raise UsageError(f"LM spec {spec!r} must look like kind:detail")
    if kind == "table":
        from .fixtures import load_table_lm

        try:
            return load_table_lm(rest)
        except OSError as exc:
            raise UsageError(f"cannot read table LM {rest!r}: {exc}") from exc
        except (ValueError, KeyError) as exc:
            raise UsageError(f"invalid table LM file {rest!r}: {exc}") from exc
    if kind == "ngram":
        from .fixtures import build_ngram_world

        kwargs = {}
        for pair in filter(None, rest.split(",")):
            key, eq, value = pair.partition("=")
            if not eq:
                raise UsageError(f"ngram spec needs key=value pairs, got {pair!r}")
            try:
                if key in _NGRAM_INT_KEYS:
                    kwargs[key] = int(value)
                elif key in _NGRAM_FLOAT_KEYS:
                    kwargs[key] = float(value)
                else:
                    raise UsageError(f"unknown ngram spec key {key!r}")
            except ValueError as exc:
                raise UsageError(f"bad ngram spec value {pair!r}: {exc}") from exc
        try:
            return build_ngram_world(**kwargs).lm
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid ngram spec {rest!r}: {exc}") from exc
    if kind == "remote":
        return RemoteLm(rest)
    raise UsageError(f"unknown LM kind {kind!r} (expected table, ngram, or remote)")


def _resolve_lm_spec(args) -> str:
    if args.lm:
        return args.lm
    env = os.environ.get(ENV_LM_URL)
    if env:
        return f"remote:{env}"
    raise UsageError(f"no LM given: pass --lm or set {ENV_LM_URL}")


def _settings_from(args) -> RunSettings:
    preset = THRESHOLD_PRESETS[args.thresholds]
    delta = args.delta if args.delta is not None else preset[0]
    phi = args.phi if args.phi is not None else preset[1]
    out = Path(args.out)
    return RunSettings(
        methods=tuple(m.strip() for m in args.method.split(",") if m.strip()),
        delta=delta,
        phi=phi,
        top_p=args.top_p,
        alpha=args.alpha,
        min_len=args.min_len,
        max_len=args.max_len,
        budget_multiplier=args.budget_mult,
        seed=args.seed,
        jobs=args.jobs,
        prepend_reference=args.prepend_reference,
        trace_dir=str(out / "traces") if args.traces else None,
    )


def _add_corpus_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("corpus", help="JSONL corpus path")
    p.add_argument("--lm", help="LM spec: table:PATH | ngram:k=v,... | remote:URL")
    p.add_argument("--out", default=".", help="output directory")


def _add_run_args(p: argparse.ArgumentParser) -> None:
    _add_corpus_arg(p)
    p.add_argument("--method", default="greedy", help="comma-separated method names")
    p.add_argument(
        "--thresholds",
        default="flan-t5",
        choices=sorted(THRESHOLD_PRESETS),
        help="named delta/phi preset (individual flags override)",
    )
    p.add_argument("--delta", type=float)
    p.add_argument("--phi", type=float)
    p.add_argument("--top-p", type=float, default=0.9)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--min-len", type=int, default=2)
    p.add_argument("--max-len", type=int, default=200)
    p.add_argument("--budget-mult", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--prepend-reference", action="store_true")
    p.add_argument("--traces", action="store_true", help="write per-document event traces")


def _prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    records = load_corpus(args.corpus)
    lm = build_lm(_resolve_lm_spec(args))
    settings = _settings_from(args)
    out = _prepare_out(args)
    report = run_corpus(records, lm, settings)
    write_metrics_csv(report, out / "metrics.csv")
    ok = sum(1 for r in report.rows if r.error is None)
    failed = len(report.rows) - ok
    print(f"wrote {out / 'metrics.csv'}: {ok} rows ok, {failed} failed")
    return 0 if ok else 1


def cmd_profile(args) -> int:
    records = load_corpus(args.corpus)
    lm = build_lm(_resolve_lm_spec(args))
    out = _prepare_out(args)
    rows = run_profile(records, lm, args.window)
    write_profile_csv(rows, out / "profile.csv")
    print(f"wrote {out / 'profile.csv'}: {len(rows)} offsets")
    return 0


def cmd_sweep(args) -> int:
    records = load_corpus(args.corpus)
    lm = build_lm(_resolve_lm_spec(args))
    settings = _settings_from(args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad sweep values {args.values!r}: {exc}") from exc
    if not values:
        raise UsageError("sweep needs at least one value")
    out = _prepare_out(args)
    rows = run_sweep(records, lm, settings, args.param, values)
    write_sweep_csv(rows, out / "sweep.csv")
    ok = sum(r.rows_ok for r in rows)
    print(f"wrote {out / 'sweep.csv'}: {len(rows)} aggregate rows")
    return 0 if ok else 1


def cmd_fixture_gen(args) -> int:
    out = _prepare_out(args)
    corpus_path = out / "synthetic_corpus.jsonl"
    n_docs = write_jsonl(corpus_path, synthetic_corpus(n_docs=args.docs, seed=args.seed))
    profile_path = out / "profile_corpus.jsonl"
    n_prof = write_jsonl(profile_path, profile_corpus(n_records=args.profile_records))
    fig1_path = out / "fig1_table.json"
    save_table_lm(fig1_table_lm(), fig1_path)
    adv_path = out / "adversarial_table.json"
    save_table_lm(adversarial_table_lm(), adv_path)
    fig1_corpus_path = out / "fig1_corpus.jsonl"
    write_jsonl(
        fig1_corpus_path,
        [
            {"doc_id": "fig1-0", "context": [2, 3, 5, 6, 7], "reference": [2, 3, 5, 6, 7]},
            {"doc_id": "fig1-1", "context": [2, 3, 4, 8], "reference": [2, 3, 4, 8]},
            {"doc_id": "fig1-2", "context": [2, 3, 5, 6, 7, 2, 3, 5], "reference": [2, 3, 5, 6, 7]},
        ],
    )
    manifest = {
        "synthetic_corpus": {"path": corpus_path.name, "lm": ngram_lm_spec(), "docs": n_docs},
        "profile_corpus": {"path": profile_path.name, "lm": ngram_lm_spec(), "docs": n_prof},
        "fig1_corpus": {"path": fig1_corpus_path.name, "lm": f"table:{fig1_path.name}", "docs": 3},
        "adversarial_table": {"lm": f"table:{adv_path.name}"},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote fixtures to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coba", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="decode a corpus and write metrics.csv")
    _add_run_args(p_run)
    p_run.set_defaults(func=cmd_run)

    p_prof = sub.add_parser("profile", help="write span profile.csv")
    _add_corpus_arg(p_prof)
    p_prof.add_argument("--window", type=int, default=2)
    p_prof.set_defaults(func=cmd_profile)

    p_sweep = sub.add_parser("sweep", help="threshold sweep, write sweep.csv")
    _add_run_args(p_sweep)
    p_sweep.add_argument("--param", required=True, choices=("delta", "phi"))
    p_sweep.add_argument("--values", required=True, help="comma-separated threshold values")
    p_sweep.set_defaults(func=cmd_sweep)

    p_fix = sub.add_parser("fixture-gen", help="generate bundled fixtures")
    p_fix.add_argument("--out", default="fixtures")
    p_fix.add_argument("--docs", type=int, default=200)
    p_fix.add_argument("--profile-records", type=int, default=300)
    p_fix.add_argument("--seed", type=int, default=7)
    p_fix.set_defaults(func=cmd_fixture_gen)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CorpusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (LmTransportError, LmTimeoutError) as exc:
        print(f"error: cannot reach LM: {exc}", file=sys.stderr)
        return 3
    except (LmProtocolError, LmError) as exc:
        print(f"error: LM failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
