"""Bundled deterministic fixtures.

Three families:

* scenario tables: a hand-built "I live in/with ..." table whose argmax path
  dead-ends below the probability threshold, and an adversarial table with no
  admissible continuation anywhere (for exercising the budget);
* seeded n-gram worlds: a vocabulary split into a groundable range (embedded
  in a tight context cluster) and a memory range (embedded progressively far
  from it, carrying all parametric-memory mass), so similarity and
  probability detectors both have signal by construction;
* corpus generators over those worlds, with exact hallucination labels:
  grounded tokens only ever come from the context document, memory-range
  tokens never occur in any context.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import EmbeddingTable, Vocabulary
from .lm import NGramLm, TableLm

FIG1_WORDS = {
    2: "I",
    3: "live",
    4: "in",
    5: "with",
    6: "my",
    7: "dog",
    8: "Guangzhou",
    9: "Beijing",
    10: "cats",
    11: "apartment",
}


def random_unit_embedding(size: int, dim: int, seed: int) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    rows = rng.normal(size=(size, dim))
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return EmbeddingTable(rows / norms)


def _vector(size: int, named: dict[int, float], spread_over: Sequence[int] = ()) -> list[float]:
    """Probability vector with explicit masses; any residual is spread
    uniformly over `spread_over`."""
    vec = np.zeros(size)
    for tok, p in named.items():
        vec[tok] = p
    residual = 1.0 - vec.sum()
    if spread_over:
        vec[list(spread_over)] += residual / len(spread_over)
    elif abs(residual) > 1e-12:
        raise ValueError(f"named masses sum to {vec.sum()}, nothing to spread over")
    return [float(x) for x in vec]


def fig1_vocabulary() -> Vocabulary:
    return Vocabulary(
        size=12, sos_id=0, eos_id=1, display={0: "[SOS]", 1: "[EOS]", **FIG1_WORDS}
    )


def fig1_table_lm() -> TableLm:
    """Scenario table: greedy follows "I live in" into a state where every
    continuation sits below 0.2, while "I live with my dog" stays above it.
    """
    vocab = fig1_vocabulary()
    size = vocab.size
    I, live, in_, with_, my, dog, gz, bj = 2, 3, 4, 5, 6, 7, 8, 9
    rest = [6, 7, 8, 9, 10, 11]
    entries = {
        (0,): _vector(size, {I: 0.9}, [3, 4, 5, 6, 7, 8, 9, 10, 11]),
        (0, I): _vector(size, {live: 0.8}, [4, 5, 6, 7, 8, 9, 10, 11]),
        (0, I, live): _vector(size, {in_: 0.4, with_: 0.3}, rest),
        # the "in" branch: every next token below the 0.2 threshold
        (0, I, live, in_): _vector(size, {gz: 0.15, bj: 0.12}, [1, 2, 3, 6, 7, 10, 11]),
        (0, I, live, in_, gz): _vector(size, {1: 0.9}, [2, 3, 6, 7, 10, 11]),
        (0, I, live, with_): _vector(size, {my: 0.6}, [2, 3, 4, 8, 9, 10, 11]),
        (0, I, live, with_, my): _vector(size, {dog: 0.7}, [2, 3, 4, 8, 9, 10, 11]),
        (0, I, live, with_, my, dog): _vector(size, {1: 0.95}, [2, 3, 4, 8, 9, 10, 11]),
    }
    default = _vector(size, {}, list(range(2, size)))
    return TableLm(vocab, entries, default, random_unit_embedding(size, 8, seed=20))


def adversarial_table_lm(vocab_size: int = 256, dim: int = 8) -> TableLm:
    """Every continuation at every prefix is far below any usable threshold:
    uniform mass over the content range, none on the end token. Root forcing
    churns until the step budget runs dry."""
    if vocab_size < 8:
        raise ValueError("vocab_size must be at least 8")
    vocab = Vocabulary(size=vocab_size, sos_id=0, eos_id=1)
    default = _vector(vocab_size, {}, list(range(2, vocab_size)))
    return TableLm(vocab, {}, default, random_unit_embedding(vocab_size, dim, seed=21))


@dataclass(frozen=True)
class NGramWorld:
    """A seeded NGramLm plus the vocabulary-range bookkeeping its corpora
    rely on."""

    lm: NGramLm
    vocab: Vocabulary
    groundable: tuple[int, ...]
    memory: tuple[int, ...]

    @property
    def memory_head(self) -> int:
        return self.memory[0]

    @property
    def memory_dust(self) -> tuple[int, ...]:
        return self.memory[9:]


def build_ngram_world(
    vocab_size: int = 256,
    order: int = 2,
    lam: float = 0.3,
    eps: float = 0.0,
    seed: int = 0,
    dim: int = 16,
) -> NGramWorld:
    """Deterministic n-gram world. The memory distribution concentrates on a
    head token (0.60), a short geometric tail, and a dust remainder; head and
    tail stay under delta=0.2 after lam=0.3 mixing, so the probability
    detector flags parametric-memory proposals. Memory embeddings sit at
    cosine distances 0.58..1.2 from the context cluster, so the similarity
    detector flags them too."""
    if vocab_size < 40:
        raise ValueError("vocab_size must be at least 40")
    vocab = Vocabulary(size=vocab_size, sos_id=0, eos_id=1)
    n_content = vocab_size - 2
    n_memory = max(12, n_content // 3)
    memory = tuple(range(vocab_size - n_memory, vocab_size))
    groundable = tuple(range(2, vocab_size - n_memory))

    mem = np.zeros(vocab_size)
    mem[memory[0]] = 0.60
    tail = np.asarray([0.5**i for i in range(1, 9)])
    mem[list(memory[1:9])] = tail / tail.sum() * 0.37
    dust = memory[9:]
    mem[list(dust)] = 0.03 / len(dust)

    rng = np.random.default_rng(seed)
    rows = np.zeros((vocab_size, dim))
    center = np.zeros(dim)
    center[0] = 1.0

    def off_center(target_dist: float) -> np.ndarray:
        u = rng.normal(size=dim)
        u -= u @ center * center
        u /= np.linalg.norm(u)
        cos = 1.0 - target_dist
        return cos * center + np.sqrt(max(0.0, 1.0 - cos * cos)) * u

    for sid in sorted(vocab.special_ids):
        rows[sid] = off_center(0.4)
    for g in groundable:
        v = center + 0.05 * rng.normal(size=dim) / np.sqrt(dim)
        rows[g] = v / np.linalg.norm(v)
    tiers = np.linspace(0.58, 1.2, n_memory)
    for m, target in zip(memory, tiers):
        rows[m] = off_center(float(target))

    lm = NGramLm(vocab, order, mem, lam, eps, EmbeddingTable(rows))
    return NGramWorld(lm=lm, vocab=vocab, groundable=groundable, memory=memory)


def _doc_structure(rng: np.random.Generator, groundable: Sequence[int]):
    """One document's walk over a 16-node chain with a trigger token whose
    continuations all fall below the probability threshold.

    Bigram layout (counts): chain[i] -> chain[i+1] three times (one per lap);
    skip edges chain[2i] -> chain[2i+2]; chain[1] -> trigger four times (so
    the trigger outranks the chain sibling 0.40 vs 0.30 under lam=0.3
    mixing); trigger -> four distinct chain nodes once each (each then at
    0.7/4 = 0.175, beneath both the probability threshold and the memory
    head's 0.18). Every within-chain continuation keeps probability at or
    above 0.30, so the chain survives thresholds up to that value.
    """
    picks = rng.choice(len(groundable), size=17, replace=False)
    nodes = [groundable[i] for i in picks]
    chain, trigger = nodes[:16], nodes[16]
    ctx: list[int] = []
    for _ in range(3):
        ctx.extend(chain)
    ctx.extend(chain[0::2])
    ctx.append(chain[0])
    for v_index in (2, 5, 8, 11):
        ctx.extend([chain[1], trigger, chain[v_index]])
    return ctx, chain, trigger


def synthetic_corpus(n_docs: int = 200, seed: int = 7, vocab_size: int = 256) -> list[dict]:
    """Corpus records for hallucination benchmarking against the matching
    n-gram world (same vocab_size; the world's own seed fixes the LM)."""
    world_groundable = build_ngram_world(vocab_size=vocab_size).groundable
    children = np.random.SeedSequence(seed).spawn(n_docs)
    records = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        ctx, chain, _ = _doc_structure(rng, world_groundable)
        reference = chain + chain[:8]
        records.append(
            {"doc_id": f"doc-{i:04d}", "context": [int(t) for t in ctx],
             "reference": [int(t) for t in reference]}
        )
    return records


def profile_corpus(n_records: int = 300, seed: int = 11, vocab_size: int = 256) -> list[dict]:
    """Annotated records: an eleven-token summary whose middle token is
    drawn from the memory dust (near-zero probability, far embedding),
    flanked on each side by five chain-bigram tokens. Span offset 5 marks
    the hallucination onset, leaving room for profile windows up to 5."""
    world = build_ngram_world(vocab_size=vocab_size)
    dust = world.memory_dust
    children = np.random.SeedSequence(seed).spawn(n_records)
    records = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        ctx, chain, _ = _doc_structure(rng, world.groundable)
        span_tok = dust[int(rng.integers(len(dust)))]
        summary = chain[3:8] + [span_tok] + chain[8:13]
        records.append(
            {
                "doc_id": f"prof-{i:04d}",
                "context": [int(t) for t in ctx],
                "summary": [int(t) for t in summary],
                "annotations": [5],
            }
        )
    return records


def ngram_lm_spec(vocab_size: int = 256, order: int = 2, lam: float = 0.3,
                  eps: float = 0.0, seed: int = 0, dim: int = 16) -> str:
    """The --lm argument string reproducing a world built with these values."""
    return (
        f"ngram:vocab_size={vocab_size},order={order},lam={lam},eps={eps},"
        f"seed={seed},dim={dim}"
    )


def save_table_lm(lm: TableLm, path: str | Path) -> None:
    vocab = lm.vocabulary()
    payload = {
        "vocabulary": {
            "size": vocab.size,
            "sos_id": vocab.sos_id,
            "eos_id": vocab.eos_id,
            "pad_id": vocab.pad_id,
            "extra_special_ids": sorted(vocab.extra_special_ids),
            "display": {str(k): v for k, v in (vocab.display or {}).items()} or None,
        },
        "embedding": [[float(x) for x in row] for row in lm.embeddings().vectors],
        "default": [float(x) for x in lm.default],
        "entries": [
            {"prefix": list(prefix), "probs": [float(x) for x in probs]}
            for prefix, probs in sorted(lm.entries.items())
        ],
    }
    uncond = lm.entries_unconditional
    if uncond is not None:
        payload["entries_unconditional"] = [
            {"prefix": list(prefix), "probs": [float(x) for x in probs]}
            for prefix, probs in sorted(uncond.items())
        ]
    Path(path).write_text(json.dumps(payload))


def load_table_lm(path: str | Path) -> TableLm:
    payload = json.loads(Path(path).read_text())
    v = payload["vocabulary"]
    display = v.get("display")
    vocab = Vocabulary(
        size=v["size"],
        sos_id=v["sos_id"],
        eos_id=v["eos_id"],
        pad_id=v.get("pad_id"),
        extra_special_ids=frozenset(v.get("extra_special_ids", [])),
        display=None if display is None else {int(k): s for k, s in display.items()},
    )
    entries = {tuple(e["prefix"]): e["probs"] for e in payload["entries"]}
    uncond_raw = payload.get("entries_unconditional")
    uncond = None if uncond_raw is None else {tuple(e["prefix"]): e["probs"] for e in uncond_raw}
    return TableLm(
        vocab,
        entries,
        payload["default"],
        EmbeddingTable(np.asarray(payload["embedding"])),
        entries_unconditional=uncond,
    )


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    count = 0
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
            count += 1
    return count
