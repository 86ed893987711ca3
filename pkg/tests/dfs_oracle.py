"""Independent brute-force reference for the backtracking decoder.

This module deliberately avoids the engine's internals: the search is
recursive (the engine is iterative), the distributions are read straight
from the provider, and the greedy fallback is re-implemented from scratch.
Only the public config type is shared. Step accounting follows the same
published rules: a forward attempt costs one step, a backtrack pop costs one
step, termination checks are free, and every spend is preceded by a budget
check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from coba.core import EmbeddingTable, Vocabulary
from coba.decode import DecodeConfig
from coba.detect import DetectorConfig
from coba.lm import TableLm


@dataclass
class OracleResult:
    output: tuple[int, ...]
    steps_used: int
    fallback: bool


class _Done(Exception):
    def __init__(self, output):
        self.output = tuple(output)


class _BudgetExhausted(Exception):
    pass


class _RootExhausted(Exception):
    pass


def _step_probs(lm, context, prefix, out_len, min_len, eos_id):
    probs = lm.next_distribution(context, prefix, True).probs
    if out_len < min_len:
        probs = probs.copy()
        probs[eos_id] = 0.0
        total = probs.sum()
        if total > 0.0:
            probs = probs / total
    return probs


def _min_dists(emb: EmbeddingTable, context) -> np.ndarray | None:
    if not context:
        return None
    rows = emb.vectors
    unit = rows / np.linalg.norm(rows, axis=1, keepdims=True)
    best = np.full(len(rows), np.inf)
    for cid in set(context):
        best = np.minimum(best, np.clip(1.0 - unit @ unit[cid], 0.0, 2.0))
    return best


def _greedy_reference(lm, context, cfg: DecodeConfig) -> tuple[int, ...]:
    vocab = lm.vocabulary()
    out: list[int] = []
    while len(out) < cfg.max_len:
        prefix = (vocab.sos_id, *out)
        probs = _step_probs(lm, context, prefix, len(out), cfg.min_len, vocab.eos_id)
        masked = probs.copy()
        if len(out) < cfg.min_len:
            masked[vocab.eos_id] = -1.0
        token = int(np.argmax(masked))
        if token == vocab.eos_id:
            break
        out.append(token)
    return tuple(out)


def oracle_decode(lm, context, cfg: DecodeConfig) -> OracleResult:
    """Recursive depth-first search over token sequences, greedy strategy."""
    assert cfg.strategy == "greedy" and cfg.cad is None and cfg.coba is not None
    vocab = lm.vocabulary()
    det: DetectorConfig = cfg.coba
    budget = cfg.budget
    dists = _min_dists(lm.embeddings(), tuple(context)) if det.phi is not None else None
    state = {"steps": 0}

    def check_budget():
        if state["steps"] == budget:
            raise _BudgetExhausted()

    def admissible_of(probs, pool):
        ok = pool & (probs >= det.delta)
        if det.phi is not None and dists is not None:
            pass_dist = dists <= det.phi
            if det.exempt_special:
                pass_dist = pass_dist | vocab.special_mask
            ok = ok & pass_dist
        return ok

    def explore(prefix: tuple[int, ...]):
        """Try to finish the sequence from this prefix; returns None when the
        subtree is exhausted (the caller then pops and pays for it)."""
        out_len = len(prefix) - 1
        if out_len == cfg.max_len:
            raise _Done(prefix[1:])
        eliminated = np.zeros(vocab.size, dtype=bool)
        while True:
            check_budget()
            state["steps"] += 1  # forward attempt
            probs = _step_probs(lm, context, prefix, out_len, cfg.min_len, vocab.eos_id)
            pool = np.ones(vocab.size, dtype=bool)
            if out_len < cfg.min_len:
                pool[vocab.eos_id] = False
            pool = pool & ~eliminated
            adm = admissible_of(probs, pool)
            if adm.any():
                token = int(np.argmax(np.where(adm, probs, -1.0)))
            elif out_len == 0:
                if not pool.any():
                    raise _RootExhausted()
                token = int(np.argmax(np.where(pool, probs, -1.0)))
            else:
                return None  # dead end: caller pays for the pop
            if token == vocab.eos_id:
                raise _Done(prefix[1:])
            explore(prefix + (token,))
            check_budget()
            state["steps"] += 1  # backtrack pop
            eliminated[token] = True

    try:
        explore((vocab.sos_id,))
        raise AssertionError("explore((sos,)) must terminate via exception")
    except _Done as done:
        return OracleResult(output=done.output, steps_used=state["steps"], fallback=False)
    except _BudgetExhausted:
        return OracleResult(
            output=_greedy_reference(lm, context, cfg),
            steps_used=budget,
            fallback=True,
        )
    except _RootExhausted:
        return OracleResult(
            output=_greedy_reference(lm, context, cfg),
            steps_used=state["steps"],
            fallback=True,
        )


def random_table_lm(rng: np.random.Generator, vocab_size: int, depth: int) -> TableLm:
    """A random exact-lookup LM with adversarial structure: spiky rows, heavy
    and absent end-token mass, occasional all-sub-threshold rows."""

    def random_row():
        style = rng.integers(0, 4)
        if style == 0:
            w = rng.random(vocab_size) ** 4
        elif style == 1:
            w = rng.random(vocab_size)
        elif style == 2:
            w = np.full(vocab_size, 1.0)
        else:
            w = rng.random(vocab_size) ** 4
            w[rng.integers(0, vocab_size)] += 2.0
        if rng.random() < 0.4:
            w[1] = 0.0  # no end mass: forces max_len or backtracking
        if rng.random() < 0.3:
            w[1] += float(rng.random() * 3.0)  # heavy end mass
        w[0] = 0.0
        if w.sum() == 0.0:
            w[2] = 1.0
        return w / w.sum()

    vocab = Vocabulary(size=vocab_size, sos_id=0, eos_id=1)
    entries = {}
    frontier = [(0,)]
    for _ in range(depth):
        next_frontier = []
        for prefix in frontier:
            if rng.random() < 0.8:
                entries[prefix] = random_row()
            for tok in range(2, vocab_size):
                if rng.random() < 0.35 and len(next_frontier) < 24:
                    next_frontier.append(prefix + (tok,))
        frontier = next_frontier
    rows = rng.normal(size=(vocab_size, 3))
    emb = EmbeddingTable(rows)
    return TableLm(vocab, entries, random_row(), emb)
