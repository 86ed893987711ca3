"""Decoding strategies and the corrective backtracking engine.

One decode call owns one RNG stream: `np.random.default_rng(cfg.seed)`,
created at session start and consumed only by nucleus sampling decisions, in
step order, one uniform draw per decision. Greedy decoding draws nothing, so
results are reproducible across platforms for both strategies.

Budget accounting: every forward attempt costs one step, every backtrack pop
costs one step. The budget is L = budget_multiplier * max_len; when the next
spend would exceed L the engine abandons its state and regenerates with plain
greedy decoding (fallback).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Literal, Sequence

import numpy as np

from .core import NextTokenDistribution, TokenSeq, as_token_seq
from .detect import ContextDistances, DetectorConfig, admissible_mask
from .lm import LmProvider

Strategy = Literal["greedy", "nucleus"]
Termination = Literal["eos", "max_len", "fallback"]

_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class CadConfig:
    """Contrast weight for context-aware adjustment of the next-token
    distribution against its unconditional counterpart."""

    alpha: float = 0.5

    def __post_init__(self):
        if self.alpha < 0.0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")


@dataclass(frozen=True)
class DecodeConfig:
    strategy: Strategy = "greedy"
    top_p: float = 0.9
    cad: CadConfig | None = None
    coba: DetectorConfig | None = None
    min_len: int = 2
    max_len: int = 200
    budget_multiplier: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("greedy", "nucleus"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.min_len < 1:
            raise ValueError(f"min_len must be positive, got {self.min_len}")
        if self.max_len < self.min_len:
            raise ValueError(f"max_len {self.max_len} < min_len {self.min_len}")
        if self.budget_multiplier < 1:
            raise ValueError(f"budget_multiplier must be positive, got {self.budget_multiplier}")

    @property
    def budget(self) -> int:
        return self.budget_multiplier * self.max_len


@dataclass(frozen=True)
class DecodeEvent:
    """One trace entry.

    `step` is the cumulative budget-step index at which the event happened.
    Spend events (forward, backtrack, forced_root_accept, eos) carry strictly
    increasing indices; terminal markers (max_len_stop, fallback_triggered)
    reuse the current counter. Events recorded by a post-fallback greedy
    regeneration continue the numbering past the frozen budget so the trace
    stays sorted.
    """

    kind: Literal[
        "forward", "backtrack", "forced_root_accept", "fallback_triggered", "eos", "max_len_stop"
    ]
    position: int
    step: int
    token: int | None = None
    prob: float | None = None
    min_dist: float | None = None


@dataclass(frozen=True)
class DecodeResult:
    """Immutable outcome of one decode session.

    `output` holds generated token ids with no start token and no trailing
    end token; `token_probs` aligns with it (probability of each emitted token
    under the distribution it was chosen from, after any adjustment and
    end-token suppression). `token_dists` aligns likewise when the similarity
    detector was active, else None. `steps_used` counts only engine budget
    spend; fallback regeneration is free.
    """

    output: TokenSeq
    termination: Termination
    fallback: bool
    steps_used: int
    backtracks: int
    token_probs: tuple[float, ...]
    token_dists: tuple[float, ...] | None
    events: tuple[DecodeEvent, ...]


def apply_cad(
    cond: NextTokenDistribution, uncond: NextTokenDistribution, alpha: float
) -> NextTokenDistribution:
    """Contrastive adjustment: renormalized exp((1+a) log p_c - a log p_u).

    Zero conditional entries keep zero mass; zero unconditional entries are
    clipped at log(1e-12) so the contrast stays finite.
    """
    if alpha < 0.0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if len(cond.probs) != len(uncond.probs):
        raise ValueError("distributions must share a vocabulary")
    probs = _apply_cad_vec(cond.probs, uncond.probs, alpha)
    return NextTokenDistribution(probs, kind="conditional")


def _apply_cad_vec(cond: np.ndarray, uncond: np.ndarray, alpha: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_c = np.where(cond > 0.0, np.log(np.maximum(cond, _LOG_FLOOR)), -np.inf)
    log_u = np.log(np.maximum(uncond, _LOG_FLOOR))
    adjusted = (1.0 + alpha) * log_c - alpha * log_u
    shift = adjusted.max()
    with np.errstate(invalid="ignore", under="ignore"):
        out = np.exp(adjusted - shift)
    out[~np.isfinite(adjusted)] = 0.0
    return out / out.sum()


def nucleus_mask(probs: np.ndarray, top_p: float) -> np.ndarray:
    """Boolean mask of the smallest probability-descending prefix (ties by
    ascending token id) whose cumulative mass reaches top_p."""
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    k = int(np.searchsorted(cum, top_p, side="left")) + 1
    k = min(k, probs.shape[0])
    mask = np.zeros(probs.shape[0], dtype=bool)
    mask[order[:k]] = True
    return mask


def _sample_index(probs: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> int:
    """One uniform draw; walk the cumulative sum of the renormalized masked
    vector in ascending-id order and take the first bin exceeding the draw."""
    q = np.where(mask, probs, 0.0)
    total = q.sum()
    if total > 0.0:
        q = q / total
    else:
        q = mask.astype(np.float64) / mask.sum()
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(q), u, side="right"))
    if idx >= q.shape[0] or q[idx] == 0.0:
        idx = int(np.flatnonzero(q > 0.0)[-1])
    return idx


def _argmax_index(probs: np.ndarray, mask: np.ndarray) -> int:
    # np.argmax returns the first maximizer, i.e. the lowest token id on ties
    return int(np.argmax(np.where(mask, probs, -1.0)))


def nucleus_restrict(
    dist: NextTokenDistribution, top_p: float, rng: np.random.Generator
) -> tuple[NextTokenDistribution, int]:
    """Restrict to the nucleus, renormalize, and sample one token."""
    if not 0.0 < top_p <= 1.0:
        raise ValueError(f"top_p must be in (0, 1], got {top_p}")
    mask = nucleus_mask(dist.probs, top_p)
    q = np.where(mask, dist.probs, 0.0)
    total = q.sum()
    if total > 0.0:
        q = q / total
    else:
        q = mask.astype(np.float64) / mask.sum()
    token = _sample_index(dist.probs, mask, rng)
    return NextTokenDistribution(q, kind=dist.kind), token


def _step_distribution(
    lm: LmProvider,
    context: TokenSeq,
    prefix: TokenSeq,
    cfg: DecodeConfig,
    out_len: int,
    eos_id: int,
) -> np.ndarray:
    """The distribution every decision at this step is made against: raw
    conditional, then contrast adjustment, then end-token suppression while
    the output is shorter than min_len."""
    probs = lm.next_distribution(context, prefix, True).probs
    if cfg.cad is not None:
        uncond = lm.next_distribution(context, prefix, False).probs
        probs = _apply_cad_vec(probs, uncond, cfg.cad.alpha)
    if out_len < cfg.min_len:
        probs = probs.copy()
        probs[eos_id] = 0.0
        total = probs.sum()
        if total > 0.0:
            probs = probs / total
    return probs


def _pool_mask(probs: np.ndarray, cfg: DecodeConfig, out_len: int, eos_id: int) -> np.ndarray:
    """Strategy pool for one step: full vocabulary for greedy, the nucleus
    for sampling; the end token is excluded outright below min_len."""
    if cfg.strategy == "nucleus":
        pool = nucleus_mask(probs, cfg.top_p)
    else:
        pool = np.ones(probs.shape[0], dtype=bool)
    if out_len < cfg.min_len:
        pool = pool.copy()
        pool[eos_id] = False
    return pool


def _choose(
    probs: np.ndarray, mask: np.ndarray, cfg: DecodeConfig, rng: np.random.Generator
) -> int:
    if cfg.strategy == "nucleus":
        return _sample_index(probs, mask, rng)
    return _argmax_index(probs, mask)


def _plain_decode(lm: LmProvider, context: TokenSeq, cfg: DecodeConfig) -> DecodeResult:
    """Stepwise decoding with no detectors and no backtracking; honors the
    configured strategy, contrast adjustment, and length bounds."""
    vocab = lm.vocabulary()
    rng = np.random.default_rng(cfg.seed)
    prefix: list[int] = [vocab.sos_id]
    output: list[int] = []
    token_probs: list[float] = []
    events: list[DecodeEvent] = []
    steps = 0
    termination: Termination = "max_len"
    while True:
        if len(output) == cfg.max_len:
            events.append(DecodeEvent(kind="max_len_stop", position=len(output), step=steps))
            termination = "max_len"
            break
        steps += 1
        probs = _step_distribution(lm, tuple(context), tuple(prefix), cfg, len(output), vocab.eos_id)
        pool = _pool_mask(probs, cfg, len(output), vocab.eos_id)
        token = _choose(probs, pool, cfg, rng)
        prob = float(probs[token])
        if token == vocab.eos_id:
            events.append(
                DecodeEvent(kind="eos", position=len(output), step=steps, token=token, prob=prob)
            )
            termination = "eos"
            break
        events.append(
            DecodeEvent(kind="forward", position=len(output), step=steps, token=token, prob=prob)
        )
        output.append(token)
        token_probs.append(prob)
        prefix.append(token)
    return DecodeResult(
        output=tuple(output),
        termination=termination,
        fallback=False,
        steps_used=steps,
        backtracks=0,
        token_probs=tuple(token_probs),
        token_dists=None,
        events=tuple(events),
    )


def greedy_decode(lm: LmProvider, context: Sequence[int], cfg: DecodeConfig) -> DecodeResult:
    """Argmax baseline (ties broken by ascending token id)."""
    plain = replace(cfg, strategy="greedy", coba=None)
    return _plain_decode(lm, as_token_seq(context), plain)


def baseline_decode(lm: LmProvider, context: Sequence[int], cfg: DecodeConfig) -> DecodeResult:
    """Strategy-respecting baseline: greedy argmax or nucleus sampling,
    without any detection or backtracking."""
    plain = replace(cfg, coba=None)
    return _plain_decode(lm, as_token_seq(context), plain)


def _fallback_result(
    lm: LmProvider,
    context: TokenSeq,
    cfg: DecodeConfig,
    steps_frozen: int,
    backtracks: int,
    events: list[DecodeEvent],
    position: int,
) -> DecodeResult:
    # Backtracking is abandoned wholesale: regenerate from scratch with plain
    # greedy under the same contrast setting. Regeneration is budget-free.
    events.append(DecodeEvent(kind="fallback_triggered", position=position, step=steps_frozen))
    regen = _plain_decode(lm, context, replace(cfg, strategy="greedy", coba=None))
    shifted = tuple(replace(e, step=e.step + steps_frozen) for e in regen.events)
    return DecodeResult(
        output=regen.output,
        termination="fallback",
        fallback=True,
        steps_used=steps_frozen,
        backtracks=backtracks,
        token_probs=regen.token_probs,
        token_dists=None,
        events=tuple(events) + shifted,
    )


def coba_decode(lm: LmProvider, context: Sequence[int], cfg: DecodeConfig) -> DecodeResult:
    """Detect-and-backtrack decoding.

    Each step recomputes the step distribution, intersects the strategy pool
    with the tokens not yet eliminated at this position, and filters by the
    detectors. A non-empty admissible set advances; an empty one backtracks,
    eliminating the token below. At the root the best remaining pool token is
    accepted even when inadmissible; generation must start somewhere. Budget
    exhaustion (and the degenerate case of an exhausted root pool) abandons
    the search for a plain greedy pass.
    """
    if cfg.coba is None:
        raise ValueError("coba_decode requires a detector configuration")
    ctx = as_token_seq(context)
    vocab = lm.vocabulary()
    det = cfg.coba
    budget = cfg.budget
    rng = np.random.default_rng(cfg.seed)
    distances = ContextDistances(lm.embeddings(), ctx) if det.phi is not None else None

    prefix: list[int] = [vocab.sos_id]
    elim: list[np.ndarray] = [np.zeros(vocab.size, dtype=bool)]
    output: list[int] = []
    token_probs: list[float] = []
    token_dists: list[float] = []
    events: list[DecodeEvent] = []
    steps = 0
    backtracks = 0

    while True:
        t = len(output)
        if t == cfg.max_len:
            events.append(DecodeEvent(kind="max_len_stop", position=t, step=steps))
            termination: Termination = "max_len"
            break
        if steps == budget:
            return _fallback_result(lm, ctx, cfg, steps, backtracks, events, t)
        steps += 1  # forward attempt
        probs = _step_distribution(lm, ctx, tuple(prefix), cfg, t, vocab.eos_id)
        pool = _pool_mask(probs, cfg, t, vocab.eos_id) & ~elim[-1]
        admissible = pool & admissible_mask(probs, det, distances, vocab.special_mask)
        at_root = len(prefix) == 1

        if admissible.any():
            token = _choose(probs, admissible, cfg, rng)
            kind = "forward"
        elif at_root:
            if not pool.any():
                # Every root candidate eliminated: nothing left to force.
                return _fallback_result(lm, ctx, cfg, steps, backtracks, events, t)
            token = _choose(probs, pool, cfg, rng)
            kind = "forced_root_accept"
        else:
            if steps == budget:
                return _fallback_result(lm, ctx, cfg, steps, backtracks, events, t)
            steps += 1  # backtrack pop
            backtracks += 1
            popped = prefix.pop()
            output.pop()
            token_probs.pop()
            if distances is not None:
                token_dists.pop()
            elim.pop()
            elim[-1][popped] = True
            events.append(
                DecodeEvent(kind="backtrack", position=len(output), step=steps, token=popped)
            )
            continue

        prob = float(probs[token])
        dist = float(distances.values[token]) if distances is not None else None
        if token == vocab.eos_id:
            events.append(
                DecodeEvent(
                    kind="eos", position=t, step=steps, token=token, prob=prob, min_dist=dist
                )
            )
            termination = "eos"
            break
        events.append(
            DecodeEvent(kind=kind, position=t, step=steps, token=token, prob=prob, min_dist=dist)
        )
        prefix.append(token)
        output.append(token)
        token_probs.append(prob)
        if distances is not None:
            token_dists.append(dist)
        elim.append(np.zeros(vocab.size, dtype=bool))

    return DecodeResult(
        output=tuple(output),
        termination=termination,
        fallback=False,
        steps_used=steps,
        backtracks=backtracks,
        token_probs=tuple(token_probs),
        token_dists=tuple(token_dists) if distances is not None else None,
        events=tuple(events),
    )


def _greedy_rollout(
    lm: LmProvider, context: TokenSeq, output: list[int], cfg: DecodeConfig
) -> list[int]:
    """Continue a partial output greedily to completion; used for scoring
    lookahead candidates, so nothing here is recorded or budgeted."""
    vocab = lm.vocabulary()
    out = list(output)
    prefix = (vocab.sos_id, *out)
    while len(out) < cfg.max_len:
        probs = _step_distribution(lm, context, prefix, cfg, len(out), vocab.eos_id)
        pool = _pool_mask(probs, replace(cfg, strategy="greedy"), len(out), vocab.eos_id)
        token = _argmax_index(probs, pool)
        if token == vocab.eos_id:
            break
        out.append(token)
        prefix = prefix + (token,)
    return out


def lookahead_decode(
    lm: LmProvider,
    context: Sequence[int],
    cfg: DecodeConfig,
    k: int = 5,
    interval: int = 1,
    scorer: Callable[[TokenSeq, TokenSeq], float] | None = None,
    scorer_weight: float = 1.0,
) -> DecodeResult:
    """Greedy decoding that, every `interval` positions, rolls out the top-k
    candidates to completion and picks the one maximizing
    log(candidate prob) + scorer_weight * scorer(context, rollout).

    The default scorer is grounding precision against the context. Rollout
    queries are not counted in steps_used.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if interval < 1:
        raise ValueError(f"interval must be >= 1, got {interval}")
    ctx = as_token_seq(context)
    vocab = lm.vocabulary()
    if scorer is None:
        from .metrics import grounding_precision

        emb = lm.embeddings()
        phi = cfg.coba.phi if cfg.coba is not None and cfg.coba.phi is not None else 0.5

        def scorer(c: TokenSeq, rollout: TokenSeq) -> float:
            try:
                return grounding_precision(rollout, c, emb, phi, vocab)
            except ValueError:
                # degenerate rollout (empty or all-special): nothing grounded
                return 0.0

    output: list[int] = []
    token_probs: list[float] = []
    events: list[DecodeEvent] = []
    steps = 0
    termination: Termination = "max_len"
    while True:
        t = len(output)
        if t == cfg.max_len:
            events.append(DecodeEvent(kind="max_len_stop", position=t, step=steps))
            termination = "max_len"
            break
        steps += 1
        prefix = (vocab.sos_id, *output)
        probs = _step_distribution(lm, ctx, prefix, cfg, t, vocab.eos_id)
        pool = _pool_mask(probs, replace(cfg, strategy="greedy"), t, vocab.eos_id)
        if t % interval == 0 and k > 1:
            order = [i for i in np.argsort(-probs, kind="stable") if pool[i]][:k]
            best_tok, best_score = None, -np.inf
            for cand in order:
                cand = int(cand)
                if cand == vocab.eos_id:
                    rollout = list(output)
                else:
                    rollout = _greedy_rollout(lm, ctx, output + [cand], cfg)
                score = float(np.log(max(float(probs[cand]), _LOG_FLOOR)))
                score += scorer_weight * scorer(ctx, tuple(rollout))
                if score > best_score:
                    best_tok, best_score = cand, score
            token = best_tok if best_tok is not None else _argmax_index(probs, pool)
        else:
            token = _argmax_index(probs, pool)
        prob = float(probs[token])
        if token == vocab.eos_id:
            events.append(
                DecodeEvent(kind="eos", position=t, step=steps, token=token, prob=prob)
            )
            termination = "eos"
            break
        events.append(
            DecodeEvent(kind="forward", position=t, step=steps, token=token, prob=prob)
        )
        output.append(token)
        token_probs.append(prob)
    return DecodeResult(
        output=tuple(output),
        termination=termination,
        fallback=False,
        steps_used=steps,
        backtracks=0,
        token_probs=tuple(token_probs),
        token_dists=None,
        events=tuple(events),
    )


def decode(lm: LmProvider, context: Sequence[int], cfg: DecodeConfig) -> DecodeResult:
    """Dispatch on configuration: engine when detectors are set, otherwise
    the plain strategy baseline."""
    if cfg.coba is not None:
        return coba_decode(lm, context, cfg)
    return baseline_decode(lm, context, cfg)
