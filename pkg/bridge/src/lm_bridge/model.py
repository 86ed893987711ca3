"""Checkpoint adapter: turns a causal transformer checkpoint into the three
wire-protocol operations (metadata, next-token logprobs, embedding rows).

Unconditional queries drop the context tokens from the input and keep the
template and prefix; for causal LMs this is the natural reading of "the
model's prior without the document". Encoder-decoder checkpoints are out of
scope here and rejected at load time.
"""

from __future__ import annotations

import threading

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

from .config import BridgeConfig

UNCONDITIONAL_RULE = "drop-context"


class ModelLoadError(Exception):
    """The checkpoint cannot back the wire protocol."""


class ModelAdapter:
    """One loaded checkpoint behind a lock.

    Forward passes are serialized; the protocol allows queueing and the
    outputs are deterministic, so concurrent clients see consistent
    results.
    """

    def __init__(self, cfg: BridgeConfig):
        self.cfg = cfg
        try:
            model = AutoModelForCausalLM.from_pretrained(cfg.model)
        except Exception as exc:
            raise ModelLoadError(f"cannot load checkpoint {cfg.model!r}: {exc}") from exc
        if model.config.is_encoder_decoder:
            raise ModelLoadError("encoder-decoder checkpoints are not supported")
        self.device = torch.device(cfg.device)
        self.model = model.to(self.device).eval()

        weight = self.model.get_input_embeddings().weight
        self.vocab_size = int(weight.shape[0])
        self.embedding_dim = int(weight.shape[1])
        self.sos_id = model.config.bos_token_id
        self.eos_id = model.config.eos_token_id
        if self.sos_id is None or self.eos_id is None or self.sos_id == self.eos_id:
            raise ModelLoadError(
                "checkpoint must declare distinct bos and eos token ids "
                f"(got bos={self.sos_id}, eos={self.eos_id})"
            )
        if not (0 <= self.sos_id < self.vocab_size and 0 <= self.eos_id < self.vocab_size):
            raise ModelLoadError("bos/eos ids fall outside the embedding table")

        self.special_ids = {self.sos_id, self.eos_id}
        self.template_ids: list[int] = []
        if cfg.template:
            try:
                tokenizer = AutoTokenizer.from_pretrained(cfg.model)
            except Exception as exc:
                raise ModelLoadError(
                    f"template {cfg.template!r} needs a tokenizer, none loadable: {exc}"
                ) from exc
            self.template_ids = list(tokenizer.encode(cfg.template, add_special_tokens=False))
            self.special_ids.update(
                i for i in tokenizer.all_special_ids if 0 <= i < self.vocab_size
            )

        limit = getattr(model.config, "max_position_embeddings", None)
        self.max_context = cfg.max_context if cfg.max_context is not None else limit
        if self.max_context is None:
            raise ModelLoadError("model declares no position limit; pass max_context")
        if len(self.template_ids) >= self.max_context:
            raise ModelLoadError("template alone exceeds max_context")
        self._lock = threading.Lock()

    def meta(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "sos_id": self.sos_id,
            "eos_id": self.eos_id,
            "special_ids": sorted(self.special_ids),
            "embedding_dim": self.embedding_dim,
            # extension fields documenting how inputs are assembled
            "model": self.cfg.model,
            "template": self.cfg.template,
            "template_ids": list(self.template_ids),
            "unconditional_rule": UNCONDITIONAL_RULE,
            "max_context": self.max_context,
            "window_rule": "keep template, drop oldest context then prefix tokens",
        }

    def _input_ids(self, context: list[int], prefix: list[int], conditioned: bool) -> list[int]:
        body = (list(context) if conditioned else []) + list(prefix)
        room = self.max_context - len(self.template_ids)
        if len(body) > room:
            body = body[-room:]
        ids = self.template_ids + body
        if not ids:
            ids = [self.sos_id]
        return ids

    def logprobs(self, context: list[int], prefix: list[int], conditioned: bool) -> list[float]:
        ids = self._input_ids(context, prefix, conditioned)
        batch = torch.tensor([ids], dtype=torch.long, device=self.device)
        with self._lock, torch.no_grad():
            logits = self.model(batch).logits[0, -1]
        return torch.log_softmax(logits.double(), dim=-1).tolist()

    def embeddings(self, ids: list[int]) -> list[list[float]]:
        weight = self.model.get_input_embeddings().weight
        with torch.no_grad():
            rows = weight[torch.tensor(ids, dtype=torch.long, device=self.device)]
        return rows.double().cpu().tolist()
