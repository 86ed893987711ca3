"""Bridge configuration."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BridgeConfig:
    """Settings for serving one checkpoint.

    model: checkpoint path or hub identifier, loaded once per process.
    device: torch device string ("cpu", "cuda", "cuda:1", ...).
    template: text prepended to every model input; tokenized once at load
        time with the checkpoint's tokenizer. Empty means no prompt, in
        which case no tokenizer is required.
    max_context: hard cap on input length in tokens. None takes the
        model's own position limit. Longer inputs keep the template and
        drop the oldest context tokens first (then the oldest prefix
        tokens); the rule is advertised in /v1/meta.
    """

    model: str
    device: str = "cpu"
    template: str = ""
    max_context: int | None = None

    def __post_init__(self):
        if not self.model:
            raise ValueError("model identifier must be non-empty")
        if self.max_context is not None and self.max_context < 2:
            raise ValueError(f"max_context must be at least 2, got {self.max_context}")
