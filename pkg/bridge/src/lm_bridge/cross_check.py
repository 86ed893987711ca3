"""Cross-check a running bridge against the framework's own generation.

For a batch of random short documents, decode each one greedily through the
bridge (engine client side) and with `model.generate` on a locally loaded
copy of the same checkpoint, then compare the outputs token for token. The
two paths share no decoding code, so agreement is strong evidence that the
bridge assembles inputs and reports distributions faithfully.

Requires the `coba` package for the engine side.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
import urllib.request
from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class CrossCheckCase:
    context: tuple[int, ...]
    engine_output: tuple[int, ...]
    reference_output: tuple[int, ...]

    @property
    def matched(self) -> bool:
        return self.engine_output == self.reference_output


def fetch_meta(base_url: str, timeout: float = 30.0) -> dict:
    with urllib.request.urlopen(base_url.rstrip("/") + "/v1/meta", timeout=timeout) as resp:
        return json.loads(resp.read().decode())


def sample_documents(
    rng: random.Random, n_docs: int, vocab_size: int, special_ids, lo: int = 5, hi: int = 12
) -> list[tuple[int, ...]]:
    pool = [i for i in range(vocab_size) if i not in set(special_ids)]
    if not pool:
        raise ValueError("vocabulary has no non-special tokens to sample")
    return [
        tuple(rng.choice(pool) for _ in range(rng.randint(lo, hi))) for _ in range(n_docs)
    ]


def reference_greedy(
    model, template_ids, context, sos_id: int, eos_id: int, min_len: int, max_len: int
) -> tuple[int, ...]:
    """Greedy continuation from the framework's own generate()."""
    ids = list(template_ids) + list(context) + [sos_id]
    batch = torch.tensor([ids], dtype=torch.long)
    with torch.no_grad():
        out = model.generate(
            batch,
            do_sample=False,
            num_beams=1,
            min_new_tokens=min_len,
            max_new_tokens=max_len,
            eos_token_id=eos_id,
            pad_token_id=eos_id,
        )
    new = out[0][len(ids):].tolist()
    while new and new[-1] == eos_id:
        new.pop()
    return tuple(int(t) for t in new)


def run_cross_check(
    base_url: str,
    model_path: str,
    n_docs: int = 20,
    min_len: int = 2,
    max_len: int = 16,
    seed: int = 0,
) -> list[CrossCheckCase]:
    from coba.decode import DecodeConfig, greedy_decode
    from coba.lm import RemoteLm
    from transformers import AutoModelForCausalLM

    meta = fetch_meta(base_url)
    template_ids = [int(i) for i in meta.get("template_ids", [])]
    model = AutoModelForCausalLM.from_pretrained(model_path).eval()
    rng = random.Random(seed)
    docs = sample_documents(rng, n_docs, int(meta["vocab_size"]), meta.get("special_ids", []))
    cfg = DecodeConfig(min_len=min_len, max_len=max_len)
    cases = []
    with RemoteLm(base_url) as lm:
        vocab = lm.vocabulary()
        for doc in docs:
            engine = greedy_decode(lm, doc, cfg).output
            reference = reference_greedy(
                model, template_ids, doc, vocab.sos_id, vocab.eos_id, min_len, max_len
            )
            cases.append(CrossCheckCase(doc, tuple(engine), reference))
    return cases


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lm-bridge-cross-check",
        description="Compare greedy decoding through a bridge with local generate().",
    )
    parser.add_argument("--lm-url", required=True)
    parser.add_argument("--model", required=True, help="the checkpoint the bridge serves")
    parser.add_argument("--docs", type=int, default=20)
    parser.add_argument("--min-len", type=int, default=2)
    parser.add_argument("--max-len", type=int, default=16)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    cases = run_cross_check(
        args.lm_url, args.model, args.docs, args.min_len, args.max_len, args.seed
    )
    for i, case in enumerate(cases):
        mark = "ok" if case.matched else "MISMATCH"
        print(f"doc {i:02d}: {mark}")
        if not case.matched:
            print(f"  engine:    {case.engine_output}")
            print(f"  reference: {case.reference_output}")
    matched = sum(c.matched for c in cases)
    print(f"{matched}/{len(cases)} documents matched")
    return 0 if matched == len(cases) else 1


if __name__ == "__main__":
    sys.exit(main())
