import json
import threading
import time
import urllib.error
import urllib.request
from types import SimpleNamespace

import pytest
import torch

CHECKPOINT_VOCAB = 64
TEMPLATE = "summarize:"
TEMPLATE_ID = 2


def build_checkpoint(path, bos_token_id=0, eos_token_id=1, **config_overrides):
    """Write a tiny random GPT-2 checkpoint plus word-level tokenizer."""
    from tokenizers import Tokenizer
    from tokenizers.models import WordLevel
    from tokenizers.pre_tokenizers import WhitespaceSplit
    from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

    torch.manual_seed(7)
    config = GPT2Config(
        vocab_size=CHECKPOINT_VOCAB,
        n_positions=96,
        n_embd=32,
        n_layer=2,
        n_head=2,
        bos_token_id=bos_token_id,
        eos_token_id=eos_token_id,
        **config_overrides,
    )
    GPT2LMHeadModel(config).save_pretrained(path)

    vocab = {"[BOS]": 0, "[EOS]": 1, TEMPLATE: TEMPLATE_ID}
    for i in range(3, CHECKPOINT_VOCAB):
        vocab[f"w{i}"] = i
    tok = Tokenizer(WordLevel(vocab, unk_token="[BOS]"))
    tok.pre_tokenizer = WhitespaceSplit()
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok, bos_token="[BOS]", eos_token="[EOS]"
    )
    fast.save_pretrained(path)
    return str(path)


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory):
    return build_checkpoint(tmp_path_factory.mktemp("ckpt") / "tiny")


@pytest.fixture(scope="session")
def make_checkpoint():
    return build_checkpoint


def start_server(app, startup_timeout=30.0):
    """Run the app under uvicorn on an ephemeral port; returns (server, thread, url)."""
    import uvicorn

    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + startup_timeout
    while not server.started:
        if not thread.is_alive():
            raise RuntimeError("server thread exited before startup")
        if time.monotonic() > deadline:
            raise RuntimeError("server did not start in time")
        time.sleep(0.02)
    port = server.servers[0].sockets[0].getsockname()[1]
    return server, thread, f"http://127.0.0.1:{port}"


def stop_server(server, thread):
    server.should_exit = True
    thread.join(timeout=10)


def wait_ready(url, timeout=60.0):
    """Poll /v1/meta until the background model load finishes."""
    deadline = time.monotonic() + timeout
    while True:
        status, _ = get_json(url + "/v1/meta")
        if status == 200:
            return
        if status not in (503, -1):
            raise RuntimeError(f"unexpected status {status} while waiting for bridge")
        if time.monotonic() > deadline:
            raise RuntimeError("bridge did not become ready")
        time.sleep(0.05)


def _decode_response(resp):
    body = resp.read().decode()
    try:
        return json.loads(body)
    except json.JSONDecodeError:
        return {"raw": body}


def get_json(url, timeout=10.0):
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            return resp.status, _decode_response(resp)
    except urllib.error.HTTPError as exc:
        return exc.code, _decode_response(exc)
    except urllib.error.URLError:
        return -1, {}


def post_json(url, payload=None, raw=None, timeout=10.0):
    data = raw if raw is not None else json.dumps(payload).encode()
    req = urllib.request.Request(
        url, data=data, headers={"Content-Type": "application/json"}, method="POST"
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, _decode_response(resp)
    except urllib.error.HTTPError as exc:
        return exc.code, _decode_response(exc)


@pytest.fixture(scope="session")
def http():
    return SimpleNamespace(get=get_json, post=post_json)


@pytest.fixture(scope="session")
def serving():
    return SimpleNamespace(start=start_server, stop=stop_server, wait=wait_ready)


@pytest.fixture(scope="session")
def bridge(checkpoint):
    """A bridge serving the tiny checkpoint with the summarize template."""
    from lm_bridge import BridgeConfig, create_app

    cfg = BridgeConfig(model=checkpoint, template=TEMPLATE)
    server, thread, url = start_server(create_app(cfg))
    try:
        wait_ready(url)
        yield url
    finally:
        stop_server(server, thread)
