"""Command line entry point for serving a checkpoint over the wire protocol."""

from __future__ import annotations

import argparse
import sys

from .config import BridgeConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lm-bridge",
        description="Serve a causal LM checkpoint over the decoding wire protocol.",
    )
    parser.add_argument("--model", required=True, help="checkpoint path or hub id")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8700)
    parser.add_argument("--device", default="cpu", help="torch device string")
    parser.add_argument(
        "--template",
        default="",
        help="task prefix prepended to every request, e.g. 'summarize:'",
    )
    parser.add_argument(
        "--max-context",
        type=int,
        default=None,
        help="token window cap (default: the model's position limit)",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = BridgeConfig(
            model=args.model,
            device=args.device,
            template=args.template,
            max_context=args.max_context,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    import uvicorn

    from .app import create_app

    uvicorn.run(create_app(cfg), host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
