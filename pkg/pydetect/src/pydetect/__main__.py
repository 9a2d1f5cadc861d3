"""Command line entry point: run the server under uvicorn."""
from __future__ import annotations

import argparse


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="pydetect", description="Object detector and LPIPS server"
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8008)
    parser.add_argument("--device", default="cpu", help="compute target, e.g. cpu or cuda:0")
    args = parser.parse_args(argv)

    import uvicorn

    from .registry import default_registry
    from .server import create_app

    app = create_app(default_registry(device=args.device))
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
