"""Thin command-line client for the pipeline service.

Stage commands POST to /pipeline/<stage>; without --server they talk to an
in-process app instance over an ASGI transport, so no server has to be running.

Exit codes: 0 success (done or skipped), 1 config error, 2 partial stage
failure, 3 total failure.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

import httpx

from .pipeline import STAGES

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2
EXIT_FAILURE = 3


def _post(server: str | None, path: str, payload: dict) -> httpx.Response:
    if server:
        return httpx.post(server.rstrip("/") + path, json=payload, timeout=None)

    from .service import create_app

    async def go() -> httpx.Response:
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://duothought", timeout=None
        ) as client:
            return await client.post(path, json=payload)

    return asyncio.run(go())


def _run_stage(args: argparse.Namespace) -> int:
    payload: dict = {"config_path": str(Path(args.config).resolve())}
    if args.workdir is not None:
        payload["workdir"] = str(Path(args.workdir).resolve())
    for key in ("seed", "concurrency"):
        value = getattr(args, key)
        if value is not None:
            payload[key] = value
    if args.no_resume:
        payload["resume"] = False
    elif args.resume:
        payload["resume"] = True

    try:
        response = _post(args.server, f"/pipeline/{args.stage}", payload)
    except httpx.HTTPError as exc:
        print(json.dumps({"error": f"cannot reach server: {exc}"}), file=sys.stderr)
        return EXIT_FAILURE

    if response.status_code in (400, 422):
        print(json.dumps({"error": response.json().get("detail", "config error")}), file=sys.stderr)
        return EXIT_CONFIG
    if response.status_code != 200:
        detail = response.json().get("detail", response.text)
        print(json.dumps({"error": detail}), file=sys.stderr)
        return EXIT_FAILURE

    result = response.json()
    print(json.dumps(result, indent=2))
    if result["status"] in ("done", "skipped"):
        return EXIT_OK
    if result["status"] == "partial":
        return EXIT_PARTIAL
    return EXIT_FAILURE


def _serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="duothought", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in STAGES:
        cmd = sub.add_parser(stage, help=f"run the {stage} stage")
        cmd.add_argument("--config", required=True, help="run config file (YAML or JSON)")
        cmd.add_argument("--workdir", default=None, help="override the configured work directory")
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--concurrency", type=int, default=None)
        cmd.add_argument("--resume", action="store_true", help="reuse partial stage outputs (default)")
        cmd.add_argument("--no-resume", action="store_true", help="ignore partial stage outputs")
        cmd.add_argument("--server", default=None, help="base URL of a running service")
        cmd.set_defaults(func=_run_stage, stage=stage)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(func=_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
