"""Thin command-line client for the gaitmorph service.

The CLI builds a request from a JSON config file plus ``--set key=value``
overrides and posts it to the service. Without ``--server`` (or the
GAITMORPH_SERVER env var) the service app runs in-process over an ASGI
transport, so no separate server is needed for local work.

Exit codes: 0 ok, 2 numeric divergence, 64 usage/config error, 65 data
error, 66 artifact mismatch.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys

import httpx

EXIT_OK = 0
EXIT_DIVERGENCE = 2
EXIT_CONFIG = 64
EXIT_DATA = 65
EXIT_ARTIFACT = 66

_KIND_TO_EXIT = {
    "config": EXIT_CONFIG,
    "data": EXIT_DATA,
    "artifact-mismatch": EXIT_ARTIFACT,
    "divergence": EXIT_DIVERGENCE,
}

SUBCOMMANDS = {
    "gen": "/gen",
    "train": "/train",
    "fit-maps": "/fit-maps",
    "morph": "/morph",
    "fgd": "/fgd",
    "stats": "/stats",
}


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(payload: dict, key: str, raw_value: str) -> None:
    """Set a dotted key path in the payload, e.g. model.n_code=8."""
    parts = key.split(".")
    node = payload
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ValueError(f"cannot override through non-object key {p!r}")
    node[parts[-1]] = _parse_value(raw_value)


def build_payload(config_path: str, overrides) -> dict:
    with open(config_path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if not isinstance(payload, dict):
        raise ValueError("config file must hold a JSON object")
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        apply_override(payload, key, value)
    return payload


async def _post(server: str | None, path: str, payload: dict) -> httpx.Response:
    timeout = httpx.Timeout(None)
    if server:
        async with httpx.AsyncClient(base_url=server, timeout=timeout) as client:
            return await client.post(path, json=payload)
    from .service import app

    transport = httpx.ASGITransport(app=app)
    async with httpx.AsyncClient(transport=transport, base_url="http://gaitmorph",
                                 timeout=timeout) as client:
        return await client.post(path, json=payload)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gaitmorph",
        description="Gait tokenization, transport morphing and FGD evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON request config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a (dotted) config key")
        p.add_argument("--server", default=os.environ.get("GAITMORPH_SERVER"),
                       help="service base URL; default runs the service in-process")

    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else 0

    try:
        payload = build_payload(args.config, args.set)
    except (OSError, ValueError, json.JSONDecodeError) as e:
        print(json.dumps({"error": "config", "detail": str(e)}))
        return EXIT_CONFIG

    resp = asyncio.run(_post(args.server, SUBCOMMANDS[args.command], payload))
    try:
        body = resp.json()
    except json.JSONDecodeError:
        print(json.dumps({"error": "internal", "detail": resp.text}))
        return 1

    print(json.dumps(body))
    if resp.status_code == 200:
        return EXIT_OK
    if resp.status_code == 422:  # pydantic validation: bad/unknown keys
        return EXIT_CONFIG
    if isinstance(body, dict):
        return _KIND_TO_EXIT.get(body.get("error"), 1)
    return 1


if __name__ == "__main__":
    sys.exit(main())
