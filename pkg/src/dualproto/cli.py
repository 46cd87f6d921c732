"""Command-line client for the experiment service.

Every subcommand is a thin HTTP call: by default the requests run against
an in-process instance of the service app, so no server is needed; pass
``--server http://host:port`` to target a running instance instead.

Exit codes: 0 on success, 1 on a reported error (one machine-parsable line
on stderr), 2 on usage errors.
"""
from __future__ import annotations

import argparse
import asyncio
import json
import sys

import httpx


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualproto",
        description="Dual-prototype class-incremental learning benchmark",
    )
    parser.add_argument(
        "--server",
        default=None,
        help="base URL of a running service; default runs in-process",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment config file")
    common.add_argument("--seed", type=int, default=None, help="override the seed")
    common.add_argument("--out", default=None, help="override the output directory")

    run = sub.add_parser("run", parents=[common], help="run one experiment")
    run.add_argument("--method", default=None, help="override the method arm")
    run.add_argument("--k", type=int, default=None, help="override the shortlist size")

    sub.add_parser("ablate", parents=[common], help="run every comparison arm")

    sub.add_parser("pretrain", parents=[common], help="pretrain and save the extractor")

    grads = sub.add_parser("check-grads", help="verify analytic gradients")
    grads.add_argument("--trials", type=int, default=100)
    grads.add_argument("--eps", type=float, default=1e-5)
    grads.add_argument("--tolerance", type=float, default=1e-5)
    grads.add_argument("--seed", type=int, default=1993)

    emb = sub.add_parser(
        "dump-embeddings", parents=[common], help="dump test-set representations"
    )
    emb.add_argument("--which", choices=("raw", "adapted"), default="raw")

    report = sub.add_parser("report", help="render a results file")
    report.add_argument("--out", required=True, help="run directory or results.json")

    predict = sub.add_parser("predict", help="classify one sample from a saved run")
    predict.add_argument("--run-dir", required=True)
    predict.add_argument("--k", type=int, default=None)
    predict.add_argument(
        "features", nargs="+", type=float, help="input feature values"
    )
    return parser


async def _post(server: str | None, path: str, payload: dict) -> dict:
    if server is None:
        from .service.app import app

        transport = httpx.ASGITransport(app=app)
        client = httpx.AsyncClient(transport=transport, base_url="http://service")
    else:
        client = httpx.AsyncClient(base_url=server)
    try:
        response = await client.post(path, json=payload, timeout=None)
    finally:
        await client.aclose()
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise RuntimeError(f"{path} failed ({response.status_code}): {detail}")
    return response.json()


def _call(server: str | None, path: str, payload: dict) -> dict:
    return asyncio.run(_post(server, path, payload))


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        if args.command == "run":
            body = _call(args.server, "/experiments/run", {
                "config_path": args.config, "method": args.method,
                "k": args.k, "seed": args.seed, "out": args.out,
            })
            print(json.dumps(body, indent=2))
        elif args.command == "ablate":
            body = _call(args.server, "/experiments/ablation", {
                "config_path": args.config, "seed": args.seed, "out": args.out,
            })
            print(json.dumps(body, indent=2))
        elif args.command == "pretrain":
            body = _call(args.server, "/pretrain", {
                "config_path": args.config, "seed": args.seed, "out": args.out,
            })
            print(json.dumps(body, indent=2))
        elif args.command == "check-grads":
            body = _call(args.server, "/gradcheck", {
                "trials": args.trials, "eps": args.eps,
                "tolerance": args.tolerance, "seed": args.seed,
            })
            print(
                f"gradient check: {body['trials']} trials, max relative error "
                f"{body['max_relative_error']:.3e} (tolerance {body['tolerance']:.1e})"
            )
            return 0 if body["passed"] else 1
        elif args.command == "dump-embeddings":
            body = _call(args.server, "/embeddings", {
                "config_path": args.config, "which": args.which,
                "seed": args.seed, "out": args.out,
            })
            print(f"wrote {body['rows']} rows to {body['path']}")
        elif args.command == "report":
            body = _call(args.server, "/report", {"results_path": args.out})
            print(body["text"], end="")
        elif args.command == "predict":
            body = _call(args.server, "/predict", {
                "run_dir": args.run_dir, "features": args.features, "k": args.k,
            })
            print(json.dumps(body, indent=2))
        else:  # pragma: no cover - argparse enforces the choices
            parser.error(f"unknown command {args.command}")
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except httpx.HTTPError as exc:
        print(f"error: cannot reach service: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
