"""Command line for the sidecar: serve the HTTP protocol or export fixtures."""

from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, load_sidecar_config
from .export import export_fixtures
from .service import serve


def cmd_serve(args) -> int:
    config = load_sidecar_config(args.config)
    service = serve(config, host=args.host, port=args.port)
    print(f"listening on {service.url}", flush=True)
    try:
        service.wait()
    except KeyboardInterrupt:
        service.stop()
    return 0


def cmd_export(args) -> int:
    config = load_sidecar_config(args.config)
    result = export_fixtures(args.manifest, args.out_dir, config=config)
    print(f"exported {len(result['exported'])} samples to {result['out_dir']} "
          f"({len(result['errors'])} failed)")
    if args.verbose and result["errors"]:
        print(json.dumps(result["errors"], indent=1, sort_keys=True))
    return 1 if result["errors"] else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bpm-sidecar",
        description="Perception service and fixture exporter for the bpm-eval engine.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP perception service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8763)
    p.add_argument("--config", help="JSON sidecar config file")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("export-fixtures", help="record a manifest into an offline fixture tree")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="JSON sidecar config file")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_export)

    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
