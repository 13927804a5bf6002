"""mlbridge command line: serve a model adapter behind the wire protocol."""
from __future__ import annotations

import argparse
import sys

from .adapters import AdapterLoadFailure, load_adapter_class
from .server import DEFAULT_MARGIN, BindFailure, bridge_serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlbridge", description=__doc__)
    parser.add_argument("--port", type=int, default=7071)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--adapter", default="mock", help="registered adapter name")
    parser.add_argument("--annotations", help="sidecar annotation file (mock adapter)")
    parser.add_argument("--margin", type=float, default=DEFAULT_MARGIN,
                        help="crop margin between stages, px")
    parser.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cls = load_adapter_class(args.adapter)
        if args.adapter == "mock":
            if not args.annotations:
                raise AdapterLoadFailure("the mock adapter requires --annotations")
            adapter = cls(args.annotations, seed=args.seed)
        else:
            adapter = cls()
        server = bridge_serve(args.port, adapter, margin=args.margin, host=args.host)
    except (AdapterLoadFailure, BindFailure, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"serving adapter {args.adapter!r} on {args.host}:{server.port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
