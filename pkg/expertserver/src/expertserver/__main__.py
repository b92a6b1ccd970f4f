"""Command line entry point.

    python3 -m expertserver --linear params.npz            # serve on stdio
    python3 -m expertserver --corpus-model --tcp :7701     # serve on TCP
    python3 -m expertserver --corpus-model --replay requests.txt

Replay mode prints one response line per request line and exits; it is how
the conformance corpus is checked against this implementation.
"""

from __future__ import annotations

import argparse
import sys

from .adapters import LinearAdapter, corpus_adapter
from .server import serve_lines, serve_stdio, serve_tcp


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="expertserver")
    model = parser.add_mutually_exclusive_group(required=True)
    model.add_argument("--linear", metavar="NPZ",
                       help="affine model: npz with w, b, token_order")
    model.add_argument("--corpus-model", action="store_true",
                       help="the fixed linear model behind the conformance corpus")
    parser.add_argument("--tcp", metavar="[HOST]:PORT",
                        help="listen on TCP instead of stdio")
    parser.add_argument("--replay", metavar="FILE",
                        help="answer request lines from FILE and exit")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        adapter = (corpus_adapter() if args.corpus_model
                   else LinearAdapter.from_npz(args.linear))
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.replay is not None:
        with open(args.replay, encoding="utf-8") as fh:
            for response in serve_lines(adapter, (l.rstrip("\n") for l in fh)):
                print(response)
        return 0
    if args.tcp is not None:
        host, _, port = args.tcp.rpartition(":")
        try:
            serve_tcp(adapter, host or "127.0.0.1", int(port))
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        return 0
    serve_stdio(adapter)
    return 0


if __name__ == "__main__":
    sys.exit(main())
