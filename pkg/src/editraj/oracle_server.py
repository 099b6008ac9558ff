"""Reference JSON-lines oracle server backed by the toy oracles.

    python -m editraj.oracle_server [--toy NAME] [--tcp PORT] [--reorder N] [--die-after N]

Over stdio by default. ``--reorder N`` buffers N requests and answers them in
reverse order, which exercises id-based demultiplexing in clients.
``--die-after N`` exits after reading N requests without answering the last.
"""

from __future__ import annotations

import argparse
import socketserver
import sys

from .oracle import handle_line, toy_oracle


def serve_lines(oracle, lines, write, reorder: int = 1, die_after: int | None = None) -> None:
    buffer: list[str] = []
    seen = 0
    for line in lines:
        if not line.strip():
            continue
        seen += 1
        if die_after is not None and seen >= die_after:
            return
        buffer.append(handle_line(oracle, line))
        if len(buffer) >= reorder:
            for out in reversed(buffer):
                write(out + "\n")
            buffer.clear()
    for out in reversed(buffer):
        write(out + "\n")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="editraj-oracle-server", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--toy", default="default", help="toy oracle name (default, count:<TOK>)")
    ap.add_argument("--tcp", type=int, default=None, metavar="PORT")
    ap.add_argument("--reorder", type=int, default=1)
    ap.add_argument("--die-after", type=int, default=None)
    args = ap.parse_args(argv)
    oracle = toy_oracle(args.toy)

    if args.tcp is None:
        def write(s):
            sys.stdout.write(s)
            sys.stdout.flush()
        serve_lines(oracle, sys.stdin, write, args.reorder, args.die_after)
        return 0

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            def write(s):
                self.wfile.write(s.encode())
                self.wfile.flush()
            lines = (raw.decode() for raw in self.rfile)
            serve_lines(oracle, lines, write, args.reorder, args.die_after)

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    with Server(("127.0.0.1", args.tcp), Handler) as srv:
        print(f"listening on 127.0.0.1:{srv.server_address[1]}", file=sys.stderr, flush=True)
        srv.serve_forever()
    return 0


if __name__ == "__main__":
    sys.exit(main())
