"""Worker entry point.

Default transport is stdio (the engine spawns this as a child process);
`--tcp host:port` serves one TCP connection instead.  Port 0 picks a free
port; the bound address is announced on stderr as "listening on host:port".

A real diffusion backend plugs in by registering a callable with the
signature (z, t_train, prompt, conditional) -> tensor in server.MODELS and
selecting it via --model.
"""

from __future__ import annotations

import argparse
import sys

from .server import MODELS, serve, serve_tcp


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="flexti2v-worker")
    parser.add_argument("--tcp", metavar="HOST:PORT", help="serve one TCP connection")
    parser.add_argument(
        "--model", default="dummy", choices=sorted(MODELS), help="noise model"
    )
    parser.add_argument("--name", default=None, help="name reported in the Hello reply")
    args = parser.parse_args(argv)

    model = MODELS[args.model]
    name = args.name or f"flexti2v-worker({args.model})"
    if args.tcp:
        host, _, port = args.tcp.rpartition(":")
        if not host or not port.isdigit():
            parser.error(f"--tcp expects HOST:PORT, got {args.tcp!r}")
        return serve_tcp(
            host, int(port), model, name,
            announce=lambda msg: print(msg, file=sys.stderr, flush=True),
        )
    return serve(sys.stdin.buffer, sys.stdout.buffer, model, name)


if __name__ == "__main__":
    sys.exit(main())
