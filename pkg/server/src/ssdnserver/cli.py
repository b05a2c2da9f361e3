"""Command line entry point.

    ssdn-server --mode echo --bind tcp:127.0.0.1:9000
    ssdn-server --mode gaussian --mean mean.ssdt --var var.ssdt --bind stdio
    ssdn-server --mode model --hook mypkg.mymodule:predict --bind tcp:0.0.0.0:9000

TCP servers announce the bound address on stderr ("listening on HOST:PORT",
useful with port 0) and run until interrupted. stdio servers exit when the
parent closes the pipe. Exit codes: 0 clean shutdown, 1 bad configuration
or unreadable model files, 2 argparse usage errors.
"""

from __future__ import annotations

import argparse
import importlib
import sys

from .backends import EchoBackend, GaussianBackend, HookBackend, alpha_bars, load_ssdt
from .server import make_tcp_server, serve_stdio

DEFAULT_STEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


def _load_hook(spec: str):
    module_name, sep, attr = spec.partition(":")
    if not sep or not module_name or not attr:
        raise ValueError(f"hook spec must be module.path:callable, got {spec!r}")
    module = importlib.import_module(module_name)
    fn = getattr(module, attr, None)
    if not callable(fn):
        raise ValueError(f"hook {spec!r} is not callable")
    return fn


def build_backend(args: argparse.Namespace):
    if args.mode == "echo":
        return EchoBackend()
    if args.mode == "gaussian":
        if not args.mean or not args.var:
            raise ValueError("gaussian mode needs --mean and --var SSDT files")
        mean = load_ssdt(args.mean)
        var = load_ssdt(args.var)
        abars = alpha_bars(args.steps, args.beta_start, args.beta_end)
        return GaussianBackend(mean, var, abars)
    if not args.hook:
        raise ValueError("model mode needs --hook module.path:callable")
    return HookBackend(_load_hook(args.hook))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ssdn-server",
        description="Reference denoiser server for the SSDN wire protocol.",
    )
    parser.add_argument("--mode", choices=("echo", "gaussian", "model"), required=True)
    parser.add_argument("--bind", required=True, help="tcp:HOST:PORT or stdio")
    parser.add_argument("--mean", help="SSDT file with the prior mean (gaussian mode)")
    parser.add_argument("--var", help="SSDT file with the prior variances (gaussian mode)")
    parser.add_argument("--steps", type=int, default=DEFAULT_STEPS,
                        help="schedule length T (default %(default)s)")
    parser.add_argument("--beta-start", type=float, default=DEFAULT_BETA_START)
    parser.add_argument("--beta-end", type=float, default=DEFAULT_BETA_END)
    parser.add_argument("--hook", help="module.path:callable for model mode")
    args = parser.parse_args(argv)

    try:
        backend = build_backend(args)
    except (ValueError, OSError, ImportError) as exc:
        print(f"ssdn-server: {exc}", file=sys.stderr)
        return 1

    if args.bind == "stdio":
        serve_stdio(backend)
        return 0

    kind, _, rest = args.bind.partition(":")
    host, _, port_s = rest.rpartition(":")
    if kind != "tcp" or not host or not port_s.isdigit():
        print(f"ssdn-server: bad bind spec {args.bind!r} (need tcp:HOST:PORT or stdio)",
              file=sys.stderr)
        return 1
    server = make_tcp_server(host, int(port_s), backend)
    bound_host, bound_port = server.server_address[:2]
    print(f"listening on {bound_host}:{bound_port}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
