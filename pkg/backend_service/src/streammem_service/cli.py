"""Serve the backend protocol over HTTP."""

from __future__ import annotations

import argparse
import sys

from .app import BackendConfig, ConfigError, ENDPOINTS, create_app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="streammem-service", description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8808)
    parser.add_argument(
        "--stub", action="store_true", default=True,
        help="serve deterministic stub models (default, and currently the only mode)",
    )
    parser.add_argument(
        "--model", action="append", default=[], metavar="ENDPOINT=NAME",
        help="model identifier for one endpoint; only 'stub' resolves",
    )
    args = parser.parse_args(argv)

    models = {name: "stub" for name in ENDPOINTS}
    for spec in args.model:
        endpoint, _, name = spec.partition("=")
        if endpoint not in ENDPOINTS or not name:
            print(f"config error: bad --model {spec!r}", file=sys.stderr)
            return 1
        models[endpoint] = name
    config = BackendConfig(models=models, host=args.host, port=args.port)
    try:
        app = create_app(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    import uvicorn

    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())
