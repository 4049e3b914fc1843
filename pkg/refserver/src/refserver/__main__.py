"""Entry point: refserver --port 8080 --mode synthetic --family-seed 2023."""

import argparse

import uvicorn

from .app import MODES, ShimSettings, create_app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="refserver", description="Model-gateway reference shim")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8080)
    parser.add_argument("--mode", default="synthetic", choices=MODES)
    parser.add_argument("--family-seed", dest="family_seed", type=int, default=2023)
    parser.add_argument("--registry", default=None, help="registry JSON path")
    parser.add_argument("--api-key", dest="api_key", default=None)
    parser.add_argument("--hook", default=None, help="module.path:factory for external models")
    args = parser.parse_args(argv)
    settings = ShimSettings(
        mode=args.mode,
        family_seed=args.family_seed,
        registry_path=args.registry,
        api_key=args.api_key,
        hook=args.hook,
    )
    uvicorn.run(create_app(settings), host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
