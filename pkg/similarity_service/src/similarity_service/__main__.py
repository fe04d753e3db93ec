"""Run the service: python -m similarity_service [--config cfg.yaml] [--port N]."""

import argparse

import uvicorn

from .app import create_app
from .config import load_config


def main(argv=None):
    parser = argparse.ArgumentParser(prog="similarity_service")
    parser.add_argument("--config", default=None, help="service config YAML")
    parser.add_argument("--port", type=int, default=None, help="override config port")
    parser.add_argument("--host", default=None, help="override config host")
    args = parser.parse_args(argv)
    config = load_config(args.config)
    host = args.host if args.host is not None else config.host
    port = args.port if args.port is not None else config.port
    uvicorn.run(create_app(config), host=host, port=port)


if __name__ == "__main__":
    main()
