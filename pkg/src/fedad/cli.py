"""``fedad <mode> --config <path> [--seed N] [--out DIR] [--rho R] [--no-compress]``

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import MODES, describe_fields, from_dict, load_config
from .exceptions import ConfigError

log = logging.getLogger("fedad")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedad",
        description="Federated attention-CNN-LSTM anomaly detection with Top-k gradient compression.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="config file fields (JSON, nested by dots):\n" + "\n".join(describe_fields()),
    )
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", help="JSON config file; omitted fields take defaults")
    parser.add_argument("--seed", type=int, help="overrides seed")
    parser.add_argument("--out", help="overrides output_dir")
    parser.add_argument("--rho", type=float, help="overrides compressor.rho")
    parser.add_argument("--no-compress", action="store_true", help="send dense gradients (rho=100)")
    parser.add_argument("--checkpoint", help="overrides checkpoint (eval mode)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve(args) -> dict:
    data = load_config(args.config) if args.config else {}
    data["mode"] = args.mode
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out is not None:
        data["output_dir"] = args.out
    if args.checkpoint is not None:
        data["checkpoint"] = args.checkpoint
    if args.rho is not None or args.no_compress:
        section = data.setdefault("compressor", {})
        if not isinstance(section, dict):
            raise ConfigError("compressor", "expected a JSON object")
        section["rho"] = 100.0 if args.no_compress else args.rho
    return data


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = from_dict(resolve(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    from .experiment import run

    try:
        run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 2
        log.debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    log.info("artifacts written to %s", cfg.output_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
