"""Command line entry point: ``ducjcas run --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from importlib import resources

from .campaign import run_campaign
from .config import ConfigError, SweepConfig, load_config, parse_config
from .emit import emit_results

log = logging.getLogger("ducjcas")


def parse_sweep(text: str) -> SweepConfig:
    """``ptd=a:b:step`` (dBm) -> sweep section."""
    key, _, spec = text.partition("=")
    if key.strip().lower() != "ptd" or not spec:
        raise argparse.ArgumentTypeError(f"sweep must look like ptd=a:b:step, got {text!r}")
    try:
        a, b, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"sweep must look like ptd=a:b:step, got {text!r}") from None
    if step <= 0 or b < a:
        raise argparse.ArgumentTypeError("sweep needs step > 0 and b >= a")
    return SweepConfig(a, b, step)


def example_config_text() -> str:
    return resources.files("ducjcas").joinpath("configs/example.yaml").read_text()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ducjcas", description="Cooperative DL/UL JCAS Monte-Carlo simulator")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a campaign and write CSV results")
    run.add_argument("--config", help="YAML scenario file (default: the bundled example)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--trials", type=int, help="override the number of trials")
    run.add_argument("--sweep", type=parse_sweep, help="DL data power sweep, e.g. ptd=14:26:2 (dBm)")
    run.add_argument("--scheme", choices=("duc", "separated"), help="run only one scheme (default: both)")
    run.add_argument("--workers", type=int, help="worker processes (default: from config)")
    run.add_argument("--full-scale", action="store_true", help="full numerology and trial count")
    run.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("example-config", help="print the bundled example configuration")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "example-config":
        sys.stdout.write(example_config_text())
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else parse_config(example_config_text())
        if args.full_scale:
            cfg = cfg.with_full_scale()
        if args.trials is not None:
            cfg.campaign.trials = args.trials
        if args.sweep is not None:
            cfg.powers.sweep = args.sweep
        if args.scheme is not None:
            cfg.campaign.schemes = [args.scheme]
        if args.workers is not None:
            cfg.campaign.workers = args.workers
        cfg.validate()
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    result = run_campaign(cfg)
    try:
        paths = emit_results(result, cfg, args.out, extra={"full_scale": bool(args.full_scale)})
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return 3
    log.info("campaign finished in %.1f s", time.perf_counter() - t0)
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
