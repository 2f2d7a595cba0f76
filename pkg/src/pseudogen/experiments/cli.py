"""Command-line entry point: ``pseudogen <command> --config PATH --out DIR``."""
from __future__ import annotations

import argparse
import sys
import time
import warnings
from pathlib import Path

from .commands import COMMANDS
from .config import ConfigError, load_config
from .manifest import RunManifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pseudogen", description="Transfer-operator experiments for Langevin dynamics.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="run configuration file")
    parser.add_argument("--out", required=True, help="output directory (created if missing)")
    parser.add_argument("--seed", type=int, default=None, help="master seed (overrides [dynamics] seed)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    return parser


def run(command: str, config_path, out, seed: int | None = None, threads: int = 1) -> RunManifest:
    """Run one command and write its CSV files plus ``manifest.txt`` into ``out``."""
    if threads < 1:
        raise ValueError("threads must be at least 1")
    config = load_config(config_path)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    seed_used = seed if seed is not None else config.get_int("dynamics", "seed", 0, minimum=0)
    manifest = RunManifest(command, str(config_path), config.text, seed_used, threads)
    (out / "config.snapshot").write_text(config.text)
    start = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = COMMANDS[command](config, out, seed_used, threads)
    manifest.wall_clock_s = time.perf_counter() - start
    manifest.warnings = [f"{w.category.__name__}: {w.message}" for w in caught]
    manifest.add_files(out, result.files)
    manifest.write(out)
    return manifest


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = run(args.command, args.config, args.out, args.seed, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for w in manifest.warnings:
        print(f"warning: {w}", file=sys.stderr)
    for name, digest in manifest.files:
        print(f"{name} {digest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
