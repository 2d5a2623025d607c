"""Command-line entry point.

Exit codes: 0 when every declared check passes, 1 when a check fails,
2 for configuration or input errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from .config import ConfigError, resolve_config
from .errors import ContractViolation, InvalidModelError, UnsupportedFeatureError
from .experiments import RUNNERS, Outcome

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return "%.12e" % v
    return str(v)


def write_csv(path: Path, outcome: Outcome, command: str, config: dict, timestamp: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# command: {command}\n")
        fh.write(f"# config: {json.dumps(config, sort_keys=True, separators=(',', ':'))}\n")
        fh.write(f"# timestamp: {timestamp}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(outcome.columns)
        for row in outcome.rows:
            w.writerow([_fmt(v) for v in row])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="afqmc-dilation", description="Stochastic imaginary-time projection experiments.")
    p.add_argument("command", choices=sorted(RUNNERS))
    p.add_argument("--config", help="JSON or TOML experiment config")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for ensemble commands")
    p.add_argument("--out", help="output directory (overrides output.path)")
    p.add_argument("--dump-qasm", action="store_true", help="write QASM and sidecar files (circuit-emulate)")
    p.add_argument("--timestamp", help="fixed timestamp for the CSV header")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides: dict = {}
    if args.seed is not None:
        overrides["ensemble"] = {"seed": args.seed}
    if args.out is not None:
        overrides["output"] = {"path": args.out}
    try:
        cfg = resolve_config(args.config, overrides)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        out_dir = Path(cfg.output.path)
        runner = RUNNERS[args.command]
        kwargs = {}
        if args.command in ("magnus-compare", "segment-run"):
            kwargs["jobs"] = args.jobs
        if args.command == "circuit-emulate" and args.dump_qasm:
            kwargs["dump_dir"] = out_dir / "qasm"
            kwargs["dump_dir"].mkdir(parents=True, exist_ok=True)
        outcome = runner(cfg, **kwargs)
    except (ConfigError, ContractViolation, InvalidModelError, UnsupportedFeatureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    stamp = args.timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
    target = out_dir / f"{args.command.replace('-', '_')}.csv"
    write_csv(target, outcome, args.command, cfg.model_dump(mode="json"), stamp)
    for c in outcome.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    print(f"wrote {target}")
    return EXIT_OK if outcome.passed else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
