"""Command-line experiment runner.

Every subcommand writes into ``--out``:

* ``result.json``: subcommand, seed, fully resolved config, summary, checks;
* one ``<table>.csv`` per result table;
* ``plotdata/<name>.dat``: whitespace-separated columns with a ``#`` header.

Nothing time-dependent is written, so identical config and seed give
bit-identical files.

Exit codes: 0 success, 1 invalid config, 2 memory budget exceeded,
3 property check failed, 4 empty result.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from semictl.config import BOXES, DEFAULTS, INT_LISTS, SUBCOMMANDS, ConfigError, field_type, resolve
from semictl.experiments import Result, run_experiment
from semictl.hum import CGStagnation, DualityBroken
from semictl.tree import BudgetExceeded

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_CONFIG", "EXIT_BUDGET", "EXIT_PROPERTY", "EXIT_EMPTY"]

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_PROPERTY, EXIT_EMPTY = 0, 1, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semictl", description="Semi-discrete stochastic parabolic control experiments.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, allow_abbrev=False, help=f"run the {name} experiment")
        p.add_argument("--config", type=Path, help="JSON file with field overrides")
        p.add_argument("--out", type=Path, default=Path("results") / name, help="output directory")
        p.add_argument("--seed", type=int, help="64-bit seed for all randomness (default 0)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for independent cells")
        group = p.add_argument_group("overrides")
        for key, default in DEFAULTS[name].items():
            if key == "seed":
                continue
            kind = field_type(name, key)
            if key in BOXES:
                group.add_argument(f"--{key}", type=float, nargs="+", default=None, metavar="X",
                                   help="box corners: lower coordinates then upper coordinates")
            elif kind is list:
                group.add_argument(f"--{key}", type=int if key in INT_LISTS else float, nargs="*", default=None)
            else:
                group.add_argument(f"--{key}", type=kind, default=None)
    return parser


def _plain(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    return value


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_bundle(out: Path, sub: str, cfg: dict, result: Result):
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "subcommand": sub,
        "seed": cfg["seed"],
        "config": cfg,
        "summary": result.summary,
        "checks": result.checks,
        "passed": result.passed,
        "empty": result.empty,
    }
    (out / "result.json").write_text(json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n")
    for name, (header, rows) in result.tables.items():
        with open(out / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
    if result.plots:
        (out / "plotdata").mkdir(exist_ok=True)
        for name, (header, rows) in result.plots.items():
            lines = ["# " + " ".join(header)] + [" ".join(_cell(v) for v in row) for row in rows]
            (out / "plotdata" / f"{name}.dat").write_text("\n".join(lines) + "\n")


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    sub = args.subcommand
    overrides = {k: v for k, v in vars(args).items() if k in DEFAULTS[sub] and v is not None}
    for key in BOXES & overrides.keys():
        flat = overrides[key]
        half = len(flat) // 2
        # an odd count is passed through as a malformed box and rejected by the config check
        overrides[key] = [flat[:half], flat[half:]] if len(flat) % 2 == 0 else [flat]
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        if not 0 <= overrides.get("seed", 0) < 2**64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        if args.threads < 1:
            raise ConfigError("threads", "must be at least 1")
        text = None
        if args.config is not None:
            try:
                text = args.config.read_text()
            except OSError as exc:
                raise ConfigError(None, f"cannot read config {args.config}: {exc.strerror}") from None
        cfg = resolve(sub, text, overrides)
        result = run_experiment(sub, cfg, args.threads)
    except ConfigError as exc:
        print(f"semictl {sub}: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as exc:
        print(f"semictl {sub}: memory budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (CGStagnation, DualityBroken) as exc:
        print(f"semictl {sub}: property failure: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    write_bundle(args.out, sub, cfg, result)
    if result.empty:
        print(f"{sub}: empty result (no samples)")
        return EXIT_EMPTY
    for name, ok in result.checks.items():
        print(f"{sub}: {name}: {'PASS' if ok else 'FAIL'}")
    print(f"{sub}: results in {args.out}")
    return EXIT_OK if result.passed else EXIT_PROPERTY


def main(argv: Optional[Sequence[str]] = None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
