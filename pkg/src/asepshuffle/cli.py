"""Command line entry point.

``asepshuffle run <config>``         run one experiment, print its summary
``asepshuffle summarize <dir>``      summarize every complete run under dir
``asepshuffle oracle <kind> k=v ...`` exact quantities of a small chain

Exit codes: 0 when every verdict passes, 1 when any fails, 2 on usage,
config or schema errors.  The output root of ``run`` is overridden by the
``ASEPSHUFFLE_OUTPUT_ROOT`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .configs import ParameterError, StateError, ZConfig, canonical_states
from .harness import (
    ConfigError,
    SchemaError,
    all_pass,
    format_table,
    parse_config,
    run_experiment,
    summarize,
)
from .oracle import (
    build_generator,
    exact_mixing_time,
    spectral_gap,
    stationary_distribution,
    z_expected_hitting,
)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

ORACLE_KINDS = ("cards", "cards_discrete", "metropolis", "exclusion", "exclusion_discrete", "z_hitting")


def _oracle_params(items: list[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise ParameterError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _z_start(raw: str) -> ZConfig:
    # I_n names a canonical state; otherwise a comma list of discrepancy sites
    if raw.startswith("I_"):
        return canonical_states("I_N", int(raw[2:]))
    return ZConfig(tuple(sorted(int(x) for x in raw.split(",") if x.strip())))


def oracle_report(kind: str, params: dict) -> dict:
    """Exact quantities for the chain ``kind`` as a JSON-ready dict."""
    if kind not in ORACLE_KINDS:
        raise ParameterError(f"unknown oracle kind {kind!r}; choose from {', '.join(ORACLE_KINDS)}")
    p = float(Fraction(params.get("p", "")) if params.get("p") else math.nan)
    if math.isnan(p):
        raise ParameterError("missing p")
    if kind == "z_hitting":
        start = _z_start(params.get("start", "I_1"))
        sol = z_expected_hitting(start, p)
        return {"kind": kind, "p": p, "start": sorted(start.discrepancies),
                "expected_hitting": sol.value, "boundary_prob": sol.boundary_prob}
    args = {"N": int(params["N"]), "p": p}
    if kind.startswith("exclusion"):
        args["k"] = int(params["k"])
    space, gen = build_generator(kind, **args)
    pi = stationary_distribution(gen, space)
    labels = ["".join(map(str, getattr(s, "bits", s))) for s in space.states]
    out = {"kind": kind, **args, "states": labels, "stationary": pi.tolist(),
           "tau1": exact_mixing_time(gen)}
    if not gen.discrete:
        out["spectral_gap"] = spectral_gap(gen, pi)
    return out


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="asepshuffle", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config", type=Path)
    r.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
    s = sub.add_parser("summarize", help="summarize result directories")
    s.add_argument("dir", type=Path)
    o = sub.add_parser("oracle", help="exact quantities of a small chain")
    o.add_argument("kind")
    o.add_argument("params", nargs="*", help="key=value pairs, e.g. N=3 p=2/3")
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS

    try:
        if args.cmd == "run":
            cfg = parse_config(args.config.read_text(encoding="utf-8"))
            _, rows = run_experiment(cfg, args.out)
        elif args.cmd == "summarize":
            rows = summarize(args.dir)
        else:
            print(json.dumps(oracle_report(args.kind, _oracle_params(args.params)), indent=1,
                             default=lambda x: x.item() if isinstance(x, np.generic) else str(x)))
            return EXIT_PASS
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, ParameterError, StateError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if rows:
        print(format_table(rows))
    return EXIT_PASS if all_pass(rows) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
