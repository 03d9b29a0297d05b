"""Command line entry point.

    stripeq sweep    --config cfg.json --out results/
    stripeq count    --config cfg.json --out results/ --threads 4
    stripeq spectrum --config cfg.json --out results/ [--eps 0.05]
    stripeq solve    --config cfg.json --out results/ [--eps 0.05]

Exit status: 0 on success, 2 when an experiment assertion fails, 1 on any
operational error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from stripeq import forms
from stripeq.equilibria import find_all_equilibria
from stripeq.errors import StripeqError
from stripeq.spectral import linearized_spectrum
from stripeq.sweep import (
    SweepConfig,
    SweepReport,
    run_counting_experiment,
    run_lower_semicontinuity_sweep,
    write_report,
)

log = logging.getLogger("stripeq")

EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2


def _enumerate(config: SweepConfig, eps, with_spectrum: bool) -> SweepReport:
    disc = config.build().with_epsilon(eps)
    recs = find_all_equilibria(disc, config.start_fields(disc), config.solver, threads=config.threads)
    fields, records, rows = {}, {}, []
    for k, rec in enumerate(recs):
        label = f"solution_{k}"
        fields[label] = rec.u
        entry = rec.to_dict(f"fields/{label}.csv")
        margin = float("nan")
        if with_spectrum:
            spec = linearized_spectrum(disc, rec.u, m=config.spectrum_m)
            entry["spectrum"] = spec.to_dict()
            margin = spec.margin
        records[label] = entry
        rows.append({"eps": "limit" if eps is None else eps, "dist_h1": 0.0, "op_gap": 0.0,
                     "margin": margin, "iters": rec.iterations, "residual": rec.residual,
                     "mean": float(rec.u.mean())})
    failures = [] if recs else ["no equilibrium converged"]
    return SweepReport("spectrum" if with_spectrum else "solve", rows, ok=not failures,
                       failures=failures, fields=fields, records=records)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stripeq", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("sweep", "follow one limit equilibrium through the epsilon schedule"),
                        ("count", "enumerate and match equilibria at every epsilon"),
                        ("spectrum", "equilibria with their linearized spectra"),
                        ("solve", "equilibria at one epsilon (limit by default)")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        if name in ("spectrum", "solve"):
            p.add_argument("--eps", type=float, default=None, help="strip width; omit for the limit problem")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        doc = json.loads(args.config.read_text())
        if args.seed is not None:
            doc["seed"] = args.seed
        if args.threads is not None:
            doc["threads"] = args.threads
        config = SweepConfig.from_dict(doc)
        out = args.out or Path(config.out or "stripeq-out")
        if args.command == "sweep":
            report = run_lower_semicontinuity_sweep(config)
        elif args.command == "count":
            report = run_counting_experiment(config)
        else:
            report = _enumerate(config, args.eps, with_spectrum=args.command == "spectrum")
        mesh = config.build().mesh
        write_report(report, out, mesh)
    except (StripeqError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for line in report.failures:
        print(f"FAILED: {line}", file=sys.stderr)
    print(f"{args.command}: {len(report.rows)} rows written to {out}")
    return EXIT_OK if report.ok else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
