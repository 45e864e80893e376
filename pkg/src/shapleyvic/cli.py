"""Command line entry point: ``shapleyvic <stage> ...``.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from shapleyvic import pipeline
from shapleyvic.config import PipelineConfig
from shapleyvic.data import Schema, load_csv
from shapleyvic.errors import NumericalError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3

_NEEDS_DATA = {"run", "fit", "sample", "explain", "report"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapleyvic", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "run": "full pipeline: fit, sample, explain, pool, rank, report",
        "fit": "split the data and train the optimal model",
        "sample": "sample nearly optimal models around the optimum",
        "explain": "SHAP values and per-model importance for every ensemble member",
        "pool": "random-effects pooling into ShapleyVIC values",
        "rank": "per-model significance ranks and the ensemble ranking",
        "report": "bar, violin, rank-comparison and parsimony outputs",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        needs = name in _NEEDS_DATA
        p.add_argument("--data", required=needs, help="input CSV")
        p.add_argument("--schema", required=needs, help="schema JSON naming the outcome and features")
        p.add_argument("--config", help="pipeline config JSON (defaults apply when omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--epsilon", type=float, help="override the loss tolerance epsilon")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = PipelineConfig.load(args.config).with_overrides(seed=args.seed, epsilon=args.epsilon)
        ds = load_csv(args.data, Schema.load(args.schema)) if args.data else None
        if args.command in _NEEDS_DATA and ds is None:
            raise ValidationError("--data and --schema are required")
        cmd = args.command
        if cmd == "run":
            res = pipeline.run(ds, cfg, args.out)
            print(f"ShapleyVIC ranking: {', '.join(res.vic_order)}")
        elif cmd == "fit":
            pipeline.fit(ds, cfg, args.out)
        elif cmd == "sample":
            ens = pipeline.sample(ds, cfg, args.out)
            print(f"{len(ens)} models (reference loss {ens.reference_loss:.6g})")
        elif cmd == "explain":
            pipeline.explain(ds, cfg, args.out)
        elif cmd == "pool":
            pipeline.pool(args.out)
        elif cmd == "rank":
            pipeline.rank_stage(args.out)
        elif cmd == "report":
            pipeline.make_report(ds, cfg, args.out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
