"""Command line entry point: ``netsynth <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from netsynth.pipeline import (STAGES, ConfigError, Pipeline, StageError, bundled_config,
                               eval_network, format_summary, load_config, load_report, recount)

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

# subcommand -> last stage it runs
_UNTIL = {"pool": "pool", "select": "predictor", "search": "global", "local": "local", "run": "final"}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netsynth", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="TOML/JSON run config (default: bundled synthetic)")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--run-dir", type=Path, help="run directory (else $NETSYNTH_RUN_DIR, else runs/<id>)")
        sp.add_argument("--force-stage", action="append", default=[], choices=STAGES,
                        help="re-run this stage and every later one")
        sp.add_argument("--workers", type=int, default=1, help="parallel trainer processes")

    helps = {"pool": "generate the Sobol gene pool",
             "select": "train sampled genes and fit the accuracy predictor",
             "search": "evolutionary search on the predictor, then train the winner (GS)",
             "local": "grow-and-prune refinement of the GS network (GS+LS)",
             "run": "every stage through the final report"}
    for name, text in helps.items():
        common(sub.add_parser(name, help=text))
    rp = sub.add_parser("report", help="print the report of a finished run")
    common(rp)
    rp.add_argument("--json", action="store_true", help="print report.json instead of the table")
    ep = sub.add_parser("eval", help="re-score saved GS / GS+LS networks and recount parameters")
    common(ep)
    ep.add_argument("--which", choices=("gs", "gsls"), default="gsls")
    ep.add_argument("--split", choices=("train", "validation"), default="validation")
    ap = sub.add_parser("accept", help="run the acceptance criteria")
    ap.add_argument("--profile", choices=("fast", "full"), default="fast")
    ap.add_argument("--report", type=Path, help="write the per-criterion results as JSON")
    ap.add_argument("--only", type=int, action="append", help="run only these criterion ids")
    return p


def _pipeline(args) -> Pipeline:
    cfg = load_config(args.config or bundled_config(), args.seed)
    return Pipeline(cfg, args.run_dir, args.workers, args.force_stage)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "accept":
            from netsynth.bench import run_acceptance

            results = run_acceptance(args.profile, only=args.only)
            for r in results:
                print(r.line())
            if args.report:
                args.report.write_text(json.dumps([r.to_dict() for r in results], indent=2) + "\n",
                                       encoding="utf-8")
            return EXIT_OK if all(r.status != "fail" for r in results) else EXIT_STAGE
        pipe = _pipeline(args)
        if args.command in _UNTIL:
            statuses = pipe.run(_UNTIL[args.command])
            print(" ".join(f"{s}={statuses[s]}" for s in STAGES))
            if args.command == "run":
                print(format_summary(load_report(pipe.run_dir)), end="")
            print(f"run directory: {pipe.run_dir}")
        elif args.command == "report":
            report = load_report(pipe.run_dir)
            print(json.dumps(report, indent=2, sort_keys=True) if args.json else format_summary(report), end="\n" if args.json else "")
        elif args.command == "eval":
            res = eval_network(pipe, args.which, args.split)
            res["recount"] = recount(pipe.run_dir).get(args.which)
            print(json.dumps(res, sort_keys=True))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
