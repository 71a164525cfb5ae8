"""Command-line entry point: gen-data, train, aph, evaluate, suite."""

import argparse
import sys

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import (
    SUITES,
    cmd_aph,
    cmd_evaluate,
    cmd_gen_data,
    cmd_suite,
    cmd_train,
    resolve_output_dir,
)


def _parse_seeds(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"seeds must be comma-separated integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("need at least one seed")
    return seeds


def _add_common(p):
    p.add_argument("--config", metavar="PATH",
                   help="JSON config file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, metavar="INT",
                   help="override the config's root seed")
    p.add_argument("--out", metavar="DIR",
                   help="output directory (default: config output_dir, then "
                        "$FEDCAL_OUTPUT_ROOT/run-<hash>)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fedcal",
        description="Desk-scale federated-learning reliability simulator: "
                    "train, miscalibrate, remedy, measure.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write dataset, partition, and OOD files")
    _add_common(p)

    p = sub.add_parser("train", help="run the federation over existing partitions")
    _add_common(p)
    p.add_argument("--resume", action="store_true",
                   help="continue from the checkpoint in the output directory")

    p = sub.add_parser("aph", help="build per-client head ensembles from a checkpoint")
    _add_common(p)

    p = sub.add_parser("evaluate", help="emit calibration and OOD entropy reports")
    _add_common(p)
    p.add_argument("--ensembles", action="store_true",
                   help="evaluate the per-client ensembles instead of the "
                        "global model")

    p = sub.add_parser("suite", help="run a named comparison suite over seeds")
    p.add_argument("name", choices=SUITES)
    _add_common(p)
    p.add_argument("--seeds", type=_parse_seeds, default=[0, 1, 2, 3, 4],
                   metavar="S0,S1,...", help="comma-separated seed list "
                   "(default 0,1,2,3,4)")
    return parser


def _load(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        return load_config(args.config, overrides)
    return ExperimentConfig.from_dict(overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"fedcal: {e}", file=sys.stderr)
        return 2
    out_dir = resolve_output_dir(cfg, args.out)
    try:
        if args.command == "gen-data":
            artifacts = cmd_gen_data(cfg, out_dir)
            print(f"wrote {len(artifacts)} files to {out_dir}")
        elif args.command == "train":
            result = cmd_train(cfg, out_dir, resume=args.resume)
            lg = result.logs[-1]
            print(f"trained {result.rounds_completed} rounds; final "
                  f"acc={lg.accuracy:.4f} f_ece={lg.f_ece:.4f} nll={lg.nll:.4f}")
        elif args.command == "aph":
            artifacts = cmd_aph(cfg, out_dir)
            print(f"wrote {len(artifacts)} ensembles to {out_dir}")
        elif args.command == "evaluate":
            report = cmd_evaluate(cfg, out_dir, use_ensembles=args.ensembles)
            what = "ensemble" if args.ensembles else "model"
            print(f"{what}: acc={report.accuracy:.4f} f_ece={report.f_ece:.4f} "
                  f"nll={report.nll:.4f}")
        elif args.command == "suite":
            result = cmd_suite(cfg, args.name, args.seeds, out_dir)
            status = "PASS" if result.passed else "FAIL"
            print(f"{args.name}: {status} ({result.notes})")
            return 0 if result.passed else 1
    except (ConfigError, ValueError, FileNotFoundError, RuntimeError) as e:
        print(f"fedcal: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
