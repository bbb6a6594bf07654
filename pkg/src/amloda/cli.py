"""Command line front end: ``amloda {train,sweep,compare,bill,synth,gradcheck}``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiment
from .billing import TariffError
from .data import DataError
from .nn import NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("amloda")

COMMANDS = {
    "train": "train the occupancy attack and write a checkpoint",
    "sweep": "attack accuracy/MCC/AUC across epsilon values",
    "compare": "AMLODA against Gaussian noise at matched distortion",
    "bill": "billing invariance of perturbed traces under tariff files",
    "synth": "write the synthetic household trace",
    "gradcheck": "finite-difference check of the LSTM gradients",
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _epsilon_list(text: str):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated number list: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty epsilon list")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="amloda", description="Occupancy-detection attack and oblivious-data defense.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text,
                           epilog="Any config field can also be set with --dotted.name VALUE (JSON value).")
        p.add_argument("--config", metavar="PATH", help="JSON experiment configuration")
        p.add_argument("--seed", type=int, help="global seed (training and gradcheck)")
        p.add_argument("--epsilon", type=_epsilon_list, metavar="LIST", help="comma-separated epsilon values")
        p.add_argument("--sigma2", type=float, metavar="X", help="explicit Gaussian variance in W^2")
        p.add_argument("--tariff", action="append", metavar="PATH", help="tariff JSON (repeatable)")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--jobs", type=int, metavar="N", help="parallel workers for sweep rows")
        p.add_argument("--use-true-labels", action="store_true", default=None,
                       help="sign the noise with ground-truth labels instead of predictions")
        p.add_argument("--pad-zero", action="store_true", default=None,
                       help="zero-fill a trailing partial billing frame")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def dotted_overrides(extra) -> dict:
    """``--a.b VALUE`` / ``--a.b=VALUE`` pairs left over by argparse."""
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise _UsageError(f"unexpected argument {tok!r}")
        if "=" in tok:
            key, value = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise _UsageError(f"{tok} needs a value")
            key, value = tok[2:], extra[i + 1]
            i += 2
        out[key.replace("-", "_")] = _parse_value(value)
    return out


def resolve_config(args, extra) -> dict:
    overrides = dotted_overrides(extra)
    flags = {
        "seed": args.seed,
        "perturb.epsilon": args.epsilon,
        "gaussian.sigma2": args.sigma2,
        "tariffs": args.tariff,
        "out": args.out,
        "jobs": args.jobs,
        "perturb.use_true_labels": args.use_true_labels,
        "pad_zero": args.pad_zero,
    }
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return experiment.load_config(args.config, overrides)


def _fmt(x):
    return "n/a" if x is None else f"{x:.4f}"


def run(args, cfg) -> int:
    cmd = args.command
    if cmd == "train":
        res = experiment.cmd_train(cfg)
        print(res["report"].table("test split"))
        print(f"checkpoint: {experiment.checkpoint_path(cfg)}")
    elif cmd == "sweep":
        res = experiment.cmd_sweep(cfg)
        print("epsilon      accuracy  mcc      auc")
        for eps, rep in zip(res["epsilons"], res["reports"]):
            print(f"{eps:<12g} {_fmt(rep.accuracy):<9} {_fmt(rep.mcc):<8} {_fmt(rep.auc)}")
    elif cmd == "compare":
        doc = experiment.cmd_compare(cfg)
        am, ga = doc["amloda"], doc["gaussian"]
        print(f"amloda   eps={am['epsilon']:g}  auc={_fmt(am['metrics']['auc'])}  "
              f"total_delta_w={am['constraints']['total_delta_w']!r}")
        print(f"gaussian sigma2={ga['sigma2']:.6g}  median auc={_fmt(ga['median_auc'])}  "
              f"total_delta_w={[r['total_delta_w'] for r in ga['runs']]}")
    elif cmd == "bill":
        res = experiment.cmd_bill(cfg)
        for row in res["rows"]:
            print(f"{row['tariff']}  {row['trace']}  delta={row['delta']!r}  invariant={row['invariant']}")
    elif cmd == "synth":
        res = experiment.cmd_synth(cfg)
        print(f"wrote {res['samples']} samples ({res['occupied']} occupied)")
    elif cmd == "gradcheck":
        doc = experiment.cmd_gradcheck(cfg)
        print(f"max relative error {doc['max_rel_error']:.3e} over {len(doc['models'])} models")
        if not doc["passed"]:
            print(f"gradient check failed (tolerance {doc['tolerance']})", file=sys.stderr)
            return EXIT_NUMERIC
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        cfg = resolve_config(args, extra)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (experiment.ConfigError, TariffError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run(args, cfg)
    except (experiment.ConfigError, TariffError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
