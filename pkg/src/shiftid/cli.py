"""Command-line front end.

Three subcommands: ``detect`` runs the combined two-sample check and says
shift / no shift, ``identify`` additionally attributes a detected shift to
prevalence, covariate, or mixed causes, and ``simulate`` runs the synthetic
evaluation harness on a spec file.  Machine-readable output goes to stdout
(or --out); everything human-oriented goes to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import RunConfig
from .data import load_bundle
from .detectors import SHIFT, duo_detect
from .errors import ShiftIdError
from .identifier import (REPORT_VERSION, detection_to_dict, identify_shift,
                         report_to_json)
from .simulator import (evaluate, list_bundled_specs, load_bundled_spec,
                        load_sim_spec, rate_table_to_csv, rate_table_to_json)

log = logging.getLogger("shiftid")

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_SHIFT = 10
EXIT_PREVALENCE = 11
EXIT_COVARIATE = 12
EXIT_MIXED = 13

_VERDICT_EXIT_CODES = {
    "no_shift": EXIT_OK,
    "prevalence": EXIT_PREVALENCE,
    "covariate": EXIT_COVARIATE,
    "mixed": EXIT_MIXED,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, default=0.05,
                        help="significance level (default 0.05)")
    parser.add_argument("--pca-k", type=int, default=32,
                        help="number of principal components (default 32)")
    parser.add_argument("--permutations", type=int, default=1000,
                        help="permutation count for the kernel test")
    parser.add_argument("--ref-size", type=int, default=2000,
                        help="resampled reference size cap for stage two")
    parser.add_argument("--no-calibrate", action="store_true",
                        help="skip temperature calibration of the outputs")
    parser.add_argument("--seed", type=int, default=0,
                        help="master seed for all randomized steps")
    parser.add_argument("--out", default=None,
                        help="write machine output here instead of stdout")


def _add_bundle_flags(parser: argparse.ArgumentParser,
                      labels_required: bool) -> None:
    parser.add_argument("--ref-features", required=True,
                        help="reference features (CSV or SHID binary)")
    parser.add_argument("--ref-outputs", required=True,
                        help="reference softmax outputs (CSV or SHID binary)")
    parser.add_argument("--ref-labels", required=labels_required,
                        default=None, help="reference labels CSV")
    parser.add_argument("--ref-groups", default=None,
                        help="reference group ids CSV")
    parser.add_argument("--test-features", required=True)
    parser.add_argument("--test-outputs", required=True)
    parser.add_argument("--test-groups", default=None)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        alpha=args.alpha,
        pca_k=args.pca_k,
        permutations=args.permutations,
        ref_size=args.ref_size,
        calibrate=not args.no_calibrate,
        seed=args.seed,
        output_path=args.out,
    )


def _load_bundles(args: argparse.Namespace):
    ref = load_bundle(args.ref_features, args.ref_outputs,
                      labels_path=args.ref_labels,
                      groups_path=args.ref_groups, name="reference")
    test = load_bundle(args.test_features, args.test_outputs,
                       groups_path=args.test_groups, name="test")
    log.info("loaded reference n=%d test n=%d dim=%d classes=%d",
             ref.features.n, test.features.n,
             ref.features.dim, ref.outputs.num_classes)
    return ref, test


def _emit(text: str, out_path) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_detect(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    ref, test = _load_bundles(args)
    outcome = duo_detect(ref, test, config)
    payload = {"version": REPORT_VERSION}
    payload.update(detection_to_dict(outcome))
    _emit(json.dumps(payload, sort_keys=True, indent=2) + "\n", config.output_path)
    log.info("combined decision: %s", outcome.combined_decision)
    return EXIT_SHIFT if outcome.combined_decision == SHIFT else EXIT_OK


def cmd_identify(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    ref, test = _load_bundles(args)
    report = identify_shift(ref, test, config)
    _emit(report_to_json(report) + "\n", config.output_path)
    log.info("verdict: %s", report.verdict)
    return _VERDICT_EXIT_CODES[report.verdict]


def _resolve_spec(spec_arg: str):
    if os.path.exists(spec_arg):
        return load_sim_spec(spec_arg)
    bundled = list_bundled_specs()
    if spec_arg in bundled:
        return load_bundled_spec(spec_arg)
    raise ShiftIdError(
        f"no spec file {spec_arg!r}; bundled specs: {', '.join(bundled)}")


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    spec = _resolve_spec(args.spec)
    log.info("running %d trials of spec %r (truth %s)",
             args.trials, spec.name, spec.truth)
    table = evaluate(spec, config, trials=args.trials, seed=config.seed)

    for row in table.rows:
        log.info("%-24s %3d/%3d  rate %.3f  [%.3f, %.3f]", row.metric,
                 row.count, row.trials, row.rate, row.wilson_lo, row.wilson_hi)

    if config.output_path:
        base = config.output_path
        for suffix in (".json", ".csv"):
            if base.endswith(suffix):
                base = base[:-len(suffix)]
        with open(base + ".json", "w", encoding="utf-8", newline="") as fh:
            fh.write(rate_table_to_json(table))
        with open(base + ".csv", "w", encoding="utf-8", newline="") as fh:
            fh.write(rate_table_to_csv(table))
        log.info("wrote %s.json and %s.csv", base, base)
    elif args.format == "csv":
        sys.stdout.write(rate_table_to_csv(table))
    else:
        sys.stdout.write(rate_table_to_json(table))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftid",
        description="Detect dataset shift and identify its root cause.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_detect = sub.add_parser(
        "detect", help="two-sample shift detection on a reference/test pair")
    _add_bundle_flags(p_detect, labels_required=False)
    _add_config_flags(p_detect)
    p_detect.set_defaults(func=cmd_detect)

    p_identify = sub.add_parser(
        "identify",
        help="detect and attribute shift to prevalence/covariate/mixed causes")
    _add_bundle_flags(p_identify, labels_required=True)
    _add_config_flags(p_identify)
    p_identify.set_defaults(func=cmd_identify)

    p_sim = sub.add_parser(
        "simulate", help="run the synthetic evaluation harness on a spec")
    p_sim.add_argument("spec",
                       help="spec file (TOML or JSON) or bundled spec name")
    p_sim.add_argument("--trials", type=int, default=200)
    p_sim.add_argument("--format", choices=("json", "csv"), default="json",
                       help="stdout format when --out is not given")
    _add_config_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ShiftIdError as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
