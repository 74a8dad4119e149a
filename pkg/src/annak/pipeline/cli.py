"""Command line front end (``annak``)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import pandas as pd
from threadpoolctl import threadpool_limits

from .. import graphnet as gn, isccore as ic, synthlab as sl
from ..errors import AnnakError, ConfigError, ValidationFailure
from .analyses import run_behavioral, run_dyad_level, run_subject_level, write_csv, write_json, write_result
from .config import COVARIATE_SETS, AnalysisConfig, read_exclusions
from .validation import validate

logger = logging.getLogger("annak")

ANALYSES = {"subject-level": run_subject_level, "dyad-level": run_dyad_level, "behav": run_behavioral}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON analysis config; flags override it")
    p.add_argument("--edges", help="edge list CSV (nominator,nominee)")
    p.add_argument("--communities", help="CSV subject,community")
    p.add_argument("--exclusions", help="CSV kind,subject_a,subject_b")
    p.add_argument("--out", help="output directory")
    p.add_argument("--split", choices=[gn.MEDIAN_SPLIT, gn.EQUAL_GROUPS])
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _analysis(p: argparse.ArgumentParser):
    _common(p)
    p.add_argument("--timeseries", help="directory of per-subject time-series CSVs")
    p.add_argument("--manifest", help="run manifest CSV (default: <timeseries>/manifest.csv)")
    p.add_argument("--isc", help="precomputed long ISC table instead of time series")
    p.add_argument("--ratings", help="ratings CSV subject,item,enjoyment,interest")
    p.add_argument("--attributes", help="attributes CSV subject,age,gender,home_country,ethnicities")
    p.add_argument("--scope", choices=[ic.SCOPE_ALL, ic.SCOPE_INTRA])
    p.add_argument("--partial-run-policy", choices=[ic.POLICY_EXCLUDE, ic.POLICY_INTERSECT])
    p.add_argument("--covariates", choices=list(COVARIATE_SETS))
    p.add_argument("--stage", choices=list(ic.STAGES))
    p.add_argument("--alpha", type=float, help="FDR level for the reported family")
    p.add_argument("--one-sided", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="annak", description="Centrality and neural similarity analyses")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("network", help="in-degree, median split and dyad table")
    _common(p)
    p.add_argument("--subjects", help="optional CSV with a subject column restricting the sample")

    p = sub.add_parser("isc", help="dyad-level ISC table from time series")
    _common(p)
    p.add_argument("--timeseries", required=True)
    p.add_argument("--manifest")
    p.add_argument("--partial-run-policy", choices=[ic.POLICY_EXCLUDE, ic.POLICY_INTERSECT], default=ic.POLICY_EXCLUDE)
    p.add_argument("--stage", choices=list(ic.STAGES), default=ic.RAW_R)

    for name, text in (
        ("subject-level", "mean ISC vs centrality per region"),
        ("dyad-level", "crossed-random-effects models per region"),
        ("behav", "preference similarity vs centrality"),
    ):
        _analysis(sub.add_parser(name, help=text))

    p = sub.add_parser("synth", help="write a synthetic study")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subjects", type=int, default=63)
    p.add_argument("--regions", type=int, default=20)
    p.add_argument("--planted", type=int, default=5)
    p.add_argument("--timepoints", type=int, default=1000, help="time points per run")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--alpha-min", type=float, default=0.3)
    p.add_argument("--alpha-max", type=float, default=0.8)
    p.add_argument("--null-alpha", type=float, default=0.55)
    p.add_argument("--variant", choices=[sl.ANNAK, sl.NEAREST_NEIGHBOR], default=sl.ANNAK)
    p.add_argument("--communities", type=int, default=1)
    p.add_argument("--partial-runs", action="store_true", help="drop one run from two Low subjects")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("validate", help="run the oracle self-checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config_from_args(args) -> AnalysisConfig:
    cfg = AnalysisConfig.from_json(args.config) if args.config else AnalysisConfig()
    keys = [
        "edges", "communities", "timeseries", "manifest", "isc", "ratings", "attributes", "exclusions",
        "out", "scope", "split", "partial_run_policy", "stage", "covariates", "alpha", "one_sided", "seed",
    ]
    cfg = cfg.updated(**{k: getattr(args, k, None) for k in keys})
    if cfg.timeseries and not cfg.manifest:
        cfg.manifest = str(Path(cfg.timeseries) / "manifest.csv")
    return cfg


def cmd_network(args) -> int:
    if not args.edges:
        raise ConfigError("--edges is required")
    graph = gn.load_graph(args.edges, args.communities)
    subjects = list(graph.nodes)
    if args.subjects:
        subjects = pd.read_csv(args.subjects, dtype=str)["subject"].tolist()
    excl = read_exclusions(args.exclusions)
    subjects = [s for s in subjects if s not in excl.subjects]
    profile = gn.centrality_profile(graph, subjects, args.split or gn.MEDIAN_SPLIT)
    table = gn.dyad_centrality_table(profile, profile.subjects, excl.dyads)
    table = gn.annotate_dyads(table, graph)
    out = Path(args.out or "network")
    out.mkdir(parents=True, exist_ok=True)
    write_csv(profile.to_frame(), out / "centrality.csv")
    write_csv(gn.dyad_output_frame(table), out / "dyads.csv")
    write_json(
        {
            "n_subjects": len(profile.subjects),
            "median_in_degree": profile.threshold,
            "groups": profile.counts(),
            "split_excluded": sorted(profile.excluded),
            "n_dyads": int(len(table)),
            "category_counts": gn.category_counts(table),
        },
        out / "network_summary.json",
    )
    return 0


def cmd_isc(args) -> int:
    manifest = args.manifest or str(Path(args.timeseries) / "manifest.csv")
    excl = read_exclusions(args.exclusions)
    panel = ic.read_panel(args.timeseries, manifest)
    subjects = [s for s in panel.subjects if s not in excl.subjects]
    dyads = [d for d in ic.all_dyads(subjects) if frozenset(d) not in excl.dyads]
    with threadpool_limits(limits=1, user_api="blas"):
        table = ic.isc_table(panel.subset(subjects), dyads, args.partial_run_policy, args.threads)
    table = ic.to_stage(table, args.stage)
    out = Path(args.out or "isc")
    out.mkdir(parents=True, exist_ok=True)
    ic.write_isc_table(table, out / "isc.csv")
    return 0


def cmd_analysis(args) -> int:
    cfg = _config_from_args(args)
    result = ANALYSES[args.command](cfg, threads=args.threads)
    paths = write_result(result, result.tables["config"].out)
    logger.info("wrote %s", ", ".join(paths.values()))
    return 0


def cmd_synth(args) -> int:
    study = sl.generate_study(
        n_subjects=args.subjects,
        n_regions=args.regions,
        n_planted=args.planted,
        n_timepoints=args.timepoints,
        runs=[str(r + 1) for r in range(args.runs)],
        alpha_min=args.alpha_min,
        alpha_max=args.alpha_max,
        null_alpha=args.null_alpha,
        seed=args.seed,
        variant=args.variant,
        n_communities=args.communities,
        partial_runs=args.partial_runs,
    )
    paths = sl.write_study(study, args.out, seed=args.seed)
    if args.partial_runs:
        logger.info("partial runs planted for %s", sorted(study.spec.missing_runs))
    logger.info("wrote %s", args.out)
    return 0 if paths else 1


def cmd_validate(args) -> int:
    report = validate(args.seed)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    if not report["passed"]:
        failed = [k for k, v in report["checks"].items() if not v["passed"]]
        raise ValidationFailure(f"validation failed: {failed}")
    return 0


COMMANDS = {
    "network": cmd_network,
    "isc": cmd_isc,
    "subject-level": cmd_analysis,
    "dyad-level": cmd_analysis,
    "behav": cmd_analysis,
    "synth": cmd_synth,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "threads", 1) < 1:
        print("annak: error: --threads must be >= 1", file=sys.stderr)
        return ConfigError.exit_code
    try:
        return COMMANDS[args.command](args)
    except AnnakError as exc:
        print(f"annak: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
