"""The named analyses: subject-level, dyad-level and behavioral models."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
import pandas as pd
from threadpoolctl import threadpool_limits

from .. import behav, graphnet as gn, isccore as ic
from ..errors import InputError
from ..statkit import (
    LMM,
    OLS,
    SPEARMAN,
    DesignSpec,
    apply_fdr,
    double_dyads,
    lmm_fit_crossed,
    ols_fit,
    planned_contrasts,
    region_sweep,
    stats_frame,
)
from ..statkit.design import build_predictors
from .config import (
    COV_DEMO_DISTANCE,
    COV_DEMOGRAPHICS,
    COV_FRIENDSHIP,
    COV_PREFERENCES,
    DEMOGRAPHIC_TERMS,
    FALLBACK_ALPHA,
    PREFERENCE_TERMS,
    AnalysisConfig,
    Exclusions,
    read_exclusions,
)

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"

CONTRASTS = (
    ("HighHigh-LowLow", {gn.HIGH_HIGH: 1.0, gn.LOW_LOW: -1.0}),
    ("HighHigh-LowHigh", {gn.HIGH_HIGH: 1.0, gn.LOW_HIGH: -1.0}),
    ("LowHigh-LowLow", {gn.LOW_HIGH: 1.0, gn.LOW_LOW: -1.0}),
)
GROUP_TERM = f"group[{gn.HIGH}]"

SUBJECT_GROUP, SUBJECT_SPEARMAN = "subject_group", "subject_spearman"
DYAD_CATEGORY, DYAD_MIN_DEGREE = "dyad_category", "dyad_log_min_in_degree"


def _group_spec(response: str, covariates=()) -> DesignSpec:
    return DesignSpec(
        response, ("group",), tuple(covariates), {"group": gn.LOW}, {"group": (gn.LOW, gn.HIGH)}
    )


def _category_spec(response: str, covariates=(), extra=()) -> DesignSpec:
    return DesignSpec(
        response,
        tuple(extra) + ("category",),
        tuple(covariates),
        {"category": gn.LOW_LOW},
        {"category": (gn.LOW_LOW, gn.LOW_HIGH, gn.HIGH_HIGH)},
    )


@dataclass
class StudyInputs:
    """In-memory inputs; any field left ``None`` is read from the config paths."""

    graph: gn.SocialGraph | None = None
    panel: ic.TimeSeriesPanel | None = None
    isc: ic.IscTable | None = None
    ratings: dict | None = None
    attributes: pd.DataFrame | None = None
    exclusions: Exclusions | None = None


@dataclass
class Study:
    graph: gn.SocialGraph
    profile: gn.CentralityProfile
    subjects: list
    table: ic.IscTable | None
    dyad_frame: pd.DataFrame
    ratings: dict
    attributes: pd.DataFrame | None
    n_partial_run_excluded: int = 0
    n_excluded_dyads: int = 0


@dataclass
class AnalysisResult:
    name: str
    stats: pd.DataFrame
    summary: dict
    tables: dict = field(default_factory=dict)

    def rows(self, model: str, term: str | None = None) -> pd.DataFrame:
        sel = self.stats["model"] == model
        if term is not None:
            sel &= self.stats["term"] == term
        return self.stats[sel]


# -- loading -----------------------------------------------------------------


def _load_graph(cfg: AnalysisConfig, inputs: StudyInputs) -> gn.SocialGraph:
    if inputs.graph is not None:
        return inputs.graph
    return gn.load_graph(cfg.edges, cfg.communities)


def _load_ratings(cfg: AnalysisConfig, inputs: StudyInputs) -> dict:
    if inputs.ratings is not None:
        return inputs.ratings
    return behav.read_ratings(cfg.ratings) if cfg.ratings else {}


def _load_attributes(cfg: AnalysisConfig, inputs: StudyInputs):
    if inputs.attributes is not None:
        return inputs.attributes
    return behav.read_attributes(cfg.attributes) if cfg.attributes else None


def _candidate_subjects(cfg, inputs, graph) -> list:
    if inputs.panel is not None:
        return list(inputs.panel.subjects)
    if inputs.isc is not None:
        return inputs.isc.subjects
    if cfg.manifest:
        return list(dict.fromkeys(ic.read_manifest(cfg.manifest)["subject"]))
    if cfg.isc:
        return ic.read_isc_table(cfg.isc).subjects
    return list(graph.nodes)


def load_study(cfg: AnalysisConfig, inputs: StudyInputs | None = None, threads: int = 1, with_isc: bool = True) -> Study:
    """Subjects, centrality split, scoped dyads, staged ISC and the dyad frame."""
    inputs = inputs or StudyInputs()
    graph = _load_graph(cfg, inputs)
    exclusions = inputs.exclusions if inputs.exclusions is not None else read_exclusions(cfg.exclusions)
    ratings = _load_ratings(cfg, inputs)
    attributes = _load_attributes(cfg, inputs)

    subjects = _candidate_subjects(cfg, inputs, graph)
    if not with_isc and ratings:
        rated = set.intersection(*(set(m.subjects) for m in ratings.values()))
        subjects = [s for s in subjects if s in rated]
    unknown = [s for s in subjects if s not in set(graph.nodes)]
    if unknown:
        raise InputError(f"subjects missing from the social graph: {unknown[:5]}")
    dropped = [s for s in subjects if s in exclusions.subjects]
    if dropped:
        logger.info("excluding %d subject(s): %s", len(dropped), dropped)
    subjects = [s for s in subjects if s not in exclusions.subjects]

    profile = gn.centrality_profile(graph, subjects, cfg.split)
    if profile.excluded:
        logger.info("equal-groups split drops %d subject(s) at the median", len(profile.excluded))
    subjects = [s for s in subjects if s in profile.group]

    dyads = [d for d in combinations(subjects, 2) if frozenset(d) not in exclusions.dyads]
    n_excluded_dyads = len(list(combinations(subjects, 2))) - len(dyads)
    mask = ic.scope_mask(dyads, graph.community, cfg.scope)
    dyads = [d for d, keep in zip(dyads, mask) if keep]

    table = None
    n_partial = 0
    if with_isc:
        table = _isc_for(cfg, inputs, subjects, dyads, threads)
        done = ~np.all(np.isnan(table.values), axis=0)
        n_partial = int((~done).sum())
        if n_partial:
            logger.info("%d dyad(s) dropped by the partial-run policy", n_partial)
            table = table.select_dyads(done)
        table = ic.to_stage(table, cfg.stage)
        dyads = table.dyads

    frame = dyad_frame(graph, profile, dyads, ratings, attributes)
    return Study(graph, profile, subjects, table, frame, ratings, attributes, n_partial, n_excluded_dyads)


def _isc_for(cfg, inputs, subjects, dyads, threads) -> ic.IscTable:
    if inputs.isc is not None or (inputs.panel is None and cfg.isc):
        table = inputs.isc if inputs.isc is not None else ic.read_isc_table(cfg.isc)
        index = table.dyad_index()
        missing = [d for d in dyads if frozenset(d) not in index]
        if missing:
            raise InputError(f"ISC table lacks {len(missing)} dyad(s), e.g. {missing[0]}")
        cols = [index[frozenset(d)] for d in dyads]
        return ic.IscTable(table.regions, dyads, table.values[:, cols], table.stage)
    panel = inputs.panel if inputs.panel is not None else ic.read_panel(cfg.timeseries, cfg.manifest, subjects)
    panel = panel.subset(subjects)
    return ic.isc_table(panel, dyads, cfg.partial_run_policy, threads)


def dyad_frame(graph, profile, dyads, ratings=None, attributes=None) -> pd.DataFrame:
    """Centrality category, social ties and similarity columns per dyad."""
    base = pd.DataFrame(
        [
            (a, b, gn.dyad_category(profile.group[a], profile.group[b]), min(profile.in_degree[a], profile.in_degree[b]))
            for a, b in dyads
        ],
        columns=["subject_a", "subject_b", "category", "min_in_degree"],
    )
    base["log_min_in_degree"] = np.log1p(base["min_in_degree"].to_numpy(dtype=float))
    frame = gn.annotate_dyads(base, graph)
    if attributes is not None:
        for col in behav.demographic_similarity(attributes, dyads):
            frame[col.name] = col.aligned(dyads)
    for kind, matrix in (ratings or {}).items():
        frame[f"{kind}_sim"] = behav.rating_similarity(matrix, dyads).aligned(dyads)
    return frame


def covariate_terms(covariates: str) -> tuple:
    return {
        COV_DEMOGRAPHICS: DEMOGRAPHIC_TERMS,
        COV_DEMO_DISTANCE: DEMOGRAPHIC_TERMS + ("social_distance",),
        COV_FRIENDSHIP: ("friendship",),
        COV_PREFERENCES: PREFERENCE_TERMS,
    }.get(covariates, ())


def _complete_rows(frame: pd.DataFrame, terms) -> np.ndarray:
    missing = [t for t in terms if t not in frame.columns]
    if missing:
        raise InputError(f"covariates unavailable: {missing}")
    ok = frame[list(terms)].notna().all(axis=1).to_numpy() if terms else np.ones(len(frame), dtype=bool)
    if not ok.all():
        logger.warning("dropping %d row(s) with missing covariates", int((~ok).sum()))
    return ok


# -- summaries ---------------------------------------------------------------


def summarize(stats: pd.DataFrame, alpha: float, failures: dict | None = None) -> dict:
    models = {}
    for (model, term), rows in stats.groupby(["model", "term"], sort=False):
        models.setdefault(model, {})[term] = {
            "n_tested": int(len(rows)),
            "significant": rows.loc[rows["p_fdr"] < alpha, "region"].tolist(),
            "significant_at_fallback": rows.loc[rows["p_fdr"] < FALLBACK_ALPHA, "region"].tolist(),
        }
    return {"alpha": alpha, "fallback_alpha": FALLBACK_ALPHA, "models": models, "failures": failures or {}}


def _study_summary(study: Study) -> dict:
    return {
        "n_subjects": len(study.subjects),
        "groups": study.profile.counts(),
        "median_in_degree": study.profile.threshold,
        "n_dyads": int(len(study.dyad_frame)),
        "category_counts": gn.category_counts(study.dyad_frame),
        "excluded_dyads": study.n_excluded_dyads,
        "partial_run_excluded_dyads": study.n_partial_run_excluded,
    }


# -- analyses ----------------------------------------------------------------


def _subject_covariates(study: Study, terms) -> pd.DataFrame:
    out = pd.DataFrame(index=pd.Index(study.subjects, name="subject"))
    if not terms:
        return out
    dyads = list(zip(study.dyad_frame["subject_a"], study.dyad_frame["subject_b"]))
    values = study.dyad_frame[list(terms)].to_numpy(dtype=float).T
    means = ic.subject_means(dyads, values, study.subjects)
    for term, row in zip(terms, means):
        out[term] = row
    return out


def run_subject_level(cfg: AnalysisConfig, inputs: StudyInputs | None = None, threads: int = 1) -> AnalysisResult:
    """Mean ISC per subject regressed on the binarized group (OLS) and
    rank-correlated with raw in-degree, one model per region."""
    cfg = cfg.resolve("subject", check_inputs=inputs is None)
    with threadpool_limits(limits=1, user_api="blas"):
        study = load_study(cfg, inputs, threads)
        means = ic.subject_mean_isc(study.table, study.subjects)
        terms = covariate_terms(cfg.covariates)
        design = study.profile.to_frame().set_index("subject").loc[study.subjects]
        design = design.join(_subject_covariates(study, terms)).reset_index()
        ok = _complete_rows(design, terms)
        design, means = design[ok].reset_index(drop=True), means[ok]

        spec = _group_spec("mean_isc", terms)
        build_predictors(design, spec)
        sweeps = [region_sweep(OLS, means, design, spec, cfg.alpha, threads, model=SUBJECT_GROUP)]
        if not terms:
            sweeps.append(
                region_sweep(SPEARMAN, means, design, None, cfg.alpha, threads, model=SUBJECT_SPEARMAN, predictor="in_degree")
            )
    stats = pd.concat([s.to_frame() for s in sweeps], ignore_index=True)
    failures = {f"{k}:{r}": v for s, k in zip(sweeps, (SUBJECT_GROUP, SUBJECT_SPEARMAN)) for r, v in s.failures.items()}
    summary = {"analysis": "subject-level", **_study_summary(study), **summarize(stats, cfg.alpha, failures)}
    means_out = means.copy()
    means_out.insert(0, "subject", design["subject"].to_numpy())
    return AnalysisResult("subject_level", stats, summary, {"subject_means": means_out, "config": cfg})


def run_dyad_level(cfg: AnalysisConfig, inputs: StudyInputs | None = None, threads: int = 1) -> AnalysisResult:
    """Crossed-random-effects models per region on the dyad frame."""
    cfg = cfg.resolve("dyad", check_inputs=inputs is None)
    with threadpool_limits(limits=1, user_api="blas"):
        study = load_study(cfg, inputs, threads)
        terms = covariate_terms(cfg.covariates)
        ok = _complete_rows(study.dyad_frame, terms)
        frame = study.dyad_frame[ok].reset_index(drop=True)
        responses = pd.DataFrame(study.table.values[:, ok].T, columns=study.table.regions)

        jobs = [
            (DYAD_CATEGORY, _category_spec("isc", terms), dict(contrasts=CONTRASTS, factor="category", report_terms=terms)),
            (
                DYAD_MIN_DEGREE,
                DesignSpec("isc", ("log_min_in_degree",), terms),
                dict(report_terms=("log_min_in_degree",) + terms),
            ),
        ]
        if cfg.covariates == COV_PREFERENCES:
            for term in PREFERENCE_TERMS:
                jobs.append((f"isc_on_{term}", DesignSpec("isc", (term,)), dict(report_terms=(term,))))
                jobs.append(
                    (
                        f"isc_on_{term}_ctrl_category",
                        _category_spec("isc", extra=(term,)),
                        dict(report_terms=(term,)),
                    )
                )
        sweeps = []
        for model, spec, kw in jobs:
            build_predictors(frame, spec)
            sweeps.append(
                region_sweep(LMM, responses, frame, spec, cfg.alpha, threads, model=model, one_sided=cfg.one_sided, **kw)
            )
    stats = pd.concat([s.to_frame() for s in sweeps], ignore_index=True)
    failures = {f"{job[0]}:{r}": v for s, job in zip(sweeps, jobs) for r, v in s.failures.items()}
    summary = {"analysis": "dyad-level", **_study_summary(study), **summarize(stats, cfg.alpha, failures)}
    return AnalysisResult("dyad_level", stats, summary, {"dyads": study.dyad_frame, "config": cfg})


def run_behavioral(cfg: AnalysisConfig, inputs: StudyInputs | None = None, threads: int = 1) -> AnalysisResult:
    """Preference similarity against centrality, subject- and dyad-level.

    Model errors (for instance a constant similarity column) propagate.
    """
    cfg = cfg.resolve("behav", check_inputs=inputs is None)
    with threadpool_limits(limits=1, user_api="blas"):
        study = load_study(cfg, inputs, threads, with_isc=False)
        if not study.ratings:
            raise InputError("no ratings available")
        rows = []
        profile = study.profile.to_frame().set_index("subject").loc[study.subjects].reset_index()
        dyads = list(zip(study.dyad_frame["subject_a"], study.dyad_frame["subject_b"]))
        doubled = double_dyads(study.dyad_frame)
        for kind in study.ratings:
            col = f"{kind}_sim"
            means = ic.subject_means(dyads, study.dyad_frame[col].to_numpy(dtype=float)[None, :], study.subjects)[0]
            subj = profile.assign(mean_sim=means)
            rows.extend(ols_fit(subj, _group_spec("mean_sim"), kind, "behav_subject_group"))
            fit = lmm_fit_crossed(doubled, _category_spec(col))
            rows.extend(planned_contrasts(fit, "category", CONTRASTS, kind, "behav_dyad_category", cfg.one_sided))
        apply_fdr(rows)
    stats = stats_frame(rows)
    summary = {"analysis": "behavioral", **_study_summary(study), **summarize(stats, cfg.alpha)}
    return AnalysisResult("behavioral", stats, summary, {"dyads": study.dyad_frame, "config": cfg})


# -- output ------------------------------------------------------------------


def write_csv(frame: pd.DataFrame, path):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_json(data, path):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_result(result: AnalysisResult, out_dir) -> dict:
    """Write ``<name>.csv``, ``<name>_summary.json``, auxiliary tables and the
    resolved configuration. Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"stats": out / f"{result.name}.csv", "summary": out / f"{result.name}_summary.json"}
    write_csv(result.stats, paths["stats"])
    write_json(result.summary, paths["summary"])
    for key, value in result.tables.items():
        if key == "config":
            paths["config"] = out / "resolved_config.json"
            paths["config"].write_text(value.to_json())
        elif key == "dyads":
            paths[key] = out / f"{result.name}_dyads.csv"
            frame = value.copy()
            frame["social_distance"] = frame["social_distance"].astype("Int64")
            write_csv(frame, paths[key])
        else:
            paths[key] = out / f"{result.name}_{key}.csv"
            write_csv(value, paths[key])
    return {k: str(v) for k, v in paths.items()}
