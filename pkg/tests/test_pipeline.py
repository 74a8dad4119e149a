import json

import numpy as np
import pandas as pd
import pytest

from annak import graphnet as gn, synthlab as sl
from annak.errors import ConfigError
from annak.pipeline.analyses import (
    CONTRASTS,
    DYAD_CATEGORY,
    GROUP_TERM,
    SUBJECT_GROUP,
    StudyInputs,
    load_study,
    run_behavioral,
    run_dyad_level,
    run_subject_level,
)
from annak.pipeline.cli import main
from annak.pipeline.config import AnalysisConfig, read_exclusions


@pytest.fixture(scope="module")
def study_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("study")
    assert main(["synth", "--out", str(out), "--subjects", "24", "--regions", "4", "--planted", "2",
                 "--timepoints", "300", "--runs", "2", "--communities", "2", "--seed", "3"]) == 0
    return out


def inputs(d):
    return ["--edges", str(d / "edges.csv"), "--communities", str(d / "communities.csv"),
            "--timeseries", str(d / "timeseries")]


def test_synth_writes_every_input(study_dir):
    for name in ("edges.csv", "communities.csv", "ratings.csv", "attributes.csv", "truth.json",
                 "timeseries/manifest.csv", "timeseries/s001.csv"):
        assert (study_dir / name).exists()
    truth = json.loads((study_dir / "truth.json").read_text())
    assert truth["planted_regions"] == ["region001", "region002"]


def test_network_command(study_dir, tmp_path):
    assert main(["network", "--edges", str(study_dir / "edges.csv"), "--out", str(tmp_path)]) == 0
    cent = pd.read_csv(tmp_path / "centrality.csv")
    dyads = pd.read_csv(tmp_path / "dyads.csv")
    summary = json.loads((tmp_path / "network_summary.json").read_text())
    assert len(cent) == 24 and len(dyads) == 276
    assert summary["n_dyads"] == 276
    assert sum(summary["category_counts"].values()) == 276


def test_isc_command(study_dir, tmp_path):
    assert main(["isc", "--timeseries", str(study_dir / "timeseries"), "--out", str(tmp_path), "--stage", "FisherZ"]) == 0
    frame = pd.read_csv(tmp_path / "isc.csv")
    assert {"region", "subject_a", "subject_b"} <= set(frame.columns)


@pytest.mark.parametrize("level", ["subject-level", "dyad-level"])
def test_analysis_commands(study_dir, tmp_path, level):
    assert main([level, *inputs(study_dir), "--out", str(tmp_path)]) == 0
    name = level.replace("-", "_")
    stats = pd.read_csv(tmp_path / f"{name}.csv")
    assert list(stats.columns) == ["region", "model", "term", "B", "SE", "df", "p_raw", "p_fdr", "n"]
    assert (stats["p_fdr"] >= stats["p_raw"] - 1e-15).all()
    assert (tmp_path / "resolved_config.json").exists()
    assert (tmp_path / f"{name}_summary.json").exists()


def test_dyad_level_df_contract(study_dir, tmp_path):
    assert main(["dyad-level", *inputs(study_dir), "--out", str(tmp_path)]) == 0
    stats = pd.read_csv(tmp_path / "dyad_level.csv")
    cat = stats[stats["model"] == DYAD_CATEGORY]
    assert (cat["df"] == cat["n"] - 3).all()
    deg = stats[stats["model"] != DYAD_CATEGORY]
    assert (deg["df"] == deg["n"] - 2).all()
    for region, rows in cat.groupby("region"):
        b = rows.set_index("term")["B"]
        assert b["HighHigh-LowLow"] == pytest.approx(b["HighHigh-LowHigh"] + b["LowHigh-LowLow"], abs=1e-9)


def test_behav_command(study_dir, tmp_path):
    args = ["behav", "--edges", str(study_dir / "edges.csv"), "--ratings", str(study_dir / "ratings.csv"),
            "--out", str(tmp_path)]
    assert main(args) == 0
    stats = pd.read_csv(tmp_path / "behavioral.csv")
    assert set(stats["region"]) == {"enjoyment", "interest"}
    dyad = stats[stats["model"] == "behav_dyad_category"]
    for _, rows in dyad.groupby("region"):
        b = rows.set_index("term")["B"]
        assert b["HighHigh-LowLow"] == pytest.approx(b["HighHigh-LowHigh"] + b["LowHigh-LowLow"], abs=1e-9)


def test_degenerate_ratings_exit_3(study_dir, tmp_path, capsys):
    ratings = pd.read_csv(study_dir / "ratings.csv")
    ratings["enjoyment"] = 3
    ratings["interest"] = 3
    ratings.to_csv(tmp_path / "flat.csv", index=False)
    with pytest.warns(RuntimeWarning, match="identical"):
        code = main(["behav", "--edges", str(study_dir / "edges.csv"), "--ratings", str(tmp_path / "flat.csv"),
                     "--out", str(tmp_path / "out")])
    assert code == 3
    assert "degenerate response" in capsys.readouterr().err


def test_config_errors_exit_2(study_dir, tmp_path):
    assert main(["subject-level", "--out", str(tmp_path)]) == 2
    assert main(["subject-level", *inputs(study_dir), "--stage", "RawR", "--out", str(tmp_path)]) == 2
    assert main(["dyad-level", "--edges", str(tmp_path / "nope.csv"), "--timeseries", str(study_dir / "timeseries")]) == 2
    assert main(["dyad-level", *inputs(study_dir), "--covariates", "preferences"]) == 2
    (tmp_path / "bad.json").write_text(json.dumps({"edges": "x", "bogus": 1}))
    assert main(["subject-level", "--config", str(tmp_path / "bad.json")]) == 2
    assert main(["subject-level", *inputs(study_dir), "--alpha", "1.5"]) == 2


def test_resolve_checks():
    with pytest.raises(ConfigError):
        AnalysisConfig(scope="some").resolve("dyad", check_inputs=False)
    cfg = AnalysisConfig(covariates="demographics+social_distance").resolve("dyad", check_inputs=False)
    assert cfg.scope == "intra"
    assert AnalysisConfig().resolve("dyad", check_inputs=False).alpha == 0.001
    assert AnalysisConfig().resolve("subject", check_inputs=False).stage == "FisherZ"
    assert AnalysisConfig().resolve("dyad", check_inputs=False).stage == "FisherZStandardized"


def test_resolved_config_round_trip(study_dir, tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["subject-level", *inputs(study_dir), "--scope", "intra", "--out", str(first)]) == 0
    assert main(["subject-level", "--config", str(first / "resolved_config.json"), "--out", str(second)]) == 0
    assert (first / "subject_level.csv").read_bytes() == (second / "subject_level.csv").read_bytes()


def test_thread_count_byte_identical(study_dir, tmp_path):
    blobs = []
    for t in ("1", "4"):
        out = tmp_path / t
        assert main(["dyad-level", *inputs(study_dir), "--threads", t, "--out", str(out)]) == 0
        config = json.loads((out / "resolved_config.json").read_text())
        config.pop("out")
        blobs.append([(out / f).read_bytes() for f in ("dyad_level.csv", "dyad_level_summary.json")] + [config])
    assert blobs[0] == blobs[1]


def test_scope_monotonicity():
    study = sl.generate_study(24, 2, 1, 200, n_communities=2, seed=1)
    inp = StudyInputs(graph=study.graph, panel=study.panel)
    every = load_study(AnalysisConfig().resolve("dyad", check_inputs=False), inp)
    intra = load_study(AnalysisConfig(scope="intra").resolve("dyad", check_inputs=False), inp)
    pairs = lambda s: {frozenset(d) for d in zip(s.dyad_frame["subject_a"], s.dyad_frame["subject_b"])}
    assert pairs(intra) < pairs(every)
    assert intra.dyad_frame["same_community"].all()


def test_exclusions(study_dir, tmp_path):
    ex = tmp_path / "excl.csv"
    pd.DataFrame({"kind": ["subject", "dyad"], "subject_a": ["s001", "s002"], "subject_b": ["", "s003"]}).to_csv(ex, index=False)
    parsed = read_exclusions(ex)
    assert parsed.subjects == {"s001"} and parsed.dyads == {frozenset({"s002", "s003"})}
    assert main(["network", "--edges", str(study_dir / "edges.csv"), "--exclusions", str(ex), "--out", str(tmp_path / "n")]) == 0
    summary = json.loads((tmp_path / "n" / "network_summary.json").read_text())
    assert summary["n_subjects"] == 23
    assert summary["n_dyads"] == 23 * 22 // 2 - 1


def test_partial_runs_and_policy():
    study = sl.generate_study(30, 2, 1, 100, runs=("1", "2", "3"), partial_runs=True, seed=2)
    inp = StudyInputs(graph=study.graph, panel=study.panel)
    res = run_dyad_level(AnalysisConfig(), inp)
    assert res.summary["n_dyads"] == 434
    assert res.summary["partial_run_excluded_dyads"] == 1
    res = run_dyad_level(AnalysisConfig(partial_run_policy="intersect"), inp)
    assert res.summary["n_dyads"] == 435


def test_planted_recovery_subject_level():
    study = sl.generate_study(40, 6, 2, 3000, seed=5)
    res = run_subject_level(AnalysisConfig(), StudyInputs(graph=study.graph, panel=study.panel))
    rows = res.rows(SUBJECT_GROUP, GROUP_TERM).set_index("region")
    for region in study.spec.planted_regions:
        assert rows.loc[region, "p_fdr"] < 0.05
        assert rows.loc[region, "B"] > 0


def test_covariate_variants_run():
    study = sl.generate_study(24, 2, 1, 300, n_communities=2, seed=6)
    inp = StudyInputs(graph=study.graph, panel=study.panel, ratings=study.ratings, attributes=study.attributes)
    for cov in ("demographics", "demographics+social_distance", "friendship", "preferences"):
        sub = run_subject_level(AnalysisConfig(covariates=cov), inp)
        assert "subject_spearman" not in set(sub.stats["model"])
        dy = run_dyad_level(AnalysisConfig(covariates=cov), inp)
        assert set(dy.stats["region"]) == {"region001", "region002"}
    models = set(dy.stats["model"])
    assert {"isc_on_enjoyment_sim", "isc_on_interest_sim_ctrl_category"} <= models


def test_behavioral_gradient():
    study = sl.generate_study(60, 1, 1, 10, seed=7)
    res = run_behavioral(AnalysisConfig(), StudyInputs(graph=study.graph, ratings=study.ratings))
    row = res.stats[(res.stats["model"] == "behav_subject_group") & (res.stats["region"] == "enjoyment")]
    assert row["B"].iloc[0] > 0


def test_nearest_neighbor_discrimination():
    # the neighbour model makes High-High pairs alike without making
    # High-Low pairs more alike than Low-Low ones
    hh_ll = {}
    for variant in (sl.ANNAK, sl.NEAREST_NEIGHBOR):
        study = sl.generate_study(40, 1, 1, 3000, variant=variant, seed=9)
        res = run_dyad_level(AnalysisConfig(), StudyInputs(graph=study.graph, panel=study.panel))
        b = res.rows(DYAD_CATEGORY).set_index("term")["B"]
        assert b["HighHigh-LowHigh"] > 0
        hh_ll[variant] = b["HighHigh-LowLow"]
    assert hh_ll[sl.NEAREST_NEIGHBOR] < hh_ll[sl.ANNAK]


def test_validate_command(tmp_path, capsys):
    assert main(["validate", "--out", str(tmp_path / "report.json")]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["passed"]
    assert set(report["checks"]) >= {"lmm_dense_gls_oracle", "bh_brute_force_oracle", "dyad_count_bookkeeping"}


def test_bad_thread_count():
    assert main(["network", "--edges", "x", "--threads", "0"]) == 2
