import json

import numpy as np
import pytest
from scipy import stats

from annak import behav as bv, graphnet as gn, isccore as ic, synthlab as sl
from annak.errors import InputError


def test_all_zero_profile_gives_no_edges():
    g, prof = sl.generate_network(6, [0] * 6, seed=1)
    assert g.directed_edges == ()
    assert prof is None


def test_exact_in_degrees():
    g, _ = sl.generate_network(6, [2, 2, 1, 1, 0, 0], seed=3)
    assert list(gn.in_degree_centrality(g).values()) == [2, 2, 1, 1, 0, 0]
    assert all(a != b for a, b in g.directed_edges)


def test_infeasible_profile():
    with pytest.raises(InputError, match="infeasible"):
        sl.generate_network(4, [4, 0, 0, 0])
    with pytest.raises(InputError):
        sl.generate_network(3, [0, 0, 0])


def test_paper_like_profile():
    prof = sl.scaled_degree_profile(63)
    assert np.median(prof) == 2 and max(prof) == 9
    g, cp = sl.generate_network(63, seed=0)
    assert cp.threshold == 2
    assert sorted(gn.in_degree_centrality(g).values()) == prof
    assert cp.counts() == {gn.HIGH: 23, gn.LOW: 40}


def test_communities_keep_edges_inside():
    g, _ = sl.generate_network(40, seed=2, n_communities=2)
    assert all(g.community[a] == g.community[b] for a, b in g.directed_edges)


def spec_for(alphas, T=10_000, planted=True, seed=0, null_alpha=0.0):
    subjects = sl.subject_ids(len(alphas))
    return sl.PlantSpec(
        n_subjects=len(alphas),
        n_regions=1,
        planted_regions=["region001"] if planted else [],
        n_timepoints=T,
        alpha_map=dict(zip(subjects, alphas)),
        null_alpha=null_alpha,
        seed=seed,
    )


def test_alpha_one_identical_series():
    panel = sl.generate_timeseries(spec_for([1.0, 1.0, 1.0], T=100))
    s = panel.subjects
    np.testing.assert_array_equal(panel.series[s[0]], panel.series[s[1]])


def test_alpha_zero_independent():
    panel = sl.generate_timeseries(spec_for([0.0] * 6, T=5000))
    t = ic.isc_table(panel)
    assert abs(np.nanmean(t.values)) < 3 / np.sqrt(5000)


def test_planted_pair_isc():
    panel = sl.generate_timeseries(spec_for([0.8, 0.5], T=10_000, seed=7))
    r = ic.isc_table(panel).values[0, 0]
    assert r == pytest.approx(0.40, abs=0.02)


def test_oracle_examples():
    spec = spec_for([1.0, 1.0, 0.0, 0.9, 0.6], null_alpha=0.3)
    s = spec.subjects
    assert sl.expected_isc_oracle(spec, (s[0], s[1])) == 1.0
    assert sl.expected_isc_oracle(spec, (s[2], s[3])) == 0.0
    assert sl.expected_isc_oracle(spec, (s[3], s[4])) == pytest.approx(0.54)
    spec = sl.PlantSpec(5, 2, ["region001"], 10, alpha_map=dict(zip(s, [0.9] * 5)), null_alpha=0.3)
    assert sl.expected_isc_oracle(spec, (s[0], s[1]), "region002") == pytest.approx(0.09)


def test_unit_variance(rng):
    panel = sl.generate_timeseries(spec_for(list(np.linspace(0, 1, 8)), T=20_000, seed=2))
    for s in panel.subjects:
        assert panel.series[s].var() == pytest.approx(1.0, abs=0.05)


def test_determinism():
    a = sl.generate_study(20, 4, 2, 200, seed=11)
    b = sl.generate_study(20, 4, 2, 200, seed=11)
    assert a.graph == b.graph
    for s in a.panel.subjects:
        assert a.panel.series[s].tobytes() == b.panel.series[s].tobytes()
    assert a.attributes.equals(b.attributes)
    c = sl.generate_study(20, 4, 2, 200, seed=12)
    assert c.panel.series[c.panel.subjects[0]].tobytes() != a.panel.series[a.panel.subjects[0]].tobytes()


def test_alpha_from_rank_monotone():
    alpha = sl.alpha_from_rank({"a": 0, "b": 3, "c": 1, "d": 3}, 0.3, 0.8)
    assert alpha["a"] == pytest.approx(0.3)
    assert alpha["a"] < alpha["c"] < alpha["b"] == alpha["d"]
    assert max(alpha.values()) <= 0.8


def test_plant_spec_validation():
    with pytest.raises(InputError):
        sl.PlantSpec(2, 2, ["region009"], 10)
    with pytest.raises(InputError):
        sl.PlantSpec(2, 2, [], 10, alpha_map={"a": 1.5, "b": 0.2})


def test_ratings_identical_without_noise():
    alpha = {f"s{i}": 1.0 for i in range(5)}
    m = sl.generate_ratings(alpha, 14, seed=0, noise_sd=0.0)
    with pytest.warns(RuntimeWarning):
        col = bv.rating_similarity(m)
    assert set(col.values.values()) == {1.0}


def test_ratings_gradient():
    n = 60
    subjects = sl.subject_ids(n)
    alpha = dict(zip(subjects, np.linspace(0.05, 0.95, n)))
    rhos = []
    for seed in range(20):
        m = sl.generate_ratings(alpha, 14, seed=seed)
        means = bv.subject_mean_similarity(bv.rating_similarity(m), subjects)
        rhos.append(stats.spearmanr(list(alpha.values()), [means[s] for s in subjects])[0])
    assert np.mean(rhos) > 0.6


def test_partial_runs_in_study():
    study = sl.generate_study(30, 2, 1, 50, runs=("1", "2", "3"), partial_runs=True, seed=4)
    short = [s for s in study.panel.subjects if len(study.panel.usable_runs[s]) < 3]
    assert len(short) == 2
    assert all(study.profile.group[s] == gn.LOW for s in short)
    assert ic.dyad_runs(study.panel, *short) is None


def test_write_study_files(tmp_path):
    study = sl.generate_study(12, 3, 1, 40, seed=5)
    paths = sl.write_study(study, tmp_path, seed=5)
    g = gn.load_graph(paths["edges"], paths["communities"])
    assert gn.in_degree_centrality(g) == gn.in_degree_centrality(study.graph)
    panel = ic.read_panel(paths["timeseries"], paths["manifest"])
    assert panel.regions == study.panel.regions
    np.testing.assert_allclose(panel.series["s001"], study.panel.series["s001"], atol=1e-5)
    truth = json.loads((tmp_path / "truth.json").read_text())
    assert truth["planted_regions"] == ["region001"]
    assert truth["seed"] == 5
    assert set(bv.read_ratings(paths["ratings"])) == {"enjoyment", "interest"}


def test_nearest_neighbor_oracle():
    study = sl.generate_study(30, 1, 1, 20_000, variant=sl.NEAREST_NEIGHBOR, seed=8)
    t = ic.isc_table(study.panel)
    oracle = np.array([sl.expected_isc_oracle(study.spec, d) for d in t.dyads])
    err = np.abs(t.values[0] - oracle)
    assert np.mean(err < 4 / np.sqrt(20_000)) >= 0.95
