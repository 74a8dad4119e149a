import math
from itertools import combinations

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from annak import statkit as sk
from annak.errors import DegenerateResponseError, InputError, RankDeficientError
from annak.pipeline.validation import brute_force_bh, dense_reml, random_dyadic_dataset
from annak.statkit.design import INTERCEPT

CATS = ("HighHigh", "LowHigh", "LowLow")
CATEGORY = sk.DesignSpec("y", ("category",), categorical={"category": "LowLow"})


# -- OLS ------------------------------------------------------------------


def test_ols_perfect_fit():
    x = np.arange(10.0)
    frame = pd.DataFrame({"x": x, "y": 3 * x + 1})
    fit = sk.ols(np.column_stack([np.ones(10), sk.zscore(x)]), sk.zscore(frame["y"]))
    assert fit.beta[1] == pytest.approx(1.0, abs=1e-12)
    assert fit.rss == pytest.approx(0.0, abs=1e-20)


def test_ols_orthogonal_predictor():
    x = np.array([-1.0, 1, -1, 1, -1, 1])
    y = np.array([1.0, 1, 2, 2, 3, 3])
    rows = sk.ols_fit(pd.DataFrame({"x": x, "y": y}), sk.DesignSpec("y", ("x",)))
    assert abs(rows[0].B) < 1e-12


def test_ols_matches_normal_equations(rng):
    X = np.column_stack([np.ones(30), rng.normal(size=(30, 3))])
    y = X @ [0.5, 1.0, -2.0, 0.3] + rng.normal(size=30)
    fit = sk.ols(X, y)
    oracle = np.linalg.inv(X.T @ X) @ X.T @ y
    np.testing.assert_allclose(fit.beta, oracle, rtol=0, atol=1e-10)
    resid = y - X @ oracle
    se = np.sqrt(resid @ resid / 26 * np.diag(np.linalg.inv(X.T @ X)))
    np.testing.assert_allclose(fit.se, se, rtol=1e-10)
    assert fit.df == 26


def test_single_predictor_b_is_pearson(rng):
    x, y = rng.normal(size=(2, 40))
    rows = sk.ols_fit(pd.DataFrame({"x": x, "y": y}), sk.DesignSpec("y", ("x",)))
    assert rows[0].B == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-10)


def test_categorical_group_not_standardized(rng):
    g = np.array(["Low"] * 10 + ["High"] * 6)
    y = rng.normal(size=16) + (g == "High")
    spec = sk.DesignSpec("y", ("group",), categorical={"group": "Low"})
    (row,) = sk.ols_fit(pd.DataFrame({"group": g, "y": y}), spec)
    z = sk.zscore(y)
    assert row.term == "group[High]"
    assert row.B == pytest.approx(z[g == "High"].mean() - z[g == "Low"].mean(), abs=1e-12)


def test_rank_deficiency_lists_columns(rng):
    x = rng.normal(size=12)
    frame = pd.DataFrame({"x": x, "x2": 2 * x, "y": rng.normal(size=12)})
    with pytest.raises(RankDeficientError, match="x2"):
        sk.ols_fit(frame, sk.DesignSpec("y", ("x", "x2")))


def test_constant_response_is_degenerate():
    frame = pd.DataFrame({"x": np.arange(6.0), "y": np.ones(6)})
    with pytest.raises(DegenerateResponseError, match="degenerate response"):
        sk.ols_fit(frame, sk.DesignSpec("y", ("x",)))


# -- Spearman -------------------------------------------------------------


def test_spearman_examples():
    x = np.arange(1.0, 8.0)
    assert sk.spearman_rho(x, np.exp(x))[0] == pytest.approx(1.0)
    assert sk.spearman_rho(x, x[::-1])[0] == pytest.approx(-1.0)
    rho, _ = sk.spearman_rho([1, 2, 3, 4], [10, 20, 20, 30])
    assert rho == pytest.approx(4.5 / math.sqrt(22.5), abs=1e-12)


def test_spearman_p_value_t_approximation(rng):
    x, y = rng.normal(size=(2, 25))
    rho, p = sk.spearman_rho(x, y)
    t = rho * math.sqrt(23 / (1 - rho**2))
    assert p == pytest.approx(2 * stats.t.sf(abs(t), 23), rel=1e-12)
    assert rho == pytest.approx(stats.spearmanr(x, y)[0], abs=1e-12)


def test_spearman_constant_errors():
    with pytest.raises(InputError):
        sk.spearman_rho([1, 2, 3, 4], [2, 2, 2, 2])


# -- BH -------------------------------------------------------------------


def test_bh_examples():
    np.testing.assert_allclose(sk.bh_fdr([0.001, 0.02, 0.03, 0.04]), [0.004, 0.04, 0.04, 0.04], atol=1e-15)
    np.testing.assert_array_equal(sk.bh_fdr([1.0, 1.0, 1.0]), [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(sk.bh_fdr([0.3]), [0.3])


def test_bh_matches_brute_force(rng):
    for _ in range(100):
        p = rng.random(int(rng.integers(1, 25))) ** 3
        np.testing.assert_array_equal(sk.bh_fdr(p), brute_force_bh(p))


def test_bh_nan_left_out_of_family():
    q = sk.bh_fdr([0.01, np.nan, 0.04])
    assert np.isnan(q[1])
    np.testing.assert_allclose(q[[0, 2]], [0.02, 0.04])


# -- doubling and LMM -----------------------------------------------------


def test_double_dyads_rows():
    frame = pd.DataFrame({"subject_a": list("aab"), "subject_b": list("bcc"), "category": CATS, "y": [1.0, 2, 3]})
    d = sk.double_dyads(frame)
    assert len(d) == 6
    assert list(d["subj1"]) == list("abacbc")
    assert list(d["subj2"]) == list("bacacb")
    assert (d["category"].to_numpy()[0::2] == d["category"].to_numpy()[1::2]).all()


def category_frame(rng, n_subjects=10, cell_means=(0.0, 0.0, 0.0), tau=0.5):
    subjects = [f"p{i:02d}" for i in range(n_subjects)]
    high = set(subjects[: n_subjects // 2])
    u = rng.normal(0, tau, n_subjects)
    rows = []
    for i, j in combinations(range(n_subjects), 2):
        n_high = (subjects[i] in high) + (subjects[j] in high)
        cat = ("LowLow", "LowHigh", "HighHigh")[n_high]
        y = cell_means[CATS.index(cat)] + u[i] + u[j] + rng.normal()
        rows.append((subjects[i], subjects[j], cat, y))
    return pd.DataFrame(rows, columns=["subject_a", "subject_b", "category", "y"])


def dense_parts(design):
    return design.Z[:, : design.q[0]], design.Z[:, design.q[0]:]


def test_lmm_matches_dense_gls(rng):
    frame = random_dyadic_dataset(rng, 8)
    d = sk.double_dyads(frame)
    design, y = sk.prepare_crossed(d, sk.DesignSpec("y", ("x",)))
    fit = design.fit(y)
    Z1, Z2 = dense_parts(design)
    crit, beta, s2 = dense_reml(design.X, Z1, Z2, y, fit.theta)
    np.testing.assert_allclose(fit.beta, beta, rtol=1e-8, atol=1e-10)
    assert fit.reml_deviance == pytest.approx(crit, abs=1e-8)
    assert fit.variance_components["residual"] == pytest.approx(s2, rel=1e-8)


def test_lmm_boundary_reduces_to_ols(rng):
    # response with OLS residuals orthogonal to both role indicators:
    # the REML optimum is tau = 0 and GLS collapses to OLS
    frame = random_dyadic_dataset(rng, 9)
    d = sk.double_dyads(frame)
    design = sk.crossed_design(d, sk.DesignSpec("y", ("x",)))
    full = np.column_stack([design.X, design.Z])
    e = rng.normal(size=len(d))
    e -= full @ np.linalg.lstsq(full, e, rcond=None)[0]
    y = design.X @ np.array([0.2, 0.7]) + e
    fit = design.fit(y)
    assert max(fit.variance_components["subj1"], fit.variance_components["subj2"]) < 1e-6
    ols = sk.ols(design.X, y)
    np.testing.assert_allclose(fit.beta, ols.beta, atol=1e-6)


def test_lmm_optimum_beats_random_probes(rng):
    frame = random_dyadic_dataset(rng, 10)
    design, y = sk.prepare_crossed(sk.double_dyads(frame), sk.DesignSpec("y", ("x",)))
    fit = design.fit(y)
    probes = rng.uniform(0, 3, size=(100, 2))
    assert all(fit.reml_deviance <= design.criterion(t, y) + 1e-9 for t in probes)
    assert all(v >= 0 for v in fit.variance_components.values())
    np.testing.assert_allclose(fit.cov_beta, fit.cov_beta.T)
    assert np.all(np.linalg.eigvalsh(fit.cov_beta) > 0)


def test_lmm_role_swap_invariance(rng):
    frame = category_frame(rng, cell_means=(0.5, 0.2, 0.0))
    d = sk.double_dyads(frame)
    swapped = d.rename(columns={"subj1": "subj2", "subj2": "subj1"})
    a = sk.lmm_fit_crossed(d, CATEGORY)
    b = sk.lmm_fit_crossed(swapped, CATEGORY)
    np.testing.assert_allclose(a.beta, b.beta, atol=1e-6)


def test_equal_variance_constraint(rng):
    frame = category_frame(rng)
    fit = sk.lmm_fit_crossed(sk.double_dyads(frame), CATEGORY, equal_variances=True)
    assert fit.variance_components["subj1"] == fit.variance_components["subj2"]


def test_df_is_unique_dyads_minus_k(rng):
    n = 63
    subjects = [f"s{i:02d}" for i in range(n)]
    high = set(subjects[:23])
    pairs = list(combinations(subjects, 2))[:-1]
    cats = [("LowLow", "LowHigh", "HighHigh")[(a in high) + (b in high)] for a, b in pairs]
    frame = pd.DataFrame(pairs, columns=["subject_a", "subject_b"])
    frame["category"] = cats
    frame["y"] = rng.normal(size=len(frame))
    d = sk.double_dyads(frame)
    assert len(d) == 3904
    fit = sk.lmm_fit_crossed(d, CATEGORY)
    assert (fit.n_unique, fit.k, fit.df) == (1952, 3, 1949)
    rows = sk.planned_contrasts(fit, "category", [("HH-LL", {"HighHigh": 1, "LowLow": -1})])
    assert rows[0].df == 1949


# -- contrasts ------------------------------------------------------------


def contrasts():
    return [
        ("HighHigh-LowLow", {"HighHigh": 1, "LowLow": -1}),
        ("HighHigh-LowHigh", {"HighHigh": 1, "LowHigh": -1}),
        ("LowHigh-LowLow", {"LowHigh": 1, "LowLow": -1}),
    ]


def test_contrasts_zero_when_cells_equal():
    # every cell identical by construction: each subject appears in one
    # dyad of each category with the same response
    rows = []
    for k, cat in enumerate(CATS * 4):
        rows.append((f"a{k}", f"b{k}", cat, float(k // 3)))
    frame = pd.DataFrame(rows, columns=["subject_a", "subject_b", "category", "y"])
    fit = sk.lmm_fit_crossed(sk.double_dyads(frame), CATEGORY)
    for r in sk.planned_contrasts(fit, "category", contrasts()):
        assert abs(r.B) < 1e-10


def test_category_only_contrast_is_coefficient_difference(rng):
    fit = sk.lmm_fit_crossed(sk.double_dyads(category_frame(rng, cell_means=(1.0, 0.5, 0.0))), CATEGORY)
    hh_ll, hh_lh, lh_ll = sk.planned_contrasts(fit, "category", contrasts())
    b = dict(zip(fit.names, fit.beta))
    assert hh_ll.B == pytest.approx(b["category[HighHigh]"], abs=1e-12)
    assert hh_lh.B == pytest.approx(b["category[HighHigh]"] - b["category[LowHigh]"], abs=1e-12)
    assert hh_ll.B == pytest.approx(hh_lh.B + lh_ll.B, abs=1e-12)
    assert hh_ll.B > lh_ll.B > 0


def test_contrast_linearity_with_covariate(rng):
    frame = category_frame(rng, cell_means=(0.6, 0.1, 0.0))
    frame["x"] = rng.normal(size=len(frame))
    spec = sk.DesignSpec("y", ("category",), ("x",), categorical={"category": "LowLow"})
    fit = sk.lmm_fit_crossed(sk.double_dyads(frame), spec)
    hh_ll, hh_lh, lh_ll = sk.planned_contrasts(fit, "category", contrasts())
    assert hh_ll.B == pytest.approx(hh_lh.B + lh_ll.B, abs=1e-12)
    L = sk.marginal_mean_row(fit, "category", "HighHigh") - sk.marginal_mean_row(fit, "category", "LowLow")
    assert hh_ll.SE == pytest.approx(math.sqrt(L @ fit.cov_beta @ L), rel=1e-12)


def test_contrast_errors(rng):
    fit = sk.lmm_fit_crossed(sk.double_dyads(category_frame(rng)), CATEGORY)
    with pytest.raises(InputError, match="sum to zero"):
        sk.planned_contrasts(fit, "category", [("bad", {"HighHigh": 1})])
    with pytest.raises(InputError, match="not present"):
        sk.planned_contrasts(fit, "category", [("bad", {"Mid": 1, "LowLow": -1})])


def test_one_sided_p(rng):
    fit = sk.lmm_fit_crossed(sk.double_dyads(category_frame(rng, cell_means=(0.8, 0.3, 0.0))), CATEGORY)
    (two,) = sk.planned_contrasts(fit, "category", contrasts()[:1])
    (one,) = sk.planned_contrasts(fit, "category", contrasts()[:1], one_sided=True)
    assert one.p_raw == pytest.approx(two.p_raw / 2, rel=1e-9)


# -- sweep ----------------------------------------------------------------


def test_sweep_identical_regions_identical_rows(rng):
    design = pd.DataFrame({"x": rng.normal(size=20)})
    y = rng.normal(size=20)
    responses = pd.DataFrame({"r2": y, "r10": y, "r1": y})
    sweep = sk.region_sweep(sk.OLS, responses, design, sk.DesignSpec("y", ("x",)))
    frame = sweep.to_frame()
    assert list(frame["region"]) == ["r1", "r2", "r10"]
    assert frame[["B", "SE", "p_raw", "p_fdr"]].nunique().max() == 1


def test_sweep_family_and_failures(rng):
    design = pd.DataFrame({"x": rng.normal(size=20)})
    responses = pd.DataFrame({f"r{i}": rng.normal(size=20) for i in range(15)})
    responses["dead"] = 1.0
    sweep = sk.region_sweep(sk.OLS, responses, design, sk.DesignSpec("y", ("x",)))
    assert "dead" in sweep.failures
    frame = sweep.to_frame()
    assert len(frame) == 15
    np.testing.assert_allclose(frame["p_fdr"], sk.bh_fdr(frame["p_raw"].to_numpy()))
    assert (frame["p_fdr"] >= frame["p_raw"]).all()


def test_sweep_spearman_term(rng):
    design = pd.DataFrame({"in_degree": rng.integers(0, 6, size=20)})
    responses = pd.DataFrame({"r1": rng.normal(size=20)})
    (row,) = sk.region_sweep(sk.SPEARMAN, responses, design, predictor="in_degree").stats
    assert row.term == "spearman_rho"
    assert row.B == pytest.approx(stats.spearmanr(design["in_degree"], responses["r1"])[0], abs=1e-12)


def test_spec_from_block():
    spec, cons, alpha = sk.spec_from_block(
        {
            "response": "isc",
            "terms": ["category"],
            "covariates": ["friendship"],
            "categorical": {"category": "LowLow"},
            "contrasts": {"HH-LL": {"HighHigh": 1, "LowLow": -1}},
            "alpha": 0.001,
        }
    )
    assert spec.terms == ("category", "friendship")
    assert cons == [("HH-LL", {"HighHigh": 1, "LowLow": -1})]
    assert alpha == 0.001
    with pytest.raises(InputError, match="unknown"):
        sk.spec_from_block({"response": "y", "extra": 1})
    with pytest.raises(InputError):
        sk.spec_from_block({"terms": ["x"]})


def test_intercept_not_reported(rng):
    frame = pd.DataFrame({"x": rng.normal(size=10), "y": rng.normal(size=10)})
    assert INTERCEPT not in [r.term for r in sk.ols_fit(frame, sk.DesignSpec("y", ("x",)))]
