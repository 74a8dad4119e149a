"""Self-check suite behind ``annak validate``.

Every check is small enough to run in seconds and compares the production
code against an independent, deliberately naive reimplementation.
"""

from __future__ import annotations

import logging
import tempfile
from itertools import combinations
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.linalg import cho_factor, cho_solve

from .. import graphnet as gn, synthlab as sl
from ..statkit import bh_fdr, crossed_design, double_dyads
from ..statkit.design import DesignSpec, zscore
from .analyses import GROUP_TERM, SUBJECT_GROUP, StudyInputs, run_dyad_level, run_subject_level, write_result
from .config import AnalysisConfig

logger = logging.getLogger(__name__)


def brute_force_bh(p) -> np.ndarray:
    """Adjusted p-values straight from the definition, ``min_{j>=i} p_(j) m / j``."""
    p = np.asarray(p, dtype=float)
    m = p.size
    rank = (p[None, :] <= p[:, None]).sum(axis=1)
    scaled = p * m / rank
    out = np.empty(m)
    for i in range(m):
        out[i] = min(1.0, max(p[i], scaled[rank >= rank[i]].min()))
    return out


def dense_reml(X, Z1, Z2, y, theta):
    """REML criterion and GLS estimate with explicit ``m x m`` matrices."""
    m, p = X.shape
    V0 = np.eye(m) + theta[0] ** 2 * Z1 @ Z1.T + theta[1] ** 2 * Z2 @ Z2.T
    c = cho_factor(V0)
    ViX = cho_solve(c, X)
    XVX = X.T @ ViX
    beta = np.linalg.solve(XVX, ViX.T @ y)
    r = y - X @ beta
    sigma2 = float(r @ cho_solve(c, r)) / (m - p)
    logdet_v = 2.0 * np.sum(np.log(np.diag(c[0])))
    crit = (m - p) * np.log(sigma2) + logdet_v + np.linalg.slogdet(XVX)[1] + (m - p)
    return crit, beta, sigma2


def grid_reml(X, Z1, Z2, y, lo=0.0, hi=3.0, points=11, rounds=16):
    """Zooming grid search over ``(theta1, theta2)``; returns ``(crit, t1, t2)``."""
    lo1 = lo2 = lo
    hi1 = hi2 = hi
    best = None
    for _ in range(rounds):
        for t1 in np.linspace(lo1, hi1, points):
            for t2 in np.linspace(lo2, hi2, points):
                c = dense_reml(X, Z1, Z2, y, (t1, t2))[0]
                if best is None or c < best[0]:
                    best = (c, t1, t2)
        s1, s2 = (hi1 - lo1) / (points - 1), (hi2 - lo2) / (points - 1)
        lo1, hi1 = max(0.0, best[1] - 2 * s1), best[1] + 2 * s1
        lo2, hi2 = max(0.0, best[2] - 2 * s2), best[2] + 2 * s2
    return best


def random_dyadic_dataset(rng, n_subjects: int):
    subjects = [f"p{i}" for i in range(n_subjects)]
    u = rng.normal(0, 0.6, n_subjects)
    rows = []
    for i, j in combinations(range(n_subjects), 2):
        x = rng.normal()
        rows.append((subjects[i], subjects[j], x, 0.5 * x + u[i] + u[j] + rng.normal()))
    return pd.DataFrame(rows, columns=["subject_a", "subject_b", "x", "y"])


def check_lmm_oracle(seed: int = 0, n_datasets: int = 3) -> dict:
    rng = np.random.default_rng(seed)
    worst_beta = worst_var = 0.0
    for _ in range(n_datasets):
        frame = random_dyadic_dataset(rng, int(rng.integers(6, 13)))
        doubled = double_dyads(frame)
        spec = DesignSpec("y", ("x",))
        design = crossed_design(doubled, spec)
        y = zscore(doubled["y"].to_numpy(), doubled["copy"].to_numpy() == 0)
        fit = design.fit(y)
        Z1 = design.Z[:, : design.q[0]]
        Z2 = design.Z[:, design.q[0]:]
        _, beta, _ = dense_reml(design.X, Z1, Z2, y, fit.theta)
        worst_beta = max(worst_beta, float(np.max(np.abs(beta - fit.beta)) / np.max(np.abs(beta))))
        _, t1, t2 = grid_reml(design.X, Z1, Z2, y)
        _, _, s2 = dense_reml(design.X, Z1, Z2, y, (t1, t2))
        grid_var = np.array([s2, t1**2 * s2, t2**2 * s2])
        got = np.array([fit.variance_components[k] for k in ("residual", "subj1", "subj2")])
        worst_var = max(worst_var, float(np.max(np.abs(grid_var - got))))
    passed = worst_beta < 1e-6 and worst_var < 1e-4
    return {"passed": passed, "max_rel_beta_error": worst_beta, "max_abs_variance_error": worst_var}


def check_bh_oracle(seed: int = 0, n_vectors: int = 50) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_vectors):
        m = int(rng.integers(1, 30))
        p = rng.random(m) ** 2
        if m > 3:
            p[:2] = p[2]
        worst = max(worst, float(np.max(np.abs(bh_fdr(p) - brute_force_bh(p)))))
    return {"passed": worst < 1e-12, "max_abs_error": worst}


def check_dyad_counts() -> dict:
    subjects = [f"s{i:02d}" for i in range(63)]
    group = {s: gn.HIGH if i < 23 else gn.LOW for i, s in enumerate(subjects)}
    degree = {s: 3 if group[s] == gn.HIGH else 1 for s in subjects}
    profile = gn.CentralityProfile(degree, group, {s: float(np.log1p(k)) for s, k in degree.items()}, 2.0)
    full = gn.category_counts(gn.dyad_centrality_table(profile, subjects))
    excluded = gn.category_counts(gn.dyad_centrality_table(profile, subjects, [(subjects[-1], subjects[-2])]))
    want_full = {gn.HIGH_HIGH: 253, gn.LOW_HIGH: 920, gn.LOW_LOW: 780}
    want_excl = {gn.HIGH_HIGH: 253, gn.LOW_HIGH: 920, gn.LOW_LOW: 779}
    passed = full == want_full and excluded == want_excl and sum(excluded.values()) == 1952
    return {"passed": passed, "counts": full, "counts_after_exclusion": excluded}


def _small_study(seed: int):
    return sl.generate_study(30, 6, 2, 2000, seed=seed, null_alpha=0.55)


def check_planted_recovery(seed: int = 0) -> dict:
    study = _small_study(seed)
    inputs = StudyInputs(graph=study.graph, panel=study.panel)
    result = run_subject_level(AnalysisConfig(), inputs)
    found = set(result.summary["models"][SUBJECT_GROUP][GROUP_TERM]["significant"])
    planted = set(study.spec.planted_regions)
    rows = result.rows(SUBJECT_GROUP, GROUP_TERM)
    positive = bool((rows.set_index("region").loc[sorted(planted), "B"] > 0).all())
    return {"passed": planted <= found and positive, "planted": sorted(planted), "detected": sorted(found)}


def check_thread_determinism(seed: int = 0, threads=(1, 4)) -> dict:
    study = _small_study(seed)
    inputs = StudyInputs(graph=study.graph, panel=study.panel)
    blobs = []
    with tempfile.TemporaryDirectory() as tmp:
        for t in threads:
            out = Path(tmp) / f"t{t}"
            paths = write_result(run_dyad_level(AnalysisConfig(), inputs, threads=t), out)
            blobs.append(Path(paths["stats"]).read_bytes())
    return {"passed": all(b == blobs[0] for b in blobs), "threads": list(threads)}


CHECKS = {
    "lmm_dense_gls_oracle": check_lmm_oracle,
    "bh_brute_force_oracle": check_bh_oracle,
    "dyad_count_bookkeeping": check_dyad_counts,
    "planted_recovery": check_planted_recovery,
    "thread_determinism": check_thread_determinism,
}


def validate(seed: int = 0) -> dict:
    report = {"seed": seed, "checks": {}}
    for name, fn in CHECKS.items():
        kwargs = {"seed": seed} if "seed" in fn.__code__.co_varnames else {}
        try:
            outcome = fn(**kwargs)
        except Exception as exc:  # a crashing check is a failed check
            logger.exception("check %s raised", name)
            outcome = {"passed": False, "error": f"{type(exc).__name__}: {exc}"}
        logger.info("%s: %s", name, "pass" if outcome["passed"] else "FAIL")
        report["checks"][name] = outcome
    report["passed"] = all(c["passed"] for c in report["checks"].values())
    return report
