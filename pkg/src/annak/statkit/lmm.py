"""Crossed random-intercept mixed models for role-doubled dyadic data.

Model for a doubled table with ``m`` rows::

    y = X beta + Z1 u1 + Z2 u2 + e,   u1 ~ N(0, tau1^2 I), u2 ~ N(0, tau2^2 I),
    e ~ N(0, sigma^2 I)

``Z1``/``Z2`` are the indicator matrices of the ``subj1``/``subj2`` roles.
Writing ``theta_j = tau_j / sigma`` and ``Lambda = diag(theta)``, the marginal
covariance is ``V = sigma^2 (I + Z Lambda Lambda Z')``. With
``A = Lambda Z'Z Lambda + I`` we have ``log|V/sigma^2| = log|A|`` and
``(V/sigma^2)^-1 = I - Z Lambda A^-1 Lambda Z'``, so every quantity the
restricted likelihood needs comes from the small ``q x q`` cross-products
(``q`` = number of random-effect levels), never an ``m x m`` matrix.
``sigma^2`` is profiled out and the remaining one or two ``theta`` are
optimized with bounded Nelder-Mead, which keeps ``theta = 0`` reachable.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import optimize, stats
from scipy.linalg import cholesky, solve_triangular

from ..errors import ConvergenceError, InputError, RankDeficientError
from .design import DesignSpec, RegionStats, build_predictors, build_response

logger = logging.getLogger(__name__)

SUBJ1, SUBJ2, COPY = "subj1", "subj2", "copy"

MAX_ITER = 500
F_TOL = 1e-8
X_TOL = 1e-8


def double_dyads(frame: pd.DataFrame, a: str = "subject_a", b: str = "subject_b") -> pd.DataFrame:
    """Emit every dyad twice, once per role assignment.

    Row ``2i`` is ``(subj1=a, subj2=b)`` and row ``2i+1`` the swap; all other
    columns are copied. ``copy`` is 0 for the original orientation.
    """
    n = len(frame)
    out = frame.loc[frame.index.repeat(2)].reset_index(drop=True)
    av = frame[a].to_numpy()
    bv = frame[b].to_numpy()
    s1 = np.empty(2 * n, dtype=object)
    s2 = np.empty(2 * n, dtype=object)
    s1[0::2], s1[1::2] = av, bv
    s2[0::2], s2[1::2] = bv, av
    out[SUBJ1] = s1
    out[SUBJ2] = s2
    out[COPY] = np.tile([0, 1], n)
    return out


@dataclass
class LmmFit:
    names: list
    beta: np.ndarray
    cov_beta: np.ndarray
    variance_components: dict
    theta: np.ndarray
    n_unique: int
    n_obs: int
    k: int
    reml_deviance: float
    column_means: np.ndarray
    factors: dict = field(default_factory=dict)
    n_iter: int = 0

    @property
    def df(self) -> int:
        return self.n_unique - self.k

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov_beta))

    def coef(self, name: str) -> tuple[float, float]:
        j = self.names.index(name)
        return float(self.beta[j]), float(self.se[j])

    def term_stats(self, name: str, region: str = "", model: str = "lmm", one_sided: bool = False) -> RegionStats:
        b, se = self.coef(name)
        return RegionStats(region, model, name, b, se, float(self.df), t_pvalue(b / se, self.df, one_sided), n=self.n_unique)


def t_pvalue(t: float, df: float, one_sided: bool = False) -> float:
    if one_sided:
        return float(stats.t.sf(t, df))
    return float(2 * stats.t.sf(abs(t), df))


class CrossedDesign:
    """Precomputed cross-products for one doubled design; reusable across
    responses (e.g. brain regions) that share ``X`` and the role columns."""

    def __init__(
        self,
        X: np.ndarray,
        subj1: Sequence,
        subj2: Sequence,
        names: Sequence[str],
        n_unique: int | None = None,
        equal_variances: bool = False,
        factors: Mapping | None = None,
        column_means: np.ndarray | None = None,
    ):
        self.X = np.asarray(X, dtype=float)
        m, p = self.X.shape
        self.names = list(names)
        self.m, self.p = m, p
        self.n_unique = int(n_unique) if n_unique is not None else m // 2
        self.equal_variances = equal_variances
        self.factors = dict(factors or {})
        self.column_means = self.X.mean(axis=0) if column_means is None else np.asarray(column_means)
        lv1, idx1 = np.unique(np.asarray(subj1, dtype=str), return_inverse=True)
        lv2, idx2 = np.unique(np.asarray(subj2, dtype=str), return_inverse=True)
        self.levels = (list(lv1), list(lv2))
        q1, q2 = len(lv1), len(lv2)
        self.q = (q1, q2)
        Z = np.zeros((m, q1 + q2))
        Z[np.arange(m), idx1] = 1.0
        Z[np.arange(m), q1 + idx2] = 1.0
        self.Z = Z
        self.ZtZ = Z.T @ Z
        self.ZtX = Z.T @ self.X
        self.XtX = self.X.T @ self.X
        if m - p <= 0:
            raise InputError("mixed model needs more rows than fixed effects")

    def expand_theta(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if self.equal_variances:
            theta = np.repeat(theta[:1], 2)
        return np.repeat(theta, self.q)

    def _pieces(self, theta, Zty, Xty, yty):
        lam = self.expand_theta(theta)
        A = lam[:, None] * self.ZtZ * lam[None, :]
        A[np.diag_indices_from(A)] += 1.0
        L = cholesky(A, lower=True, check_finite=False)
        cX = solve_triangular(L, lam[:, None] * self.ZtX, lower=True, check_finite=False)
        cy = solve_triangular(L, lam * Zty, lower=True, check_finite=False)
        XHX = self.XtX - cX.T @ cX
        XHy = Xty - cX.T @ cy
        yHy = yty - cy @ cy
        try:
            RX = cholesky(XHX, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            raise RankDeficientError("X'V^-1 X is singular")
        half = solve_triangular(RX, XHy, lower=True, check_finite=False)
        beta = solve_triangular(RX.T, half, lower=False, check_finite=False)
        rHr = max(float(yHy - beta @ XHy), 1e-300)
        logdet_A = 2.0 * np.sum(np.log(np.diag(L)))
        logdet_XHX = 2.0 * np.sum(np.log(np.diag(RX)))
        return beta, XHX, RX, rHr, logdet_A, logdet_XHX

    def criterion(self, theta, y) -> float:
        """REML criterion ``log|V| + log|X'V^-1 X| + r'V^-1 r`` with sigma^2 profiled."""
        Zty, Xty, yty = self._response_products(y)
        return self._criterion(theta, Zty, Xty, yty)

    def _response_products(self, y):
        y = np.asarray(y, dtype=float)
        return self.Z.T @ y, self.X.T @ y, float(y @ y)

    def _criterion(self, theta, Zty, Xty, yty) -> float:
        _, _, _, rHr, logdet_A, logdet_XHX = self._pieces(theta, Zty, Xty, yty)
        dof = self.m - self.p
        sigma2 = rHr / dof
        return dof * math.log(sigma2) + logdet_A + logdet_XHX + dof

    def fit(self, y, theta0=None) -> LmmFit:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.m,):
            raise InputError(f"response has shape {y.shape}, expected ({self.m},)")
        if not np.all(np.isfinite(y)):
            raise InputError("response contains missing values")
        products = self._response_products(y)
        n_par = 1 if self.equal_variances else 2
        start = np.ones(n_par) if theta0 is None else np.broadcast_to(np.asarray(theta0, float), (n_par,)).copy()

        def objective(t):
            return self._criterion(np.maximum(t, 0.0), *products)

        bounds = [(0.0, None)] * n_par
        res = None
        n_iter = 0
        for _ in range(3):
            res = optimize.minimize(
                objective,
                start,
                method="Nelder-Mead",
                bounds=bounds,
                options={"xatol": X_TOL, "fatol": F_TOL, "maxiter": MAX_ITER - n_iter},
            )
            n_iter += res.nit
            moved = np.max(np.abs(res.x - start))
            start = res.x
            if res.success and moved < 1e-6:
                break
            if n_iter >= MAX_ITER:
                break
        theta = np.maximum(res.x, 0.0)
        best = objective(theta)
        for j in range(n_par):
            if 0 < theta[j] < 1e-4:
                trial = theta.copy()
                trial[j] = 0.0
                value = objective(trial)
                if value <= best:
                    theta, best = trial, value
        if not res.success:
            grad = optimize.approx_fprime(theta + 1e-6, objective, 1e-7)
            raise ConvergenceError(
                f"REML optimization did not converge in {n_iter} iterations "
                f"(final gradient norm {np.linalg.norm(grad):.3g})",
                float(np.linalg.norm(grad)),
            )
        return self._finish(theta, products, n_iter)

    def _finish(self, theta, products, n_iter) -> LmmFit:
        beta, XHX, RX, rHr, logdet_A, logdet_XHX = self._pieces(theta, *products)
        dof = self.m - self.p
        sigma2 = rHr / dof
        inv = solve_triangular(RX, np.eye(self.p), lower=True)
        cov = sigma2 * (inv.T @ inv)
        cov = 0.5 * (cov + cov.T)
        full = np.atleast_1d(theta)
        if self.equal_variances:
            full = np.repeat(full[:1], 2)
        components = {
            "residual": sigma2,
            SUBJ1: float(full[0] ** 2 * sigma2),
            SUBJ2: float(full[1] ** 2 * sigma2),
        }
        deviance = dof * math.log(sigma2) + logdet_A + logdet_XHX + dof
        return LmmFit(
            names=list(self.names),
            beta=beta,
            cov_beta=cov,
            variance_components=components,
            theta=np.asarray(full, dtype=float),
            n_unique=self.n_unique,
            n_obs=self.m,
            k=self.p,
            reml_deviance=float(deviance),
            column_means=self.column_means,
            factors=self.factors,
            n_iter=n_iter,
        )


def crossed_design(doubled: pd.DataFrame, spec: DesignSpec, equal_variances: bool = False) -> CrossedDesign:
    """Build the fixed/random design of a doubled table (response ignored).

    z-scores use the original-orientation rows so that doubling does not
    change the standardization.
    """
    for col in (SUBJ1, SUBJ2):
        if col not in doubled.columns:
            raise InputError("lmm_fit_crossed expects a table produced by double_dyads")
    base = (doubled[COPY].to_numpy() == 0) if COPY in doubled.columns else None
    X, names, factors = build_predictors(doubled, spec, base)
    n_unique = int(base.sum()) if base is not None else len(doubled) // 2
    means = X[base].mean(axis=0) if base is not None else X.mean(axis=0)
    return CrossedDesign(
        X,
        doubled[SUBJ1].to_numpy(),
        doubled[SUBJ2].to_numpy(),
        names,
        n_unique=n_unique,
        equal_variances=equal_variances,
        factors=factors,
        column_means=means,
    )


def prepare_crossed(doubled: pd.DataFrame, spec: DesignSpec, equal_variances: bool = False):
    """``(CrossedDesign, y)`` for a doubled table."""
    base = (doubled[COPY].to_numpy() == 0) if COPY in doubled.columns else None
    return crossed_design(doubled, spec, equal_variances), build_response(doubled, spec, base)


def lmm_fit_crossed(doubled: pd.DataFrame, spec: DesignSpec, equal_variances: bool = False) -> LmmFit:
    design, y = prepare_crossed(doubled, spec, equal_variances)
    return design.fit(y)


def marginal_mean_row(fit: LmmFit, factor: str, level) -> np.ndarray:
    """Design row predicting the ``level`` cell with other columns at their means."""
    if factor not in fit.factors:
        raise InputError(f"{factor!r} is not a categorical term of this fit")
    levels, ref = fit.factors[factor]
    if level not in levels:
        raise InputError(f"level {level!r} of {factor!r} is not present in the fit")
    row = np.array(fit.column_means, dtype=float)
    row[0] = 1.0
    for lv in levels:
        if lv == ref:
            continue
        j = fit.names.index(f"{factor}[{lv}]")
        row[j] = 1.0 if lv == level else 0.0
    return row


def planned_contrasts(
    fit: LmmFit,
    factor: str,
    contrasts: Sequence[tuple[str, Mapping]],
    region: str = "",
    model: str = "lmm",
    one_sided: bool = False,
) -> list[RegionStats]:
    """Contrasts of estimated marginal means with df = n_unique - k."""
    out = []
    for name, weights in contrasts:
        if abs(sum(weights.values())) > 1e-12:
            raise InputError(f"contrast {name!r} weights do not sum to zero")
        L = sum(w * marginal_mean_row(fit, factor, lv) for lv, w in weights.items())
        est = float(L @ fit.beta)
        se = float(np.sqrt(L @ fit.cov_beta @ L))
        t = est / se if se > 0 else math.copysign(math.inf, est) if est else 0.0
        out.append(RegionStats(region, model, name, est, se, float(fit.df), t_pvalue(t, fit.df, one_sided), n=fit.n_unique))
    return out
