"""Ordinary least squares, Spearman correlation and Benjamini-Hochberg."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats
from scipy.linalg import cho_factor, cho_solve

from ..errors import InputError, RankDeficientError
from .design import INTERCEPT, DesignSpec, RegionStats, build_design, check_rank


@dataclass
class OlsFit:
    names: list
    beta: np.ndarray
    se: np.ndarray
    df: int
    rss: float
    n: int

    def t_values(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.beta / self.se

    def p_values(self) -> np.ndarray:
        t = self.t_values()
        return np.where(np.isnan(t), np.nan, 2 * stats.t.sf(np.abs(t), self.df))


def ols(X: np.ndarray, y: np.ndarray, names=None) -> OlsFit:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(k)]
    if n < k + 2:
        raise InputError(f"OLS needs at least {k + 2} rows for {k} columns, got {n}")
    check_rank(X, names)
    q, r = np.linalg.qr(X)
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    df = n - k
    sigma2 = rss / df
    r_inv = np.linalg.solve(r, np.eye(k))
    xtx_inv = r_inv @ r_inv.T
    se = np.sqrt(sigma2 * np.diag(xtx_inv))
    return OlsFit(names, beta, se, df, rss, n)


def ols_fit(frame: pd.DataFrame, spec: DesignSpec, region: str = "", model: str = "ols") -> list[RegionStats]:
    """Fit ``spec`` to ``frame`` and return one row per non-intercept column."""
    X, names, y, _ = build_design(frame, spec)
    fit = ols(X, y, names)
    p = fit.p_values()
    return [
        RegionStats(region, model, name, float(fit.beta[j]), float(fit.se[j]), float(fit.df), float(p[j]), n=fit.n)
        for j, name in enumerate(names)
        if name != INTERCEPT
    ]


def spearman_rho(x, y) -> tuple[float, float]:
    """Spearman rho (average ranks for ties) with a t-approximation p-value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError("spearman_rho needs equal-length vectors")
    n = x.size
    if n < 4:
        raise InputError("spearman_rho needs at least 4 observations")
    rx = stats.rankdata(x)
    ry = stats.rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    sxx, syy = rx @ rx, ry @ ry
    if sxx == 0 or syy == 0:
        raise InputError("spearman_rho is undefined for a constant vector")
    rho = float(np.clip((rx @ ry) / np.sqrt(sxx * syy), -1.0, 1.0))
    df = n - 2
    if abs(rho) == 1.0:
        return rho, 0.0
    t = rho * np.sqrt(df / (1.0 - rho * rho))
    return rho, float(2 * stats.t.sf(abs(t), df))


def bh_fdr(p) -> np.ndarray:
    """Benjamini-Hochberg adjusted p-values; NaNs are left out of the family."""
    p = np.asarray(p, dtype=float)
    out = np.full(p.shape, np.nan)
    ok = ~np.isnan(p)
    vals = p[ok]
    if np.any((vals < 0) | (vals > 1)):
        raise InputError("p-values must lie in [0, 1]")
    m = vals.size
    if m == 0:
        return out
    order = np.argsort(vals, kind="mergesort")
    scaled = vals[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum.accumulate(scaled[::-1])[::-1]
    # p * m / m can round one ulp below p
    adjusted = np.minimum(np.maximum(adjusted, vals[order]), 1.0)
    res = np.empty(m)
    res[order] = adjusted
    out[ok] = res
    return out


def gls_solve(XtVX: np.ndarray, XtVy: np.ndarray):
    """Solve the GLS normal equations; returns ``(beta, inverse)``."""
    try:
        c = cho_factor(XtVX)
    except np.linalg.LinAlgError:
        raise RankDeficientError("X'V^-1 X is not positive definite")
    beta = cho_solve(c, XtVy)
    return beta, cho_solve(c, np.eye(XtVX.shape[0]))
