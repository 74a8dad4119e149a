"""Fit one model per brain region and FDR-correct each term family."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from ..errors import AnnakError
from .basic import bh_fdr, ols_fit, spearman_rho
from .design import DesignSpec, RegionStats, standardize_response, stats_frame
from .lmm import CrossedDesign, crossed_design, double_dyads, planned_contrasts

logger = logging.getLogger(__name__)

OLS, SPEARMAN, LMM = "ols", "spearman", "lmm"


def natural_key(label) -> list:
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", str(label))]


@dataclass
class Sweep:
    stats: list
    failures: dict = field(default_factory=dict)
    fdr_alpha: float = 0.05

    def to_frame(self) -> pd.DataFrame:
        return stats_frame(self.stats)

    def significant(self, term: str) -> list:
        return [s.region for s in self.stats if s.term == term and s.p_fdr < self.fdr_alpha]

    def terms(self) -> list:
        return list(dict.fromkeys(s.term for s in self.stats))


def apply_fdr(stats: Sequence[RegionStats]) -> None:
    """Fill ``p_fdr`` in place, one BH family per (model, term)."""
    families: dict[tuple, list[RegionStats]] = {}
    for s in stats:
        families.setdefault((s.model, s.term), []).append(s)
    for members in families.values():
        adjusted = bh_fdr([s.p_raw for s in members])
        for s, q in zip(members, adjusted):
            s.p_fdr = float(q)


def _run(fn: Callable, regions: Sequence, threads: int):
    def guarded(region):
        try:
            return fn(region), None
        except (AnnakError, np.linalg.LinAlgError, ValueError) as exc:
            return None, exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(guarded, regions))
    else:
        results = [guarded(r) for r in regions]
    stats, failures = [], {}
    for region, (rows, exc) in zip(regions, results):
        if exc is not None:
            logger.warning("region %s failed and is excluded from FDR: %s", region, exc)
            failures[region] = str(exc)
        else:
            stats.extend(rows)
    return stats, failures


def region_sweep(
    kind: str,
    responses: pd.DataFrame,
    design: pd.DataFrame,
    spec: DesignSpec | None = None,
    fdr_alpha: float = 0.05,
    threads: int = 1,
    model: str | None = None,
    predictor: str | None = None,
    contrasts: Sequence | None = None,
    factor: str | None = None,
    report_terms: Sequence[str] | None = None,
    equal_variances: bool = False,
    one_sided: bool = False,
) -> Sweep:
    """Fit ``kind`` (``ols``, ``spearman`` or ``lmm``) in every region.

    ``responses`` has one column per region and rows aligned with ``design``
    (subjects for ``ols``/``spearman``, unique dyads for ``lmm``). Rows with
    a missing response are dropped region by region.
    """
    model = model or kind
    regions = [str(r) for r in responses.columns]
    if len(responses) != len(design):
        raise ValueError("responses and design have different row counts")
    design = design.reset_index(drop=True)
    values = responses.to_numpy(dtype=float)
    col = {r: i for i, r in enumerate(regions)}

    if kind == OLS:
        def fit_region(region):
            y = values[:, col[region]]
            ok = ~np.isnan(y)
            frame = design.loc[ok].copy()
            frame[spec.response] = y[ok]
            rows = ols_fit(frame, spec, region, model)
            if report_terms is not None:
                rows = [r for r in rows if r.term in report_terms]
            return rows

    elif kind == SPEARMAN:
        x_all = design[predictor].to_numpy(dtype=float)

        def fit_region(region):
            y = values[:, col[region]]
            ok = ~np.isnan(y)
            rho, p = spearman_rho(x_all[ok], y[ok])
            n = int(ok.sum())
            return [RegionStats(region, model, "spearman_rho", rho, float("nan"), float(n - 2), p, n=n)]

    elif kind == LMM:
        fit_region = _lmm_region_fn(
            values, col, design, spec, model, contrasts, factor, report_terms, equal_variances, one_sided
        )
    else:
        raise ValueError(f"unknown model kind {kind!r}")

    stats, failures = _run(fit_region, regions, threads)
    apply_fdr(stats)
    order = {r: i for i, r in enumerate(sorted(regions, key=natural_key))}
    stats.sort(key=lambda s: order[s.region])
    return Sweep(stats, failures, fdr_alpha)


def _lmm_region_fn(values, col, design, spec, model, contrasts, factor, report_terms, equal_variances, one_sided):
    # predictors are standardized once per missing-data pattern, the
    # response per region over its unique dyads
    cache: dict[bytes, CrossedDesign] = {}

    def crossed_for(ok: np.ndarray) -> CrossedDesign:
        key = np.packbits(ok).tobytes()
        if key not in cache:
            cache[key] = crossed_design(double_dyads(design.loc[ok]), spec, equal_variances)
        return cache[key]

    def fit_region(region):
        y = values[:, col[region]]
        ok = ~np.isnan(y)
        crossed = crossed_for(ok)
        yv = standardize_response(y[ok], region) if spec.standardize else y[ok]
        fit = crossed.fit(np.repeat(yv, 2))
        rows = []
        if contrasts:
            rows.extend(planned_contrasts(fit, factor, contrasts, region, model, one_sided))
        for term in report_terms or ():
            rows.append(fit.term_stats(term, region, model, one_sided))
        return rows

    return fit_region
