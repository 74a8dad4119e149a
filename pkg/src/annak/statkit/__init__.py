"""Inferential engine: OLS, Spearman, BH-FDR, crossed-random-effects LMMs
on doubled dyadic data, planned contrasts and per-region sweeps."""

from .basic import OlsFit, bh_fdr, ols, ols_fit, spearman_rho
from .design import DesignSpec, RegionStats, build_design, spec_from_block, stats_frame, zscore
from .lmm import (
    CrossedDesign,
    LmmFit,
    crossed_design,
    double_dyads,
    lmm_fit_crossed,
    marginal_mean_row,
    planned_contrasts,
    prepare_crossed,
)
from .sweep import LMM, OLS, SPEARMAN, Sweep, apply_fdr, region_sweep

__all__ = [
    "CrossedDesign",
    "DesignSpec",
    "LMM",
    "LmmFit",
    "OLS",
    "OlsFit",
    "RegionStats",
    "SPEARMAN",
    "Sweep",
    "apply_fdr",
    "bh_fdr",
    "build_design",
    "crossed_design",
    "double_dyads",
    "lmm_fit_crossed",
    "marginal_mean_row",
    "ols",
    "ols_fit",
    "planned_contrasts",
    "prepare_crossed",
    "region_sweep",
    "spearman_rho",
    "spec_from_block",
    "stats_frame",
    "zscore",
]
