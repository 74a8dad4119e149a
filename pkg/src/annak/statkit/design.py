from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from ..errors import DegenerateResponseError, InputError, RankDeficientError

INTERCEPT = "Intercept"


@dataclass(frozen=True)
class DesignSpec:
    """Declarative model description.

    ``categorical`` maps a term to its reference level; such terms expand
    into one indicator per non-reference level and are never z-scored.
    With ``standardize`` the response and every numeric predictor are
    z-scored (sample SD) before fitting.
    """

    response: str
    fixed_terms: tuple = ()
    covariates: tuple = ()
    categorical: Mapping[str, str] = field(default_factory=dict)
    levels: Mapping[str, tuple] = field(default_factory=dict)
    standardize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "fixed_terms", tuple(self.fixed_terms))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        terms = self.terms
        if len(set(terms)) != len(terms):
            raise InputError(f"duplicate terms in design: {terms}")
        if self.response in terms:
            raise InputError(f"response {self.response!r} also listed as a predictor")

    @property
    def terms(self) -> tuple:
        return self.fixed_terms + self.covariates

    def with_response(self, response: str) -> "DesignSpec":
        d = asdict(self)
        d["response"] = response
        return DesignSpec(**d)


@dataclass
class RegionStats:
    region: str
    model: str
    term: str
    B: float
    SE: float
    df: float
    p_raw: float
    p_fdr: float = float("nan")
    n: int = 0

    FIELDS = ("region", "model", "term", "B", "SE", "df", "p_raw", "p_fdr", "n")

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS}


def stats_frame(stats: Sequence[RegionStats]) -> pd.DataFrame:
    return pd.DataFrame([s.as_row() for s in stats], columns=list(RegionStats.FIELDS))


def zscore(values, base: np.ndarray | None = None) -> np.ndarray:
    """z-score ``values`` using mean/SD of ``values[base]`` (all rows by default)."""
    x = np.asarray(values, dtype=float)
    ref = x if base is None else x[base]
    sd = ref.std(ddof=1) if ref.size > 1 else 0.0
    if not sd > 0:
        raise RankDeficientError("cannot standardize a constant column")
    return (x - ref.mean()) / sd


def term_levels(frame: pd.DataFrame, spec: DesignSpec, term: str) -> list:
    ref = spec.categorical[term]
    if term in spec.levels:
        levels = list(spec.levels[term])
    else:
        levels = sorted(pd.unique(frame[term].dropna()), key=str)
    if ref not in levels:
        raise InputError(f"reference level {ref!r} of {term!r} not present")
    return [ref] + [lv for lv in levels if lv != ref]


def build_predictors(frame: pd.DataFrame, spec: DesignSpec, base: np.ndarray | None = None):
    """Return ``(X, column_names, factors)`` for the predictors of ``spec``.

    ``factors`` maps each categorical term to ``(levels, reference)`` so
    marginal means can be formed later. ``base`` selects the rows whose
    mean/SD define the z-scores (used for doubled dyad tables).
    """
    missing = [c for c in spec.terms if c not in frame.columns]
    if missing:
        raise InputError(f"columns missing from data: {missing}")
    n = len(frame)
    cols = [np.ones(n)]
    names = [INTERCEPT]
    factors = {}
    for term in spec.terms:
        if term in spec.categorical:
            levels = term_levels(frame, spec, term)
            values = frame[term].to_numpy()
            unknown = set(pd.unique(values)) - set(levels)
            if unknown:
                raise InputError(f"{term!r} has levels outside {levels}: {sorted(map(str, unknown))}")
            for level in levels[1:]:
                cols.append((values == level).astype(float))
                names.append(f"{term}[{level}]")
            factors[term] = (levels, levels[0])
        else:
            x = frame[term].to_numpy(dtype=float)
            if spec.standardize:
                try:
                    x = zscore(x, base)
                except RankDeficientError:
                    raise RankDeficientError(f"predictor {term!r} is constant", [term])
            cols.append(x)
            names.append(term)
    X = np.column_stack(cols)
    check_rank(X, names)
    return X, names, factors


def build_response(frame: pd.DataFrame, spec: DesignSpec, base: np.ndarray | None = None) -> np.ndarray:
    if spec.response not in frame.columns:
        raise InputError(f"response column {spec.response!r} missing from data")
    y = frame[spec.response].to_numpy(dtype=float)
    return standardize_response(y, spec.response, base) if spec.standardize else y


def standardize_response(y, name: str = "response", base: np.ndarray | None = None) -> np.ndarray:
    try:
        return zscore(y, base)
    except RankDeficientError:
        raise DegenerateResponseError(f"degenerate response: {name!r} is constant")


def build_design(frame: pd.DataFrame, spec: DesignSpec, base: np.ndarray | None = None):
    """Return ``(X, column_names, y, factors)``; see :func:`build_predictors`."""
    y = build_response(frame, spec, base)
    X, names, factors = build_predictors(frame, spec, base)
    return X, names, y, factors


def check_rank(X: np.ndarray, names: Sequence[str]):
    if not np.all(np.isfinite(X)):
        raise InputError("design matrix contains missing or infinite values")
    rank = np.linalg.matrix_rank(X)
    if rank == X.shape[1]:
        return
    collinear = []
    kept = []
    for j in range(X.shape[1]):
        trial = kept + [j]
        if np.linalg.matrix_rank(X[:, trial]) == len(trial):
            kept = trial
        else:
            collinear.append(names[j])
    raise RankDeficientError(f"design matrix is rank deficient; collinear columns: {collinear}", collinear)


def fmt_float(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def spec_from_block(block: Mapping):
    """Parse a declarative model block.

    Keys: ``response``, ``terms``, ``covariates``, ``categorical`` (term ->
    reference level), ``levels``, ``standardize``, ``contrasts`` (name ->
    {level: weight}) and ``alpha``. Returns ``(DesignSpec, contrasts, alpha)``.
    """
    known = {"response", "terms", "covariates", "categorical", "levels", "standardize", "contrasts", "alpha"}
    unknown = set(block) - known
    if unknown:
        raise InputError(f"unknown model keys: {sorted(unknown)}")
    if "response" not in block:
        raise InputError("model block needs a response")
    spec = DesignSpec(
        block["response"],
        tuple(block.get("terms", ())),
        tuple(block.get("covariates", ())),
        dict(block.get("categorical", {})),
        {k: tuple(v) for k, v in block.get("levels", {}).items()},
        bool(block.get("standardize", True)),
    )
    contrasts = [(name, dict(w)) for name, w in block.get("contrasts", {}).items()]
    alpha = float(block.get("alpha", 0.05))
    if not 0 < alpha < 1:
        raise InputError("alpha must lie in (0, 1)")
    return spec, contrasts, alpha
