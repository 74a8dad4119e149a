"""Dyadic similarity in self-reported ratings and demographics."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import InputError
from .isccore import subject_means

logger = logging.getLogger(__name__)

RATING_MIN, RATING_MAX = 1, 5
RATING_KINDS = ("enjoyment", "interest")
DEMOGRAPHIC_COLUMNS = ("age_sim", "same_gender", "shared_ethnicity", "same_home_country")


@dataclass
class RatingMatrix:
    """Integer ratings in 1..5, one complete vector per subject."""

    subjects: list
    items: list
    values: dict
    name: str = "rating"

    def __post_init__(self):
        self.subjects = list(self.subjects)
        self.items = list(self.items)
        for s in self.subjects:
            v = np.asarray(self.values[s])
            if v.shape != (len(self.items),):
                raise InputError(f"{self.name}: subject {s!r} has {v.size} ratings, expected {len(self.items)}")
            if not np.all(np.isfinite(v.astype(float))) or np.any(v != np.round(v)):
                raise InputError(f"{self.name}: subject {s!r} has non-integer ratings")
            if np.any((v < RATING_MIN) | (v > RATING_MAX)):
                raise InputError(f"{self.name}: subject {s!r} has ratings outside {RATING_MIN}-{RATING_MAX}")
            self.values[s] = v.astype(int)

    def matrix(self, subjects: Sequence | None = None) -> np.ndarray:
        subjects = self.subjects if subjects is None else subjects
        return np.vstack([self.values[s] for s in subjects]).astype(float)


@dataclass
class SimilarityColumn:
    name: str
    values: dict = field(default_factory=dict)

    def aligned(self, dyads: Sequence) -> np.ndarray:
        return np.array([self.values.get(frozenset(d), np.nan) for d in dyads], dtype=float)


def _dyads_for(subjects: Sequence, dyads: Sequence | None) -> list[tuple]:
    return list(combinations(subjects, 2)) if dyads is None else [tuple(d) for d in dyads]


def rating_similarity(matrix: RatingMatrix, dyads: Sequence | None = None) -> SimilarityColumn:
    """``1 - d / max(d)`` with ``d`` the Euclidean distance between rating
    vectors; the maximum runs over the dyads supplied (the active sample)."""
    dyads = _dyads_for(matrix.subjects, dyads)
    usable = [d for d in dyads if d[0] in matrix.values and d[1] in matrix.values]
    if len(usable) < len(dyads):
        logger.info("%s: %d dyad(s) lack complete ratings", matrix.name, len(dyads) - len(usable))
    if not usable:
        raise InputError(f"{matrix.name}: need at least 2 subjects with complete ratings")
    a = np.vstack([matrix.values[d[0]] for d in usable]).astype(float)
    b = np.vstack([matrix.values[d[1]] for d in usable]).astype(float)
    dist = np.sqrt(np.sum((a - b) ** 2, axis=1))
    dmax = dist.max()
    if dmax == 0:
        warnings.warn(f"{matrix.name}: all rating vectors identical; similarity set to 1", RuntimeWarning, stacklevel=2)
        sim = np.ones_like(dist)
    else:
        sim = 1.0 - dist / dmax
    return SimilarityColumn(f"{matrix.name}_sim", {frozenset(d): float(s) for d, s in zip(usable, sim)})


def subject_mean_similarity(
    col: SimilarityColumn,
    subjects: Sequence,
    dyads: Sequence | None = None,
    mask: np.ndarray | None = None,
) -> dict:
    """Mean similarity of every subject with all (in-scope) partners."""
    dyads = _dyads_for(subjects, dyads)
    means = subject_means(dyads, col.aligned(dyads)[None, :], subjects, mask)[0]
    return dict(zip(subjects, means))


def _as_set(v) -> frozenset | None:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return None
    if isinstance(v, (set, frozenset, list, tuple)):
        items = v
    else:
        items = str(v).split(";")
    items = frozenset(x.strip() for x in items if str(x).strip())
    return items or None


def _missing(v) -> bool:
    return v is None or (isinstance(v, float) and np.isnan(v)) or (isinstance(v, str) and not v.strip())


def demographic_similarity(attributes: pd.DataFrame, dyads: Sequence | None = None) -> list[SimilarityColumn]:
    """Age similarity and same-gender / shared-ethnicity / same-country indicators.

    ``attributes`` has columns ``subject, age, gender, home_country,
    ethnicities`` (ethnicities as a set or ``;``-separated string). Dyads
    touching a subject with a missing attribute get no value for it.
    """
    need = {"subject", "age", "gender", "home_country", "ethnicities"}
    if not need <= set(attributes.columns):
        raise InputError(f"attributes need columns {sorted(need)}")
    attrs = attributes.set_index(attributes["subject"].astype(str))
    dyads = _dyads_for(list(attrs.index), dyads)
    unknown = {s for d in dyads for s in d} - set(attrs.index)
    if unknown:
        raise InputError(f"no attributes for subjects {sorted(unknown)[:5]}")

    flagged = set()
    for col in ("age", "gender", "home_country", "ethnicities"):
        bad = [s for s, v in attrs[col].items() if _missing(v)]
        if bad:
            logger.warning("missing %s for subjects %s", col, bad[:5])
            flagged.update(bad)

    age = pd.to_numeric(attrs["age"], errors="coerce")
    gaps = {}
    for a, b in dyads:
        if not (np.isnan(age[a]) or np.isnan(age[b])):
            gaps[frozenset((a, b))] = abs(float(age[a]) - float(age[b]))
    max_gap = max(gaps.values(), default=0.0)
    if max_gap == 0:
        age_sim = {k: 1.0 for k in gaps}
    else:
        age_sim = {k: 1.0 - g / max_gap for k, g in gaps.items()}

    gender, country, eth = {}, {}, {}
    for a, b in dyads:
        key = frozenset((a, b))
        if not (_missing(attrs.at[a, "gender"]) or _missing(attrs.at[b, "gender"])):
            gender[key] = float(str(attrs.at[a, "gender"]).strip() == str(attrs.at[b, "gender"]).strip())
        if not (_missing(attrs.at[a, "home_country"]) or _missing(attrs.at[b, "home_country"])):
            country[key] = float(
                str(attrs.at[a, "home_country"]).strip() == str(attrs.at[b, "home_country"]).strip()
            )
        ea, eb = _as_set(attrs.at[a, "ethnicities"]), _as_set(attrs.at[b, "ethnicities"])
        if ea is not None and eb is not None:
            eth[key] = float(bool(ea & eb))
    return [
        SimilarityColumn("age_sim", age_sim),
        SimilarityColumn("same_gender", gender),
        SimilarityColumn("shared_ethnicity", eth),
        SimilarityColumn("same_home_country", country),
    ]


def read_ratings(path) -> dict[str, RatingMatrix]:
    """Ratings CSV ``subject,item,enjoyment,interest`` -> one matrix per kind.

    Subjects with any missing rating of a kind are dropped from that kind.
    """
    frame = pd.read_csv(path, dtype={"subject": str, "item": str})
    if not {"subject", "item"} <= set(frame.columns):
        raise InputError(f"{path}: ratings need columns subject,item,...")
    kinds = [k for k in RATING_KINDS if k in frame.columns]
    if not kinds:
        raise InputError(f"{path}: no rating columns ({', '.join(RATING_KINDS)})")
    items = list(dict.fromkeys(frame["item"]))
    out = {}
    for kind in kinds:
        wide = frame.pivot_table(index="subject", columns="item", values=kind, aggfunc="first").reindex(columns=items)
        subjects = list(dict.fromkeys(frame["subject"]))
        wide = wide.reindex(subjects)
        complete = wide.notna().all(axis=1)
        if not complete.all():
            logger.warning("%s: dropping subjects with missing ratings: %s", kind, list(wide.index[~complete])[:5])
        wide = wide[complete]
        out[kind] = RatingMatrix(list(wide.index), items, {s: wide.loc[s].to_numpy() for s in wide.index}, kind)
    return out


def read_attributes(path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"subject": str, "gender": str, "home_country": str, "ethnicities": str})
    return frame


def write_ratings(matrices: Mapping[str, RatingMatrix], path):
    kinds = list(matrices)
    first = matrices[kinds[0]]
    rows = []
    for s in first.subjects:
        for j, item in enumerate(first.items):
            row = {"subject": s, "item": item}
            for k in kinds:
                row[k] = int(matrices[k].values[s][j])
            rows.append(row)
    pd.DataFrame(rows).to_csv(path, index=False)
