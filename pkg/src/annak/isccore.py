"""Inter-subject correlation: panel ingestion, run alignment, dyad-level ISC
tables, Fisher z and within-region standardization, subject-level means."""

from __future__ import annotations

import logging
import warnings
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DataQualityError, InputError

logger = logging.getLogger(__name__)

RAW_R, FISHER_Z, FISHER_Z_STD = "RawR", "FisherZ", "FisherZStandardized"
STAGES = (RAW_R, FISHER_Z, FISHER_Z_STD)
SCOPE_ALL, SCOPE_INTRA = "all", "intra"
POLICY_EXCLUDE, POLICY_INTERSECT = "exclude", "intersect"

CLAMP_EPS = 1e-7
MAX_DEAD_FRACTION = 0.10


def run_sort_key(label):
    s = str(label)
    return (0, int(s), s) if s.lstrip("-").isdigit() else (1, 0, s)


@dataclass
class TimeSeriesPanel:
    """Per-subject ``region x time`` matrices holding usable runs only.

    ``run_index[s]`` labels every column of ``series[s]`` with its run;
    ``run_lengths`` is the shared number of time points per run.
    """

    subjects: list
    regions: list
    series: dict
    run_index: dict
    usable_runs: dict
    run_lengths: dict = field(default_factory=dict)

    def __post_init__(self):
        self.subjects = list(self.subjects)
        self.regions = list(self.regions)
        self.usable_runs = {s: frozenset(str(r) for r in v) for s, v in self.usable_runs.items()}
        self.run_index = {s: np.asarray(v).astype(str) for s, v in self.run_index.items()}
        self.run_lengths = {str(k): int(v) for k, v in self.run_lengths.items()}
        self.validate()

    @property
    def runs(self) -> list[str]:
        return sorted(self.run_lengths, key=run_sort_key)

    def validate(self):
        if len(set(self.subjects)) != len(self.subjects):
            raise InputError("duplicate subjects in panel")
        n_regions = len(self.regions)
        lengths = dict(self.run_lengths)
        for s in self.subjects:
            if s not in self.series:
                raise InputError(f"no time series for subject {s!r}")
            x = self.series[s]
            if x.ndim != 2 or x.shape[0] != n_regions:
                raise InputError(f"subject {s!r}: expected {n_regions} regions, got shape {x.shape}")
            idx = self.run_index[s]
            if idx.shape[0] != x.shape[1]:
                raise InputError(f"subject {s!r}: run index length does not match time points")
            present = list(dict.fromkeys(idx.tolist()))
            if present != sorted(present, key=run_sort_key):
                raise InputError(f"subject {s!r}: runs are not concatenated in run order")
            if set(present) != set(self.usable_runs[s]):
                raise InputError(f"subject {s!r}: usable runs do not match the data")
            for run in present:
                n = int(np.sum(idx == run))
                if lengths.setdefault(run, n) != n:
                    raise InputError(
                        f"subject {s!r}: run {run} has {n} time points, expected {lengths[run]}"
                    )
        self.run_lengths = lengths

    def time_mask(self, subject, runs) -> np.ndarray:
        return np.isin(self.run_index[subject], list(runs))

    def subset(self, subjects: Sequence) -> "TimeSeriesPanel":
        subjects = list(subjects)
        return TimeSeriesPanel(
            subjects,
            self.regions,
            {s: self.series[s] for s in subjects},
            {s: self.run_index[s] for s in subjects},
            {s: self.usable_runs[s] for s in subjects},
            dict(self.run_lengths),
        )


@dataclass
class IscTable:
    """``values[region, dyad]`` for an ordered list of unordered dyads."""

    regions: list
    dyads: list
    values: np.ndarray
    stage: str = RAW_R

    def __post_init__(self):
        self.regions = list(self.regions)
        self.dyads = [tuple(d) for d in self.dyads]
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.regions), len(self.dyads)):
            raise InputError(
                f"ISC values have shape {self.values.shape}, expected "
                f"({len(self.regions)}, {len(self.dyads)})"
            )
        if self.stage not in STAGES:
            raise InputError(f"unknown ISC stage {self.stage!r}")

    @property
    def subjects(self) -> list:
        return list(dict.fromkeys(s for d in self.dyads for s in d))

    def dyad_index(self) -> dict:
        return {frozenset(d): i for i, d in enumerate(self.dyads)}

    def select_dyads(self, keep: np.ndarray) -> "IscTable":
        keep = np.asarray(keep, dtype=bool)
        return replace(
            self, dyads=[d for d, k in zip(self.dyads, keep) if k], values=self.values[:, keep]
        )

    def to_long_frame(self) -> pd.DataFrame:
        n_r, n_d = self.values.shape
        a = [d[0] for d in self.dyads]
        b = [d[1] for d in self.dyads]
        return pd.DataFrame(
            {
                "region": np.repeat(np.asarray(self.regions, dtype=object), n_d),
                "subject_a": np.tile(np.asarray(a, dtype=object), n_r),
                "subject_b": np.tile(np.asarray(b, dtype=object), n_r),
                "stage": self.stage,
                "value": self.values.ravel(),
            }
        )

    @classmethod
    def from_long_frame(cls, frame: pd.DataFrame) -> "IscTable":
        need = {"region", "subject_a", "subject_b", "stage", "value"}
        if not need <= set(frame.columns):
            raise InputError(f"ISC table needs columns {sorted(need)}")
        stages = frame["stage"].unique()
        if len(stages) != 1:
            raise InputError(f"ISC table mixes stages {list(stages)}")
        frame = frame.astype({"region": str, "subject_a": str, "subject_b": str})
        regions = list(dict.fromkeys(frame["region"]))
        dyads = list(dict.fromkeys(zip(frame["subject_a"], frame["subject_b"])))
        r_idx = {r: i for i, r in enumerate(regions)}
        d_idx = {d: i for i, d in enumerate(dyads)}
        values = np.full((len(regions), len(dyads)), np.nan)
        rows = frame["region"].map(r_idx).to_numpy()
        cols = np.array([d_idx[d] for d in zip(frame["subject_a"], frame["subject_b"])])
        values[rows, cols] = pd.to_numeric(frame["value"], errors="coerce").to_numpy()
        return cls(regions, dyads, values, str(stages[0]))


def pearson_corr(x, y) -> float:
    """Pearson correlation; NaN (with a warning) if either input is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError(f"pearson_corr needs equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 3:
        raise InputError("pearson_corr needs at least 3 observations")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = np.dot(xc, xc)
    syy = np.dot(yc, yc)
    if sxx == 0 or syy == 0:
        warnings.warn("constant input to pearson_corr; returning NaN", RuntimeWarning, stacklevel=2)
        return float("nan")
    r = np.dot(xc, yc) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def dyad_runs(panel: TimeSeriesPanel, a, b, policy: str = POLICY_EXCLUDE):
    """Runs shared by ``a`` and ``b`` for ISC purposes, or ``None`` if excluded.

    A dyad is always computed when one member's usable runs cover the
    other's; when both members lost different runs the policy decides.
    """
    ua, ub = panel.usable_runs[a], panel.usable_runs[b]
    common = ua & ub
    if not common:
        return None
    if common == ua or common == ub or policy == POLICY_INTERSECT:
        return tuple(sorted(common, key=run_sort_key))
    if policy != POLICY_EXCLUDE:
        raise InputError(f"unknown partial-run policy {policy!r}")
    return None


def align_dyad(panel: TimeSeriesPanel, a, b, policy: str = POLICY_EXCLUDE):
    if a == b:
        raise InputError("a dyad needs two distinct subjects")
    runs = dyad_runs(panel, a, b, policy)
    if runs is None:
        return None
    xa = panel.series[a][:, panel.time_mask(a, runs)]
    xb = panel.series[b][:, panel.time_mask(b, runs)]
    return xa, xb


def all_dyads(subjects: Sequence) -> list[tuple]:
    return list(combinations(subjects, 2))


def _normalized_rows(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centered = rows - rows.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.einsum("ij,ij->i", centered, centered))
    dead = norms == 0
    norms[dead] = 1.0
    return centered / norms[:, None], dead


def isc_table(
    panel: TimeSeriesPanel,
    dyads: Sequence | None = None,
    policy: str = POLICY_EXCLUDE,
    threads: int = 1,
    max_dead_fraction: float = MAX_DEAD_FRACTION,
) -> IscTable:
    """Pearson ISC for every region and dyad.

    Dyads are grouped by the run set they are compared on so that each
    group costs one Gram matrix per region. Cells are independent of the
    thread count: each region is computed by the same code path.
    """
    if dyads is None:
        dyads = all_dyads(panel.subjects)
    dyads = [tuple(d) for d in dyads]
    groups: dict[tuple, list[int]] = defaultdict(list)
    excluded = np.zeros(len(dyads), dtype=bool)
    for j, (a, b) in enumerate(dyads):
        if a == b:
            raise InputError(f"dyad ({a}, {b}) repeats a subject")
        for s in (a, b):
            if s not in panel.series:
                raise InputError(f"dyad ({a}, {b}) references unknown subject {s!r}")
        runs = dyad_runs(panel, a, b, policy)
        if runs is None:
            excluded[j] = True
        else:
            groups[runs].append(j)
    if excluded.any():
        logger.info("%d dyad(s) excluded by partial-run policy %r", int(excluded.sum()), policy)

    plan = []
    for runs, cols in sorted(groups.items(), key=lambda kv: kv[1][0]):
        members = list(dict.fromkeys(s for j in cols for s in dyads[j]))
        pos = {s: i for i, s in enumerate(members)}
        ia = np.array([pos[dyads[j][0]] for j in cols])
        ib = np.array([pos[dyads[j][1]] for j in cols])
        masks = [panel.time_mask(s, runs) for s in members]
        full = [bool(m.all()) for m in masks]
        plan.append((np.array(cols), members, ia, ib, masks, full))

    def region_values(g: int) -> np.ndarray:
        out = np.full(len(dyads), np.nan)
        for cols, members, ia, ib, masks, full in plan:
            rows = np.stack(
                [
                    panel.series[s][g] if f else panel.series[s][g][m]
                    for s, m, f in zip(members, masks, full)
                ]
            ).astype(np.float64, copy=False)
            z, dead = _normalized_rows(rows)
            gram = z @ z.T
            r = np.clip(gram[ia, ib], -1.0, 1.0)
            r[dead[ia] | dead[ib]] = np.nan
            out[cols] = r
        return out

    n_regions = len(panel.regions)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(region_values, range(n_regions)))
    else:
        rows = [region_values(g) for g in range(n_regions)]
    values = np.vstack(rows) if rows else np.empty((0, len(dyads)))

    computed = (~excluded).sum()
    if computed:
        dead_frac = (np.isnan(values[:, ~excluded])).sum(axis=1) / computed
        bad = [panel.regions[i] for i in np.flatnonzero(dead_frac > max_dead_fraction)]
        if bad:
            raise DataQualityError(
                f"constant time series in more than {max_dead_fraction:.0%} of dyads "
                f"for region(s) {bad[:5]}"
            )
        n_dead = int(np.isnan(values[:, ~excluded]).sum())
        if n_dead:
            logger.warning("%d region/dyad cell(s) missing because of constant series", n_dead)
    return IscTable(panel.regions, dyads, values, RAW_R)


def fisher_z(table: IscTable, eps: float = CLAMP_EPS) -> IscTable:
    if table.stage != RAW_R:
        raise InputError(f"fisher_z expects stage {RAW_R}, got {table.stage}")
    z = np.arctanh(np.clip(table.values, -1.0 + eps, 1.0 - eps))
    return replace(table, values=z, stage=FISHER_Z)


def zscore_rows(values: np.ndarray, labels: Sequence | None = None) -> np.ndarray:
    """Row-wise z-score over non-missing entries (sample SD)."""
    values = np.asarray(values, dtype=float)
    out = np.full_like(values, np.nan)
    for i, row in enumerate(values):
        ok = ~np.isnan(row)
        name = labels[i] if labels is not None else i
        if ok.sum() < 2:
            raise DataQualityError(f"region {name}: fewer than 2 non-missing values")
        sd = row[ok].std(ddof=1)
        if not sd > 0:
            raise DataQualityError(f"region {name}: zero variance, cannot standardize")
        out[i, ok] = (row[ok] - row[ok].mean()) / sd
    return out


def standardize_within_region(table: IscTable) -> IscTable:
    if table.stage not in (FISHER_Z, FISHER_Z_STD):
        raise InputError(f"standardization expects a Fisher-z stage, got {table.stage}")
    return replace(table, values=zscore_rows(table.values, table.regions), stage=FISHER_Z_STD)


def to_stage(table: IscTable, stage: str) -> IscTable:
    """Advance a table to ``stage`` (stages only move forward)."""
    if STAGES.index(stage) < STAGES.index(table.stage):
        raise InputError(f"cannot move ISC table from {table.stage} back to {stage}")
    if table.stage == RAW_R and stage != RAW_R:
        table = fisher_z(table)
    if table.stage == FISHER_Z and stage == FISHER_Z_STD:
        table = standardize_within_region(table)
    return table


def scope_mask(dyads: Sequence, community: Mapping | None, scope: str = SCOPE_ALL) -> np.ndarray:
    if scope == SCOPE_ALL:
        return np.ones(len(dyads), dtype=bool)
    if scope != SCOPE_INTRA:
        raise InputError(f"unknown scope {scope!r}")
    if community is None:
        raise InputError("intra-community scope needs community labels")
    return np.array([community[a] == community[b] for a, b in dyads], dtype=bool)


def subject_means(
    dyads: Sequence,
    values: np.ndarray,
    subjects: Sequence,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Mean of each subject's dyadic values, ``values`` shaped ``(k, n_dyads)``.

    Returns ``(k, n_subjects)``; subjects with no eligible partner get NaN.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    pos = {s: i for i, s in enumerate(subjects)}
    incidence = np.zeros((len(dyads), len(subjects)))
    for j, (a, b) in enumerate(dyads):
        if mask is not None and not mask[j]:
            continue
        for s in (a, b):
            if s in pos:
                incidence[j, pos[s]] = 1.0
    present = ~np.isnan(values)
    sums = np.where(present, values, 0.0) @ incidence
    counts = present.astype(float) @ incidence
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts
    empty = counts.sum(axis=0) == 0
    if empty.any():
        names = [s for s, e in zip(subjects, empty) if e]
        warnings.warn(f"subjects without eligible dyads: {names[:5]}", RuntimeWarning, stacklevel=2)
    return means


def subject_mean_isc(
    table: IscTable,
    subjects: Sequence | None = None,
    scope: str = SCOPE_ALL,
    community: Mapping | None = None,
) -> pd.DataFrame:
    """Per-subject mean ISC, one column per region (index = subjects)."""
    if table.stage not in (FISHER_Z, FISHER_Z_STD):
        raise InputError(f"subject means need a Fisher-z stage, got {table.stage}")
    if subjects is None:
        subjects = table.subjects
    mask = scope_mask(table.dyads, community, scope)
    means = subject_means(table.dyads, table.values, subjects, mask)
    return pd.DataFrame(means.T, index=pd.Index(list(subjects), name="subject"), columns=table.regions)


# -- file formats ---------------------------------------------------------


def read_manifest(path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"subject": str, "run": str})
    need = {"subject", "run", "usable", "n_timepoints"}
    if not need <= set(frame.columns):
        raise InputError(f"{path}: run manifest needs columns {sorted(need)}")
    frame["usable"] = frame["usable"].map(_parse_bool)
    return frame


def _parse_bool(v) -> bool:
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "y", "t"):
        return True
    if s in ("0", "false", "no", "n", "f"):
        return False
    raise InputError(f"cannot read {v!r} as a boolean")


def read_panel(timeseries_dir, manifest_path, subjects: Sequence | None = None) -> TimeSeriesPanel:
    """One ``<subject>.csv`` per subject (header = region labels) plus a manifest.

    A subject file may hold every run in the manifest or only its usable
    runs; unusable runs are dropped either way.
    """
    manifest = read_manifest(manifest_path)
    timeseries_dir = Path(timeseries_dir)
    if subjects is None:
        subjects = list(dict.fromkeys(manifest["subject"]))
    regions = None
    series, run_index, usable = {}, {}, {}
    for s in subjects:
        rows = manifest[manifest["subject"] == s]
        if rows.empty:
            raise InputError(f"subject {s!r} missing from run manifest")
        rows = rows.sort_values("run", key=lambda c: c.map(run_sort_key))
        path = timeseries_dir / f"{s}.csv"
        if not path.exists():
            raise InputError(f"missing time series file {path}")
        frame = pd.read_csv(path, float_precision="round_trip")
        cols = [str(c) for c in frame.columns]
        if regions is None:
            regions = cols
        elif cols != regions:
            raise InputError(f"{path}: region labels differ from the first subject")
        data = frame.to_numpy(dtype=float)
        n_all = int(rows["n_timepoints"].sum())
        n_usable = int(rows.loc[rows["usable"], "n_timepoints"].sum())
        if data.shape[0] == n_all:
            labels = np.repeat(rows["run"].to_numpy(), rows["n_timepoints"].to_numpy())
            keep = np.isin(labels, rows.loc[rows["usable"], "run"].to_numpy())
        elif data.shape[0] == n_usable:
            use = rows[rows["usable"]]
            labels = np.repeat(use["run"].to_numpy(), use["n_timepoints"].to_numpy())
            keep = np.ones(n_usable, dtype=bool)
        else:
            raise InputError(
                f"{path}: {data.shape[0]} rows but manifest lists {n_all} "
                f"({n_usable} usable) time points"
            )
        series[s] = np.ascontiguousarray(data[keep].T)
        run_index[s] = labels[keep]
        usable[s] = set(rows.loc[rows["usable"], "run"])
    return TimeSeriesPanel(list(subjects), regions or [], series, run_index, usable)


def read_long_panel(path, manifest_path=None) -> TimeSeriesPanel:
    """Long CSV ``subject,run,t,region,value``; runs present are usable unless
    a manifest says otherwise."""
    frame = pd.read_csv(path, dtype={"subject": str, "run": str, "region": str}, float_precision="round_trip")
    need = {"subject", "run", "t", "region", "value"}
    if not need <= set(frame.columns):
        raise InputError(f"{path}: long time series needs columns {sorted(need)}")
    unusable = set()
    if manifest_path is not None:
        manifest = read_manifest(manifest_path)
        unusable = set(zip(manifest.loc[~manifest["usable"], "subject"], manifest.loc[~manifest["usable"], "run"]))
    regions = list(dict.fromkeys(frame["region"]))
    subjects = list(dict.fromkeys(frame["subject"]))
    series, run_index, usable = {}, {}, {}
    for s, sub in frame.groupby("subject", sort=False):
        sub = sub[[(s, r) not in unusable for r in sub["run"]]]
        wide = sub.pivot_table(index=["run", "t"], columns="region", values="value", aggfunc="first")
        wide = wide.reindex(columns=regions)
        order = sorted(wide.index, key=lambda rt: (run_sort_key(rt[0]), rt[1]))
        wide = wide.loc[order]
        if wide.isna().any().any():
            raise InputError(f"{path}: subject {s!r} has missing region/time values")
        series[s] = np.ascontiguousarray(wide.to_numpy(dtype=float).T)
        run_index[s] = np.array([rt[0] for rt in order])
        usable[s] = set(run_index[s])
    return TimeSeriesPanel(subjects, regions, series, run_index, usable)


def write_panel(panel: TimeSeriesPanel, directory, all_runs: Sequence | None = None, float_format="%.6g"):
    """Write per-subject CSVs (usable runs only) and ``manifest.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    runs = list(all_runs) if all_runs is not None else panel.runs
    rows = []
    for s in panel.subjects:
        pd.DataFrame(panel.series[s].T, columns=panel.regions).to_csv(
            directory / f"{s}.csv", index=False, float_format=float_format
        )
        for run in sorted(runs, key=run_sort_key):
            rows.append(
                {
                    "subject": s,
                    "run": run,
                    "usable": int(run in panel.usable_runs[s]),
                    "n_timepoints": panel.run_lengths[str(run)],
                }
            )
    pd.DataFrame(rows).to_csv(directory / "manifest.csv", index=False)


def write_isc_table(table: IscTable, path):
    table.to_long_frame().to_csv(path, index=False, float_format="%.17g")


def read_isc_table(path) -> IscTable:
    return IscTable.from_long_frame(pd.read_csv(path, dtype={"region": str, "subject_a": str, "subject_b": str}, float_precision="round_trip"))
