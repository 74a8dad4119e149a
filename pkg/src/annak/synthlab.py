"""Synthetic networks, ratings and time-series panels with planted structure.

The planted model couples every subject to one shared signal per region,
``x_i = a_i * s + sqrt(1 - a_i^2) * e_i``, so the expected correlation of a
dyad is exactly ``a_i * a_j``. A nearest-neighbour variant instead mixes a
bank of basis signals with Gaussian weights centred on ``a_i``, so dyads
are similar when their weights are close regardless of level.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .behav import RatingMatrix, write_ratings
from .errors import InputError
from .graphnet import SocialGraph, centrality_profile, in_degree_centrality
from .isccore import TimeSeriesPanel, write_panel

logger = logging.getLogger(__name__)

ANNAK, NEAREST_NEIGHBOR = "annak", "nearest_neighbor"

# in-degree histogram with median 2 and maximum 9 (63 subjects, 23 above the median)
PAPER_DEGREE_HISTOGRAM = {0: 10, 1: 16, 2: 14, 3: 8, 4: 6, 5: 4, 6: 2, 7: 1, 8: 1, 9: 1}


def subject_ids(n: int) -> list[str]:
    width = max(3, len(str(n)))
    return [f"s{i + 1:0{width}d}" for i in range(n)]


def region_ids(n: int) -> list[str]:
    width = max(3, len(str(n)))
    return [f"region{g + 1:0{width}d}" for g in range(n)]


@dataclass
class PlantSpec:
    """Generative description of a synthetic panel."""

    n_subjects: int
    n_regions: int
    planted_regions: Sequence
    n_timepoints: int
    runs: Sequence = ("1",)
    alpha_map: Mapping = field(default_factory=dict)
    null_alpha: float = 0.0
    seed: int = 0
    variant: str = ANNAK
    nn_coupling: float = 0.7
    nn_bandwidth: float = 0.1
    nn_basis: int = 12
    missing_runs: Mapping = field(default_factory=dict)
    dtype: str = "float64"

    def __post_init__(self):
        self.runs = [str(r) for r in self.runs]
        self.planted_regions = [str(r) for r in self.planted_regions]
        unknown = set(self.planted_regions) - set(self.regions)
        if unknown:
            raise InputError(f"planted regions not among the generated regions: {sorted(unknown)}")
        if self.alpha_map and len(self.alpha_map) != self.n_subjects:
            raise InputError("alpha_map must cover every subject")
        for s, a in self.alpha_map.items():
            if not 0.0 <= a <= 1.0:
                raise InputError(f"alpha for {s!r} outside [0, 1]: {a}")
        if not 0.0 <= self.null_alpha <= 1.0:
            raise InputError("null_alpha must lie in [0, 1]")
        if self.variant not in (ANNAK, NEAREST_NEIGHBOR):
            raise InputError(f"unknown generator variant {self.variant!r}")
        for s, runs in self.missing_runs.items():
            bad = set(map(str, runs)) - set(self.runs)
            if bad or len(set(map(str, runs))) >= len(self.runs):
                raise InputError(f"subject {s!r}: invalid missing runs {sorted(map(str, runs))}")

    @property
    def regions(self) -> list[str]:
        return region_ids(self.n_regions)

    @property
    def subjects(self) -> list:
        return list(self.alpha_map) if self.alpha_map else subject_ids(self.n_subjects)

    def alpha(self, subject) -> float:
        return float(self.alpha_map.get(subject, self.null_alpha))

    def to_json(self) -> dict:
        return {
            "n_subjects": self.n_subjects,
            "n_regions": self.n_regions,
            "planted_regions": list(self.planted_regions),
            "n_timepoints": self.n_timepoints,
            "runs": list(self.runs),
            "alpha_map": {str(k): float(v) for k, v in self.alpha_map.items()},
            "null_alpha": self.null_alpha,
            "seed": self.seed,
            "variant": self.variant,
            "nn_coupling": self.nn_coupling,
            "nn_bandwidth": self.nn_bandwidth,
            "nn_basis": self.nn_basis,
            "missing_runs": {str(k): sorted(map(str, v)) for k, v in self.missing_runs.items()},
            "dtype": self.dtype,
        }


def scaled_degree_profile(n: int, histogram: Mapping[int, int] = PAPER_DEGREE_HISTOGRAM) -> list[int]:
    """Sorted in-degree sequence of length ``n`` with the histogram's shape
    (largest-remainder rounding)."""
    if n < 4:
        raise InputError("need at least 4 subjects")
    degrees = sorted(histogram)
    total = sum(histogram.values())
    raw = np.array([histogram[k] * n / total for k in degrees])
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="mergesort")
    counts[order[:short]] += 1
    return [k for k, c in zip(degrees, counts) for _ in range(c)]


def generate_network(
    n: int,
    degree_profile: Sequence[int] | None = None,
    seed: int = 0,
    n_communities: int = 1,
    subjects: Sequence | None = None,
):
    """Directed network with an exact in-degree sequence.

    ``degree_profile[i]`` is the target in-degree of subject ``i``; nominators
    are drawn without replacement from the subject's own community, favouring
    members that have nominated fewer people so far. Returns
    ``(SocialGraph, CentralityProfile)``; the profile is ``None`` when every
    in-degree is equal and no split exists.
    """
    if n < 4:
        raise InputError("generate_network needs n >= 4")
    rng = np.random.default_rng(seed)
    if degree_profile is None:
        degree_profile = list(rng.permutation(scaled_degree_profile(n)))
    degree_profile = [int(k) for k in degree_profile]
    if len(degree_profile) != n:
        raise InputError(f"degree profile has {len(degree_profile)} entries for {n} subjects")
    subjects = list(subjects) if subjects is not None else subject_ids(n)
    if n_communities < 1 or n_communities > n:
        raise InputError("invalid number of communities")
    labels = [f"c{c + 1}" for c in range(n_communities)]
    community = {s: labels[i * n_communities // n] for i, s in enumerate(subjects)}
    members = {c: [s for s in subjects if community[s] == c] for c in labels}

    for s, k in zip(subjects, degree_profile):
        size = len(members[community[s]])
        if k < 0 or k > size - 1:
            raise InputError(f"infeasible in-degree {k} for {s!r} in a community of {size}")

    out_degree = dict.fromkeys(subjects, 0)
    edges = []
    for i in rng.permutation(n):
        s, k = subjects[i], degree_profile[i]
        if k == 0:
            continue
        pool = [m for m in members[community[s]] if m != s]
        w = np.array([1.0 / (1.0 + out_degree[m]) for m in pool])
        chosen = rng.choice(len(pool), size=k, replace=False, p=w / w.sum())
        for j in sorted(chosen):
            edges.append((pool[j], s))
            out_degree[pool[j]] += 1
    edges.sort(key=lambda e: (subjects.index(e[0]), subjects.index(e[1])))
    graph = SocialGraph(tuple(subjects), tuple(edges), community)
    if len(set(degree_profile)) < 2:
        return graph, None
    return graph, centrality_profile(graph)


def alpha_from_rank(in_degree: Mapping, alpha_min: float = 0.3, alpha_max: float = 0.8) -> dict:
    """Map in-degree ranks (ties averaged) linearly onto ``[alpha_min, alpha_max]``."""
    subjects = list(in_degree)
    n = len(subjects)
    if n < 2:
        raise InputError("need at least 2 subjects")
    ranks = stats.rankdata([in_degree[s] for s in subjects]) - 1.0
    alpha = alpha_min + (alpha_max - alpha_min) * ranks / (n - 1)
    return {s: float(a) for s, a in zip(subjects, alpha)}


def plant_spec_for(
    graph: SocialGraph,
    n_regions: int,
    n_planted: int,
    n_timepoints: int,
    alpha_min: float = 0.3,
    alpha_max: float = 0.8,
    null_alpha: float = 0.55,
    seed: int = 0,
    **kwargs,
) -> PlantSpec:
    """PlantSpec whose first ``n_planted`` regions carry rank-based coupling."""
    alpha = alpha_from_rank(in_degree_centrality(graph), alpha_min, alpha_max)
    return PlantSpec(
        n_subjects=len(alpha),
        n_regions=n_regions,
        planted_regions=region_ids(n_regions)[:n_planted],
        n_timepoints=n_timepoints,
        alpha_map=alpha,
        null_alpha=null_alpha,
        seed=seed,
        **kwargs,
    )


def _nn_weights(spec: PlantSpec, alphas: np.ndarray) -> np.ndarray:
    centers = np.linspace(0.0, 1.0, spec.nn_basis)
    w = np.exp(-0.5 * ((alphas[:, None] - centers[None, :]) / spec.nn_bandwidth) ** 2)
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def generate_timeseries(spec: PlantSpec, graph: SocialGraph | None = None) -> TimeSeriesPanel:
    """Draw a panel region by region from one sequential RNG stream.

    ``n_timepoints`` is per run. Subjects listed in ``missing_runs`` keep
    only their remaining runs. ``graph`` is accepted for symmetry with the
    network generator; coupling comes from ``spec.alpha_map``.
    """
    subjects = spec.subjects
    if graph is not None:
        unknown = set(subjects) - set(graph.nodes)
        if unknown:
            raise InputError(f"alpha_map names subjects outside the graph: {sorted(unknown)[:5]}")
    rng = np.random.default_rng(spec.seed)
    dtype = np.dtype(spec.dtype)
    n, T = len(subjects), spec.n_timepoints * len(spec.runs)
    alphas = np.array([spec.alpha(s) for s in subjects])
    planted = set(spec.planted_regions)
    series = {s: np.empty((spec.n_regions, T), dtype=dtype) for s in subjects}
    nn_w = _nn_weights(spec, alphas) if spec.variant == NEAREST_NEIGHBOR else None

    for g, region in enumerate(spec.regions):
        noise = rng.standard_normal((n, T), dtype=np.float32 if dtype == np.float32 else np.float64)
        if region in planted and nn_w is not None:
            basis = rng.standard_normal((spec.nn_basis, T))
            shared = nn_w @ basis
            c = spec.nn_coupling
            block = c * shared + np.sqrt(1.0 - c * c) * noise
        else:
            a = alphas if region in planted else np.full(n, spec.null_alpha)
            signal = rng.standard_normal(T)
            block = noise
            block *= np.sqrt(1.0 - a * a)[:, None].astype(block.dtype)
            block += (a[:, None] * signal[None, :]).astype(block.dtype)
        for i, s in enumerate(subjects):
            series[s][g] = block[i]

    run_labels = np.repeat(np.array(spec.runs), spec.n_timepoints)
    run_index, usable = {}, {}
    for s in subjects:
        missing = set(map(str, spec.missing_runs.get(s, ())))
        keep = ~np.isin(run_labels, list(missing))
        if missing:
            series[s] = np.ascontiguousarray(series[s][:, keep])
        run_index[s] = run_labels[keep]
        usable[s] = set(spec.runs) - missing
    return TimeSeriesPanel(
        subjects, spec.regions, series, run_index, usable, {r: spec.n_timepoints for r in spec.runs}
    )


def expected_isc_oracle(spec: PlantSpec, dyad, region=None) -> float:
    """Population ISC of ``dyad``; ``region=None`` means a planted region."""
    a, b = dyad
    if region is not None and str(region) not in set(spec.planted_regions):
        return spec.null_alpha**2
    if spec.variant == NEAREST_NEIGHBOR:
        w = _nn_weights(spec, np.array([spec.alpha(a), spec.alpha(b)]))
        return float(spec.nn_coupling**2 * (w[0] @ w[1]))
    return spec.alpha(a) * spec.alpha(b)


def generate_ratings(
    alpha: Mapping,
    items: int | Sequence = 14,
    seed: int = 0,
    noise_sd: float = 1.0,
    scale: float = 1.2,
    name: str = "enjoyment",
) -> RatingMatrix:
    """Ratings from a latent mixture of one shared profile and private noise.

    ``latent_i = a_i * p + sqrt(1 - a_i^2) * noise_sd * e_i`` is mapped to
    ``round(3 + scale * latent)`` and clipped to 1..5.
    """
    items = [f"item{j + 1:02d}" for j in range(items)] if isinstance(items, int) else list(items)
    rng = np.random.default_rng(seed)
    subjects = list(alpha)
    a = np.array([alpha[s] for s in subjects], dtype=float)
    if np.any((a < 0) | (a > 1)):
        raise InputError("rating weights must lie in [0, 1]")
    profile = rng.standard_normal(len(items))
    noise = rng.standard_normal((len(subjects), len(items)))
    latent = a[:, None] * profile[None, :] + np.sqrt(1.0 - a * a)[:, None] * noise_sd * noise
    values = np.clip(np.rint(3.0 + scale * latent), 1, 5).astype(int)
    return RatingMatrix(subjects, items, {s: values[i] for i, s in enumerate(subjects)}, name)


def generate_attributes(subjects: Sequence, seed: int = 0) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    n = len(subjects)
    ethnic = np.array(["Asian", "Black", "Hispanic", "White", "Other"])
    countries = np.array(["US", "US", "US", "CN", "IN", "KR"])
    rows = []
    for s in subjects:
        k = 1 + int(rng.random() < 0.2)
        eth = sorted(rng.choice(ethnic, size=k, replace=False))
        rows.append(
            {
                "subject": s,
                "age": int(rng.integers(18, 23)),
                "gender": str(rng.choice(["F", "M"])),
                "home_country": str(rng.choice(countries)),
                "ethnicities": ";".join(eth),
            }
        )
    return pd.DataFrame(rows, columns=["subject", "age", "gender", "home_country", "ethnicities"])


def partial_run_exclusion(profile, runs: Sequence, seed: int = 0) -> dict:
    """Pick two Low subjects and drop a different run from each, so that
    exactly one Low-Low dyad has no shared complete run set."""
    runs = [str(r) for r in runs]
    if len(runs) < 2:
        raise InputError("need at least 2 runs to plant partial runs")
    rng = np.random.default_rng(seed)
    low = [s for s in profile.subjects if profile.group.get(s) == "Low"]
    if len(low) < 2:
        raise InputError("need at least 2 Low subjects")
    a, b = (low[i] for i in sorted(rng.choice(len(low), size=2, replace=False)))
    return {a: [runs[-1]], b: [runs[-2]]}


@dataclass
class SyntheticStudy:
    graph: SocialGraph
    profile: object
    spec: PlantSpec
    panel: TimeSeriesPanel
    ratings: dict
    attributes: pd.DataFrame


def generate_study(
    n_subjects: int = 63,
    n_regions: int = 20,
    n_planted: int = 5,
    n_timepoints: int = 1000,
    runs: Sequence = ("1",),
    alpha_min: float = 0.3,
    alpha_max: float = 0.8,
    null_alpha: float = 0.55,
    seed: int = 0,
    variant: str = ANNAK,
    n_communities: int = 1,
    partial_runs: bool = False,
    n_items: int = 14,
    dtype: str = "float64",
) -> SyntheticStudy:
    """Network, panel, ratings and attributes from a single seed."""
    seeds = np.random.SeedSequence(seed).spawn(5)
    ints = [int(s.generate_state(1)[0]) for s in seeds]
    graph, profile = generate_network(n_subjects, seed=ints[0], n_communities=n_communities)
    missing = partial_run_exclusion(profile, runs, ints[1]) if partial_runs else {}
    spec = plant_spec_for(
        graph,
        n_regions,
        n_planted,
        n_timepoints,
        alpha_min,
        alpha_max,
        null_alpha,
        seed=ints[2],
        runs=runs,
        variant=variant,
        missing_runs=missing,
        dtype=dtype,
    )
    panel = generate_timeseries(spec, graph)
    ratings = {
        "enjoyment": generate_ratings(spec.alpha_map, n_items, ints[3], name="enjoyment"),
        "interest": generate_ratings(spec.alpha_map, n_items, ints[3] + 1, name="interest"),
    }
    attributes = generate_attributes(graph.nodes, ints[4])
    return SyntheticStudy(graph, profile, spec, panel, ratings, attributes)


def write_study(study: SyntheticStudy, out_dir, seed: int | None = None) -> dict:
    """Write every input file the pipeline reads plus ``truth.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(study.graph.directed_edges), columns=["nominator", "nominee"]).to_csv(
        out / "edges.csv", index=False
    )
    pd.DataFrame(
        {"subject": list(study.graph.nodes), "community": [study.graph.community[s] for s in study.graph.nodes]}
    ).to_csv(out / "communities.csv", index=False)
    write_panel(study.panel, out / "timeseries", all_runs=study.spec.runs)
    write_ratings(study.ratings, out / "ratings.csv")
    study.attributes.to_csv(out / "attributes.csv", index=False)
    truth = {
        "seed": seed,
        "planted_regions": list(study.spec.planted_regions),
        "alpha": {str(k): float(v) for k, v in study.spec.alpha_map.items()},
        "in_degree": {str(k): int(v) for k, v in in_degree_centrality(study.graph).items()},
        "spec": study.spec.to_json(),
    }
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    return {
        "edges": str(out / "edges.csv"),
        "communities": str(out / "communities.csv"),
        "timeseries": str(out / "timeseries"),
        "manifest": str(out / "timeseries" / "manifest.csv"),
        "ratings": str(out / "ratings.csv"),
        "attributes": str(out / "attributes.csv"),
        "truth": str(out / "truth.json"),
    }
