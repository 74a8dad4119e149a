"""Friendship networks: in-degree centrality, median splits, dyad categories
and geodesic social distances."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np
import pandas as pd

from .errors import DegenerateSplitError, InputError

logger = logging.getLogger(__name__)

HIGH, LOW = "High", "Low"
HIGH_HIGH, LOW_HIGH, LOW_LOW = "HighHigh", "LowHigh", "LowLow"
CATEGORIES = (HIGH_HIGH, LOW_HIGH, LOW_LOW)

MEDIAN_SPLIT, EQUAL_GROUPS = "median", "equal"
DEFAULT_COMMUNITY = "all"


def dyad_key(a, b) -> frozenset:
    return frozenset((a, b))


@dataclass(frozen=True)
class SocialGraph:
    """Directed nomination network.

    Duplicate nominations and self-nominations are dropped on construction;
    an edge whose endpoint is not a known node raises :class:`InputError`.
    """

    nodes: tuple
    directed_edges: tuple
    community: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        nodes = tuple(self.nodes)
        if len(set(nodes)) != len(nodes):
            raise InputError("duplicate node identifiers in social graph")
        known = set(nodes)
        seen = set()
        edges = []
        n_dup = n_self = 0
        for edge in self.directed_edges:
            src, dst = edge
            for end in (src, dst):
                if end not in known:
                    raise InputError(f"edge {src}->{dst} references unknown subject {end!r}")
            if src == dst:
                n_self += 1
                continue
            if (src, dst) in seen:
                n_dup += 1
                continue
            seen.add((src, dst))
            edges.append((src, dst))
        if n_dup:
            logger.info("dropped %d duplicate nomination(s)", n_dup)
        if n_self:
            logger.info("dropped %d self-nomination(s)", n_self)

        community = dict(self.community) if self.community else {}
        if not community:
            community = {v: DEFAULT_COMMUNITY for v in nodes}
        missing = [v for v in nodes if v not in community]
        if missing:
            raise InputError(f"subjects without a community label: {missing[:5]}")
        community = {v: str(community[v]) for v in nodes}

        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "directed_edges", tuple(edges))
        object.__setattr__(self, "community", community)

    def communities(self) -> list[str]:
        return sorted(set(self.community.values()))

    def members(self, label) -> list:
        return [v for v in self.nodes if self.community[v] == label]

    def undirected_ties(self) -> set[frozenset]:
        return {dyad_key(a, b) for a, b in self.directed_edges}


@dataclass(frozen=True)
class CentralityProfile:
    in_degree: Mapping[str, int]
    group: Mapping[str, str]
    log_in_degree: Mapping[str, float]
    threshold: float
    mode: str = MEDIAN_SPLIT
    excluded: frozenset = frozenset()

    @property
    def subjects(self) -> list:
        return [s for s in self.in_degree if s in self.group]

    def counts(self) -> dict[str, int]:
        groups = list(self.group.values())
        return {HIGH: groups.count(HIGH), LOW: groups.count(LOW)}

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "subject": s,
                "in_degree": int(k),
                "group": self.group.get(s, "excluded"),
                "log_in_degree": self.log_in_degree[s],
            }
            for s, k in self.in_degree.items()
        ]
        return pd.DataFrame(rows, columns=["subject", "in_degree", "group", "log_in_degree"])


def in_degree_centrality(graph: SocialGraph) -> dict:
    """Number of distinct nominators of every node (0 for nodes never named)."""
    degree = {v: 0 for v in graph.nodes}
    for src, dst in graph.directed_edges:
        if dst not in degree or src not in degree:
            raise InputError(f"edge {src}->{dst} references unknown subject")
        degree[dst] += 1
    return degree


def median_split(in_degree: Mapping, mode: str = MEDIAN_SPLIT):
    """Binarize in-degree at the sample median.

    Returns ``(groups, excluded)``. Under ``"median"`` ties at the median go
    Low and nothing is excluded; under ``"equal"`` subjects sitting exactly on
    the median are dropped.
    """
    if mode not in (MEDIAN_SPLIT, EQUAL_GROUPS):
        raise InputError(f"unknown split mode {mode!r}")
    if len(in_degree) < 2:
        raise InputError("median split needs at least 2 subjects")
    values = np.asarray(list(in_degree.values()), dtype=float)
    if np.any(values < 0):
        raise InputError("in-degrees must be non-negative")
    if np.all(values == values[0]):
        raise DegenerateSplitError("degenerate split: single group")
    median = float(np.median(values))

    groups, excluded = {}, set()
    for subject, k in in_degree.items():
        if k > median:
            groups[subject] = HIGH
        elif mode == EQUAL_GROUPS and k == median:
            excluded.add(subject)
        else:
            groups[subject] = LOW
    if len(set(groups.values())) < 2:
        raise DegenerateSplitError("degenerate split: single group")
    return groups, frozenset(excluded)


def centrality_profile(
    graph: SocialGraph, subjects: Sequence | None = None, mode: str = MEDIAN_SPLIT
) -> CentralityProfile:
    """In-degree over the whole graph, median taken over ``subjects`` only."""
    full = in_degree_centrality(graph)
    if subjects is None:
        subjects = list(graph.nodes)
    unknown = [s for s in subjects if s not in full]
    if unknown:
        raise InputError(f"subjects missing from the social graph: {unknown[:5]}")
    degree = {s: full[s] for s in subjects}
    groups, excluded = median_split(degree, mode)
    median = float(np.median(list(degree.values())))
    log_degree = {s: float(np.log1p(k)) for s, k in degree.items()}
    return CentralityProfile(degree, groups, log_degree, median, mode, excluded)


def dyad_category(group_a: str, group_b: str) -> str:
    if group_a == HIGH and group_b == HIGH:
        return HIGH_HIGH
    if group_a == LOW and group_b == LOW:
        return LOW_LOW
    return LOW_HIGH


def dyad_centrality_table(
    profile: CentralityProfile,
    subjects: Sequence | None = None,
    exclude_dyads: Iterable = (),
) -> pd.DataFrame:
    """One row per unordered pair of ``subjects`` (list order, a before b)."""
    if subjects is None:
        subjects = profile.subjects
    for s in subjects:
        if s not in profile.group:
            raise InputError(f"subject {s!r} has no centrality group")
    dropped = {dyad_key(*d) for d in exclude_dyads}
    rows = []
    for a, b in combinations(subjects, 2):
        if dyad_key(a, b) in dropped:
            continue
        kmin = min(profile.in_degree[a], profile.in_degree[b])
        rows.append((a, b, dyad_category(profile.group[a], profile.group[b]), kmin, float(np.log1p(kmin))))
    return pd.DataFrame(
        rows, columns=["subject_a", "subject_b", "category", "min_in_degree", "log_min_in_degree"]
    )


def category_counts(table: pd.DataFrame) -> dict[str, int]:
    counts = table["category"].value_counts()
    return {c: int(counts.get(c, 0)) for c in CATEGORIES}


def social_distance(graph: SocialGraph, community) -> dict[frozenset, int]:
    """Geodesic distance between every pair of members of one community.

    Ties are undirected: one nomination in either direction is enough.
    Pairs in different components get the community's largest finite
    distance plus one.
    """
    members = graph.members(community)
    g = nx.Graph()
    g.add_nodes_from(members)
    member_set = set(members)
    g.add_edges_from(
        (a, b) for a, b in graph.directed_edges if a in member_set and b in member_set
    )
    lengths = dict(nx.all_pairs_shortest_path_length(g))
    finite = {}
    for a, b in combinations(members, 2):
        d = lengths[a].get(b)
        if d is not None:
            finite[dyad_key(a, b)] = d
    max_finite = max(finite.values(), default=0)
    if not finite and len(members) > 1:
        logger.warning("community %s has no ties; all pairs get distance 1", community)
    out = {}
    for a, b in combinations(members, 2):
        out[dyad_key(a, b)] = finite.get(dyad_key(a, b), max_finite + 1)
    return out


def all_social_distances(graph: SocialGraph) -> dict[frozenset, int]:
    out = {}
    for label in graph.communities():
        out.update(social_distance(graph, label))
    return out


def friendship_indicator(graph: SocialGraph, a, b) -> int:
    return int(dyad_key(a, b) in graph.undirected_ties())


def same_community(graph: SocialGraph, a, b) -> bool:
    return graph.community[a] == graph.community[b]


def annotate_dyads(table: pd.DataFrame, graph: SocialGraph) -> pd.DataFrame:
    """Add friendship, same_community and social_distance columns.

    ``social_distance`` is NaN for cross-community dyads.
    """
    ties = graph.undirected_ties()
    distances = all_social_distances(graph)
    out = table.copy()
    keys = [dyad_key(a, b) for a, b in zip(out["subject_a"], out["subject_b"])]
    out["friendship"] = [int(k in ties) for k in keys]
    out["same_community"] = [
        graph.community[a] == graph.community[b] for a, b in zip(out["subject_a"], out["subject_b"])
    ]
    out["social_distance"] = [float(distances[k]) if k in distances else np.nan for k in keys]
    return out


def read_edge_list(path) -> list[tuple[str, str]]:
    frame = pd.read_csv(path, dtype=str)
    missing = {"nominator", "nominee"} - set(frame.columns)
    if missing:
        raise InputError(f"{path}: edge list needs columns nominator,nominee (missing {sorted(missing)})")
    frame = frame.dropna(subset=["nominator", "nominee"])
    return list(zip(frame["nominator"].str.strip(), frame["nominee"].str.strip()))


def read_communities(path) -> dict[str, str]:
    frame = pd.read_csv(path, dtype=str)
    if not {"subject", "community"} <= set(frame.columns):
        raise InputError(f"{path}: community file needs columns subject,community")
    if frame["subject"].duplicated().any():
        dup = frame.loc[frame["subject"].duplicated(), "subject"].tolist()
        raise InputError(f"{path}: subjects listed twice: {dup[:5]}")
    return dict(zip(frame["subject"].str.strip(), frame["community"].str.strip()))


def load_graph(edges_path, communities_path=None) -> SocialGraph:
    edges = read_edge_list(edges_path)
    if communities_path is not None:
        community = read_communities(communities_path)
        nodes = list(community)
    else:
        community = {}
        nodes = list(dict.fromkeys(v for e in edges for v in e))
    return SocialGraph(tuple(nodes), tuple(edges), community)


def dyad_output_frame(table: pd.DataFrame) -> pd.DataFrame:
    cols = ["subject_a", "subject_b", "category", "min_in_degree", "friendship", "social_distance"]
    out = table[cols].copy()
    out["social_distance"] = out["social_distance"].astype("Int64")
    return out
