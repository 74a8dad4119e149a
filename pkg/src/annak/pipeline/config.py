"""Analysis configuration: defaults, JSON round-trip and consistency checks."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import pandas as pd

from ..errors import ConfigError, InputError
from ..graphnet import EQUAL_GROUPS, MEDIAN_SPLIT
from ..isccore import FISHER_Z, FISHER_Z_STD, POLICY_EXCLUDE, POLICY_INTERSECT, SCOPE_ALL, SCOPE_INTRA, STAGES

logger = logging.getLogger(__name__)

COV_NONE = "none"
COV_DEMOGRAPHICS = "demographics"
COV_DEMO_DISTANCE = "demographics+social_distance"
COV_FRIENDSHIP = "friendship"
COV_PREFERENCES = "preferences"
COVARIATE_SETS = (COV_NONE, COV_DEMOGRAPHICS, COV_DEMO_DISTANCE, COV_FRIENDSHIP, COV_PREFERENCES)

DEMOGRAPHIC_TERMS = ("age_sim", "same_gender", "shared_ethnicity", "same_home_country")
PREFERENCE_TERMS = ("enjoyment_sim", "interest_sim")

SUBJECT_ALPHA = 0.05
DYAD_ALPHA = 0.001
FALLBACK_ALPHA = 0.05

PATH_FIELDS = ("edges", "communities", "timeseries", "manifest", "isc", "ratings", "attributes", "exclusions")


@dataclass
class AnalysisConfig:
    edges: str | None = None
    communities: str | None = None
    timeseries: str | None = None
    manifest: str | None = None
    isc: str | None = None
    ratings: str | None = None
    attributes: str | None = None
    exclusions: str | None = None
    out: str = "results"
    scope: str = SCOPE_ALL
    split: str = MEDIAN_SPLIT
    partial_run_policy: str = POLICY_EXCLUDE
    stage: str | None = None
    covariates: str = COV_NONE
    alpha: float | None = None
    one_sided: bool = False
    seed: int = 0

    @classmethod
    def from_json(cls, path) -> "AnalysisConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def updated(self, **overrides) -> "AnalysisConfig":
        data = asdict(self)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return AnalysisConfig(**data)

    def resolve(self, level: str, check_inputs: bool = True) -> "AnalysisConfig":
        """Fill level-specific defaults and check consistency; raises ConfigError.

        ``check_inputs=False`` skips the input-file checks for in-memory runs.
        """
        cfg = self.updated()
        if cfg.scope not in (SCOPE_ALL, SCOPE_INTRA):
            raise ConfigError(f"scope must be {SCOPE_ALL!r} or {SCOPE_INTRA!r}")
        if cfg.split not in (MEDIAN_SPLIT, EQUAL_GROUPS):
            raise ConfigError(f"split must be {MEDIAN_SPLIT!r} or {EQUAL_GROUPS!r}")
        if cfg.partial_run_policy not in (POLICY_EXCLUDE, POLICY_INTERSECT):
            raise ConfigError(f"partial-run policy must be {POLICY_EXCLUDE!r} or {POLICY_INTERSECT!r}")
        if cfg.covariates not in COVARIATE_SETS:
            raise ConfigError(f"covariates must be one of {COVARIATE_SETS}")
        if cfg.stage is None:
            cfg.stage = FISHER_Z if level == "subject" else FISHER_Z_STD
        if cfg.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}")
        if level in ("subject", "dyad") and cfg.stage not in (FISHER_Z, FISHER_Z_STD):
            raise ConfigError(f"{level}-level models need a Fisher-z stage, not {cfg.stage}")
        if cfg.alpha is None:
            cfg.alpha = DYAD_ALPHA if level == "dyad" else SUBJECT_ALPHA
        if not 0 < cfg.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if cfg.covariates == COV_DEMO_DISTANCE and cfg.scope != SCOPE_INTRA:
            logger.warning("social distance is defined within communities only; scope set to %r", SCOPE_INTRA)
            cfg.scope = SCOPE_INTRA
        if check_inputs:
            cfg._check_inputs(level)
        return cfg

    def _check_inputs(self, level: str):
        cfg = self
        if not cfg.edges:
            raise ConfigError("an edge list is required")
        if level in ("subject", "dyad") and not (cfg.isc or (cfg.timeseries and cfg.manifest)):
            raise ConfigError("need either an ISC table or a time-series directory plus manifest")
        if cfg.scope == SCOPE_INTRA and not cfg.communities:
            raise ConfigError("intra-community scope needs a communities file")
        if cfg.covariates in (COV_DEMOGRAPHICS, COV_DEMO_DISTANCE) and not cfg.attributes:
            raise ConfigError(f"covariates {cfg.covariates!r} need an attributes file")
        if (cfg.covariates == COV_PREFERENCES or level == "behav") and not cfg.ratings:
            raise ConfigError("preference analyses need a ratings file")
        for name in PATH_FIELDS:
            value = getattr(cfg, name)
            if value and not Path(value).exists():
                raise ConfigError(f"{name} path does not exist: {value}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class Exclusions:
    subjects: frozenset = frozenset()
    dyads: frozenset = frozenset()


def read_exclusions(path) -> Exclusions:
    """CSV ``kind,subject_a,subject_b`` with kind ``subject`` or ``dyad``."""
    if path is None:
        return Exclusions()
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    need = {"kind", "subject_a", "subject_b"}
    if not need <= set(frame.columns):
        raise InputError(f"{path}: exclusions need columns kind,subject_a,subject_b")
    subjects, dyads = set(), set()
    for kind, a, b in zip(frame["kind"].str.strip().str.lower(), frame["subject_a"].str.strip(), frame["subject_b"].str.strip()):
        if kind == "subject":
            subjects.add(a)
        elif kind == "dyad":
            if not a or not b or a == b:
                raise InputError(f"{path}: dyad exclusion needs two distinct subjects ({a!r}, {b!r})")
            dyads.add(frozenset((a, b)))
        else:
            raise InputError(f"{path}: unknown exclusion kind {kind!r}")
    return Exclusions(frozenset(subjects), frozenset(dyads))
