"""
Run configuration

Pydantic models for every configurable knob, loaded from TOML files and
merged with command-line flags. Precedence: defaults < TOML file < flags.
"""

from __future__ import annotations

import os
import sys
from collections.abc import Mapping
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from src.state.schemas import CausalQuery
from src.utils.errors import ConfigError


EstimatorKind = Literal["ols", "ipw"]
UpdateMode = Literal["exact", "neumann", "refit"]
RepairMode = Literal["tuple", "tuple-single-update", "pattern", "opt-tuple", "opt-pattern"]

DEFAULT_TIME_LIMIT = 36_000.0
DEFAULT_HIT_TOLERANCE = 1e-9


class EstimatorConfig(BaseModel):
    """Estimator choice and numerical knobs for incremental updates"""
    model_config = ConfigDict(extra="forbid")

    kind: EstimatorKind = "ols"
    update: UpdateMode = "exact"
    # IPW
    lam: float = Field(default=1e-4, ge=0.0)
    clip: float = Field(default=0.01, gt=0.0, lt=0.5)
    batch_size: int = Field(default=512, ge=1)
    sigma: float = Field(default=0.0, ge=0.0)
    # OLS / Neumann
    norm_threshold: float = Field(default=0.5, gt=0.0)
    max_neumann_steps: int = Field(default=50, ge=1)
    seed: int = 0


class TupleRepairConfig(BaseModel):
    """Greedy influence-guided deletion"""
    model_config = ConfigDict(extra="forbid")

    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    refresh_period: int = Field(default=10, ge=1)
    s: int = Field(default=2, ge=1)
    k: Optional[int] = Field(default=None, ge=1)
    m_k_cap: int = Field(default=5, ge=1)
    sample_fraction: float = Field(default=0.10, gt=0.0, le=1.0)
    sample_threshold: int = Field(default=500_000, ge=1)
    knn_k: int = Field(default=100, ge=0)
    max_removals: Optional[int] = Field(default=None, ge=0)
    max_removal_fraction: float = Field(default=0.20, gt=0.0, le=1.0)
    no_progress_rounds: int = Field(default=2, ge=1)
    seed: int = 0
    time_limit: float = Field(default=DEFAULT_TIME_LIMIT, gt=0.0)
    hit_tolerance: float = Field(default=DEFAULT_HIT_TOLERANCE, ge=0.0)

    def budget(self, n: int) -> int:
        if self.max_removals is not None:
            return self.max_removals
        return int(self.max_removal_fraction * n)


class PatternRepairConfig(BaseModel):
    """Weighted random walks over the pattern lattice"""
    model_config = ConfigDict(extra="forbid")

    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    k_walks: int = Field(default=1000, ge=0)
    tau: float = Field(default=0.20, ge=0.0, le=1.0)
    refit_fraction: float = Field(default=0.05, ge=0.0, le=1.0)
    exclude_treatment: bool = True
    sample_fraction: float = Field(default=0.10, gt=0.0, le=1.0)
    sample_threshold: int = Field(default=500_000, ge=1)
    seed: int = 0
    time_limit: float = Field(default=DEFAULT_TIME_LIMIT, gt=0.0)
    hit_tolerance: float = Field(default=DEFAULT_HIT_TOLERANCE, ge=0.0)


class QueryConfig(BaseModel):
    """The [query] table of a run file"""
    model_config = ConfigDict(extra="forbid")

    treatment: str
    outcome: str
    confounders: list[str] = Field(default_factory=list)
    target: float
    epsilon: float = Field(default=0.0, ge=0.0)

    def to_query(self) -> CausalQuery:
        return CausalQuery(
            treatment=self.treatment,
            outcome=self.outcome,
            confounders=tuple(self.confounders),
            target=self.target,
            epsilon=self.epsilon,
        )


class OutputConfig(BaseModel):
    """Artifact paths; relative names land in OUTPUT_DIR"""
    model_config = ConfigDict(extra="forbid")

    result_json: Optional[Path] = Path("result.json")
    removed_csv: Optional[Path] = None
    trace_csv: Optional[Path] = None
    state_json: Optional[Path] = None
    include_trace: bool = True


class RunConfig(BaseModel):
    """
    One `repair` invocation.

    seed and time_limit given at the top level override the values in the
    search sections; opt modes always run the estimator in refit mode.
    """
    model_config = ConfigDict(extra="forbid")

    data: Path
    query: QueryConfig
    mode: RepairMode = "tuple"
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    tuple_search: TupleRepairConfig = Field(default_factory=TupleRepairConfig)
    pattern_search: PatternRepairConfig = Field(default_factory=PatternRepairConfig)
    opt_budget: Optional[int] = Field(default=None, ge=0)
    opt_max_n: int = Field(default=30, ge=1)
    opt_max_patterns: int = Field(default=1_000_000, ge=1)
    runs: int = Field(default=1, ge=1)
    seed: int = 0
    time_limit: float = Field(default=DEFAULT_TIME_LIMIT, gt=0.0)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _propagate(self) -> RunConfig:
        estimator = self.estimator
        if self.mode in ("opt-tuple", "opt-pattern"):
            estimator = estimator.model_copy(update={"update": "refit"})
        estimator = estimator.model_copy(update={"seed": self.seed})
        shared = {"estimator": estimator, "seed": self.seed, "time_limit": self.time_limit}
        self.estimator = estimator
        self.tuple_search = self.tuple_search.model_copy(update=shared)
        self.pattern_search = self.pattern_search.model_copy(update=shared)
        return self

    def causal_query(self) -> CausalQuery:
        return self.query.to_query()


# === Loading ===

def load_toml(path: str | Path) -> dict[str, Any]:
    """Read a TOML file into a dict"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}", {"path": str(path)})
    try:
        with path.open("rb") as handle:
            return tomllib.load(handle)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid TOML in {path}: {e}", {"path": str(path)}) from e


def deep_merge(base: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    """Recursive dict merge; None values in overrides are ignored"""
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, Mapping):
            current = merged.get(key)
            merged[key] = deep_merge(current if isinstance(current, Mapping) else {}, value)
        else:
            merged[key] = value
    return merged


def _validation_details(error: ValidationError) -> dict[str, Any]:
    return {
        "errors": [
            {"loc": ".".join(str(p) for p in item["loc"]), "msg": item["msg"]}
            for item in error.errors()
        ]
    }


def load_run_config(
    path: Optional[str | Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Build a RunConfig from an optional TOML file plus flag overrides

    Args:
        path: TOML run file; a relative `data` entry is resolved against
            the file's directory
        overrides: nested dict of flag values (None entries are skipped)

    Raises:
        ConfigError: unreadable file or values that fail validation
    """
    raw: dict[str, Any] = {}
    if path is not None:
        raw = load_toml(path)
        data = raw.get("data")
        if data is not None and not Path(data).is_absolute():
            raw["data"] = str(Path(path).parent / data)

    env_seed = os.getenv("ATE_REPAIR_SEED")
    if env_seed is not None and "seed" not in raw:
        raw["seed"] = int(env_seed)

    merged = deep_merge(raw, overrides or {})
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError("Invalid run configuration", _validation_details(e)) from e


def validate_model(model: type[BaseModel], data: Mapping[str, Any], what: str) -> Any:
    """model_validate with ConfigError instead of ValidationError"""
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid {what}", _validation_details(e)) from e


__all__ = [
    "EstimatorKind",
    "UpdateMode",
    "RepairMode",
    "EstimatorConfig",
    "TupleRepairConfig",
    "PatternRepairConfig",
    "QueryConfig",
    "OutputConfig",
    "RunConfig",
    "load_toml",
    "deep_merge",
    "load_run_config",
    "validate_model",
]
