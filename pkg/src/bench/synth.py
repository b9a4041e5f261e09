"""
Seeded synthetic datasets with planted noise

Clean rows follow
    Z ~ N(0, 1)^c,  T ~ Bernoulli(sigmoid(a * sum Z)),  O = effect * T + b * sum Z + N(0, noise^2)

A planted fraction of rows is then forced into the treated group with
their outcome shifted, which biases the ATE upward. Planted rows carry a
reserved combination of categorical marker values that clean rows never
take, so a pattern of `pattern_width` predicates selects exactly them.
"""

from __future__ import annotations

import logging
import math
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit

from src.data.dataset import Dataset
from src.estimators.ols import fit_ols
from src.state.schemas import Attribute, CausalQuery, Pattern, Schema
from src.utils.errors import RepairError

logger = logging.getLogger(__name__)

TREATMENT = "T"
OUTCOME = "O"


class SynthSpec(BaseModel):
    """Generator parameters (TOML table [synth])"""
    model_config = ConfigDict(extra="forbid")

    n: int = Field(default=10_000, ge=1)
    n_confounders: int = Field(default=3, ge=0)
    effect: float = 1.0
    confounder_coef: float = 1.0
    treatment_coef: float = 1.0
    noise: float = Field(default=1.0, ge=0.0)
    planted_fraction: float = Field(default=0.0, ge=0.0, lt=1.0)
    planted_shift: float = 5.0
    n_categorical: int = Field(default=2, ge=0)
    categorical_levels: int = Field(default=4, ge=2, le=26)
    pattern_width: int = Field(default=1, ge=0, le=2)

    @model_validator(mode="after")
    def _marker_fits(self) -> SynthSpec:
        if self.pattern_width > self.n_categorical:
            raise ValueError("pattern_width cannot exceed n_categorical")
        return self

    @property
    def confounder_names(self) -> list[str]:
        return [f"Z{i}" for i in range(self.n_confounders)]

    @property
    def categorical_names(self) -> list[str]:
        return [f"g{i}" for i in range(self.n_categorical)]

    @property
    def levels(self) -> list[str]:
        return [f"v{i}" for i in range(self.categorical_levels)]

    @property
    def planted_count(self) -> int:
        return math.ceil(self.planted_fraction * self.n)


class GroundTruth(BaseModel):
    """What the generator knows about its output"""
    seed: int
    clean_ate: Optional[float]
    observed_ate: Optional[float]
    planted_ids: list[int]
    planted_pattern: Optional[Pattern] = None

    @property
    def planted_count(self) -> int:
        return len(self.planted_ids)


def _markers(spec: SynthSpec, planted: np.ndarray, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Categorical columns; clean rows never take the reserved combination"""
    n, levels = spec.n, np.array(spec.levels, dtype=object)
    columns = {name: levels[rng.integers(spec.categorical_levels, size=n)] for name in spec.categorical_names}
    width = spec.pattern_width
    if width == 0:
        return columns

    marked = spec.categorical_names[:width]
    reserved = levels[0]
    clean = np.setdiff1d(np.arange(n), planted)
    if width == 1:
        columns[marked[0]][clean] = levels[1 + rng.integers(spec.categorical_levels - 1, size=clean.size)]
    else:
        # redraw the second marker for clean rows that hit the reserved pair
        clash = clean[(columns[marked[0]][clean] == reserved) & (columns[marked[1]][clean] == reserved)]
        columns[marked[1]][clash] = levels[1 + rng.integers(spec.categorical_levels - 1, size=clash.size)]
    for name in marked:
        columns[name][planted] = reserved
    return columns


def _ate_or_none(dataset: Dataset, query: CausalQuery, mask: np.ndarray) -> Optional[float]:
    try:
        return fit_ols(dataset, query, mask).ate
    except RepairError as e:
        logger.debug(f"Ground-truth ATE unavailable: {e.code}")
        return None


def generate(spec: SynthSpec, seed: int = 0) -> tuple[Dataset, GroundTruth]:
    """
    Draw one dataset; identical (spec, seed) give identical output

    Returns:
        (dataset, ground truth with the clean-row ATE and the planted ids)
    """
    rng = np.random.default_rng(seed)
    n = spec.n
    Z = rng.standard_normal((n, spec.n_confounders))
    z_sum = Z.sum(axis=1)
    T = (rng.random(n) < expit(spec.treatment_coef * z_sum)).astype(np.int64)
    noise = rng.normal(0.0, spec.noise, n) if spec.noise > 0 else np.zeros(n)

    planted = np.sort(rng.choice(n, size=spec.planted_count, replace=False)) if spec.planted_count else np.array([], dtype=np.int64)
    T[planted] = 1
    O = spec.effect * T + spec.confounder_coef * z_sum + noise
    O[planted] += spec.planted_shift

    columns: dict[str, np.ndarray] = {TREATMENT: T, OUTCOME: O}
    attributes = [Attribute(name=TREATMENT, kind="numeric-binary"), Attribute(name=OUTCOME, kind="numeric-continuous")]
    for j, name in enumerate(spec.confounder_names):
        columns[name] = Z[:, j]
        attributes.append(Attribute(name=name, kind="numeric-continuous"))
    for name, values in _markers(spec, planted, rng).items():
        columns[name] = values
        attributes.append(Attribute(name=name, kind="categorical"))

    dataset = Dataset(Schema(attributes=tuple(attributes)), columns)
    query = default_query(spec, target=0.0)
    clean = np.ones(n, dtype=bool)
    clean[planted] = False

    pattern = None
    if spec.pattern_width and planted.size:
        pattern = Pattern.of({name: spec.levels[0] for name in spec.categorical_names[: spec.pattern_width]})

    truth = GroundTruth(
        seed=seed,
        clean_ate=_ate_or_none(dataset, query, clean),
        observed_ate=_ate_or_none(dataset, query, np.ones(n, dtype=bool)),
        planted_ids=planted.tolist(),
        planted_pattern=pattern,
    )
    logger.debug(
        f"Generated n={n}, planted={planted.size}, clean ATE={truth.clean_ate}, observed ATE={truth.observed_ate}"
    )
    return dataset, truth


def default_query(spec: SynthSpec, target: float, epsilon: float = 0.0) -> CausalQuery:
    return CausalQuery(
        treatment=TREATMENT,
        outcome=OUTCOME,
        confounders=tuple(spec.confounder_names),
        target=target,
        epsilon=epsilon,
    )


__all__ = ["SynthSpec", "GroundTruth", "generate", "default_query", "TREATMENT", "OUTCOME"]
