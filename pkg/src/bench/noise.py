"""
Noise injectors: duplicates, zero-filled missing confounders, outcome outliers

Each injector touches ceil(level * n_alive) uniformly drawn alive rows and
returns a new dataset plus a log of the affected ids. Same (dataset,
kind, level, seed) always gives the same output.
"""

from __future__ import annotations

import logging
import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field

from src.data.dataset import Dataset
from src.state.schemas import CausalQuery
from src.utils.errors import ConfigError, QueryError

logger = logging.getLogger(__name__)

NoiseKind = Literal["duplicates", "missing_zero", "outliers"]
OUTLIER_SCALE = 10.0


class InjectionLog(BaseModel):
    kind: NoiseKind
    level: float
    seed: int
    affected_ids: list[int] = Field(default_factory=list)
    source_ids: list[int] = Field(default_factory=list)


def inject_noise(
    dataset: Dataset,
    query: CausalQuery,
    kind: NoiseKind,
    level: float,
    seed: int = 0,
) -> tuple[Dataset, InjectionLog]:
    """
    Corrupt a copy of `dataset`

    - duplicates: append copies of drawn rows (affected_ids are the new
      rows, source_ids the rows they copy)
    - missing_zero: set every confounder cell of the drawn rows to zero
      ("0" for categorical confounders)
    - outliers: replace the outcome of the drawn rows with
      mean(O) +/- 10 std(O), sign drawn at random

    Raises:
        ConfigError: level outside [0, 1)
    """
    if not 0.0 <= level < 1.0:
        raise ConfigError(f"Noise level must lie in [0, 1), got {level}", {"level": level})
    log = InjectionLog(kind=kind, level=level, seed=seed)
    alive = dataset.alive_ids()
    count = math.ceil(level * alive.size)
    if count == 0:
        return dataset.copy(), log

    rng = np.random.default_rng(seed)
    if kind == "duplicates":
        sources = rng.choice(alive, size=count, replace=True)
        noisy = dataset.append_rows(sources)
        log.source_ids = sources.tolist()
        log.affected_ids = list(range(dataset.n, dataset.n + count))
    else:
        rows = np.sort(rng.choice(alive, size=count, replace=False))
        log.affected_ids = rows.tolist()
        if kind == "missing_zero":
            updates = {}
            for name in query.confounders:
                values = np.array(dataset.column(name), copy=True)
                values[rows] = "0" if dataset.schema.kind_of(name) == "categorical" else 0
                updates[name] = values
            noisy = dataset.with_columns(updates)
        else:
            if dataset.schema.kind_of(query.outcome) != "numeric-continuous":
                raise QueryError(
                    "Outlier injection needs a continuous outcome",
                    {"attribute": query.outcome},
                )
            outcome = np.array(dataset.column(query.outcome), dtype=float, copy=True)
            center, spread = outcome[alive].mean(), outcome[alive].std()
            signs = rng.choice([-1.0, 1.0], size=count)
            outcome[rows] = center + signs * OUTLIER_SCALE * spread
            noisy = dataset.with_columns({query.outcome: outcome})

    logger.debug(f"Injected {kind} noise into {count} rows (level {level}, seed {seed})")
    return noisy, log


__all__ = ["NoiseKind", "InjectionLog", "inject_noise"]
