"""
Design-matrix encoding shared by the OLS and IPW estimators

Columns: intercept, optionally the treatment, then one block per
confounder (raw value for numeric attributes, one-hot with the first
level dropped for categoricals). The column set is frozen when the
encoder is built, so rows encoded later line up with the fitted state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.data.dataset import Dataset
from src.state.schemas import CausalQuery
from src.utils.errors import QueryError


@dataclass(frozen=True)
class DesignColumn:
    name: str
    attribute: Optional[str]
    level: Optional[str] = None


@dataclass(frozen=True)
class DesignEncoder:
    columns: tuple[DesignColumn, ...]
    treatment_index: Optional[int]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def width(self) -> int:
        return len(self.columns)

    def encode(self, dataset: Dataset, ids: Optional[np.ndarray] = None) -> np.ndarray:
        """Rows `ids` (default: all rows) as a float matrix"""
        rows = np.arange(dataset.n) if ids is None else np.asarray(ids, dtype=np.int64)
        X = np.empty((rows.size, self.width), dtype=float)
        for j, column in enumerate(self.columns):
            if column.attribute is None:
                X[:, j] = 1.0
                continue
            values = dataset.column(column.attribute)[rows]
            if column.level is None:
                X[:, j] = values.astype(float)
            else:
                X[:, j] = (values == column.level).astype(float)
        return X


def treatment_vector(dataset: Dataset, query: CausalQuery) -> np.ndarray:
    """T as 0/1 floats; any other value on an alive row is a QueryError"""
    values = np.asarray(dataset.column(query.treatment), dtype=float)
    alive = values[dataset.alive]
    if alive.size and not np.isin(alive, [0.0, 1.0]).all():
        raise QueryError(
            f"Treatment '{query.treatment}' must only hold 0/1 values",
            {"attribute": query.treatment},
        )
    return values


def outcome_vector(dataset: Dataset, query: CausalQuery) -> np.ndarray:
    return np.asarray(dataset.column(query.outcome), dtype=float)


def build_encoder(
    dataset: Dataset,
    query: CausalQuery,
    mask: Optional[np.ndarray] = None,
    include_treatment: bool = True,
) -> DesignEncoder:
    """
    Encoder for the rows selected by `mask` (default: alive rows)

    Categorical levels and constant numeric confounders are decided on the
    masked rows. A confounder column that is constant there is absorbed by
    the intercept, so it is left out; the treatment coefficient is the same
    either way.
    """
    mask = dataset.alive if mask is None else mask
    columns = [DesignColumn(name="intercept", attribute=None)]
    treatment_index = None
    if include_treatment:
        treatment_index = len(columns)
        columns.append(DesignColumn(name=query.treatment, attribute=query.treatment))

    for attribute in query.confounders:
        values = dataset.column(attribute)[mask]
        if dataset.schema.kind_of(attribute) == "categorical":
            levels = sorted({str(v) for v in values})
            for level in levels[1:]:
                columns.append(DesignColumn(name=f"{attribute}={level}", attribute=attribute, level=level))
        elif values.size and np.ptp(values.astype(float)) > 0:
            columns.append(DesignColumn(name=attribute, attribute=attribute))

    return DesignEncoder(columns=tuple(columns), treatment_index=treatment_index)


__all__ = ["DesignColumn", "DesignEncoder", "build_encoder", "treatment_vector", "outcome_vector"]
