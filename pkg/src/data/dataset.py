"""
Column-oriented dataset with a reversible deletion mask

Values are immutable numpy arrays (write-protected); deletion only flips
the `alive` mask, so tuple indices never shift and every deletion can be
undone exactly. Searches that need to "pretend" a deletion use
`mask_without(ids)`, a private overlay that never touches the shared mask.

Compatible with:
- numpy 1.26+ / pandas 2.1+
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd

from src.state.schemas import Attribute, AttributeKind, Pattern, Schema
from src.utils.errors import (
    AlreadyDeleted,
    IngestionError,
    MissingColumn,
    RaggedRow,
    SchemaError,
    UnknownAttribute,
    UnparseableValue,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeletionReceipt:
    """Ids flipped by one delete() call; pass to undo() to restore them"""
    ids: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.size)


def _as_ids(ids: Iterable[int] | np.ndarray) -> np.ndarray:
    arr = np.unique(np.asarray(list(ids) if not isinstance(ids, np.ndarray) else ids, dtype=np.int64))
    return arr


def _freeze(values: np.ndarray) -> np.ndarray:
    values = np.array(values, copy=True)
    values.flags.writeable = False
    return values


class Dataset:
    """
    Immutable table plus a mutable alive mask (single writer).

    Attributes:
        schema: ordered attributes with their kinds
        n: number of rows ever loaded (dead rows included)
        parent_ids: for samples, the row ids in the dataset they were drawn from
    """

    def __init__(
        self,
        schema: Schema,
        columns: Mapping[str, np.ndarray],
        alive: Optional[np.ndarray] = None,
        parent_ids: Optional[np.ndarray] = None,
    ):
        missing = [name for name in schema.names if name not in columns]
        if missing:
            raise MissingColumn(missing[0])
        lengths = {name: len(columns[name]) for name in schema.names}
        if len(set(lengths.values())) > 1:
            raise SchemaError("All columns must share the same length", {"lengths": lengths})

        self.schema = schema
        self._columns = {name: _freeze(columns[name]) for name in schema.names}
        self.n = next(iter(lengths.values()), 0)
        self._alive = np.ones(self.n, dtype=bool) if alive is None else np.array(alive, dtype=bool)
        self.parent_ids = None if parent_ids is None else _freeze(np.asarray(parent_ids, dtype=np.int64))

    # --- read access ---

    def column(self, name: str) -> np.ndarray:
        try:
            return self._columns[name]
        except KeyError:
            raise UnknownAttribute(name) from None

    @property
    def columns(self) -> dict[str, np.ndarray]:
        return dict(self._columns)

    @property
    def alive(self) -> np.ndarray:
        """Read-only view of the mask; copy it before modifying"""
        view = self._alive.view()
        view.flags.writeable = False
        return view

    @property
    def alive_count(self) -> int:
        return int(self._alive.sum())

    def alive_ids(self) -> np.ndarray:
        return np.flatnonzero(self._alive)

    def is_alive(self, tuple_id: int) -> bool:
        return 0 <= tuple_id < self.n and bool(self._alive[tuple_id])

    def mask_without(self, ids: Iterable[int] | np.ndarray) -> np.ndarray:
        """Private overlay: a copy of the mask with `ids` pretend-deleted"""
        mask = self._alive.copy()
        ids = _as_ids(ids)
        if ids.size:
            mask[ids] = False
        return mask

    # --- deletion ---

    def delete(self, ids: Iterable[int] | np.ndarray) -> DeletionReceipt:
        """
        Flip the mask for exactly `ids`

        Raises:
            AlreadyDeleted: if any id is not currently alive (mask unchanged)
        """
        ids = _as_ids(ids)
        for tuple_id in ids:
            if not self.is_alive(int(tuple_id)):
                raise AlreadyDeleted(int(tuple_id))
        self._alive[ids] = False
        return DeletionReceipt(ids=ids)

    def undo(self, receipt: DeletionReceipt) -> None:
        self._alive[receipt.ids] = True

    def copy(self) -> Dataset:
        """Same immutable values, independent mask"""
        return Dataset(self.schema, self._columns, alive=self._alive.copy(), parent_ids=self.parent_ids)

    # --- derived datasets ---

    def take(self, ids: Iterable[int] | np.ndarray) -> Dataset:
        """New dataset holding rows `ids` (all alive), remembering their origin"""
        ids = _as_ids(ids)
        columns = {name: values[ids] for name, values in self._columns.items()}
        origin = ids if self.parent_ids is None else self.parent_ids[ids]
        return Dataset(self.schema, columns, parent_ids=origin)

    def sample(self, fraction: float, seed: int = 0) -> Dataset:
        """
        Uniform sample of the alive rows (at least one row)

        Depends only on the data and the seed, so a sample can be reused
        across queries that touch the same attributes.
        """
        alive = self.alive_ids()
        size = max(1, int(round(fraction * alive.size)))
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.choice(alive, size=min(size, alive.size), replace=False))
        return self.take(chosen)

    def with_columns(self, updates: Mapping[str, np.ndarray]) -> Dataset:
        """New dataset with some columns replaced (mask copied)"""
        columns = dict(self._columns)
        columns.update(updates)
        return Dataset(self.schema, columns, alive=self._alive.copy())

    def append_rows(self, source_ids: np.ndarray) -> Dataset:
        """New dataset with copies of rows `source_ids` appended (all alive)"""
        source_ids = np.asarray(source_ids, dtype=np.int64)
        columns = {
            name: np.concatenate([values, values[source_ids]])
            for name, values in self._columns.items()
        }
        alive = np.concatenate([self._alive, np.ones(source_ids.size, dtype=bool)])
        return Dataset(self.schema, columns, alive=alive)

    def to_frame(self, alive_only: bool = True) -> pd.DataFrame:
        frame = pd.DataFrame(self._columns)
        if alive_only:
            frame = frame[self._alive]
        return frame

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, alive={self.alive_count}, attributes={self.schema.names})"


# === CSV ingestion ===

def _infer_kind(raw: list[str]) -> AttributeKind:
    """binary before continuous before categorical"""
    numeric = pd.to_numeric(pd.Series(raw, dtype=object), errors="coerce")
    if numeric.isna().any():
        return "categorical"
    if numeric.isin([0, 1]).all():
        return "numeric-binary"
    return "numeric-continuous"


def _parse_column(name: str, raw: list[str], kind: AttributeKind) -> np.ndarray:
    if kind == "categorical":
        return np.array(raw, dtype=object)

    numeric = pd.to_numeric(pd.Series(raw, dtype=object), errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(numeric))
    if bad.size:
        row = int(bad[0])
        raise UnparseableValue(row, name, raw[row], kind)
    if kind == "numeric-binary":
        not_binary = np.flatnonzero(~np.isin(numeric, [0.0, 1.0]))
        if not_binary.size:
            row = int(not_binary[0])
            raise UnparseableValue(row, name, raw[row], kind)
        return numeric.astype(np.int64)
    return numeric


def load_csv(path: str | Path, schema_hint: Optional[Schema] = None) -> Dataset:
    """
    Load an RFC 4180 CSV file (UTF-8, header row required)

    Args:
        path: CSV file path
        schema_hint: Optional schema; listed attributes use the given kind,
            the rest are inferred (all-{0,1} => numeric-binary, numeric =>
            numeric-continuous, otherwise categorical)

    Returns:
        Dataset with every row alive, file row order preserved

    Raises:
        IngestionError: the file cannot be opened or is not UTF-8
        SchemaError: empty file, malformed quoting or duplicate column names
        MissingColumn: a schema_hint attribute is absent from the header
        RaggedRow: a row has the wrong number of fields (row = 0-based data row)
        UnparseableValue: a cell is empty or does not parse under its kind
    """
    path = Path(path)
    try:
        # utf-8-sig: a byte-order mark must not end up in the first column name
        with path.open("r", encoding="utf-8-sig", newline="") as handle:
            reader = csv.reader(handle)
            try:
                header = [name.strip() for name in next(reader)]
            except StopIteration:
                raise SchemaError(f"{path} is empty (a header row is required)", {"path": str(path)}) from None
            rows = list(reader)
    except OSError as e:
        raise IngestionError(f"Cannot read {path}: {e.strerror or e}", {"path": str(path)}) from e
    except UnicodeDecodeError as e:
        raise IngestionError(
            f"{path} is not valid UTF-8 (byte {e.start})", {"path": str(path), "position": e.start}
        ) from e
    except csv.Error as e:
        raise SchemaError(f"Malformed CSV in {path}: {e}", {"path": str(path)}) from e

    if len(set(header)) != len(header):
        raise SchemaError("Duplicate column names in header", {"header": header})

    cells: dict[str, list[str]] = {name: [] for name in header}
    for index, row in enumerate(rows):
        if len(row) != len(header):
            raise RaggedRow(index, len(header), len(row))
        for name, value in zip(header, row):
            value = value.strip()
            if value == "":
                raise UnparseableValue(index, name, value, "non-empty value")
            cells[name].append(value)

    hinted: dict[str, AttributeKind] = {}
    if schema_hint is not None:
        for attribute in schema_hint.attributes:
            if attribute.name not in cells:
                raise MissingColumn(attribute.name, str(path))
            hinted[attribute.name] = attribute.kind

    attributes = []
    columns = {}
    for name in header:
        kind = hinted.get(name) or _infer_kind(cells[name])
        attributes.append(Attribute(name=name, kind=kind))
        columns[name] = _parse_column(name, cells[name], kind)

    schema = Schema(attributes=tuple(attributes))
    logger.debug(f"Loaded {len(rows)} rows from {path} with schema {[a.kind for a in attributes]}")
    return Dataset(schema, columns)


def write_csv(dataset: Dataset, path: str | Path, alive_only: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset.to_frame(alive_only=alive_only).to_csv(path, index=False)
    return path


# === Pattern semantics ===

def _coerce(value: Any, kind: AttributeKind) -> Any:
    if kind == "categorical":
        return str(value)
    try:
        return float(value)
    except (TypeError, ValueError):
        return None


def pattern_mask(pattern: Pattern, dataset: Dataset, alive_only: bool = True) -> np.ndarray:
    """Boolean mask over all rows of tuples satisfying every predicate"""
    dataset.schema.require(pattern.attributes)
    mask = dataset.alive.copy() if alive_only else np.ones(dataset.n, dtype=bool)
    for attribute, value in pattern.predicates:
        target = _coerce(value, dataset.schema.kind_of(attribute))
        if target is None:
            return np.zeros(dataset.n, dtype=bool)
        mask &= dataset.column(attribute) == target
    return mask


def satisfies(pattern: Pattern, dataset: Dataset) -> np.ndarray:
    """
    psi(D): sorted ids of alive tuples matching every predicate

    The empty pattern matches every alive tuple.

    Raises:
        UnknownAttribute: a predicate names an attribute not in the schema
    """
    return np.flatnonzero(pattern_mask(pattern, dataset))


__all__ = [
    "Dataset",
    "DeletionReceipt",
    "load_csv",
    "write_csv",
    "pattern_mask",
    "satisfies",
]
