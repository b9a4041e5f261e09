"""
Report emission: rich summary tables and artifact writers
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from src.data.dataset import Dataset
from src.state.schemas import RepairResult


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.6g}"


def shift_label(result: RepairResult) -> str:
    """e.g. "↓100.0%"; shifts past zero may exceed 100%"""
    return f"{result.shift_arrow}{result.shift_percent:.1f}%"


def summary_table(result: RepairResult) -> Table:
    table = Table(title=f"{result.mode.capitalize()} repair")
    table.add_column("Metric", style="bold")
    table.add_column("Value")

    if result.query is not None:
        query = result.query
        table.add_row("Target", f"{query.target:.6g} ± {query.epsilon:.3g}")
    table.add_row("Removals", str(result.removed_count))
    table.add_row("Removed fraction", f"{result.removed_fraction:.2%}")
    if result.pattern is not None:
        table.add_row("Pattern", str(result.pattern) + ("" if result.applied else " (closest, not applied)"))
    table.add_row("ATE before", _fmt(result.ate_before))
    table.add_row("ATE after", _fmt(result.ate_after))
    table.add_row("Shift", shift_label(result))
    table.add_row("Hit range", "✅ yes" if result.hit_range else "❌ no")
    table.add_row("Stop reason", result.stop_reason)
    table.add_row("Wall time", f"{result.wall_time:.3f}s")
    return table


def print_summary(result: RepairResult, console: Optional[Console] = None) -> None:
    (console or Console()).print(summary_table(result))


def schema_table(dataset: Dataset) -> Table:
    table = Table(title=f"{dataset.alive_count} alive of {dataset.n} tuples")
    table.add_column("Attribute", style="bold")
    table.add_column("Kind")
    table.add_column("Distinct", justify="right")
    alive = dataset.alive
    for attribute in dataset.schema.attributes:
        distinct = len(np.unique(dataset.column(attribute.name)[alive])) if alive.any() else 0
        table.add_row(attribute.name, attribute.kind, str(distinct))
    return table


def bench_table(frame: pd.DataFrame) -> Table:
    """Per-method aggregate of a bench run"""
    table = Table(title="Bench summary")
    for column in ("method", "cells", "hits", "mean removals", "mean wall time", "errors"):
        table.add_column(column)
    if frame.empty:
        return table
    for method, group in frame.groupby("method", sort=False):
        ok = group[group["error"].fillna("") == ""]
        table.add_row(
            str(method),
            str(len(group)),
            str(int(ok["hit_range"].astype(bool).sum())),
            f"{ok['removals'].mean():.1f}" if len(ok) else "-",
            f"{ok['wall_time'].mean():.3f}s" if len(ok) else "-",
            str(len(group) - len(ok)),
        )
    return table


# === Artifact writers ===

def _prepare(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_result_json(result: RepairResult, path: Path, include_trace: bool = True) -> Path:
    payload = result.model_dump(mode="json")
    if not include_trace:
        payload.pop("trace", None)
    _prepare(path).write_text(json.dumps(payload, indent=2, ensure_ascii=False), encoding="utf-8")
    return path


def write_json(payload: Any, path: Path) -> Path:
    _prepare(path).write_text(json.dumps(payload, indent=2, default=str), encoding="utf-8")
    return path


def write_removed_csv(original: Dataset, ids: np.ndarray, path: Path) -> Path:
    """Removed tuples with their original row ids in a leading `id` column"""
    ids = np.asarray(ids, dtype=np.int64)
    frame = original.to_frame(alive_only=False).iloc[ids]
    frame.insert(0, "id", ids)
    frame.to_csv(_prepare(path), index=False)
    return path


def write_trace_csv(result: RepairResult, path: Path) -> Path:
    frame = pd.DataFrame(
        [entry.model_dump() for entry in result.trace],
        columns=["iteration", "ate", "action", "removed"],
    )
    frame.to_csv(_prepare(path), index=False)
    return path


__all__ = [
    "shift_label",
    "summary_table",
    "print_summary",
    "schema_table",
    "bench_table",
    "write_result_json",
    "write_json",
    "write_removed_csv",
    "write_trace_csv",
]
