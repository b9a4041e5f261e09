"""
Benchmark sweeps over seeded synthetic scenarios

A suite fixes a sweep kind, its values, seeds and methods. Every
(value, seed) cell generates its own dataset; every method runs on a fresh
copy of it. Results come back as a long-format table, one row per
(value, seed, method), with failures recorded in the `error` column.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Literal, Optional

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.bench.noise import NoiseKind, inject_noise
from src.bench.synth import SynthSpec, default_query, generate
from src.data.dataset import Dataset
from src.repair.runner import run_repair
from src.state.schemas import CausalQuery
from src.utils.config import (
    EstimatorConfig,
    PatternRepairConfig,
    RepairMode,
    TupleRepairConfig,
    load_toml,
    validate_model,
)
from src.utils.errors import DegenerateGroups, RepairError

logger = logging.getLogger(__name__)

SweepKind = Literal["size", "noise", "target_distance", "confounders", "opt_vs_heuristic"]
COLUMNS = ["scenario", "value", "seed", "method", "removals", "ate_after", "hit_range", "wall_time", "error"]


class BenchSuite(BaseModel):
    """A sweep definition (TOML: top-level keys plus [synth], [estimator], ...)"""
    model_config = ConfigDict(extra="forbid")

    name: str = "bench"
    kind: SweepKind = "noise"
    values: list[float] = Field(default_factory=list)
    seeds: list[int] = Field(default_factory=lambda: [0])
    methods: list[RepairMode] = Field(default_factory=lambda: ["tuple"])
    synth: SynthSpec = Field(default_factory=SynthSpec)
    noise_kind: NoiseKind = "outliers"
    epsilon_fraction: float = Field(default=0.0, ge=0.0)
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    tuple_search: TupleRepairConfig = Field(default_factory=TupleRepairConfig)
    pattern_search: PatternRepairConfig = Field(default_factory=PatternRepairConfig)
    opt_budget: Optional[int] = Field(default=None, ge=0)
    opt_max_n: int = Field(default=30, ge=1)
    opt_max_patterns: int = Field(default=1_000_000, ge=1)
    workers: int = Field(default=1, ge=1)
    output: Path = Path("bench.csv")

    @model_validator(mode="after")
    def _share_estimator(self) -> BenchSuite:
        self.tuple_search = self.tuple_search.model_copy(update={"estimator": self.estimator})
        self.pattern_search = self.pattern_search.model_copy(update={"estimator": self.estimator})
        return self


def load_suite(path: str | Path, overrides: Optional[dict[str, Any]] = None) -> BenchSuite:
    raw = load_toml(path)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return validate_model(BenchSuite, raw, "bench suite")


def build_scenario(suite: BenchSuite, value: float, seed: int) -> tuple[Dataset, CausalQuery]:
    """
    Dataset and query for one cell

    - size / opt_vs_heuristic: value is the row count
    - confounders: value is the confounder count
    - noise: value is the injection level of `noise_kind`
    - target_distance: the target moves the observed ATE by value * |ATE| toward zero
    Other kinds target the clean (planted-free) ATE.
    """
    spec = suite.synth
    if suite.kind in ("size", "opt_vs_heuristic"):
        spec = spec.model_copy(update={"n": int(value)})
    elif suite.kind == "confounders":
        spec = spec.model_copy(update={"n_confounders": int(value)})

    dataset, truth = generate(spec, seed)
    target = truth.clean_ate
    if suite.kind == "target_distance" and truth.observed_ate is not None:
        target = truth.observed_ate * (1.0 - value)
    if target is None:
        raise DegenerateGroups("Scenario has no estimable target ATE", {"value": value, "seed": seed})

    query = default_query(spec, target=target, epsilon=suite.epsilon_fraction * abs(target))
    if suite.kind == "noise":
        dataset, _ = inject_noise(dataset, query, suite.noise_kind, value, seed)
    return dataset, query


def _run_cell(suite: BenchSuite, value: float, seed: int) -> list[dict[str, Any]]:
    base = {"scenario": suite.kind, "value": value, "seed": seed}
    try:
        dataset, query = build_scenario(suite, value, seed)
    except RepairError as e:
        return [{**base, "method": m, "error": e.code} for m in suite.methods]

    rows = []
    for method in suite.methods:
        started = time.perf_counter()
        row = {**base, "method": method}
        try:
            result = run_repair(
                dataset.copy(),
                query,
                method,
                tuple_config=suite.tuple_search.model_copy(update={"seed": seed}),
                pattern_config=suite.pattern_search.model_copy(update={"seed": seed}),
                opt_budget=suite.opt_budget,
                opt_max_n=suite.opt_max_n,
                opt_max_patterns=suite.opt_max_patterns,
            )
            row.update(
                removals=result.removed_count,
                ate_after=result.ate_after,
                hit_range=result.hit_range,
                wall_time=result.wall_time,
                error="",
            )
        except RepairError as e:
            logger.warning(f"⚠️  {suite.kind}={value} seed={seed} {method}: {e.code}")
            row.update(wall_time=time.perf_counter() - started, error=e.code)
        rows.append(row)
    logger.info(f"Cell {suite.kind}={value} seed={seed} done ({len(rows)} methods)")
    return rows


def bench(suite: BenchSuite) -> pd.DataFrame:
    """Run every cell of the suite; rows are ordered by (value, seed, method)"""
    cells = [(value, seed) for value in suite.values for seed in suite.seeds]
    logger.info(f"Bench '{suite.name}': {len(cells)} cells x {len(suite.methods)} methods")
    with ThreadPoolExecutor(max_workers=suite.workers) as pool:
        batches = list(pool.map(lambda cell: _run_cell(suite, *cell), cells))
    rows = [row for batch in batches for row in batch]
    return pd.DataFrame(rows, columns=COLUMNS)


def write_bench_csv(frame: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


__all__ = ["SweepKind", "COLUMNS", "BenchSuite", "load_suite", "build_scenario", "bench", "write_bench_csv"]
