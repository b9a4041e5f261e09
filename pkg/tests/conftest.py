"""
Shared fixtures: the seven-row SUBSET-SUM table, its identifier-augmented
companion, and seeded synthetic datasets
"""

from pathlib import Path

import numpy as np
import pytest

from src.bench.synth import SynthSpec, generate
from src.data.dataset import Dataset
from src.state.schemas import CausalQuery, Schema

PROJECT_ROOT = Path(__file__).parent.parent

SUBSET_SUM_T = [1, 1, 1, 1, 0, 0, 0]
SUBSET_SUM_O = [1.0, 3.0, 5.0, -4.0, 0.0, 0.0, 0.0]


def subset_sum_dataset() -> Dataset:
    """ATE(T, O) = (1 + 3 + 5 - 4) / 4 - 0 = 1.25; dropping row 2 (O=5) gives 0"""
    schema = Schema.of({"T": "numeric-binary", "O": "numeric-continuous"})
    return Dataset(schema, {"T": np.array(SUBSET_SUM_T), "O": np.array(SUBSET_SUM_O)})


def identifier_dataset() -> Dataset:
    """Four tuples with one-hot identifier columns S1..S4"""
    kinds = {f"S{i}": "numeric-binary" for i in range(1, 5)}
    kinds.update({"T": "numeric-binary", "O": "numeric-continuous"})
    identity = np.eye(4, dtype=np.int64)
    columns = {f"S{i}": identity[:, i - 1] for i in range(1, 5)}
    columns["T"] = np.zeros(4, dtype=np.int64)
    columns["O"] = np.array([12.0, 9.0, 1.0, 1.0])
    return Dataset(Schema.of(kinds), columns)


def write_subset_sum_csv(path: Path) -> Path:
    lines = ["T,O"] + [f"{t},{o:g}" for t, o in zip(SUBSET_SUM_T, SUBSET_SUM_O)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def subset_sum() -> Dataset:
    return subset_sum_dataset()


@pytest.fixture
def subset_sum_query() -> CausalQuery:
    return CausalQuery(treatment="T", outcome="O", target=0.0, epsilon=0.0)


@pytest.fixture
def subset_sum_csv(tmp_path) -> Path:
    return write_subset_sum_csv(tmp_path / "subset_sum.csv")


@pytest.fixture
def identifier_table() -> Dataset:
    return identifier_dataset()


@pytest.fixture
def make_synth():
    """Factory: make_synth(seed=0, **spec_fields) -> (dataset, truth, spec)"""

    def _make(seed: int = 0, **fields):
        spec = SynthSpec(**fields)
        dataset, truth = generate(spec, seed)
        return dataset, truth, spec

    return _make
