"""
Unit tests for the benchmark harness and the mode runner
"""

from pathlib import Path

import pandas as pd
import pytest

from src.bench.sweeps import COLUMNS, BenchSuite, bench, build_scenario, load_suite, write_bench_csv
from src.estimators.engine import AteEngine
from src.repair.runner import best_of, run_repair
from src.state.schemas import CausalQuery, RepairResult

PROJECT_ROOT = Path(__file__).parent.parent.parent


def small_suite(**fields) -> BenchSuite:
    defaults = {
        "synth": {"n": 300, "n_confounders": 2, "planted_fraction": 0.05, "pattern_width": 0},
        "epsilon_fraction": 0.1,
        "tuple_search": {"max_removal_fraction": 0.5},
    }
    return BenchSuite.model_validate({**defaults, **fields})


def result(hit: bool, removed: int, ate_after: float, target: float = 0.0) -> RepairResult:
    return RepairResult(
        mode="tuple",
        removed_ids=list(range(removed)),
        removed_count=removed,
        removed_fraction=removed / 100,
        ate_before=1.0,
        ate_after=ate_after,
        hit_range=hit,
        wall_time=0.0,
        stop_reason="hit" if hit else "budget_exhausted",
        query=CausalQuery(treatment="T", outcome="O", target=target),
    )


class TestBenchSuite:
    """Tests for BenchSuite / load_suite"""

    def test_shipped_noise_sweep(self):
        """The shipped outlier sweep loads with its six levels"""
        suite = load_suite(PROJECT_ROOT / "config" / "bench_noise_sweep.toml")

        assert suite.kind == "noise"
        assert suite.values == pytest.approx([0.05, 0.15, 0.25, 0.35, 0.45, 0.55])
        assert suite.methods == ["tuple", "tuple-single-update"]
        assert suite.synth.n == 10_000

    def test_overrides(self):
        """CLI overrides replace top-level keys, None leaves them alone"""
        path = PROJECT_ROOT / "config" / "bench_noise_sweep.toml"

        suite = load_suite(path, {"workers": 4, "output": None})

        assert suite.workers == 4
        assert suite.output.name == "noise_sweep.csv"

    def test_estimator_is_shared(self):
        """The suite estimator reaches both search configs"""
        suite = small_suite(estimator={"kind": "ipw"})

        assert suite.tuple_search.estimator.kind == "ipw"
        assert suite.pattern_search.estimator.kind == "ipw"


class TestBuildScenario:
    """Tests for build_scenario"""

    def test_target_distance(self):
        """The target moves the observed ATE a fraction of the way to zero"""
        suite = small_suite(kind="target_distance")

        dataset, query = build_scenario(suite, 0.25, seed=0)
        observed = CausalQuery(treatment="T", outcome="O", confounders=query.confounders, target=0.0)

        assert query.target == pytest.approx(0.75 * AteEngine(dataset, observed).ate)
        assert query.epsilon == pytest.approx(0.1 * abs(query.target))

    def test_size(self):
        """Size sweeps set the row count"""
        dataset, _ = build_scenario(small_suite(kind="size"), 120, seed=0)

        assert dataset.n == 120

    def test_noise_duplicates(self):
        """Noise sweeps inject into the generated data"""
        suite = small_suite(kind="noise", noise_kind="duplicates")

        dataset, _ = build_scenario(suite, 0.25, seed=0)

        assert dataset.n == 375


class TestBench:
    """Tests for bench / write_bench_csv"""

    def test_empty_suite(self, tmp_path):
        """No values: an empty table that still has its header"""
        frame = bench(small_suite(values=[]))

        assert list(frame.columns) == COLUMNS
        assert frame.empty

        path = write_bench_csv(frame, tmp_path / "out" / "bench.csv")
        assert path.read_text(encoding="utf-8").strip() == ",".join(COLUMNS)

    def test_noise_sweep_rows(self):
        """One row per (value, seed, method), ordered by value"""
        suite = small_suite(
            kind="noise",
            values=[0.0, 0.05, 0.1, 0.15, 0.2, 0.25],
            methods=["tuple", "tuple-single-update"],
            workers=2,
        )

        frame = bench(suite)

        assert len(frame) == 12
        assert frame["value"].tolist() == sorted(frame["value"].tolist())
        assert set(frame["method"]) == {"tuple", "tuple-single-update"}

    def test_opt_vs_heuristic(self):
        """Small instances run the oracle beside the greedy search"""
        suite = small_suite(
            kind="opt_vs_heuristic",
            values=[10, 12],
            seeds=[0, 1],
            methods=["tuple", "opt-tuple"],
            synth={"n_confounders": 1, "planted_fraction": 0.0, "pattern_width": 0, "n_categorical": 0},
        )

        frame = bench(suite)

        assert len(frame) == 8
        assert set(frame["method"]) == {"tuple", "opt-tuple"}

    def test_roundtrip_csv(self, tmp_path):
        """The written table reads back with the same shape"""
        frame = bench(small_suite(values=[0.05], methods=["tuple"]))

        path = write_bench_csv(frame, tmp_path / "bench.csv")

        assert pd.read_csv(path).shape == frame.shape


class TestRunner:
    """Tests for run_repair / best_of"""

    def test_dispatch(self, subset_sum, subset_sum_query):
        """Tuple modes and the oracle agree on the fixture"""
        for mode in ("tuple", "tuple-single-update", "opt-tuple"):
            outcome = run_repair(subset_sum.copy(), subset_sum_query, mode)
            assert outcome.removed_ids == [2]

    def test_unknown_mode(self, subset_sum, subset_sum_query):
        with pytest.raises(ValueError):
            run_repair(subset_sum, subset_sum_query, "bogus")

    def test_best_of_prefers_hits(self):
        """A hit beats any miss, however small the miss"""
        assert best_of([result(False, 1, 0.0), result(True, 9, 0.0)]).removed_count == 9

    def test_best_of_prefers_fewer_removals(self):
        """Among hits, fewer removals win"""
        assert best_of([result(True, 5, 0.0), result(True, 3, 0.0)]).removed_count == 3

    def test_best_of_prefers_closer(self):
        """Ties on removals go to the run closer to the target"""
        chosen = best_of([result(False, 4, 0.9), result(False, 4, 0.2)])

        assert chosen.ate_after == pytest.approx(0.2)
