"""Experiment orchestration: configs, records, caching, stats, exports."""

import json
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import z3_table
from semiheal.datagen import GenConfig, corrupt, generate
from semiheal.forest import ForestHyper
from semiheal.healing import PipelineConfig, heal_deterministic
from semiheal.tables import CayleyTable, MaskedCellError, MASKED
from semiheal.workbench import (
    MODES,
    CacheFormatError,
    ExperimentConfig,
    FrequencyReport,
    RunRecord,
    _derive_seed,
    cache_query,
    cache_write,
    exceeds_c_probability,
    export_metrics,
    frequency_report,
    heal_record,
    run_experiment,
    split_pairs,
    training_rows,
)

TINY = dict(n_values=(3,), p=0.15, tables_per_n=6, seed=42, mode="det")


def tiny_record(**overrides) -> RunRecord:
    return run_experiment(ExperimentConfig(**{**TINY, **overrides}))


def test_derive_seed_is_deterministic():
    assert _derive_seed(1, 2, 3) == _derive_seed(1, 2, 3)
    assert _derive_seed(1, 2, 3) != _derive_seed(1, 2, 4)
    assert 0 <= _derive_seed(0) < 2**64


def test_experiment_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(n_values=(), p=0.15, tables_per_n=1, seed=0)
    with pytest.raises(ValueError):
        ExperimentConfig(n_values=(1,), p=0.15, tables_per_n=1, seed=0)
    with pytest.raises(ValueError):
        ExperimentConfig(n_values=(3,), p=0.0, tables_per_n=1, seed=0)
    with pytest.raises(ValueError):
        ExperimentConfig(n_values=(3,), p=0.15, tables_per_n=0, seed=0)
    with pytest.raises(ValueError):
        ExperimentConfig(n_values=(3,), p=0.15, tables_per_n=1, seed=0, mode="magic")
    with pytest.raises(ValueError):
        ExperimentConfig(n_values=(3,), p=0.15, tables_per_n=1, seed=0, tau=0.0)
    with pytest.raises(ValueError):
        ExperimentConfig(
            n_values=(3,), p=0.15, tables_per_n=1, seed=0, size_penalty_exponent=3
        )


def test_experiment_config_round_trip():
    cfg = ExperimentConfig(
        n_values=(3, 5), p=0.2, tables_per_n=4, seed=9, mode="hybrid",
        tau=0.3, bilateral_votes=True, symmetric_trust=True,
        size_penalty_exponent=2, forest=ForestHyper(n_trees=7, seed=1),
    )
    back = ExperimentConfig.from_obj(json.loads(json.dumps(cfg.to_obj())))
    assert back == cfg
    assert back.pipeline() == PipelineConfig(
        tau=0.3, size_penalty_exponent=2, bilateral_votes=True, symmetric_trust=True
    )


def test_experiment_config_rejects_unknown_fields():
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_obj({**ExperimentConfig(**TINY).to_obj(), "nope": 1})
    with pytest.raises(ValueError):
        ExperimentConfig.from_obj([])


def test_heal_record_shape(bad_z3_pair):
    record = heal_record(heal_deterministic(bad_z3_pair), 99)
    assert set(record) == {
        "pair_seed", "fully_associative", "assoc_fraction",
        "cell_accuracy", "stage_log",
    }
    assert record["pair_seed"] == 99
    assert record["stage_log"] == [["vote_repair", 0], ["fallback", 0]]


def test_training_rows_label_corrupted_cells(bad_z3_pair):
    rows = training_rows([bad_z3_pair])
    assert len(rows) == 9
    labeled = {(c.row, c.col) for c in rows if c.label == 1}
    assert labeled == {(1, 1), (2, 2)}
    assert all(c.table_id == 0 for c in rows)


def test_split_pairs_fractions():
    pairs = list(range(10))  # only the length matters
    train_idx, test_idx = split_pairs(pairs, seed=5)
    assert len(train_idx) == 7 and len(test_idx) == 3
    assert sorted(train_idx + test_idx) == list(range(10))
    assert split_pairs(pairs, seed=5) == (train_idx, test_idx)
    assert split_pairs(pairs, seed=6) != (train_idx, test_idx)
    assert split_pairs([0], seed=1) == ([], [0])


def test_run_experiment_is_deterministic():
    a = tiny_record()
    b = tiny_record()
    assert a.content_hash() == b.content_hash()
    assert a.canonical_obj() == b.canonical_obj()
    assert not a.failed
    agg = a.per_n[0]
    assert agg["n"] == 3 and agg["tables"] == 2  # 30% of 6 tables under test
    row_keys = set(a.tables[0])
    assert {
        "pair_seed", "fully_associative", "assoc_fraction", "cell_accuracy",
        "stage_log", "n", "input_fully_associative", "pass1_fully_associative",
        "pass1_assoc_fraction", "pass1_cell_accuracy",
    } == row_keys


def test_run_experiment_all_modes_smoke():
    for mode in MODES:
        record = tiny_record(mode=mode, tables_per_n=4, forest=ForestHyper(n_trees=5))
        assert record.per_n[0]["tables"] == 2
        assert record.config["mode"] == mode


def test_run_record_rejects_tampered_aggregates():
    a = tiny_record()
    broken = dict(a.per_n[0])
    broken["pct_fully_associative"] += 1.0
    with pytest.raises(ValueError, match="aggregates"):
        RunRecord(
            config=a.config, per_n=(broken,), tables=a.tables, wall_clock=0.0
        )


def test_run_record_obj_round_trip():
    a = tiny_record()
    back = RunRecord.from_obj(json.loads(json.dumps(a.to_obj())))
    assert back.content_hash() == a.content_hash()
    assert back.wall_clock == a.wall_clock
    with pytest.raises(CacheFormatError):
        RunRecord.from_obj("nope")
    with pytest.raises(CacheFormatError):
        RunRecord.from_obj({"per_n": [], "tables": []})


def test_content_hash_ignores_wall_clock():
    a = tiny_record()
    slower = RunRecord(
        config=a.config, per_n=a.per_n, tables=a.tables, wall_clock=a.wall_clock + 5
    )
    assert slower.content_hash() == a.content_hash()
    assert slower.to_obj() != a.to_obj()


def test_cache_write_dedupes(tmp_path):
    path = tmp_path / "cache.jsonl"
    a = tiny_record()
    assert cache_write(a, path) is True
    assert cache_write(a, path) is False
    assert len(path.read_text().splitlines()) == 1
    b = tiny_record(seed=43)
    assert cache_write(b, path) is True
    assert len(cache_query(path)) == 2


def test_cache_query_filters(tmp_path):
    path = tmp_path / "cache.jsonl"
    cache_write(tiny_record(), path)
    cache_write(tiny_record(mode="backtrack"), path)
    assert len(cache_query(path, mode="det")) == 1
    assert len(cache_query(path, n=3)) == 2
    assert cache_query(path, n=4) == []
    assert cache_query(path, p=0.2) == []
    assert cache_query(tmp_path / "missing.jsonl") == []


def test_cache_skips_corrupt_lines(tmp_path):
    path = tmp_path / "cache.jsonl"
    cache_write(tiny_record(), path)
    with open(path, "a", encoding="utf-8") as handle:
        handle.write("{broken\n")
        handle.write('{"hash": "x"}\n')
    with pytest.warns(UserWarning, match="2 corrupt"):
        records = cache_query(path)
    assert len(records) == 1


def test_failed_run_is_cached_then_reraised(tmp_path):
    path = tmp_path / "cache.jsonl"
    # p=0.02 rounds to zero corrupted cells at n=3, so corruption raises.
    cfg = ExperimentConfig(
        n_values=(3,), p=0.02, tables_per_n=2, seed=1, mode="det",
        cache_path=str(path),
    )
    with pytest.raises(ValueError):
        run_experiment(cfg)
    cached = cache_query(path)
    assert len(cached) == 1
    assert cached[0].failed
    assert "TableValidationError" in cached[0].error


def test_exceeds_c_pins():
    assert exceeds_c_probability(10, 0.15) == pytest.approx(9.1e-9, rel=1e-12)
    assert exceeds_c_probability(2, 0.5) == 0.75
    assert exceeds_c_probability(4, 0.25) == pytest.approx(13 / 256)
    with pytest.raises(ValueError):
        exceeds_c_probability(1, 0.5)
    with pytest.raises(ValueError):
        exceeds_c_probability(5, 0.0)
    with pytest.raises(ValueError):
        exceeds_c_probability(5, 1.0)


@given(st.integers(2, 40), st.floats(0.01, 0.99))
def test_exceeds_c_matches_direct_sum(n, p):
    got = exceeds_c_probability(n, round(p, 6))
    c = math.ceil((1 - Fraction(str(round(p, 6)))) * n)
    direct = sum(
        math.comb(n, k) * (1 / n) ** k * (1 - 1 / n) ** (n - k)
        for k in range(c, n + 1)
    )
    assert got == pytest.approx(direct, rel=1e-9, abs=1e-15)
    assert 0.0 <= got <= 1.0


def test_exceeds_c_monotone_in_p():
    probs = [exceeds_c_probability(10, p) for p in (0.1, 0.3, 0.5, 0.7, 0.9)]
    assert probs == sorted(probs)


def test_frequency_report_values(z3):
    report = frequency_report(z3)
    assert report.counts == (3, 3, 3)
    assert report.frequencies == (1 / 3,) * 3
    assert report.deviations == (0.0,) * 3
    obj = report.to_obj()
    assert obj["n"] == 3
    assert obj["values"][1] == {
        "value": 1, "count": 3, "frequency": 1 / 3, "deviation": 0.0,
    }


def test_frequency_report_constant_table():
    t = CayleyTable.from_rows([[0, 0], [0, 0]])
    report = frequency_report(t)
    assert report.counts == (4, 0)
    assert report.deviations == (0.5, -0.5)


def test_frequency_report_validation(z3):
    with pytest.raises(MaskedCellError):
        frequency_report(z3.with_cells([(0, 0, MASKED)]))
    with pytest.raises(ValueError):
        FrequencyReport(n=2, counts=(1, 1), frequencies=(0.25, 0.25),
                        deviations=(0.0, 0.0))


def test_export_metrics_shape(tmp_path):
    a = tiny_record()
    b = tiny_record(mode="backtrack")
    paths = export_metrics([a, b], tmp_path)
    metrics = (tmp_path / "metrics.csv").read_text().splitlines()
    passes = (tmp_path / "passes.csv").read_text().splitlines()
    assert [p.name for p in paths] == ["metrics.csv", "passes.csv"]
    assert metrics[0] == "n,pct_fully_associative,mean_assoc_fraction,mean_cell_accuracy,mode"
    assert passes[0] == "n,baseline,pass1,pass2"
    assert len(metrics) == 3 and len(passes) == 3
    assert metrics[1].endswith(",det") and metrics[2].endswith(",backtrack")


def test_export_metrics_missing_field(tmp_path):
    bare = RunRecord(config={}, per_n=(), tables=(), wall_clock=0.0)
    with pytest.raises(ValueError, match="missing metric field"):
        export_metrics([bare], tmp_path)
