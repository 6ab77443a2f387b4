"""Operations shared by the HTTP app and the in-process CLI.

Every function takes and returns plain JSON-compatible values so the two
front ends stay byte-compatible.  Validation failures raise ValueError
subclasses; resource exhaustion raises RuntimeError subclasses.
"""

from __future__ import annotations

import tempfile
import warnings

from ..datagen import GenConfig, TablePair, corrupt, generate
from ..forest import ForestHyper, model_from_obj, model_to_obj, train
from ..healing import DEFAULT_BACKTRACK_BUDGET, PipelineConfig, heal_backtracking
from ..tables import CayleyTable
from ..trust import trust_map, trust_map_obj
from ..workbench import (
    ExperimentConfig,
    RunRecord,
    _derive_seed,
    exceeds_c_probability,
    export_metrics,
    frequency_report,
    heal_record,
    run_experiment,
    training_rows,
)
from ..workbench import _heal_one

MODEL_FREE_MODES = ("det", "backtrack")


def _pipeline(
    tau: float,
    bilateral_votes: bool,
    symmetric_trust: bool,
    size_penalty_exponent: int,
) -> PipelineConfig:
    return PipelineConfig(
        tau=tau,
        size_penalty_exponent=size_penalty_exponent,
        bilateral_votes=bilateral_votes,
        symmetric_trust=symmetric_trust,
    )


def op_gen(
    n: int,
    count: int,
    seed: int,
    seed_cells: list | tuple = (),
    distinct_classes: bool = False,
) -> dict:
    cfg = GenConfig(
        n=n,
        count=count,
        seed=seed,
        seed_cells=tuple(tuple(int(x) for x in cell) for cell in seed_cells),
        distinct_classes=distinct_classes,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # shortfall is visible via counts
        tables = generate(cfg)
    return {
        "requested": count,
        "generated": len(tables),
        "tables": [t.to_obj() for t in tables],
    }


def op_corrupt(tables: list, p: float, seed: int) -> dict:
    """Corrupt each table with a per-table seed derived from the master."""
    if not tables:
        raise ValueError("no tables to corrupt")
    pairs = []
    for idx, obj in enumerate(tables):
        table = CayleyTable.from_obj(obj)
        pair = corrupt(table, p, _derive_seed(seed, idx))
        pairs.append(pair.to_obj())
    return {"pairs": pairs}


def op_trust(table: dict, symmetric: bool = False) -> dict:
    t = CayleyTable.from_obj(table)
    return {"trust": trust_map_obj(trust_map(t, symmetric))}


def op_train(
    pairs: list,
    hyper: dict | None = None,
    bilateral_votes: bool = False,
    symmetric_trust: bool = False,
) -> dict:
    parsed = [TablePair.from_obj(obj) for obj in pairs]
    pipe = PipelineConfig(
        bilateral_votes=bilateral_votes, symmetric_trust=symmetric_trust
    )
    rows = training_rows(parsed, pipe)
    model = train(rows, ForestHyper(**(hyper or {})))
    return {"model": model_to_obj(model), "rows": len(rows)}


def op_heal(
    pairs: list,
    mode: str = "hybrid",
    model: dict | None = None,
    tau: float = 0.5,
    bilateral_votes: bool = False,
    symmetric_trust: bool = False,
    size_penalty_exponent: int = 1,
    backtrack_budget: int | None = None,
) -> dict:
    if mode not in MODEL_FREE_MODES and model is None:
        raise ValueError(f"mode {mode!r} needs a trained model")
    parsed_model = model_from_obj(model) if model is not None else None
    pipe = _pipeline(tau, bilateral_votes, symmetric_trust, size_penalty_exponent)
    reports = []
    for obj in pairs:
        pair = TablePair.from_obj(obj)
        if mode == "backtrack" and backtrack_budget is not None:
            report = heal_backtracking(pair, pipe, budget=backtrack_budget)
        else:
            report = _heal_one(pair, mode, parsed_model, pipe)
        reports.append(heal_record(report, pair.seed))
    return {"reports": reports}


def op_experiment(config: dict) -> dict:
    record = run_experiment(ExperimentConfig.from_obj(config))
    return {"record": record.to_obj()}


def op_exceeds_c(n: int, p: float) -> dict:
    return {"n": n, "p": p, "probability": exceeds_c_probability(n, p)}


def op_frequency(table: dict) -> dict:
    return {"report": frequency_report(CayleyTable.from_obj(table)).to_obj()}


def op_export(records: list) -> dict:
    """Render the CSV exports for the given run records as text."""
    parsed = [RunRecord.from_obj(obj) for obj in records]
    with tempfile.TemporaryDirectory() as tmp:
        metrics_path, passes_path = export_metrics(parsed, tmp)
        return {
            "metrics_csv": metrics_path.read_text(encoding="utf-8"),
            "passes_csv": passes_path.read_text(encoding="utf-8"),
        }
