"""Experiment orchestration over (n, p) sweeps, plus analysis helpers.

Runs are fully deterministic from one master seed: per-order generation,
per-table corruption, the train/test shuffle, and forest training all use
seeds derived from it.  Results land in RunRecords that can be cached to a
JSON-lines file (deduplicated by content hash) and exported to CSV.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
import warnings
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .datagen import GenConfig, TablePair, corrupt, generate
from .forest import ForestHyper, ForestModel, LabeledCell, extract_features, train
from .healing import (
    HealReport,
    PipelineConfig,
    heal_backtracking,
    heal_deterministic,
    heal_hybrid,
    heal_ml_only,
    vote_grid,
)
from .tables import CayleyTable, MaskedCellError, is_associative
from .trust import trust_map

MODES = ("det", "backtrack", "hybrid", "ml_only")
MODEL_MODES = ("hybrid", "ml_only")
TRAIN_FRACTION = 0.7
RECORD_VERSION = 1


class CacheFormatError(ValueError):
    """A cache file or record does not parse as expected."""


def _derive_seed(*parts: int) -> int:
    """Deterministic 64-bit seed from a tuple of integer parts."""
    seq = np.random.SeedSequence([int(x) for x in parts])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment run depends on, JSON round-trippable."""

    n_values: tuple[int, ...]
    p: float
    tables_per_n: int
    seed: int
    mode: str = "hybrid"
    tau: float = 0.5
    bilateral_votes: bool = False
    symmetric_trust: bool = False
    size_penalty_exponent: int = 1
    forest: ForestHyper = field(default_factory=ForestHyper)
    out_dir: str | None = None
    cache_path: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        if not self.n_values:
            raise ValueError("n_values must be non-empty")
        for n in self.n_values:
            if n < 2:
                raise ValueError("orders below 2 cannot be corrupted")
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie strictly between 0 and 1")
        if self.tables_per_n < 1:
            raise ValueError("tables_per_n must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie strictly between 0 and 1")
        if self.size_penalty_exponent not in (1, 2):
            raise ValueError("size_penalty_exponent must be 1 or 2")

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(
            tau=self.tau,
            size_penalty_exponent=self.size_penalty_exponent,
            bilateral_votes=self.bilateral_votes,
            symmetric_trust=self.symmetric_trust,
        )

    def to_obj(self) -> dict:
        return {
            "n_values": list(self.n_values),
            "p": self.p,
            "tables_per_n": self.tables_per_n,
            "seed": self.seed,
            "mode": self.mode,
            "tau": self.tau,
            "bilateral_votes": self.bilateral_votes,
            "symmetric_trust": self.symmetric_trust,
            "size_penalty_exponent": self.size_penalty_exponent,
            "forest": {
                "n_trees": self.forest.n_trees,
                "max_depth": self.forest.max_depth,
                "min_leaf": self.forest.min_leaf,
                "features_per_split": self.forest.features_per_split,
                "seed": self.forest.seed,
                "criterion": self.forest.criterion,
            },
            "out_dir": self.out_dir,
            "cache_path": self.cache_path,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ValueError("experiment config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        data = dict(obj)
        if "forest" in data and data["forest"] is not None:
            if not isinstance(data["forest"], dict):
                raise ValueError("forest must be an object")
            data["forest"] = ForestHyper(**data["forest"])
        if "n_values" in data:
            data["n_values"] = tuple(data["n_values"])
        return cls(**data)


def _aggregate_rows(n: int, rows: Sequence[dict]) -> dict:
    """Per-order aggregates, recomputable from the stored per-table rows."""
    count = len(rows)
    return {
        "n": n,
        "tables": count,
        "pct_fully_associative": 100.0
        * sum(1 for r in rows if r["fully_associative"])
        / count,
        "mean_assoc_fraction": sum(r["assoc_fraction"] for r in rows) / count,
        "mean_cell_accuracy": sum(r["cell_accuracy"] for r in rows) / count,
        "pct_baseline_fully_associative": 100.0
        * sum(1 for r in rows if r["input_fully_associative"])
        / count,
        "pct_pass1_fully_associative": 100.0
        * sum(1 for r in rows if r["pass1_fully_associative"])
        / count,
    }


@dataclass(frozen=True)
class RunRecord:
    """One experiment's config snapshot, per-table rows, and aggregates."""

    config: dict
    per_n: tuple[dict, ...]
    tables: tuple[dict, ...]
    wall_clock: float
    version: int = RECORD_VERSION
    failed: bool = False
    error: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_n", tuple(dict(a) for a in self.per_n))
        object.__setattr__(self, "tables", tuple(dict(r) for r in self.tables))
        for agg in self.per_n:
            rows = [r for r in self.tables if r["n"] == agg["n"]]
            if _aggregate_rows(agg["n"], rows) != agg:
                raise ValueError(
                    f"aggregates for n={agg['n']} do not match their rows"
                )

    def canonical_obj(self) -> dict:
        """JSON form with wall-clock excluded; basis of the content hash."""
        return {
            "version": self.version,
            "config": self.config,
            "per_n": list(self.per_n),
            "tables": list(self.tables),
            "failed": self.failed,
            "error": self.error,
        }

    def content_hash(self) -> str:
        blob = json.dumps(
            self.canonical_obj(), sort_keys=True, separators=(",", ":")
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def to_obj(self) -> dict:
        obj = self.canonical_obj()
        obj["wall_clock"] = self.wall_clock
        return obj

    @classmethod
    def from_obj(cls, obj: dict) -> "RunRecord":
        if not isinstance(obj, dict):
            raise CacheFormatError("run record must be a JSON object")
        try:
            return cls(
                config=obj["config"],
                per_n=tuple(obj["per_n"]),
                tables=tuple(obj["tables"]),
                wall_clock=float(obj.get("wall_clock", 0.0)),
                version=int(obj.get("version", RECORD_VERSION)),
                failed=bool(obj.get("failed", False)),
                error=str(obj.get("error", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CacheFormatError(f"bad run record: {exc}") from exc


def heal_record(report: HealReport, pair_seed: int) -> dict:
    """The per-table report record emitted by the heal interface."""
    return {
        "pair_seed": int(pair_seed),
        "fully_associative": bool(report.fully_associative),
        "assoc_fraction": float(report.associativity_fraction),
        "cell_accuracy": float(report.cell_accuracy),
        "stage_log": [[name, int(count)] for name, count in report.stage_log],
    }


def training_rows(
    pairs: Sequence[TablePair], cfg: PipelineConfig = PipelineConfig()
) -> list[LabeledCell]:
    """Per-cell labeled features over corrupted tables, for forest training."""
    rows: list[LabeledCell] = []
    for table_id, pair in enumerate(pairs):
        n = pair.n
        tm = trust_map(pair.corrupt, cfg.symmetric_trust)
        votes = vote_grid(pair.corrupt, cfg.bilateral_votes)
        feats = extract_features(pair.corrupt, tm, votes)
        bad = pair.corrupted_cells
        for i in range(n):
            for j in range(n):
                rows.append(
                    LabeledCell(
                        features=tuple(float(x) for x in feats[i, j]),
                        label=1 if (i, j) in bad else 0,
                        table_id=table_id,
                        row=i,
                        col=j,
                    )
                )
    return rows


def split_pairs(
    pairs: Sequence[TablePair], seed: int
) -> tuple[list[int], list[int]]:
    """Seeded 70/30 split by table; returns (train indices, test indices).

    With fewer than two tables the split degenerates to an empty train side
    and everything under test.
    """
    order = np.random.default_rng(np.random.SeedSequence([seed])).permutation(
        len(pairs)
    )
    n_train = int(TRAIN_FRACTION * len(pairs))
    return sorted(int(i) for i in order[:n_train]), sorted(
        int(i) for i in order[n_train:]
    )


def _heal_one(
    pair: TablePair,
    mode: str,
    model: ForestModel | None,
    pipe: PipelineConfig,
) -> HealReport:
    if mode == "det":
        return heal_deterministic(pair, pipe)
    if mode == "backtrack":
        return heal_backtracking(pair, pipe)
    if mode == "hybrid":
        assert model is not None
        return heal_hybrid(pair, model, pipe)
    if mode == "ml_only":
        assert model is not None
        return heal_ml_only(pair, model, pipe)
    raise ValueError(f"unknown mode {mode!r}")


def _run_order(cfg: ExperimentConfig, n: int) -> list[dict]:
    """Generate, corrupt, split, train, and heal the test tables for one n."""
    pipe = cfg.pipeline()
    gen_seed = _derive_seed(cfg.seed, n, 0)
    clean = generate(GenConfig(n=n, count=cfg.tables_per_n, seed=gen_seed))
    pairs = []
    pair_seeds = []
    for idx, table in enumerate(clean):
        pair_seed = _derive_seed(cfg.seed, n, 1, idx)
        pair_seeds.append(pair_seed)
        pairs.append(corrupt(table, cfg.p, pair_seed))

    train_idx, test_idx = split_pairs(pairs, _derive_seed(cfg.seed, n, 2))
    model: ForestModel | None = None
    if cfg.mode in MODEL_MODES:
        # A degenerate split (tables_per_n=1) falls back to training on the
        # whole set so single-table smoke runs still work in every mode.
        train_pairs = [pairs[i] for i in train_idx] or list(pairs)
        hyper = replace(cfg.forest, seed=_derive_seed(cfg.seed, n, 3))
        model = train(training_rows(train_pairs, pipe), hyper)

    rows = []
    for i in test_idx:
        report = _heal_one(pairs[i], cfg.mode, model, pipe)
        row = heal_record(report, pair_seeds[i])
        row["n"] = n
        row["input_fully_associative"] = bool(is_associative(pairs[i].corrupt))
        row["pass1_fully_associative"] = bool(report.pass1_fully_associative)
        row["pass1_assoc_fraction"] = float(report.pass1_assoc_fraction)
        row["pass1_cell_accuracy"] = float(report.pass1_cell_accuracy)
        rows.append(row)
    return rows


def run_experiment(cfg: ExperimentConfig) -> RunRecord:
    """Run the configured sweep; deterministic from cfg.seed except wall-clock.

    On error, whatever orders already completed are cached (when a cache
    path is configured) in a record marked failed before the error is
    re-raised.
    """
    t0 = time.perf_counter()
    all_rows: list[dict] = []
    per_n: list[dict] = []
    try:
        for n in cfg.n_values:
            rows = _run_order(cfg, n)
            all_rows.extend(rows)
            per_n.append(_aggregate_rows(n, rows))
    except Exception as exc:
        if cfg.cache_path:
            partial = RunRecord(
                config=cfg.to_obj(),
                per_n=tuple(per_n),
                tables=tuple(all_rows),
                wall_clock=time.perf_counter() - t0,
                failed=True,
                error=f"{type(exc).__name__}: {exc}",
            )
            cache_write(partial, cfg.cache_path)
        raise
    record = RunRecord(
        config=cfg.to_obj(),
        per_n=tuple(per_n),
        tables=tuple(all_rows),
        wall_clock=time.perf_counter() - t0,
    )
    if cfg.cache_path:
        cache_write(record, cfg.cache_path)
    return record


def exceeds_c_probability(n: int, p: float) -> float:
    """Pr[X >= C] for X ~ Binomial(n, 1/n) with C = ceil((1-p)*n), exact.

    The tail is accumulated in exact rational arithmetic and converted to
    float only at the end, so all representable digits are trustworthy.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    c = math.ceil((1 - Fraction(str(p))) * n)
    q = Fraction(1, n)
    tail = Fraction(0)
    for k in range(max(c, 0), n + 1):
        tail += math.comb(n, k) * q**k * (1 - q) ** (n - k)
    return float(tail)


@dataclass(frozen=True)
class FrequencyReport:
    """Per-value occupancy of one table: counts, frequencies, deviations."""

    n: int
    counts: tuple[int, ...]
    frequencies: tuple[float, ...]
    deviations: tuple[float, ...]

    def __post_init__(self) -> None:
        if sum(self.counts) != self.n * self.n:
            raise ValueError("counts must sum to n^2")

    def to_obj(self) -> dict:
        return {
            "n": self.n,
            "values": [
                {
                    "value": v,
                    "count": self.counts[v],
                    "frequency": self.frequencies[v],
                    "deviation": self.deviations[v],
                }
                for v in range(self.n)
            ],
        }


def frequency_report(t: CayleyTable) -> FrequencyReport:
    """How often each value occurs in the table body, vs the uniform 1/n."""
    if t.has_masked():
        raise MaskedCellError("frequency_report needs a fully filled table")
    n = t.n
    counts = np.bincount(t.entries.ravel(), minlength=n)
    freqs = counts / (n * n)
    return FrequencyReport(
        n=n,
        counts=tuple(int(c) for c in counts),
        frequencies=tuple(float(f) for f in freqs),
        deviations=tuple(float(f - 1.0 / n) for f in freqs),
    )


def _iter_cache(path: str | Path) -> Iterable[tuple[RunRecord, str]]:
    """Yield (record, stored hash) for parseable lines; count corrupt ones."""
    skipped = 0
    with open(path, "r", encoding="utf-8") as handle:
        for raw in handle:
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
                record = RunRecord.from_obj(obj["record"])
                stored = obj["hash"]
            except (json.JSONDecodeError, KeyError, TypeError, CacheFormatError):
                skipped += 1
                continue
            yield record, stored
    if skipped:
        warnings.warn(f"skipped {skipped} corrupt cache line(s)", stacklevel=2)


def cache_write(record: RunRecord, path: str | Path) -> bool:
    """Append the record unless an identical one (by content hash) exists.

    Returns True when a new line was written.
    """
    path = Path(path)
    digest = record.content_hash()
    if path.exists():
        for _, stored in _iter_cache(path):
            if stored == digest:
                return False
    path.parent.mkdir(parents=True, exist_ok=True)
    line = json.dumps(
        {"hash": digest, "record": record.to_obj()},
        sort_keys=True,
        separators=(",", ":"),
    )
    with open(path, "a", encoding="utf-8") as handle:
        handle.write(line + "\n")
    return True


def cache_query(
    path: str | Path,
    n: int | None = None,
    p: float | None = None,
    mode: str | None = None,
) -> list[RunRecord]:
    """Records whose config matches every given filter; missing file = none."""
    path = Path(path)
    if not path.exists():
        return []
    out = []
    for record, _ in _iter_cache(path):
        config = record.config
        if n is not None and n not in config.get("n_values", []):
            continue
        if p is not None and config.get("p") != p:
            continue
        if mode is not None and config.get("mode") != mode:
            continue
        out.append(record)
    return out


def export_metrics(
    records: Sequence[RunRecord], dest_dir: str | Path
) -> list[Path]:
    """Write metrics.csv and passes.csv for the given records.

    metrics.csv: one row per (record, n) with the headline aggregates.
    passes.csv: the pass-ablation view (baseline input, Pass 1, Pass 2).
    """
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    metrics_path = dest / "metrics.csv"
    passes_path = dest / "passes.csv"
    try:
        with open(metrics_path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(
                [
                    "n",
                    "pct_fully_associative",
                    "mean_assoc_fraction",
                    "mean_cell_accuracy",
                    "mode",
                ]
            )
            for record in records:
                mode = record.config["mode"]
                for agg in record.per_n:
                    writer.writerow(
                        [
                            agg["n"],
                            agg["pct_fully_associative"],
                            agg["mean_assoc_fraction"],
                            agg["mean_cell_accuracy"],
                            mode,
                        ]
                    )
        with open(passes_path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["n", "baseline", "pass1", "pass2"])
            for record in records:
                for agg in record.per_n:
                    writer.writerow(
                        [
                            agg["n"],
                            agg["pct_baseline_fully_associative"],
                            agg["pct_pass1_fully_associative"],
                            agg["pct_fully_associative"],
                        ]
                    )
    except KeyError as exc:
        raise ValueError(f"record missing metric field: {exc}") from exc
    return [metrics_path, passes_path]
