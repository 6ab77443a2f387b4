"""Associative table generation, seeded corruption, and dataset files.

The generator is a backtracking model builder: cells are filled depth-first
in row-major order, candidate values follow a per-cell seeded permutation,
and branches die as soon as a fully determined triple violates associativity.
Every emitted table is re-checked by the independent O(n³) oracle rather
than trusted from the search bookkeeping.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._completion import SearchBudgetExceeded, first_completion, iter_completions
from .tables import (
    MASKED,
    CayleyTable,
    TableValidationError,
    canonical_form,
    is_associative,
)

#: Restarts allowed before generation is abandoned as a runtime failure.
DEFAULT_MAX_ATTEMPTS = 200
#: Consecutive duplicate draws tolerated while hunting for new classes (n ≥ 5).
DISTINCT_STALL_LIMIT = 300

ENUMERATION_MAX_ORDER = 3
DATASET_FORMAT = "semiheal-dataset"
DATASET_VERSION = 1


class UnsatisfiableConstraintsError(ValueError):
    """The fixed seed cells admit no associative completion."""


class GenerationBudgetError(RuntimeError):
    """All restart attempts exhausted their node budgets without a table."""


class GenerationShortfall(UserWarning):
    """Fewer tables exist than requested (distinct-class exhaustion)."""


class DatasetFormatError(ValueError):
    """A dataset file failed to parse; the message names the offending line."""


def round_half_up(x: float) -> int:
    """round() with ties going up, e.g. 2.5 -> 3 (not banker's rounding)."""
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class GenConfig:
    """Parameters for one generation request."""

    n: int
    count: int
    seed: int
    seed_cells: tuple[tuple[int, int, int], ...] = ()
    distinct_classes: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise TableValidationError("n must be >= 1")
        if self.count < 1:
            raise TableValidationError("count must be >= 1")
        cells = tuple((int(i), int(j), int(v)) for i, j, v in self.seed_cells)
        positions = [(i, j) for i, j, _ in cells]
        if len(set(positions)) != len(positions):
            raise TableValidationError("seed_cells positions must be distinct")
        for i, j, v in cells:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise TableValidationError(f"seed cell {(i, j)} out of range")
            if not (0 <= v < self.n):
                raise TableValidationError(f"seed value {v} out of range")
        object.__setattr__(self, "seed_cells", cells)


def default_node_budget(n: int) -> int:
    """Per-attempt placement budget.

    Search times are heavy-tailed: an unlucky value order can burn millions
    of nodes while a lucky one finishes in thousands, so short attempts with
    many seeded restarts beat one long search.
    """
    return max(40_000, 150 * n * n)


def _seeded_base(cfg: GenConfig) -> tuple[np.ndarray, list[tuple[int, int]]]:
    base = np.full((cfg.n, cfg.n), MASKED, dtype=np.int64)
    for i, j, v in cfg.seed_cells:
        base[i, j] = v
    free = [
        (i, j) for i in range(cfg.n) for j in range(cfg.n) if base[i, j] == MASKED
    ]
    return base, free


def _value_orders(cfg: GenConfig, table_index: int, attempt: int, m: int) -> np.ndarray:
    """One seeded value permutation per free cell, fixed for the whole attempt."""
    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, cfg.n, table_index, attempt])
    )
    return np.argsort(rng.random((m, cfg.n)), axis=1).astype(np.int64)


def _search_one(
    cfg: GenConfig,
    base: np.ndarray,
    free: list[tuple[int, int]],
    table_index: int,
    node_budget: int,
    max_attempts: int,
) -> np.ndarray:
    """First completion for this table index, restarting on budget exhaustion."""
    for attempt in range(max_attempts):
        orders = _value_orders(cfg, table_index, attempt, len(free))
        try:
            found = first_completion(base, free, orders, budget=node_budget)
        except SearchBudgetExceeded:
            continue
        if found is None:
            raise UnsatisfiableConstraintsError(
                f"seed cells {cfg.seed_cells} admit no associative table of order {cfg.n}"
            )
        return found
    raise GenerationBudgetError(
        f"gave up on order {cfg.n} after {max_attempts} attempts of {node_budget} nodes"
    )


def _check_output(arr: np.ndarray) -> CayleyTable:
    t = CayleyTable(arr)
    if not is_associative(t):
        raise AssertionError("generator produced a non-associative table")
    return t


def _generate_sampled(
    cfg: GenConfig, node_budget: int, max_attempts: int
) -> list[CayleyTable]:
    base, free = _seeded_base(cfg)
    return [
        _check_output(_search_one(cfg, base, free, idx, node_budget, max_attempts))
        for idx in range(cfg.count)
    ]


def _generate_distinct_exhaustive(cfg: GenConfig) -> list[CayleyTable]:
    """Stream every completion (seeded emission order) and keep new classes.

    Exhausting the stream proves the shortfall is real, so this path is
    reserved for n ≤ 4 where full enumeration is cheap.
    """
    base, free = _seeded_base(cfg)
    orders = _value_orders(cfg, 0, 0, len(free))
    out: list[CayleyTable] = []
    seen: set[bytes] = set()
    for arr in iter_completions(base, free, orders):
        t = _check_output(arr)
        form = canonical_form(t)
        if form in seen:
            continue
        seen.add(form)
        out.append(t)
        if len(out) == cfg.count:
            return out
    warnings.warn(
        f"only {len(out)} distinct classes exist under the given constraints "
        f"(requested {cfg.count})",
        GenerationShortfall,
        stacklevel=3,
    )
    if not out:
        raise UnsatisfiableConstraintsError(
            f"seed cells {cfg.seed_cells} admit no associative table of order {cfg.n}"
        )
    return out


def _generate_distinct_sampled(
    cfg: GenConfig, node_budget: int, max_attempts: int
) -> list[CayleyTable]:
    """Draw fresh tables until enough classes are seen or the hunt stalls."""
    base, free = _seeded_base(cfg)
    out: list[CayleyTable] = []
    seen: set[bytes] = set()
    stall = 0
    idx = 0
    while len(out) < cfg.count and stall < DISTINCT_STALL_LIMIT:
        t = _check_output(
            _search_one(cfg, base, free, idx, node_budget, max_attempts)
        )
        idx += 1
        form = canonical_form(t)
        if form in seen:
            stall += 1
            continue
        stall = 0
        seen.add(form)
        out.append(t)
    if len(out) < cfg.count:
        warnings.warn(
            f"found {len(out)} distinct classes after {DISTINCT_STALL_LIMIT} "
            f"consecutive duplicate draws (requested {cfg.count}); giving up",
            GenerationShortfall,
            stacklevel=3,
        )
    return out


def generate(
    cfg: GenConfig,
    node_budget: int | None = None,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> list[CayleyTable]:
    """Generate cfg.count associative tables of order cfg.n.

    Deterministic in (cfg): table k is the first completion under the value
    orders seeded by (seed, n, k, attempt).  With distinct_classes the result
    is deduplicated by canonical form; when fewer classes exist than
    requested, the shorter list is returned under a GenerationShortfall
    warning.  Unsatisfiable seed cells raise; exhausted budgets raise.
    """
    if node_budget is None:
        node_budget = default_node_budget(cfg.n)
    if not cfg.distinct_classes:
        return _generate_sampled(cfg, node_budget, max_attempts)
    if cfg.n <= 4:
        return _generate_distinct_exhaustive(cfg)
    if cfg.n > 8:
        raise TableValidationError("distinct_classes requires n <= 8")
    return _generate_distinct_sampled(cfg, node_budget, max_attempts)


def enumerate_all(n: int) -> list[CayleyTable]:
    """Every labeled associative table of order n ≤ 3, lexicographic order.

    Deliberately a brute-force sweep over all n^(n²) grids, independent of
    the backtracking generator, so the two can cross-check each other.
    """
    if n < 1:
        raise TableValidationError("n must be >= 1")
    if n > ENUMERATION_MAX_ORDER:
        raise TableValidationError(
            f"enumerate_all sweeps n^(n*n) tables; n <= {ENUMERATION_MAX_ORDER} only"
        )
    out = []
    for flat in itertools.product(range(n), repeat=n * n):
        T = np.array(flat, dtype=np.int64).reshape(n, n)
        lhs = T[T, :]
        rhs = T[:, T]
        if (lhs == rhs).all():
            out.append(CayleyTable(T))
    return out


@dataclass(frozen=True)
class TablePair:
    """A clean table, its corrupted copy, and exactly where they differ."""

    clean: CayleyTable
    corrupt: CayleyTable
    corrupted_cells: frozenset[tuple[int, int]]
    p: float
    seed: int

    def __post_init__(self):
        cells = frozenset((int(i), int(j)) for i, j in self.corrupted_cells)
        object.__setattr__(self, "corrupted_cells", cells)
        n = self.clean.n
        if self.corrupt.n != n:
            raise TableValidationError("clean and corrupt orders differ")
        if not (0 <= self.p <= 1):
            raise TableValidationError("corruption rate must lie in [0, 1]")
        if not is_associative(self.clean):
            raise TableValidationError("clean table must be associative")
        diff = self.clean.entries != self.corrupt.entries
        actual = set(zip(*np.nonzero(diff)))
        actual = {(int(i), int(j)) for i, j in actual}
        if actual != cells:
            raise TableValidationError(
                "corrupted_cells must be exactly the differing positions"
            )
        if len(cells) != round_half_up(self.p * n * n):
            raise TableValidationError(
                f"expected round({self.p}*{n}²) = "
                f"{round_half_up(self.p * n * n)} corrupted cells, got {len(cells)}"
            )
        if self.corrupt.has_masked():
            raise TableValidationError("corrupt table may not contain MASKED")

    @property
    def n(self) -> int:
        return self.clean.n

    def to_obj(self) -> dict:
        return {
            "n": self.n,
            "p": self.p,
            "seed": self.seed,
            "clean": self.clean.entries.tolist(),
            "corrupt": self.corrupt.entries.tolist(),
            "corrupted_cells": sorted([i, j] for i, j in self.corrupted_cells),
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "TablePair":
        required = ("n", "p", "seed", "clean", "corrupt", "corrupted_cells")
        missing = [k for k in required if k not in obj]
        if missing:
            raise TableValidationError(f"record missing fields {missing}")
        return cls(
            clean=CayleyTable.from_obj({"n": obj["n"], "entries": obj["clean"]}),
            corrupt=CayleyTable.from_obj({"n": obj["n"], "entries": obj["corrupt"]}),
            corrupted_cells=frozenset(
                (int(i), int(j)) for i, j in obj["corrupted_cells"]
            ),
            p=float(obj["p"]),
            seed=int(obj["seed"]),
        )

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TablePair)
            and self.clean == other.clean
            and self.corrupt == other.corrupt
            and self.corrupted_cells == other.corrupted_cells
            and self.p == other.p
            and self.seed == other.seed
        )

    def __hash__(self) -> int:
        return hash((self.clean, self.corrupt, self.corrupted_cells, self.p, self.seed))


def corrupt(clean: CayleyTable, p: float, seed: int) -> TablePair:
    """Flip round(p·n²) distinct cells to wrong in-range values, seeded.

    Each selected cell is drawn without replacement, uniformly over the grid;
    its new value is uniform over the n-1 values different from the old one.
    """
    n = clean.n
    if not (0 < p < 1):
        raise TableValidationError("corruption rate must satisfy 0 < p < 1")
    if n == 1:
        raise TableValidationError("order-1 tables have no incorrect value to flip to")
    if not is_associative(clean):
        raise TableValidationError("corrupt requires an associative clean table")
    k = round_half_up(p * n * n)
    if k < 1:
        raise TableValidationError(f"round({p}*{n}²) rounds to zero cells")
    rng = np.random.default_rng(np.random.SeedSequence([seed, n]))
    chosen = rng.choice(n * n, size=k, replace=False)
    arr = clean.entries.copy()
    cells = []
    for flat in chosen.tolist():
        i, j = divmod(flat, n)
        old = arr[i, j]
        r = int(rng.integers(0, n - 1))
        arr[i, j] = r if r < old else r + 1
        cells.append((i, j))
    return TablePair(
        clean=clean,
        corrupt=CayleyTable(arr),
        corrupted_cells=frozenset(cells),
        p=p,
        seed=seed,
    )


def _open_maybe(dest, mode: str):
    if hasattr(dest, "write") or hasattr(dest, "read"):
        return dest, False
    return open(Path(dest), mode, encoding="utf-8"), True


def write_dataset(pairs: Sequence[TablePair], destination) -> None:
    """Write pairs as JSON lines after a header record."""
    fh, owned = _open_maybe(destination, "w")
    try:
        header = {"format": DATASET_FORMAT, "version": DATASET_VERSION}
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for pair in pairs:
            fh.write(json.dumps(pair.to_obj(), separators=(",", ":")) + "\n")
    finally:
        if owned:
            fh.close()


def read_dataset(source) -> list[TablePair]:
    """Parse a dataset file; malformed records name their line number."""
    fh, owned = _open_maybe(source, "r")
    try:
        lines = fh.read().splitlines()
    finally:
        if owned:
            fh.close()
    if not lines:
        raise DatasetFormatError("line 1: missing dataset header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"line 1: invalid JSON header: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise DatasetFormatError(f"line 1: not a {DATASET_FORMAT} file")
    if header.get("version") != DATASET_VERSION:
        raise DatasetFormatError(
            f"line 1: unsupported dataset version {header.get('version')!r}"
        )
    pairs = []
    for ln, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            pairs.append(TablePair.from_obj(obj))
        except (json.JSONDecodeError, ValueError) as exc:
            raise DatasetFormatError(f"line {ln}: {exc}") from exc
    return pairs
