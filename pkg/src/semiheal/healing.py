"""Repair pipelines: vote repair, backtracking, masking, and the hybrid.

The hybrid pipeline runs in fixed stages: trust scoring, forest-guided
masking, majority-vote fill (Pass 1), closure-set local healing with a
weighted merge (Pass 2), and a fallback chain that resolves whatever is
still masked.  Every report re-checks associativity with the independent
O(n³) oracle rather than trusting pipeline bookkeeping.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from ._completion import SearchBudgetExceeded, first_completion
from .datagen import TablePair
from .forest import ForestModel, extract_features, predict_proba_batch
from .tables import (
    MASKED,
    CayleyTable,
    ClosureSet,
    TableValidationError,
    associativity_counts,
    iter_closure_sets,
)
from .trust import TrustMap, trust_map

#: One cell's tally: candidate value -> number of decomposition votes.
CellVotes = dict[int, int]
#: Whole-table tally grid, indexed [row][col].
VoteTally = list[list[CellVotes]]

DEFAULT_TAU = 0.5
DEFAULT_BACKTRACK_BUDGET = 200_000


class RepairUnsatisfiableError(ValueError):
    """The target cells admit no associative completion."""


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs of the hybrid pipeline; defaults follow the published setup."""

    tau: float = DEFAULT_TAU
    size_penalty_exponent: int = 1
    bilateral_votes: bool = False
    symmetric_trust: bool = False

    def __post_init__(self):
        if not (0 < self.tau < 1):
            raise TableValidationError("tau must satisfy 0 < tau < 1")
        if self.size_penalty_exponent not in (1, 2):
            raise TableValidationError("size_penalty_exponent must be 1 or 2")


@dataclass(frozen=True)
class Candidate:
    """One proposed value for one cell, with its merge weight."""

    cell: tuple[int, int]
    value: int
    p_correct: float
    closure_size: int
    trust: float
    weight: float = field(init=False)
    size_penalty_exponent: int = 1

    def __post_init__(self):
        if not (2 <= self.closure_size <= 5):
            raise TableValidationError("closure_size must lie in [2, 5]")
        if not (0 <= self.p_correct <= 1 and 0 <= self.trust <= 1):
            raise TableValidationError("p_correct and trust must lie in [0, 1]")
        w = (
            self.p_correct
            * (1.0 / self.closure_size**self.size_penalty_exponent)
            * self.trust
        )
        object.__setattr__(self, "weight", w)


@dataclass(frozen=True)
class HealReport:
    """Outcome of one healing run against its known-clean reference."""

    input_pair: TablePair
    healed: CayleyTable
    fully_associative: bool
    associativity_fraction: float
    cell_accuracy: float
    stage_log: tuple[tuple[str, int], ...]
    pass1_fully_associative: bool = False
    pass1_assoc_fraction: float = 0.0
    pass1_cell_accuracy: float = 0.0


def _decompositions(t: CayleyTable) -> list[list[tuple[int, int]]]:
    """occ[v] = all (a, b) with T[a, b] = v, row-major."""
    occ: list[list[tuple[int, int]]] = [[] for _ in range(t.n)]
    rows, cols = np.nonzero(t.entries != MASKED)
    for a, b in zip(rows.tolist(), cols.tolist()):
        occ[t.entries[a, b]].append((a, b))
    return occ


def _tally_cell(
    T: np.ndarray,
    occ: list[list[tuple[int, int]]],
    i: int,
    j: int,
    bilateral: bool,
) -> CellVotes:
    votes: Counter = Counter()
    for i1, i2 in occ[i]:
        u = T[i2, j]
        if u == MASKED:
            continue
        w = T[i1, u]
        if w == MASKED:
            continue
        votes[int(w)] += 1
    if bilateral:
        for j1, j2 in occ[j]:
            u = T[i, j1]
            if u == MASKED:
                continue
            w = T[u, j2]
            if w == MASKED:
                continue
            votes[int(w)] += 1
    return dict(votes)


def vote_tally(
    t: CayleyTable, cell: tuple[int, int], bilateral: bool = False
) -> CellVotes:
    """Votes for cell (i, j) from the decompositions i = i₁·i₂.

    Each pair with T[i₁, i₂] = i contributes T[i₁, T[i₂, j]] when neither
    lookup routes through MASKED.  With bilateral=True, decompositions of
    the column element j = j₁·j₂ contribute T[T[i, j₁], j₂] as well.
    """
    i, j = cell
    if not (0 <= i < t.n and 0 <= j < t.n):
        raise TableValidationError(f"cell {cell} out of range")
    return _tally_cell(t.entries, _decompositions(t), i, j, bilateral)


def vote_grid(t: CayleyTable, bilateral: bool = False) -> VoteTally:
    """vote_tally for every cell, sharing one decomposition index."""
    occ = _decompositions(t)
    T = t.entries
    return [
        [_tally_cell(T, occ, i, j, bilateral) for j in range(t.n)]
        for i in range(t.n)
    ]


def _plurality(votes: CellVotes) -> int | None:
    """Most-voted value, ties to the lowest value; None on an empty tally."""
    if not votes:
        return None
    return min(votes, key=lambda v: (-votes[v], v))


def deterministic_repair(
    t: CayleyTable, targets: Iterable[tuple[int, int]], bilateral: bool = False
) -> CayleyTable:
    """Assign each target its plurality vote, row-major, on the evolving table.

    Earlier assignments feed later tallies.  A target with an empty tally is
    set to MASKED; non-target cells are never touched.
    """
    n = t.n
    ordered = sorted({(int(i), int(j)) for i, j in targets})
    for i, j in ordered:
        if not (0 <= i < n and 0 <= j < n):
            raise TableValidationError(f"target {(i, j)} out of range")
    T = t.entries.copy()
    for i, j in ordered:
        work = CayleyTable(T)
        winner = _plurality(vote_tally(work, (i, j), bilateral))
        T[i, j] = MASKED if winner is None else winner
    return CayleyTable(T)


def backtracking_repair(
    t: CayleyTable,
    targets: Iterable[tuple[int, int]],
    budget: int = DEFAULT_BACKTRACK_BUDGET,
) -> CayleyTable:
    """Depth-first reassignment of the target cells, vote-guided.

    Targets are masked, then refilled row-major; per cell, all n values are
    tried in descending initial-vote order (ties and vote-free cells fall
    back to ascending value).  Raises SearchBudgetExceeded after `budget`
    placements and RepairUnsatisfiableError when the search space is empty.
    """
    n = t.n
    ordered = sorted({(int(i), int(j)) for i, j in targets})
    if not ordered:
        raise TableValidationError("backtracking_repair needs at least one target")
    for i, j in ordered:
        if not (0 <= i < n and 0 <= j < n):
            raise TableValidationError(f"target {(i, j)} out of range")
    base = t.entries.copy()
    for i, j in ordered:
        base[i, j] = MASKED
    masked_t = CayleyTable(base)
    orders = np.empty((len(ordered), n), dtype=np.int64)
    for d, cell in enumerate(ordered):
        votes = vote_tally(masked_t, cell)
        orders[d] = sorted(range(n), key=lambda v: (-votes.get(v, 0), v))
    found = first_completion(base, ordered, orders, budget=budget)
    if found is None:
        raise RepairUnsatisfiableError(
            "target cells admit no associative completion"
        )
    return CayleyTable(found)


def mask_by_forest(
    t: CayleyTable,
    model: ForestModel,
    tm: TrustMap,
    tau: float = DEFAULT_TAU,
    bilateral_votes: bool = False,
) -> tuple[CayleyTable, frozenset[tuple[int, int]]]:
    """MASK every cell whose predicted corruption probability reaches tau."""
    if not (0 < tau < 1):
        raise TableValidationError("tau must satisfy 0 < tau < 1")
    n = t.n
    feats = extract_features(t, tm, vote_grid(t, bilateral_votes))
    probs = predict_proba_batch(model, feats.reshape(n * n, -1)).reshape(n, n)
    flagged = probs >= tau
    arr = np.where(flagged, MASKED, t.entries)
    cells = frozenset(
        (int(i), int(j)) for i, j in zip(*np.nonzero(flagged))
    )
    return CayleyTable(arr), cells


def local_heal(
    c: ClosureSet, local_tm: TrustMap, pass_limit: int | None = None
) -> tuple[ClosureSet, bool]:
    """Repair one closure subtable by overwriting the lower-trust side.

    For every violated local triple, the two final-product cells are
    compared under local_tm and the less trusted one is overwritten (ties
    overwrite the right-association cell).  Passes repeat to a fixed point;
    the second result is False when the pass limit ran out first.
    """
    m = c.size
    if local_tm.n != m:
        raise TableValidationError("local trust map order must match the subtable")
    if pass_limit is None:
        pass_limit = 10 * m**3
    S = c.subtable.entries.copy()
    converged = False
    for _ in range(pass_limit):
        changed = False
        for a in range(m):
            for b in range(m):
                ab = S[a, b]
                for d in range(m):
                    left = S[ab, d]
                    right = S[a, S[b, d]]
                    if left == right:
                        continue
                    bd = S[b, d]
                    # Tie: the right-association cell (a, b·d) gives way.
                    if local_tm.scores[ab, d] >= local_tm.scores[a, bd]:
                        S[a, bd] = left
                    else:
                        S[ab, d] = right
                    changed = True
                    ab = S[a, b]  # the overwrite may have been (a, b) itself
        if not changed:
            converged = True
            break
    return replace(c, subtable=CayleyTable(S)), converged


def merge_candidates(
    n: int,
    cands: Sequence[Candidate],
    allow_missing: frozenset[tuple[int, int]] = frozenset(),
) -> CayleyTable:
    """Argmax-weight value per cell; ties prefer higher trust, lower value.

    Cells without any candidate are an internal contract violation unless
    listed in allow_missing, in which case they come out MASKED.
    """
    best: dict[tuple[int, int], Candidate] = {}
    for cand in cands:
        i, j = cand.cell
        if not (0 <= i < n and 0 <= j < n and 0 <= cand.value < n):
            raise TableValidationError(f"candidate {cand} out of range")
        cur = best.get(cand.cell)
        if cur is None or (cand.weight, cand.trust, -cand.value) > (
            cur.weight,
            cur.trust,
            -cur.value,
        ):
            best[cand.cell] = cand
    arr = np.full((n, n), MASKED, dtype=np.int64)
    for (i, j), cand in best.items():
        arr[i, j] = cand.value
    missing = [
        (i, j)
        for i in range(n)
        for j in range(n)
        if arr[i, j] == MASKED and (i, j) not in allow_missing
    ]
    if missing:
        raise TableValidationError(
            f"cells {missing[:5]} have no candidate (internal contract violation)"
        )
    return CayleyTable(arr)


def resolve_residual(
    t: CayleyTable, bilateral: bool = False
) -> tuple[CayleyTable, int]:
    """Fill remaining MASKED cells: vote plurality, else modal value, else 0."""
    T = t.entries.copy()
    n = t.n
    changed = 0
    for i in range(n):
        for j in range(n):
            if T[i, j] != MASKED:
                continue
            work = CayleyTable(T)
            winner = _plurality(vote_tally(work, (i, j), bilateral))
            if winner is None:
                filled = T[T != MASKED]
                if filled.size:
                    counts = np.bincount(filled, minlength=n)
                    winner = int(counts.argmax())  # argmax ties to lowest value
                else:
                    winner = 0
            T[i, j] = winner
            changed += 1
    return CayleyTable(T), changed


def _candidate_feature_rows(
    base_feats: np.ndarray,
    t: CayleyTable,
    votes: VoteTally,
    wanted: Sequence[tuple[int, int, int]],
) -> np.ndarray:
    """Feature rows for (i, j, value) queries: the cell's row with the
    value-dependent columns (value, value_frequency, vote_agreement)
    substituted as if the cell held that value."""
    n = t.n
    T = t.entries
    counts = np.bincount(T[T != MASKED].ravel(), minlength=n)
    rows = np.empty((len(wanted), base_feats.shape[2]), dtype=np.float64)
    for r, (i, j, v) in enumerate(wanted):
        row = base_feats[i, j].copy()
        row[2] = v / n
        own = 1 if T[i, j] == v else 0
        row[7] = (counts[v] - own + 1) / (n * n)
        tally = votes[i][j]
        total = sum(tally.values())
        row[10] = tally.get(v, 0) / total if total else 0.0
        rows[r] = row
    return rows


def heal_hybrid(
    pair: TablePair,
    model: ForestModel,
    cfg: PipelineConfig = PipelineConfig(),
) -> HealReport:
    """Run the full hybrid pipeline on one corrupted table.

    Stages: trust scoring, forest masking, majority-vote fill (Pass 1),
    trust rescoring, closure-set local healing into a weighted candidate
    merge (Pass 2), then the residual fallback chain.  The report carries
    Pass-1-only metrics (computed on a fallback-resolved copy) so the pass
    ablation can be measured.
    """
    n = pair.n
    corrupt = pair.corrupt
    stage_log: list[tuple[str, int]] = []

    # Stage 1-2: trust, then forest-guided masking.
    tm = trust_map(corrupt, cfg.symmetric_trust)
    masked_t, masked_cells = mask_by_forest(
        corrupt, model, tm, cfg.tau, cfg.bilateral_votes
    )
    stage_log.append(("mask", len(masked_cells)))

    # Stage 3: Pass 1, majority-vote fill of the masked cells.
    t1 = deterministic_repair(masked_t, masked_cells, cfg.bilateral_votes)
    filled = int(
        ((t1.entries != masked_t.entries) & (t1.entries != MASKED)).sum()
    )
    stage_log.append(("pass1_fill", filled))

    pass1_resolved, _ = resolve_residual(t1, cfg.bilateral_votes)

    # Stage 4-5: rescore trust, heal closure sets, collect candidates.
    tm2 = trust_map(t1, cfg.symmetric_trust)
    votes2 = vote_grid(t1, cfg.bilateral_votes)
    base_feats = extract_features(t1, tm2, votes2)

    proposals: list[tuple[int, int, int, int, float]] = []  # i, j, v, |s|, trust
    closures = 0
    for cs in iter_closure_sets(t1, deduplicate=True):
        local_tm = trust_map(cs.subtable, cfg.symmetric_trust)
        healed_cs, _converged = local_heal(cs, local_tm)
        closures += 1
        sub = healed_cs.subtable.entries
        for a_loc, a in enumerate(cs.members):
            for b_loc, b in enumerate(cs.members):
                proposals.append(
                    (
                        a,
                        b,
                        cs.members[sub[a_loc, b_loc]],
                        cs.size,
                        float(local_tm.scores[a_loc, b_loc]),
                    )
                )
    stage_log.append(("closure_sets", closures))

    # Every filled cell defends its current value in the merge; closure
    # proposals must outweigh it to overwrite.
    still_masked = t1.masked_cells()
    for i in range(n):
        for j in range(n):
            if (i, j) in still_masked:
                continue
            proposals.append(
                (i, j, int(t1.entries[i, j]), 5, float(tm2.scores[i, j]))
            )

    cands: list[Candidate] = []
    if proposals:
        rows = _candidate_feature_rows(
            base_feats, t1, votes2, [(i, j, v) for i, j, v, _, _ in proposals]
        )
        p_corrupt = predict_proba_batch(model, rows)
        for (i, j, v, size, tr), pc in zip(proposals, p_corrupt.tolist()):
            cands.append(
                Candidate(
                    cell=(i, j),
                    value=v,
                    p_correct=1.0 - pc,
                    closure_size=size,
                    trust=tr,
                    size_penalty_exponent=cfg.size_penalty_exponent,
                )
            )

    # Stage 6: Pass 2, weighted merge.
    merged = merge_candidates(n, cands, allow_missing=still_masked)
    stage_log.append(("pass2_merge", int((merged.entries != t1.entries).sum())))

    # Stage 7: residual fallback chain.
    healed, fallback_count = resolve_residual(merged, cfg.bilateral_votes)
    stage_log.append(("fallback", fallback_count))

    return _build_report(pair, healed, stage_log, pass1_resolved)


def _metrics(healed: CayleyTable, clean: CayleyTable) -> tuple[bool, float, float]:
    sat, total = associativity_counts(healed)
    accuracy = float((healed.entries == clean.entries).mean())
    return sat == total, sat / total, accuracy


def _build_report(
    pair: TablePair,
    healed: CayleyTable,
    stage_log: list[tuple[str, int]],
    pass1_resolved: CayleyTable | None = None,
) -> HealReport:
    full, frac, acc = _metrics(healed, pair.clean)
    if pass1_resolved is None:
        pass1_resolved = healed
    p1_full, p1_frac, p1_acc = _metrics(pass1_resolved, pair.clean)
    return HealReport(
        input_pair=pair,
        healed=healed,
        fully_associative=full,
        associativity_fraction=frac,
        cell_accuracy=acc,
        stage_log=tuple(stage_log),
        pass1_fully_associative=p1_full,
        pass1_assoc_fraction=p1_frac,
        pass1_cell_accuracy=p1_acc,
    )


def heal_deterministic(
    pair: TablePair, cfg: PipelineConfig = PipelineConfig()
) -> HealReport:
    """Pure majority-vote repair of every cell, no model, no pass 2."""
    n = pair.n
    targets = [(i, j) for i in range(n) for j in range(n)]
    repaired = deterministic_repair(pair.corrupt, targets, cfg.bilateral_votes)
    stage_log = [
        ("vote_repair", int((repaired.entries != pair.corrupt.entries).sum()))
    ]
    healed, fallback_count = resolve_residual(repaired, cfg.bilateral_votes)
    stage_log.append(("fallback", fallback_count))
    return _build_report(pair, healed, stage_log)


def heal_backtracking(
    pair: TablePair,
    cfg: PipelineConfig = PipelineConfig(),
    budget: int = DEFAULT_BACKTRACK_BUDGET,
) -> HealReport:
    """Backtracking completion over the low-trust cells.

    Targets every cell with a failed check (trust < 1).  When the search
    proves unsatisfiable or the budget runs out, the corrupted table is
    returned unchanged so the failure shows up honestly in the metrics.
    """
    tm = trust_map(pair.corrupt, cfg.symmetric_trust)
    targets = [
        (int(i), int(j))
        for i, j in zip(*np.nonzero(tm.counts < tm.denom))
    ]
    if not targets:
        return _build_report(pair, pair.corrupt, [("backtrack", 0)])
    try:
        healed = backtracking_repair(pair.corrupt, targets, budget)
        changed = int((healed.entries != pair.corrupt.entries).sum())
        stage_log = [("backtrack", changed)]
    except (RepairUnsatisfiableError, SearchBudgetExceeded):
        healed = pair.corrupt
        stage_log = [("backtrack_failed", 0)]
    return _build_report(pair, healed, stage_log)


def heal_ml_only(
    pair: TablePair,
    model: ForestModel,
    cfg: PipelineConfig = PipelineConfig(),
) -> HealReport:
    """Mask with the forest, then refill each masked cell with the value the
    forest itself scores least likely corrupt; no votes, no pass 2."""
    n = pair.n
    tm = trust_map(pair.corrupt, cfg.symmetric_trust)
    masked_t, masked_cells = mask_by_forest(
        pair.corrupt, model, tm, cfg.tau, cfg.bilateral_votes
    )
    stage_log = [("mask", len(masked_cells))]
    if not masked_cells:
        return _build_report(pair, pair.corrupt, stage_log)
    tm2 = trust_map(masked_t, cfg.symmetric_trust)
    votes2 = vote_grid(masked_t, cfg.bilateral_votes)
    base_feats = extract_features(masked_t, tm2, votes2)
    cells = sorted(masked_cells)
    wanted = [(i, j, v) for i, j in cells for v in range(n)]
    rows = _candidate_feature_rows(base_feats, masked_t, votes2, wanted)
    p_corrupt = predict_proba_batch(model, rows).reshape(len(cells), n)
    T = masked_t.entries.copy()
    for (i, j), probs in zip(cells, p_corrupt):
        T[i, j] = int(probs.argmin())  # argmin ties to lowest value
    healed = CayleyTable(T)
    stage_log.append(("ml_fill", len(cells)))
    return _build_report(pair, healed, stage_log)
