"""Vote tallies, repair passes, masking, merge, and the full pipelines."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import left_zero, z3_table
from semiheal._completion import SearchBudgetExceeded
from semiheal.datagen import GenConfig, TablePair, corrupt, generate
from semiheal.forest import ForestHyper, ForestModel
from semiheal.healing import (
    Candidate,
    PipelineConfig,
    RepairUnsatisfiableError,
    backtracking_repair,
    deterministic_repair,
    heal_backtracking,
    heal_deterministic,
    heal_hybrid,
    heal_ml_only,
    local_heal,
    mask_by_forest,
    merge_candidates,
    resolve_residual,
    vote_grid,
    vote_tally,
)
from semiheal.tables import (
    MASKED,
    CayleyTable,
    ClosureSet,
    TableValidationError,
    is_associative,
)
from semiheal.trust import trust_map

MASK_LOW_TRUST = ForestModel(
    trees=(
        {
            "feature": 3,
            "threshold": 0.75,
            "left": {"pos": 1, "tot": 1},
            "right": {"pos": 0, "tot": 1},
        },
    ),
    hyper=ForestHyper(n_trees=1),
)
MASK_NOTHING = ForestModel(trees=({"pos": 0, "tot": 1},), hyper=ForestHyper(n_trees=1))
MASK_EVERYTHING = ForestModel(
    trees=({"pos": 1, "tot": 1},), hyper=ForestHyper(n_trees=1)
)


@st.composite
def grids(draw, min_n=2, max_n=5, allow_masked=False):
    n = draw(st.integers(min_n, max_n))
    lo = MASKED if allow_masked else 0
    cell = st.integers(lo, n - 1)
    rows = draw(
        st.lists(st.lists(cell, min_size=n, max_size=n), min_size=n, max_size=n)
    )
    return CayleyTable.from_rows(rows)


def test_vote_tally_left_zero():
    # i=0 decomposes as (0,0),(0,1),(0,2); each votes T[0, T[b,0]] = 0.
    assert vote_tally(left_zero(3), (0, 0)) == {0: 3}


def test_vote_tally_masked_z3(z3):
    masked = z3.with_cells([(1, 1, MASKED)])
    assert vote_tally(masked, (1, 1)) == {2: 1}
    assert vote_tally(masked, (1, 1), bilateral=True) == {2: 2}


def test_vote_tally_out_of_range(z3):
    with pytest.raises(TableValidationError):
        vote_tally(z3, (3, 0))


@given(grids(allow_masked=True), st.booleans())
def test_vote_grid_matches_per_cell_tallies(t, bilateral):
    grid = vote_grid(t, bilateral)
    for i in range(t.n):
        for j in range(t.n):
            assert grid[i][j] == vote_tally(t, (i, j), bilateral)


def test_deterministic_repair_restores_single_mask(z3):
    masked = z3.with_cells([(1, 1, MASKED)])
    assert deterministic_repair(masked, [(1, 1)]) == z3


def test_deterministic_repair_no_targets_is_identity(bad_z3):
    assert deterministic_repair(bad_z3, []) == bad_z3


def test_deterministic_repair_validates_targets(z3):
    with pytest.raises(TableValidationError):
        deterministic_repair(z3, [(0, 3)])


def test_deterministic_repair_empty_tally_masks(z3):
    # These four cells have no usable decomposition once all are hidden.
    cells = [(1, 1), (1, 2), (2, 1), (2, 2)]
    masked = z3.with_cells([(i, j, MASKED) for i, j in cells])
    out = deterministic_repair(masked, cells)
    assert out.masked_cells() == frozenset(cells)


@given(grids(allow_masked=True), st.data())
def test_deterministic_repair_touches_only_targets(t, data):
    n = t.n
    all_cells = [(i, j) for i in range(n) for j in range(n)]
    targets = data.draw(st.sets(st.sampled_from(all_cells), max_size=n))
    out = deterministic_repair(t, targets)
    for i, j in all_cells:
        if (i, j) not in targets:
            assert out.entries[i, j] == t.entries[i, j]


def test_backtracking_repair_finds_a_completion(bad_z3):
    out = backtracking_repair(bad_z3, [(1, 1), (1, 2), (2, 1), (2, 2)])
    assert is_associative(out)
    assert out.entries.tolist() == [[0, 1, 2], [1, 0, 2], [2, 2, 2]]
    assert out.entries[0].tolist() == bad_z3.entries[0].tolist()


def test_backtracking_repair_budget_and_unsat(bad_z3):
    with pytest.raises(SearchBudgetExceeded):
        backtracking_repair(bad_z3, [(1, 1), (1, 2), (2, 1), (2, 2)], budget=2)
    unsat = CayleyTable.from_rows([[1, 0], [0, 0]])
    with pytest.raises(RepairUnsatisfiableError):
        backtracking_repair(unsat, [(0, 1), (1, 0)])
    with pytest.raises(TableValidationError):
        backtracking_repair(unsat, [])


def test_mask_by_forest_threshold(bad_z3):
    tm = trust_map(bad_z3)
    masked_t, cells = mask_by_forest(bad_z3, MASK_LOW_TRUST, tm, tau=0.5)
    assert cells == frozenset({(1, 1), (1, 2), (2, 1), (2, 2)})
    assert masked_t.masked_cells() == cells
    _, none = mask_by_forest(bad_z3, MASK_NOTHING, tm, tau=0.5)
    assert none == frozenset()
    _, everything = mask_by_forest(bad_z3, MASK_EVERYTHING, tm, tau=0.5)
    assert len(everything) == 9
    with pytest.raises(TableValidationError):
        mask_by_forest(bad_z3, MASK_NOTHING, tm, tau=1.0)


def test_local_heal_keeps_associative_subtables(z3):
    cs = ClosureSet(base=(1, 1, 1), members=(0, 1, 2), subtable=z3)
    healed, converged = local_heal(cs, trust_map(z3))
    assert healed.subtable == z3
    assert converged


def test_local_heal_fixes_two_element_subtable():
    sub = CayleyTable.from_rows([[1, 0], [0, 0]])
    cs = ClosureSet(base=(0, 0, 1), members=(0, 1), subtable=sub)
    healed, converged = local_heal(cs, trust_map(sub))
    assert converged
    assert healed.subtable.entries.tolist() == [[0, 0], [0, 0]]
    assert is_associative(healed.subtable)


def test_local_heal_pass_limit():
    sub = CayleyTable.from_rows([[1, 0], [0, 0]])
    cs = ClosureSet(base=(0, 0, 1), members=(0, 1), subtable=sub)
    healed, converged = local_heal(cs, trust_map(sub), pass_limit=0)
    assert healed.subtable == sub
    assert not converged


def test_local_heal_order_mismatch(z3):
    cs = ClosureSet(base=(0, 0, 1), members=(0, 1), subtable=left_zero(2))
    with pytest.raises(TableValidationError):
        local_heal(cs, trust_map(z3))


def test_candidate_weight_formula():
    c = Candidate(cell=(0, 0), value=2, p_correct=0.8, closure_size=3, trust=0.9)
    assert c.weight == pytest.approx(0.24)
    squared = Candidate(
        cell=(0, 0), value=2, p_correct=0.8, closure_size=3, trust=0.9,
        size_penalty_exponent=2,
    )
    assert squared.weight == pytest.approx(0.08)
    with pytest.raises(TableValidationError):
        Candidate(cell=(0, 0), value=0, p_correct=0.5, closure_size=1, trust=0.5)
    with pytest.raises(TableValidationError):
        Candidate(cell=(0, 0), value=0, p_correct=1.5, closure_size=3, trust=0.5)


def test_merge_candidates_picks_heaviest():
    cands = [
        Candidate(cell=(0, 0), value=1, p_correct=0.9, closure_size=5, trust=0.5),
        Candidate(cell=(0, 0), value=2, p_correct=0.8, closure_size=3, trust=0.9),
    ]
    merged = merge_candidates(1, [], allow_missing=frozenset({(0, 0)}))
    assert merged.masked_cells() == frozenset({(0, 0)})
    out = merge_candidates(3, cands, allow_missing=frozenset(
        {(i, j) for i in range(3) for j in range(3)} - {(0, 0)}
    ))
    assert out.value(0, 0) == 2  # weight 0.24 beats 0.09


def test_merge_candidates_tie_breaks():
    # Equal weights 0.04: higher trust wins.
    a = Candidate(cell=(0, 0), value=1, p_correct=0.5, closure_size=5, trust=0.4)
    b = Candidate(cell=(0, 0), value=2, p_correct=0.4, closure_size=5, trust=0.5)
    rest = frozenset({(i, j) for i in range(3) for j in range(3)} - {(0, 0)})
    assert merge_candidates(3, [a, b], allow_missing=rest).value(0, 0) == 2
    # Fully tied: lower value wins.
    c = Candidate(cell=(0, 0), value=1, p_correct=0.4, closure_size=5, trust=0.5)
    assert merge_candidates(3, [b, c], allow_missing=rest).value(0, 0) == 1


def test_merge_candidates_contract():
    with pytest.raises(TableValidationError):
        merge_candidates(2, [])
    with pytest.raises(TableValidationError):
        merge_candidates(
            2,
            [Candidate(cell=(0, 5), value=0, p_correct=1, closure_size=2, trust=1)],
        )


def test_resolve_residual_chain():
    all_masked = CayleyTable(np.full((2, 2), MASKED))
    out, changed = resolve_residual(all_masked)
    assert out.entries.tolist() == [[0, 0], [0, 0]]  # no votes, no values, so 0
    assert changed == 4
    z3 = z3_table()
    untouched, zero = resolve_residual(z3)
    assert untouched == z3 and zero == 0
    voted, one = resolve_residual(z3.with_cells([(1, 1, MASKED)]))
    assert voted == z3 and one == 1  # vote beats the modal fallback


def test_resolve_residual_modal_fallback(bad_z3):
    # The four hidden cells are vote-dead; the modal filled value (tied 1
    # vs 2, lowest wins) fills them all.
    cells = [(1, 1), (1, 2), (2, 1), (2, 2)]
    masked = bad_z3.with_cells([(i, j, MASKED) for i, j in cells])
    out, changed = resolve_residual(masked)
    assert changed == 4
    assert out.entries.tolist() == [[0, 1, 2], [1, 1, 1], [2, 1, 1]]


def test_heal_deterministic_on_corrupted_z3(bad_z3_pair):
    report = heal_deterministic(bad_z3_pair)
    # Every cell's plurality vote confirms the corrupted value here.
    assert report.healed == bad_z3_pair.corrupt
    assert not report.fully_associative
    assert report.associativity_fraction == pytest.approx(23 / 27)
    assert report.cell_accuracy == pytest.approx(7 / 9)
    assert report.stage_log == (("vote_repair", 0), ("fallback", 0))


def test_heal_backtracking_on_corrupted_z3(bad_z3_pair):
    report = heal_backtracking(bad_z3_pair)
    assert report.fully_associative
    assert report.stage_log == (("backtrack", 2),)
    assert report.healed.entries.tolist() == [[0, 1, 2], [1, 0, 2], [2, 2, 2]]
    assert report.cell_accuracy == pytest.approx(5 / 9)


def test_heal_backtracking_budget_failure_is_honest(bad_z3_pair):
    report = heal_backtracking(bad_z3_pair, budget=2)
    assert report.stage_log == (("backtrack_failed", 0),)
    assert report.healed == bad_z3_pair.corrupt


def test_heal_backtracking_clean_input(z3):
    pair = TablePair(clean=z3, corrupt=z3, corrupted_cells=frozenset(), p=0.01, seed=0)
    report = heal_backtracking(pair)
    assert report.stage_log == (("backtrack", 0),)
    assert report.fully_associative


def test_pipeline_config_validation():
    with pytest.raises(TableValidationError):
        PipelineConfig(tau=0.0)
    with pytest.raises(TableValidationError):
        PipelineConfig(size_penalty_exponent=3)


def test_heal_hybrid_report_consistency(mini_pairs, mini_model):
    for pair in mini_pairs[9:]:
        report = heal_hybrid(pair, mini_model)
        assert not report.healed.has_masked()
        assert report.fully_associative == is_associative(report.healed)
        assert report.cell_accuracy == pytest.approx(
            float((report.healed.entries == pair.clean.entries).mean())
        )
        assert [name for name, _ in report.stage_log] == [
            "mask", "pass1_fill", "closure_sets", "pass2_merge", "fallback",
        ]
        assert 0.0 <= report.pass1_assoc_fraction <= 1.0
        assert 0.0 <= report.pass1_cell_accuracy <= 1.0


def test_heal_hybrid_is_deterministic(mini_pairs, mini_model):
    a = heal_hybrid(mini_pairs[9], mini_model)
    b = heal_hybrid(mini_pairs[9], mini_model)
    assert a.healed == b.healed
    assert a.stage_log == b.stage_log


def test_heal_hybrid_config_flags_change_behavior(mini_pairs, mini_model):
    cfg = PipelineConfig(tau=0.3, bilateral_votes=True, symmetric_trust=True)
    report = heal_hybrid(mini_pairs[10], mini_model, cfg)
    assert not report.healed.has_masked()
    assert report.fully_associative == is_associative(report.healed)


def test_heal_ml_only_mask_nothing_returns_input(bad_z3_pair):
    report = heal_ml_only(bad_z3_pair, MASK_NOTHING)
    assert report.healed == bad_z3_pair.corrupt
    assert report.stage_log == (("mask", 0),)


def test_heal_ml_only_runs(mini_pairs, mini_model):
    report = heal_ml_only(mini_pairs[11], mini_model)
    assert not report.healed.has_masked()
    assert report.fully_associative == is_associative(report.healed)
    assert report.stage_log[0][0] == "mask"
