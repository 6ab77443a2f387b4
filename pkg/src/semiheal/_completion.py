"""Depth-first completion of partially filled tables under associativity.

Shared search engine: the generator uses it to build associative tables from
scratch and the backtracking repairer uses it to refill masked cells.  Free
cells are assigned in the caller's order, candidate values per cell follow
the caller's `orders` rows, and a branch dies as soon as a fully determined
triple violates associativity.

Two mechanisms keep the search tractable:

- Occurrence index (value -> cells currently holding it).  Placing (i, j)
  affects exactly the triples (i, j, *), (*, i, j), (a, b, j) with
  T[a, b] = i, and (i, b, c) with T[b, c] = j; every triple is re-examined
  when its last contributing cell fills, so completed branches are
  associative by construction (callers still re-verify with the oracle).
- Equality propagation.  When a triple has both product addresses known and
  exactly one of T[(i·j), k] / T[i, (j·k)] filled, the other is forced to
  match; forced placements go on an undo trail and count against the budget.
"""

from __future__ import annotations

from collections import deque
from typing import Iterator, Sequence

import numpy as np

from .tables import MASKED


class SearchBudgetExceeded(RuntimeError):
    """The node budget ran out before the search finished."""

    def __init__(self, budget: int):
        super().__init__(f"search stopped after exceeding {budget} placements")
        self.budget = budget


def determined_violations(T: np.ndarray) -> np.ndarray:
    """(n,n,n) bool grid of triples that are fully determined and violated.

    Triples routing through a MASKED cell are undetermined, not violations.
    """
    ab = T
    lhs = T[ab, :]
    rhs = T[:, T]
    determined = (
        (ab[:, :, None] != MASKED)
        & (T[None, :, :] != MASKED)
        & (lhs != MASKED)
        & (rhs != MASKED)
    )
    return determined & (lhs != rhs)


class _Search:
    """Mutable search state: the grid, occurrence index, and undo trail."""

    def __init__(self, base: np.ndarray, budget: int | None):
        self.T = np.array(base, dtype=np.int64)
        n = self.T.shape[0]
        self.n = n
        self.budget = budget
        self.nodes = 0
        self.trail: list[tuple[int, int]] = []
        self.occ: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        rows, cols = np.nonzero(self.T != MASKED)
        for a, b in zip(rows.tolist(), cols.tolist()):
            self.occ[self.T[a, b]].append((a, b))

    def place(self, i: int, j: int, v: int):
        self.nodes += 1
        if self.budget is not None and self.nodes > self.budget:
            raise SearchBudgetExceeded(self.budget)
        self.T[i, j] = v
        self.occ[v].append((i, j))
        self.trail.append((i, j))

    def unwind(self, mark: int):
        T = self.T
        while len(self.trail) > mark:
            i, j = self.trail.pop()
            self.occ[T[i, j]].pop()
            T[i, j] = MASKED

    def settle(self, a: int, b: int, c: int, pending: deque) -> bool:
        """Enforce associativity of one triple on the current partial grid.

        False on a determined violation; forces the single missing side when
        the other is known.
        """
        T = self.T
        ab = T[a, b]
        if ab < 0:
            return True
        bc = T[b, c]
        if bc < 0:
            return True
        lv = T[ab, c]
        rv = T[a, bc]
        if lv >= 0:
            if rv >= 0:
                return lv == rv
            self.place(a, bc, lv)
            pending.append((a, bc))
        elif rv >= 0:
            self.place(ab, c, rv)
            pending.append((ab, c))
        return True

    def place_and_propagate(self, i: int, j: int, v: int) -> bool:
        """Place one decision and chase every forced consequence.

        False when a violation surfaces (caller unwinds via its trail mark).
        """
        self.place(i, j, v)
        pending = deque([(i, j)])
        n = self.n
        while pending:
            pi, pj = pending.popleft()
            for c in range(n):
                if not self.settle(pi, pj, c, pending):
                    return False
            for a in range(n):
                if not self.settle(a, pi, pj, pending):
                    return False
            # Iterate over snapshots: settle() may extend these lists.
            for a, b in list(self.occ[pi]):
                if not self.settle(a, b, pj, pending):
                    return False
            for b, c in list(self.occ[pj]):
                if not self.settle(pi, b, c, pending):
                    return False
        return True

    def initial_propagation(self) -> bool:
        """Settle every consequence of the pre-filled cells once."""
        if determined_violations(self.T).any():
            return False
        pending = deque(self.trail_seed())
        n = self.n
        while pending:
            pi, pj = pending.popleft()
            for c in range(n):
                if not self.settle(pi, pj, c, pending):
                    return False
            for a in range(n):
                if not self.settle(a, pi, pj, pending):
                    return False
            for a, b in list(self.occ[pi]):
                if not self.settle(a, b, pj, pending):
                    return False
            for b, c in list(self.occ[pj]):
                if not self.settle(pi, b, c, pending):
                    return False
        return True

    def trail_seed(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.T != MASKED)
        return list(zip(rows.tolist(), cols.tolist()))


def iter_completions(
    base: np.ndarray,
    cells: Sequence[tuple[int, int]],
    orders: np.ndarray,
    budget: int | None = None,
) -> Iterator[np.ndarray]:
    """Yield every associative completion of `base` over the given cells.

    `cells` must list exactly the MASKED positions of `base`; `orders[d]`
    gives the candidate values for cells[d], most preferred first.  The
    budget caps total placements (decisions plus forced cells) and raises
    SearchBudgetExceeded when crossed.  `base` is not mutated.
    """
    cells = list(cells)
    m = len(cells)
    n = base.shape[0]
    masked_count = int((np.asarray(base) == MASKED).sum())
    if masked_count != m or any(base[i, j] != MASKED for i, j in cells):
        raise ValueError("cells must list exactly the MASKED positions")
    if m != len(orders):
        raise ValueError("orders must have one row per free cell")

    s = _Search(base, budget)
    if not s.initial_propagation():
        return
    width = orders.shape[1] if m else 0

    def next_free(pos: int) -> int:
        while pos < m and s.T[cells[pos]] != MASKED:
            pos += 1
        return pos

    start = next_free(0)
    if start == m:
        yield s.T.copy()
        return

    # Stack rows: [cell_position, next_value_index, trail_mark].
    stack: list[list[int]] = [[start, 0, len(s.trail)]]
    while stack:
        frame = stack[-1]
        pos, vidx, mark = frame
        s.unwind(mark)
        if vidx >= width:
            stack.pop()
            continue
        frame[1] += 1
        i, j = cells[pos]
        v = int(orders[pos][vidx])
        if not s.place_and_propagate(i, j, v):
            continue
        nxt = next_free(pos + 1)
        if nxt == m:
            yield s.T.copy()
            continue
        stack.append([nxt, 0, len(s.trail)])


def first_completion(
    base: np.ndarray,
    cells: Sequence[tuple[int, int]],
    orders: np.ndarray,
    budget: int | None = None,
) -> np.ndarray | None:
    """First associative completion in search order, or None when none exists."""
    return next(iter_completions(base, cells, orders, budget=budget), None)
