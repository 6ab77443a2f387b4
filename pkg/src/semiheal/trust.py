"""Per-cell trust scores derived from associativity checks.

trust(i, j) counts the k for which (i·j)·k = i·(j·k) holds, divided by n.
Checks that route through a MASKED cell count as failed, so a masked cell
scores 0.  Row, column, and table means are carried along because they feed
the corruption classifier as features.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction

import numpy as np

from .datagen import TablePair
from .tables import CayleyTable, TableValidationError, associativity_checks


@dataclass(frozen=True)
class TrustMap:
    """Trust scores for one table: counts[i,j] passing checks out of denom."""

    counts: np.ndarray
    denom: int
    scores: np.ndarray
    row_means: np.ndarray
    col_means: np.ndarray
    table_mean: float

    def __post_init__(self):
        for name in ("counts", "scores", "row_means", "col_means"):
            getattr(self, name).setflags(write=False)

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    def score(self, i: int, j: int) -> float:
        return float(self.scores[i, j])

    def fraction(self, i: int, j: int) -> Fraction:
        return Fraction(int(self.counts[i, j]), self.denom)


def trust_map(t: CayleyTable, symmetric: bool = False) -> TrustMap:
    """Trust scores of every cell of t.

    Default counts only checks with (i, j) as the left pair, denominator n.
    With symmetric=True, occurrences as the right pair (j, k) are added and
    the denominator becomes 2n.
    """
    ok = associativity_checks(t)
    counts = ok.sum(axis=2)
    denom = t.n
    if symmetric:
        counts = counts + ok.sum(axis=0)
        denom = 2 * t.n
    scores = counts / denom
    return TrustMap(
        counts=counts,
        denom=denom,
        scores=scores,
        row_means=scores.mean(axis=1),
        col_means=scores.mean(axis=0),
        table_mean=float(scores.mean()),
    )


def trust_separation(pair: TablePair) -> tuple[float, float]:
    """(mean trust at clean cells, mean trust at corrupted cells) of pair.corrupt."""
    n = pair.n
    k = len(pair.corrupted_cells)
    if k == 0 or k == n * n:
        raise TableValidationError(
            "trust_separation needs corrupted cells to be a non-empty proper subset"
        )
    tm = trust_map(pair.corrupt)
    mask = np.zeros((n, n), dtype=bool)
    for i, j in pair.corrupted_cells:
        mask[i, j] = True
    return float(tm.scores[~mask].mean()), float(tm.scores[mask].mean())


def _render(fr: Fraction) -> str:
    """Exact fraction to a fixed 6-decimal string."""
    d = Decimal(fr.numerator) / Decimal(fr.denominator)
    return str(d.quantize(Decimal("0.000001"), rounding=ROUND_HALF_EVEN))


def trust_map_obj(tm: TrustMap) -> dict:
    """JSON-ready view with scores rendered from exact fractions."""
    n = tm.n
    counts = tm.counts
    row_totals = counts.sum(axis=1)
    col_totals = counts.sum(axis=0)
    return {
        "scores": [
            [_render(Fraction(int(counts[i, j]), tm.denom)) for j in range(n)]
            for i in range(n)
        ],
        "row_means": [
            _render(Fraction(int(row_totals[i]), tm.denom * n)) for i in range(n)
        ],
        "col_means": [
            _render(Fraction(int(col_totals[j]), tm.denom * n)) for j in range(n)
        ],
        "table_mean": _render(Fraction(int(counts.sum()), tm.denom * n * n)),
    }
