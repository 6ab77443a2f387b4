"""Cayley tables and the exact algebraic predicates built on them.

A table of order n is an n x n integer grid over {0..n-1}; the sentinel
``MASKED`` (-1) marks cells whose value is unknown or deliberately hidden.
Everything here is a pure function of its inputs, and triple enumeration is
row-major (i outer, j middle, k inner) so results are reproducible bit for bit.

Class counting treats a table and its opposite (transpose) as equivalent,
which reproduces the classical counts 1, 4, 18, 126, 1160, ... for small
orders.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

MASKED = -1

#: Orders above this make the factorial canonicalization search unreasonable.
MAX_CANONICAL_ORDER = 8


class TableValidationError(ValueError):
    """Raised when grid data violates the Cayley table invariants."""


class MaskedCellError(ValueError):
    """Raised when an operation requires a fully filled table."""


class OrderTooLargeError(ValueError):
    """Raised when canonicalization is asked for an order above the bound."""


class ClosureRejected(ValueError):
    """A triple's closure set was rejected; ``reason`` says why."""

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


REJECT_SIZE = "size-out-of-range"
REJECT_MASKED = "masked-entry-encountered"
REJECT_NOT_CLOSED = "not-closed"


@dataclass(frozen=True)
class CayleyTable:
    """Immutable n x n operation table; ``entries[i][j]`` is the product i*j."""

    entries: np.ndarray

    def __post_init__(self):
        # np.array always copies, so freezing the copy never freezes the
        # caller's buffer.
        arr = np.array(self.entries, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise TableValidationError(f"entries must be square, got shape {arr.shape}")
        n = arr.shape[0]
        if n < 1:
            raise TableValidationError("table order must be >= 1")
        if arr.size and (arr.min() < MASKED or arr.max() >= n):
            raise TableValidationError(
                f"cell values must lie in {{0..{n - 1}}} or {MASKED} (MASKED)"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]]) -> "CayleyTable":
        return cls(np.array(rows, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def value(self, i: int, j: int) -> int:
        return int(self.entries[i, j])

    def has_masked(self) -> bool:
        return bool((self.entries == MASKED).any())

    def masked_cells(self) -> frozenset[tuple[int, int]]:
        rows, cols = np.nonzero(self.entries == MASKED)
        return frozenset(zip(rows.tolist(), cols.tolist()))

    def with_cells(self, assignments: Iterable[tuple[int, int, int]]) -> "CayleyTable":
        """Copy of the table with the given (row, col, value) cells replaced."""
        arr = self.entries.copy()
        for i, j, v in assignments:
            arr[i, j] = v
        return CayleyTable(arr)

    def opposite(self) -> "CayleyTable":
        """The reversed operation a*b := b.a, i.e. the transposed grid."""
        return CayleyTable(self.entries.T.copy())

    def relabel(self, perm: Sequence[int]) -> "CayleyTable":
        """Apply the permutation to rows, columns and values simultaneously."""
        pi = np.asarray(perm, dtype=np.int64)
        if sorted(pi.tolist()) != list(range(self.n)):
            raise TableValidationError("relabel needs a permutation of 0..n-1")
        out = np.empty_like(self.entries)
        vals = np.where(self.entries == MASKED, MASKED, pi[self.entries])
        out[np.ix_(pi, pi)] = vals
        return CayleyTable(out)

    def key(self) -> bytes:
        return self.entries.tobytes()

    def to_obj(self) -> dict:
        return {"n": self.n, "entries": self.entries.tolist()}

    @classmethod
    def from_obj(cls, obj: dict) -> "CayleyTable":
        if not isinstance(obj, dict) or "n" not in obj or "entries" not in obj:
            raise TableValidationError("table object needs 'n' and 'entries'")
        t = cls.from_rows(obj["entries"])
        if t.n != int(obj["n"]):
            raise TableValidationError(
                f"declared order {obj['n']} does not match grid of order {t.n}"
            )
        return t

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "CayleyTable":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise TableValidationError(f"invalid table JSON: {exc}") from exc
        return cls.from_obj(obj)

    def to_grid(self) -> str:
        """Plain-text format: order on the first line, then the rows."""
        lines = [str(self.n)]
        lines += [" ".join(str(v) for v in row) for row in self.entries.tolist()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_grid(cls, text: str) -> "CayleyTable":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise TableValidationError("empty grid text")
        try:
            n = int(lines[0])
        except ValueError as exc:
            raise TableValidationError("first grid line must be the order") from exc
        if len(lines) != n + 1:
            raise TableValidationError(f"expected {n} rows, got {len(lines) - 1}")
        rows = []
        for ln in lines[1:]:
            parts = ln.split()
            if len(parts) != n:
                raise TableValidationError(f"row '{ln}' does not have {n} entries")
            rows.append([int(p) for p in parts])
        return cls.from_rows(rows)

    def __eq__(self, other) -> bool:
        return isinstance(other, CayleyTable) and np.array_equal(
            self.entries, other.entries
        )

    def __hash__(self) -> int:
        return hash((self.n, self.key()))

    def __repr__(self) -> str:
        return f"CayleyTable(n={self.n}, entries={self.entries.tolist()})"


def triples(n: int) -> Iterator[tuple[int, int, int]]:
    """All (i, j, k) in the fixed row-major order."""
    return itertools.product(range(n), repeat=3)


def associativity_checks(t: CayleyTable) -> np.ndarray:
    """Boolean (n,n,n) grid: [i,j,k] is True iff (i*j)*k == i*(j*k).

    Any check that routes through a MASKED cell counts as failed.
    """
    T = t.entries
    n = t.n
    ab = T  # ab[i, j] = i*j
    # Negative indices wrap around harmlessly; validity masks discard them.
    lhs = T[ab, :]  # lhs[i, j, k] = T[i*j, k]
    rhs = T[:, T]  # rhs[i, j, k] = T[i, j*k]
    ok = (
        (ab[:, :, None] != MASKED)
        & (T[None, :, :] != MASKED)
        & (lhs != MASKED)
        & (rhs != MASKED)
        & (lhs == rhs)
    )
    return ok


def _require_complete(t: CayleyTable, op: str):
    if t.has_masked():
        raise MaskedCellError(f"{op} requires a table with no MASKED cells")


def is_associative(t: CayleyTable) -> bool:
    _require_complete(t, "is_associative")
    return bool(associativity_checks(t).all())


def associativity_counts(t: CayleyTable) -> tuple[int, int]:
    """(satisfied, total) over all n^3 triples."""
    _require_complete(t, "associativity_fraction")
    ok = associativity_checks(t)
    return int(ok.sum()), t.n**3


def associativity_fraction(t: CayleyTable) -> float:
    sat, total = associativity_counts(t)
    return sat / total


@dataclass(frozen=True)
class ClosureSet:
    """The elements needed to evaluate one triple, with a reindexed subtable.

    ``members`` are the global labels in increasing order; ``subtable`` is the
    restriction of the source table with member m renamed to members.index(m).
    """

    base: tuple[int, int, int]
    members: tuple[int, ...]
    subtable: CayleyTable

    @property
    def size(self) -> int:
        return len(self.members)

    def reindex(self, label: int) -> int:
        return self.members.index(label)


def closure_members(t: CayleyTable, triple: tuple[int, int, int]) -> tuple[int, ...]:
    """The (sorted, deduplicated) closure of one triple under its products."""
    i, j, k = triple
    T = t.entries
    n = t.n
    if not (0 <= i < n and 0 <= j < n and 0 <= k < n):
        raise TableValidationError(f"triple {triple} out of range for order {n}")
    ij = int(T[i, j])
    jk = int(T[j, k])
    if ij == MASKED or jk == MASKED:
        raise ClosureRejected(REJECT_MASKED, f"triple {triple} routes through MASKED")
    ij_k = int(T[ij, k])
    i_jk = int(T[i, jk])
    if ij_k == MASKED or i_jk == MASKED:
        raise ClosureRejected(REJECT_MASKED, f"triple {triple} routes through MASKED")
    return tuple(sorted({i, j, k, ij, jk, ij_k, i_jk}))


def closure_set(t: CayleyTable, triple: tuple[int, int, int]) -> ClosureSet:
    """Build the closure set of a triple, or raise ClosureRejected.

    Retained sets have 2..5 members, touch no MASKED cell, and are closed
    under the table's products; the subtable is the reindexed restriction.
    """
    members = closure_members(t, triple)
    m = len(members)
    if not (2 <= m <= 5):
        raise ClosureRejected(REJECT_SIZE, f"closure size {m} outside [2, 5]")
    T = t.entries
    index = {g: l for l, g in enumerate(members)}
    sub = np.empty((m, m), dtype=np.int64)
    for a_loc, a in enumerate(members):
        for b_loc, b in enumerate(members):
            prod = int(T[a, b])
            if prod == MASKED:
                raise ClosureRejected(
                    REJECT_MASKED, f"product {a}*{b} is MASKED inside closure"
                )
            loc = index.get(prod)
            if loc is None:
                raise ClosureRejected(
                    REJECT_NOT_CLOSED, f"product {a}*{b}={prod} escapes the closure"
                )
            sub[a_loc, b_loc] = loc
    return ClosureSet(base=tuple(triple), members=members, subtable=CayleyTable(sub))


def validate_closure(t: CayleyTable, c: ClosureSet) -> bool:
    """Independent re-check: every a*b, (a*b)*c and a*(b*c) stays inside."""
    T = t.entries
    members = set(c.members)
    for a in c.members:
        for b in c.members:
            ab = int(T[a, b])
            if ab == MASKED or ab not in members:
                return False
            for cc in c.members:
                ab_c = int(T[ab, cc])
                bc = int(T[b, cc])
                if ab_c == MASKED or ab_c not in members:
                    return False
                if bc == MASKED or bc not in members:
                    return False
                a_bc = int(T[a, bc])
                if a_bc == MASKED or a_bc not in members:
                    return False
    return True


def iter_closure_sets(
    t: CayleyTable, deduplicate: bool = True
) -> Iterator[ClosureSet]:
    """Retained closure sets over all triples, row-major, optionally deduped
    by member set (first occurrence wins)."""
    seen: set[tuple[int, ...]] = set()
    for tr in triples(t.n):
        try:
            cs = closure_set(t, tr)
        except ClosureRejected:
            continue
        if deduplicate:
            if cs.members in seen:
                continue
            seen.add(cs.members)
        yield cs


# Cached permutation machinery for canonical forms, keyed by order.
_PERM_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _perms_for(n: int) -> tuple[np.ndarray, np.ndarray]:
    cached = _PERM_CACHE.get(n)
    if cached is None:
        perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
        inverses = np.argsort(perms, axis=1)
        cached = (perms, inverses)
        _PERM_CACHE[n] = cached
    return cached


CanonicalForm = bytes


def canonical_form(t: CayleyTable) -> CanonicalForm:
    """Total-order key identifying the table's class under relabeling and
    operation reversal: the byte-minimal relabeling of the table or its
    opposite over all n! permutations."""
    _require_complete(t, "canonical_form")
    n = t.n
    if n > MAX_CANONICAL_ORDER:
        raise OrderTooLargeError(
            f"canonical_form supports n <= {MAX_CANONICAL_ORDER}, got {n}"
        )
    perms, invs = _perms_for(n)
    p = perms.shape[0]
    rows = invs[:, :, None]
    cols = invs[:, None, :]
    best: bytes | None = None
    for source in (t.entries, t.entries.T):
        relabeled = perms[:, source]  # (p, n, n): values renamed per perm
        # Gather form of out[pi(i), pi(j)] = pi(T[i, j]).
        gathered = relabeled[np.arange(p)[:, None, None], rows, cols]
        flat = np.ascontiguousarray(gathered).reshape(p, n * n)
        idx = np.lexsort(flat.T[::-1])[0]
        cand = flat[idx].tobytes()
        if best is None or cand < best:
            best = cand
    assert best is not None
    return best


def count_classes(tables: Sequence[CayleyTable]) -> int:
    """Number of distinct canonical forms among associative tables of one order."""
    if not tables:
        return 0
    n = tables[0].n
    forms = set()
    for t in tables:
        if t.n != n:
            raise TableValidationError("count_classes requires tables of equal order")
        if not is_associative(t):
            raise TableValidationError("count_classes requires associative tables")
        forms.add(canonical_form(t))
    return len(forms)
