"""Shared fixtures: canonical small tables and one seeded mini dataset.

The mini dataset (order 4, twelve pairs, fixed seeds) is session-scoped so
the healing, service, and CLI suites can share a single trained model.
"""

import pytest

from semiheal.datagen import GenConfig, TablePair, corrupt, generate
from semiheal.forest import ForestHyper, train
from semiheal.tables import CayleyTable
from semiheal.workbench import training_rows


def z3_table() -> CayleyTable:
    """The cyclic group of order 3: T[i][j] = (i + j) mod 3."""
    return CayleyTable.from_rows([[(i + j) % 3 for j in range(3)] for i in range(3)])


def corrupted_z3() -> CayleyTable:
    """z3 with (1,1): 2 -> 0 and (2,2): 1 -> 2 flipped."""
    return CayleyTable.from_rows([[0, 1, 2], [1, 0, 0], [2, 0, 2]])


def left_zero(n: int) -> CayleyTable:
    """T[i][j] = i; associative for every n."""
    return CayleyTable.from_rows([[i] * n for i in range(n)])


@pytest.fixture
def z3() -> CayleyTable:
    return z3_table()


@pytest.fixture
def bad_z3() -> CayleyTable:
    return corrupted_z3()


@pytest.fixture
def bad_z3_pair() -> TablePair:
    # round(0.2 * 9) = 2 matches the two flipped cells.
    return TablePair(
        clean=z3_table(),
        corrupt=corrupted_z3(),
        corrupted_cells=frozenset({(1, 1), (2, 2)}),
        p=0.2,
        seed=99,
    )


@pytest.fixture(scope="session")
def mini_pairs() -> list[TablePair]:
    tables = generate(GenConfig(n=4, count=12, seed=5))
    return [corrupt(t, 0.15, 1000 + i) for i, t in enumerate(tables)]


@pytest.fixture(scope="session")
def mini_model(mini_pairs):
    return train(training_rows(mini_pairs[:9]), ForestHyper(n_trees=30, seed=2))
