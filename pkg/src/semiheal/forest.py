"""From-scratch random forest over per-cell features.

Trees are CART with threshold splits, grown from seeded bootstrap resamples
with a random feature subset at every split.  Everything is deterministic:
tree t draws from SeedSequence([seed, t]), nodes are grown in preorder, and
ties between equally good splits break toward the lowest feature index and
then the lowest threshold.  Probabilities are soft votes (the mean of leaf
positive fractions), so downstream weights stay graded.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .tables import MASKED, CayleyTable, TableValidationError
from .trust import TrustMap

FEATURE_NAMES: tuple[str, ...] = (
    "row_index_norm",
    "col_index_norm",
    "value_norm",
    "trust",
    "row_mean_trust",
    "col_mean_trust",
    "table_mean_trust",
    "value_frequency",
    "row_distinct_norm",
    "col_distinct_norm",
    "vote_agreement",
    "order",
)
N_FEATURES = len(FEATURE_NAMES)

MODEL_VERSION = 1


class ModelFormatError(ValueError):
    """A model file failed structural validation."""


class TrainingDataError(ValueError):
    """Training data violates a precondition (empty or single-class)."""


@dataclass(frozen=True)
class ForestHyper:
    n_trees: int = 100
    max_depth: int | None = 12
    min_leaf: int = 2
    features_per_split: int = 4
    seed: int = 0
    criterion: str = "gini"

    def __post_init__(self):
        if self.n_trees < 1:
            raise ModelFormatError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ModelFormatError("min_leaf must be >= 1")
        if not (1 <= self.features_per_split <= N_FEATURES):
            raise ModelFormatError(f"features_per_split must be in [1, {N_FEATURES}]")
        if self.criterion not in ("gini", "entropy"):
            raise ModelFormatError("criterion must be 'gini' or 'entropy'")
        if self.max_depth is not None and self.max_depth < 1:
            raise ModelFormatError("max_depth must be >= 1 or None")


@dataclass(frozen=True)
class LabeledCell:
    """One training sample: the 12 features of a cell plus its label."""

    features: np.ndarray
    label: int
    table_id: int = 0
    row: int = 0
    col: int = 0

    def __post_init__(self):
        arr = np.asarray(self.features, dtype=np.float64)
        if arr.shape != (N_FEATURES,):
            raise TableValidationError(f"features must have shape ({N_FEATURES},)")
        if self.label not in (0, 1):
            raise TableValidationError("label must be 0 (clean) or 1 (corrupted)")
        arr.setflags(write=False)
        object.__setattr__(self, "features", arr)


@dataclass(frozen=True)
class ForestModel:
    """Trained forest: tree roots as nested split/leaf dicts."""

    trees: tuple[dict, ...]
    hyper: ForestHyper
    feature_names: tuple[str, ...] = FEATURE_NAMES


def extract_features(
    corrupt: CayleyTable,
    tm: TrustMap,
    votes: Sequence[Sequence[Mapping[int, int]]] | None = None,
) -> np.ndarray:
    """(n, n, 12) feature grid for every cell of the table.

    `votes` is the healing module's per-cell tally grid; None fills the
    vote-agreement column with zeros so the layout stays stable.  MASKED
    cells get zero for the value-dependent features.
    """
    n = corrupt.n
    if tm.n != n:
        raise TableValidationError("trust map order does not match table order")
    if votes is not None and (
        len(votes) != n or any(len(row) != n for row in votes)
    ):
        raise TableValidationError("vote grid shape does not match table order")
    T = corrupt.entries
    grid = np.empty((n, n, N_FEATURES), dtype=np.float64)
    rows = np.arange(n, dtype=np.float64)
    grid[:, :, 0] = (rows / n)[:, None]
    grid[:, :, 1] = (rows / n)[None, :]
    masked = T == MASKED
    grid[:, :, 2] = np.where(masked, 0.0, T / n)
    grid[:, :, 3] = tm.scores
    grid[:, :, 4] = tm.row_means[:, None]
    grid[:, :, 5] = tm.col_means[None, :]
    grid[:, :, 6] = tm.table_mean
    counts = np.bincount(T[~masked].ravel(), minlength=n)
    freq = counts / (n * n)
    grid[:, :, 7] = np.where(masked, 0.0, freq[np.where(masked, 0, T)])
    grid[:, :, 8] = np.array(
        [len(set(row[row != MASKED].tolist())) for row in T], dtype=np.float64
    )[:, None] / n
    grid[:, :, 9] = np.array(
        [len(set(col[col != MASKED].tolist())) for col in T.T], dtype=np.float64
    )[None, :] / n
    if votes is None:
        grid[:, :, 10] = 0.0
    else:
        for i in range(n):
            for j in range(n):
                tally = votes[i][j]
                total = sum(tally.values())
                v = int(T[i, j])
                agree = tally.get(v, 0) if v != MASKED else 0
                grid[i, j, 10] = agree / total if total else 0.0
    grid[:, :, 11] = n
    return grid


def _impurity(pos: np.ndarray, tot: np.ndarray, criterion: str) -> np.ndarray:
    """Per-node impurity for arrays of positive/total counts (tot >= 1)."""
    p = pos / tot
    if criterion == "gini":
        return 1.0 - p * p - (1.0 - p) * (1.0 - p)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log2(p), 0.0)
        q = 1.0 - p
        terms = terms + np.where(q > 0, -q * np.log2(q), 0.0)
    return terms


def _best_cut_for_feature(
    col: np.ndarray, y: np.ndarray, min_leaf: int, criterion: str
) -> tuple[float, float] | None:
    """(weighted impurity, threshold) of this feature's best cut, or None.

    Thresholds are midpoints between consecutive distinct sorted values; the
    lowest threshold wins among equal impurities.
    """
    m = col.shape[0]
    order = np.argsort(col, kind="stable")
    cs = col[order]
    ys = y[order]
    cuts = np.nonzero(cs[1:] != cs[:-1])[0]
    if cuts.size == 0:
        return None
    left_n = cuts + 1
    right_n = m - left_n
    valid = (left_n >= min_leaf) & (right_n >= min_leaf)
    if not valid.any():
        return None
    cuts = cuts[valid]
    left_n = left_n[valid]
    right_n = right_n[valid]
    cum_pos = np.cumsum(ys)
    left_pos = cum_pos[cuts]
    right_pos = cum_pos[-1] - left_pos
    weighted = (
        left_n * _impurity(left_pos, left_n, criterion)
        + right_n * _impurity(right_pos, right_n, criterion)
    ) / m
    best = int(np.argmin(weighted))  # first occurrence = lowest threshold
    lo = cs[cuts[best]]
    hi = cs[cuts[best] + 1]
    thr = (lo + hi) / 2.0
    if thr >= hi:  # adjacent floats: midpoint rounds onto hi, keep sides apart
        thr = lo
    return float(weighted[best]), float(thr)


def _grow_tree(
    X: np.ndarray, y: np.ndarray, hyper: ForestHyper, rng: np.random.Generator
) -> dict:
    """Grow one tree in preorder; rng drives the per-split feature subsets."""
    k = hyper.features_per_split
    root: dict = {}
    # Work items: (node dict to fill, sample index array, depth).
    stack: list[tuple[dict, np.ndarray, int]] = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        pos = int(yn.sum())
        m = idx.shape[0]
        depth_ok = hyper.max_depth is None or depth < hyper.max_depth
        if not depth_ok or pos == 0 or pos == m or m < 2 * hyper.min_leaf:
            node["pos"] = pos
            node["tot"] = m
            continue
        feat_order = rng.permutation(N_FEATURES)
        Xn = X[idx]
        best: tuple[float, int, float] | None = None
        # Inspect the k-feature subset; if every subset feature is constant
        # or unsplittable, keep going until one valid split turns up.
        for posn, f in enumerate(feat_order.tolist()):
            if posn >= k and best is not None:
                break
            cut = _best_cut_for_feature(Xn[:, f], yn, hyper.min_leaf, hyper.criterion)
            if cut is None:
                continue
            imp, thr = cut
            key = (imp, f, thr)
            if best is None or key < best:
                best = key
        if best is None:
            node["pos"] = pos
            node["tot"] = m
            continue
        _, f, thr = best
        left_mask = Xn[:, f] <= thr
        left_node: dict = {}
        right_node: dict = {}
        node["feature"] = int(f)
        node["threshold"] = thr
        node["left"] = left_node
        node["right"] = right_node
        # Preorder growth: push right first so left is processed next.
        stack.append((right_node, idx[~left_mask], depth + 1))
        stack.append((left_node, idx[left_mask], depth + 1))
    return root


def train(data: Sequence[LabeledCell], hyper: ForestHyper = ForestHyper()) -> ForestModel:
    """Fit a forest on labeled cells.

    Samples are pre-sorted by (table_id, row, col) so the model depends only
    on the sample set and seed, not on input order.  Each tree sees exactly
    len(data) bootstrap draws from SeedSequence([seed, tree_index]).
    """
    if not data:
        raise TrainingDataError("training data is empty")
    ordered = sorted(data, key=lambda c: (c.table_id, c.row, c.col))
    X = np.stack([c.features for c in ordered])
    y = np.array([c.label for c in ordered], dtype=np.int64)
    if y.min() == y.max():
        raise TrainingDataError("training data contains a single class")
    n_samples = X.shape[0]
    trees = []
    for t in range(hyper.n_trees):
        rng = np.random.default_rng(np.random.SeedSequence([hyper.seed, t]))
        boot = rng.integers(0, n_samples, size=n_samples)
        trees.append(_grow_tree(X[boot], y[boot], hyper, rng))
    return ForestModel(trees=tuple(trees), hyper=hyper)


def _tree_fractions(root: dict, X: np.ndarray) -> np.ndarray:
    """Leaf positive fraction for every row of X under one tree."""
    out = np.empty(X.shape[0], dtype=np.float64)
    stack = [(root, np.arange(X.shape[0]))]
    while stack:
        node, idx = stack.pop()
        if idx.size == 0:
            continue
        if "feature" in node:
            mask = X[idx, node["feature"]] <= node["threshold"]
            stack.append((node["left"], idx[mask]))
            stack.append((node["right"], idx[~mask]))
        else:
            out[idx] = node["pos"] / node["tot"]
    return out


def predict_proba_batch(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Corruption probability per row: mean of the trees' leaf fractions."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise TableValidationError(f"feature matrix must be (m, {N_FEATURES})")
    acc = np.zeros(X.shape[0], dtype=np.float64)
    for root in model.trees:
        acc += _tree_fractions(root, X)
    return acc / len(model.trees)


def predict_proba(model: ForestModel, features: np.ndarray) -> float:
    """Corruption probability of a single cell's feature vector."""
    return float(predict_proba_batch(model, np.asarray(features)[None, :])[0])


def _validate_node(node, depth: int = 0) -> None:
    if not isinstance(node, dict):
        raise ModelFormatError("tree node must be an object")
    if "feature" in node:
        for key in ("threshold", "left", "right"):
            if key not in node:
                raise ModelFormatError(f"split node missing '{key}'")
        f = node["feature"]
        if not isinstance(f, int) or not (0 <= f < N_FEATURES):
            raise ModelFormatError(f"split feature index {f!r} out of range")
        if not isinstance(node["threshold"], (int, float)):
            raise ModelFormatError("split threshold must be numeric")
        _validate_node(node["left"], depth + 1)
        _validate_node(node["right"], depth + 1)
    else:
        if "pos" not in node or "tot" not in node:
            raise ModelFormatError("leaf node needs 'pos' and 'tot'")
        pos, tot = node["pos"], node["tot"]
        if not isinstance(pos, int) or not isinstance(tot, int):
            raise ModelFormatError("leaf counts must be integers")
        if tot < 1 or not (0 <= pos <= tot):
            raise ModelFormatError(f"leaf counts ({pos}, {tot}) out of range")


def model_to_obj(model: ForestModel) -> dict:
    if not model.trees:
        raise ModelFormatError("refusing to serialize an empty forest")
    return {
        "version": MODEL_VERSION,
        "hyper": asdict(model.hyper),
        "feature_names": list(model.feature_names),
        "trees": list(model.trees),
    }


def model_from_obj(obj) -> ForestModel:
    if not isinstance(obj, dict):
        raise ModelFormatError("model file must hold a JSON object")
    if obj.get("version") != MODEL_VERSION:
        raise ModelFormatError(
            f"unsupported model version {obj.get('version')!r} "
            f"(expected {MODEL_VERSION})"
        )
    for key in ("hyper", "feature_names", "trees"):
        if key not in obj:
            raise ModelFormatError(f"model file missing '{key}'")
    names = tuple(obj["feature_names"])
    if names != FEATURE_NAMES:
        raise ModelFormatError("feature_names do not match this implementation")
    try:
        hyper = ForestHyper(**obj["hyper"])
    except TypeError as exc:
        raise ModelFormatError(f"bad hyperparameter block: {exc}") from exc
    trees = obj["trees"]
    if not isinstance(trees, list) or not trees:
        raise ModelFormatError("model must contain at least one tree")
    if len(trees) != hyper.n_trees:
        raise ModelFormatError("tree count disagrees with hyper.n_trees")
    for tree in trees:
        _validate_node(tree)
    return ForestModel(trees=tuple(trees), hyper=hyper, feature_names=names)


def save_model(model: ForestModel, destination) -> None:
    text = json.dumps(model_to_obj(model), separators=(",", ":"))
    if hasattr(destination, "write"):
        destination.write(text + "\n")
    else:
        Path(destination).write_text(text + "\n", encoding="utf-8")


def load_model(source) -> ForestModel:
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = Path(source).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"invalid model JSON: {exc}") from exc
    return model_from_obj(obj)
