"""Exact Shapley explanations for the forest's class probabilities.

Coalition values v(S) use the path-dependent tree expectation: splits on
absent features average both children weighted by training counts. All 2^p
coalitions are enumerated, which keeps the attribution exact and doubles as
its own oracle; guards refuse feature counts where 2^p blows up.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import factorial

import numpy as np

from .errors import DataError
from .trees import DecisionTree, RandomForestModel, TreeNode

SHAPLEY_MAX_FEATURES = 20
INTERACTION_MAX_FEATURES = 12


def tree_expectation(tree: DecisionTree, x, present) -> np.ndarray:
    """Class-probability expectation of one tree under a coalition mask.

    `present` marks each feature as known (boolean sequence or index set).
    Splits on known features follow x; unknown splits return the
    size-weighted average of both subtrees.
    """
    x = np.asarray(x, dtype=float)
    if not isinstance(present, (set, frozenset)):
        present = {i for i, flag in enumerate(present) if flag}

    def walk(node: TreeNode) -> np.ndarray:
        if node.is_leaf:
            return node.class_counts / node.n_samples
        if node.feature in present:
            branch = node.left if x[node.feature] <= node.threshold else node.right
            return walk(branch)
        wl = node.left.n_samples / node.n_samples
        wr = node.right.n_samples / node.n_samples
        return wl * walk(node.left) + wr * walk(node.right)

    return walk(tree.root)


def _tree_subset_values(tree: DecisionTree, x: np.ndarray, has_bit: list[np.ndarray]) -> np.ndarray:
    """v(S) for every coalition at once, shape (2^p, n_classes).

    Single bottom-up pass: each node's array is its followed child where the
    split feature is present and the weighted child average where absent.
    """

    def walk(node: TreeNode) -> np.ndarray:
        if node.is_leaf:
            return (node.class_counts / node.n_samples)[None, :]
        vl = walk(node.left)
        vr = walk(node.right)
        wl = node.left.n_samples / node.n_samples
        marginal = wl * vl + (1.0 - wl) * vr
        followed = vl if x[node.feature] <= node.threshold else vr
        return np.where(has_bit[node.feature][:, None], followed, marginal)

    return walk(tree.root)


def coalition_values(model: RandomForestModel, x) -> np.ndarray:
    """Forest coalition values, indexed by bitmask: out[m] = v({i: bit i of m})."""
    x = np.asarray(x, dtype=float)
    p = model.n_features
    masks = np.arange(1 << p)
    has_bit = [(masks >> f) & 1 == 1 for f in range(p)]
    acc = np.zeros((1 << p, len(model.classes)))
    for tree in model.trees:
        acc += _tree_subset_values(tree, x, has_bit)
    return acc / len(model.trees)


def _popcounts(n_masks: int) -> np.ndarray:
    return np.array([bin(m).count("1") for m in range(n_masks)], dtype=int)


@dataclass
class ShapExplanation:
    sample: str  # caller-supplied reference, e.g. an hs_code
    classes: list
    feature_names: list[str]
    base_value: np.ndarray  # (n_classes,)
    contributions: np.ndarray  # (p, n_classes)

    def to_dict(self) -> dict:
        return {
            "sample": self.sample,
            "classes": [str(c) for c in self.classes],
            "feature_names": self.feature_names,
            "base_value": self.base_value.tolist(),
            "contributions": self.contributions.tolist(),
        }


def shapley_values(model: RandomForestModel, x, sample: str = "") -> ShapExplanation:
    """Exact per-feature, per-class Shapley attribution of predict_proba."""
    p = model.n_features
    if p > SHAPLEY_MAX_FEATURES:
        raise DataError(
            f"exact enumeration over 2^{p} coalitions refused (limit p <= {SHAPLEY_MAX_FEATURES})"
        )
    v = coalition_values(model, x)
    sizes = _popcounts(1 << p)
    fact = [factorial(i) for i in range(p + 1)]
    contributions = np.zeros((p, v.shape[1]))
    all_masks = np.arange(1 << p)
    for i in range(p):
        without = all_masks[(all_masks >> i) & 1 == 0]
        weights = np.array([fact[s] * fact[p - s - 1] / fact[p] for s in sizes[without]])
        contributions[i] = weights @ (v[without | (1 << i)] - v[without])
    return ShapExplanation(
        sample=sample,
        classes=list(model.classes),
        feature_names=list(model.feature_names),
        base_value=v[0],
        contributions=contributions,
    )


@dataclass
class InteractionMatrix:
    sample: str
    classes: list
    feature_names: list[str]
    values: np.ndarray  # (p, p, n_classes), symmetric per class

    def to_dict(self) -> dict:
        return {
            "sample": self.sample,
            "classes": [str(c) for c in self.classes],
            "feature_names": self.feature_names,
            "values": self.values.tolist(),
        }


def interaction_values(model: RandomForestModel, x, sample: str = "") -> InteractionMatrix:
    """Pairwise Shapley interaction indices; diagonals absorb main effects
    so each row sums to the feature's Shapley value."""
    p = model.n_features
    if p > INTERACTION_MAX_FEATURES:
        raise DataError(
            f"interaction enumeration refused for p={p} (limit p <= {INTERACTION_MAX_FEATURES})"
        )
    v = coalition_values(model, x)
    n_classes = v.shape[1]
    sizes = _popcounts(1 << p)
    fact = [factorial(i) for i in range(p + 1)]
    phi = shapley_values(model, x).contributions
    out = np.zeros((p, p, n_classes))
    all_masks = np.arange(1 << p)
    for i in range(p):
        for j in range(i + 1, p):
            both_absent = ((all_masks >> i) & 1 == 0) & ((all_masks >> j) & 1 == 0)
            masks = all_masks[both_absent]
            weights = np.array(
                [fact[s] * fact[p - s - 2] / (2.0 * fact[p - 1]) for s in sizes[masks]]
            )
            delta = (
                v[masks | (1 << i) | (1 << j)]
                - v[masks | (1 << i)]
                - v[masks | (1 << j)]
                + v[masks]
            )
            out[i, j] = out[j, i] = weights @ delta
    for i in range(p):
        # diagonal picks up the main effect: row sums then equal phi[i]
        out[i, i] = phi[i] - out[i].sum(axis=0)
    return InteractionMatrix(
        sample=sample, classes=list(model.classes), feature_names=list(model.feature_names), values=out
    )


@dataclass
class ShapSummary:
    classes: list
    per_class: dict  # class -> [(feature, mean |phi|)] sorted descending
    overall: list  # [(feature, mean over classes)] sorted descending

    def top_feature(self) -> str:
        return self.overall[0][0]

    def to_dict(self) -> dict:
        return {
            "classes": [str(c) for c in self.classes],
            "per_class": {str(c): [[f, v] for f, v in rank] for c, rank in self.per_class.items()},
            "overall": [[f, v] for f, v in self.overall],
        }


def _ranked(names: list[str], values: np.ndarray) -> list[tuple[str, float]]:
    pairs = [(name, float(val)) for name, val in zip(names, values)]
    return sorted(pairs, key=lambda kv: (-kv[1], kv[0]))


def mean_abs_shap(model: RandomForestModel, X, threads: int = 1) -> ShapSummary:
    """Global importance: mean |Shapley value| over rows, ranked per class."""
    X = np.asarray(X, dtype=float)

    def one(row: np.ndarray) -> np.ndarray:
        return np.abs(shapley_values(model, row).contributions)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stacked = list(pool.map(one, X))
    else:
        stacked = [one(row) for row in X]
    mean_abs = np.mean(stacked, axis=0)  # (p, n_classes)
    names = model.feature_names
    per_class = {
        cls: _ranked(names, mean_abs[:, ci]) for ci, cls in enumerate(model.classes)
    }
    overall = _ranked(names, mean_abs.mean(axis=1))
    return ShapSummary(classes=list(model.classes), per_class=per_class, overall=overall)
