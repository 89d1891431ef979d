"""CART decision trees, a bagged forest, and stratified cross-validation.

Splits maximize Gini gain over midpoint thresholds with fixed tie-breaking
(lowest feature index, then lowest threshold) so that a given seed always
yields bit-identical models. Rows with feature <= threshold go left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionMismatchError, StratificationError


def gini(class_counts) -> float:
    """Impurity 1 - sum((n_i / N)^2) of a count vector."""
    counts = np.asarray(class_counts, dtype=float)
    if np.any(counts < 0):
        raise ValueError("negative class count")
    total = counts.sum()
    if total == 0:
        raise DataError("gini undefined for an empty node")
    p = counts / total
    return float(1.0 - np.dot(p, p))


@dataclass
class TreeNode:
    """Internal node (feature/threshold set) or leaf (predicted_class set)."""

    gini: float
    n_samples: int
    class_counts: np.ndarray
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    predicted_class: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass
class DecisionTree:
    root: TreeNode
    classes: list  # class labels in index order
    n_features: int

    def leaf_for(self, x: np.ndarray) -> TreeNode:
        node = self.root
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node

    def predict_one(self, x: np.ndarray):
        return self.classes[self.leaf_for(x).predicted_class]

    def proba_one(self, x: np.ndarray) -> np.ndarray:
        leaf = self.leaf_for(x)
        return leaf.class_counts / leaf.n_samples

    def features_used(self) -> set[int]:
        used: set[int] = set()
        stack = [self.root]
        while stack:
            node = stack.pop()
            if not node.is_leaf:
                used.add(node.feature)
                stack.extend([node.left, node.right])
        return used


def _best_split(X: np.ndarray, y_idx: np.ndarray, n_classes: int, feature_ids) -> tuple[int, float, float] | None:
    """(feature, threshold, gain) with the largest Gini gain, or None.

    feature_ids must be in ascending order; candidates within a feature are
    scanned by ascending threshold, and only strictly larger gains replace
    the incumbent, which pins the documented tie-breaking.
    """
    n = len(y_idx)
    parent = gini(np.bincount(y_idx, minlength=n_classes))
    best = None
    for f in feature_ids:
        order = np.argsort(X[:, f], kind="stable")
        values = X[order, f]
        labels = y_idx[order]
        boundaries = np.flatnonzero(values[:-1] < values[1:])
        if len(boundaries) == 0:
            continue
        one_hot = np.zeros((n, n_classes))
        one_hot[np.arange(n), labels] = 1.0
        prefix = one_hot.cumsum(axis=0)
        left = prefix[boundaries]
        right = prefix[-1] - left
        n_left = (boundaries + 1).astype(float)
        n_right = n - n_left
        g_left = 1.0 - (left**2).sum(axis=1) / n_left**2
        g_right = 1.0 - (right**2).sum(axis=1) / n_right**2
        gains = parent - (n_left * g_left + n_right * g_right) / n
        pos = int(np.argmax(gains))  # first max = lowest threshold
        if best is None or gains[pos] > best[2]:
            threshold = float((values[boundaries[pos]] + values[boundaries[pos] + 1]) / 2.0)
            best = (f, threshold, float(gains[pos]))
    return best


def _grow(
    X: np.ndarray,
    y_idx: np.ndarray,
    n_classes: int,
    depth: int,
    max_depth: int | None,
    min_samples_split: int,
    n_feature_candidates: int | None,
    rng: np.random.Generator | None,
) -> TreeNode:
    counts = np.bincount(y_idx, minlength=n_classes).astype(float)
    node_gini = gini(counts)
    node = TreeNode(gini=node_gini, n_samples=len(y_idx), class_counts=counts)
    pure = node_gini == 0.0
    depth_capped = max_depth is not None and depth >= max_depth
    if pure or depth_capped or len(y_idx) < min_samples_split:
        node.predicted_class = int(np.argmax(counts))
        return node

    p = X.shape[1]
    if n_feature_candidates is not None and n_feature_candidates < p:
        feature_ids = np.sort(rng.choice(p, size=n_feature_candidates, replace=False))
    else:
        feature_ids = np.arange(p)
    best = _best_split(X, y_idx, n_classes, feature_ids)
    if best is None or best[2] <= 0.0:
        node.predicted_class = int(np.argmax(counts))
        return node

    node.feature, node.threshold, _ = best
    mask = X[:, node.feature] <= node.threshold
    node.left = _grow(X[mask], y_idx[mask], n_classes, depth + 1, max_depth, min_samples_split, n_feature_candidates, rng)
    node.right = _grow(X[~mask], y_idx[~mask], n_classes, depth + 1, max_depth, min_samples_split, n_feature_candidates, rng)
    return node


def tree_fit(
    X,
    y,
    max_depth: int | None = None,
    min_samples_split: int = 2,
    feature_subset_per_split: int | None = None,
    seed: int | None = None,
    classes: list | None = None,
) -> DecisionTree:
    """Greedy CART fit. `classes` pins the label-index order (default sorted)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) == 0:
        raise DataError("cannot fit a tree on empty data")
    if len(X) != len(y):
        raise DataError("X and y lengths differ")
    if classes is None:
        classes = sorted(set(y.tolist()))
    index = {c: i for i, c in enumerate(classes)}
    y_idx = np.array([index[v] for v in y.tolist()], dtype=int)
    rng = np.random.default_rng(seed) if feature_subset_per_split is not None else None
    root = _grow(X, y_idx, len(classes), 0, max_depth, min_samples_split, feature_subset_per_split, rng)
    return DecisionTree(root=root, classes=list(classes), n_features=X.shape[1])


@dataclass
class RandomForestModel:
    trees: list[DecisionTree]
    classes: list
    n_features: int
    seed: int
    n_trees: int
    features_per_split: int
    bootstrap: bool
    feature_names: list[str] = field(default_factory=list)

    def predict_proba_one(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_features,):
            raise DimensionMismatchError(f"expected {self.n_features} features, got shape {x.shape}")
        return np.mean([t.proba_one(x) for t in self.trees], axis=0)

    def predict_one(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_features,):
            raise DimensionMismatchError(f"expected {self.n_features} features, got shape {x.shape}")
        votes = np.zeros(len(self.classes), dtype=int)
        for t in self.trees:
            votes[t.leaf_for(x).predicted_class] += 1
        return self.classes[int(np.argmax(votes))]

    def predict(self, X) -> list:
        return [self.predict_one(row) for row in np.asarray(X, dtype=float)]

    def predict_proba(self, X) -> np.ndarray:
        return np.array([self.predict_proba_one(row) for row in np.asarray(X, dtype=float)])


def forest_fit(
    X,
    y,
    n_trees: int = 100,
    seed: int = 0,
    max_depth: int | None = None,
    min_samples_split: int = 2,
    features_per_split: int | None = None,
    bootstrap: bool = True,
    feature_names: list[str] | None = None,
) -> RandomForestModel:
    """Bagged CART forest; per-tree seeds spawn from the master seed."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) < 2:
        raise DataError("forest needs at least 2 rows")
    p = X.shape[1]
    if features_per_split is None:
        features_per_split = math.ceil(math.sqrt(p))
    classes = sorted(set(y.tolist()))
    trees = []
    for i in range(n_trees):
        tree_seed = np.random.SeedSequence(seed, spawn_key=(i,))
        rng = np.random.default_rng(tree_seed)
        if bootstrap:
            rows = rng.integers(0, len(X), size=len(X))
        else:
            rows = np.arange(len(X))
        trees.append(
            tree_fit(
                X[rows],
                y[rows],
                max_depth=max_depth,
                min_samples_split=min_samples_split,
                feature_subset_per_split=features_per_split if features_per_split < p else None,
                seed=rng,
                classes=classes,
            )
        )
    return RandomForestModel(
        trees=trees,
        classes=classes,
        n_features=p,
        seed=seed,
        n_trees=n_trees,
        features_per_split=features_per_split,
        bootstrap=bootstrap,
        feature_names=list(feature_names) if feature_names else [f"f{i}" for i in range(p)],
    )


def stratified_kfold(y, k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Disjoint folds whose per-class counts differ by at most one."""
    y = np.asarray(y)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    fold_members: list[list[int]] = [[] for _ in range(k)]
    for cls in sorted(set(y.tolist())):
        members = np.flatnonzero(y == cls)
        if len(members) < k:
            raise StratificationError(f"class {cls!r} has {len(members)} members, fewer than k={k}")
        members = members[rng.permutation(len(members))]
        for j, idx in enumerate(members):
            fold_members[j % k].append(int(idx))
    folds = []
    all_idx = np.arange(len(y))
    for j in range(k):
        test = np.array(sorted(fold_members[j]), dtype=int)
        train = np.setdiff1d(all_idx, test)
        folds.append((train, test))
    return folds


def confusion_matrix(y_true, y_pred, classes: list) -> np.ndarray:
    """Rows = true class, columns = predicted class."""
    index = {c: i for i, c in enumerate(classes)}
    m = np.zeros((len(classes), len(classes)), dtype=int)
    for t, p in zip(y_true, y_pred):
        m[index[t], index[p]] += 1
    return m


def precision_recall_f1(confusion: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class metrics with the 0/0 -> 0 convention."""
    tp = np.diag(confusion).astype(float)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return precision, recall, f1


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0


@dataclass
class CVReport:
    classes: list
    fold_accuracies: list[float]
    accuracy_mean: float
    accuracy_std: float
    per_class: dict  # class -> metric -> (mean, std)
    confusion: np.ndarray  # pooled over folds
    binary: dict | None  # high/low risk rollup, present when a risk map applies
    params: dict

    def to_dict(self) -> dict:
        return {
            "classes": [str(c) for c in self.classes],
            "fold_accuracies": self.fold_accuracies,
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
            "per_class": {
                str(c): {m: list(v) for m, v in metrics.items()} for c, metrics in self.per_class.items()
            },
            "confusion": self.confusion.tolist(),
            "binary": self.binary,
            "params": self.params,
        }


def _per_fold_metrics(conf: np.ndarray) -> dict[str, np.ndarray]:
    precision, recall, f1 = precision_recall_f1(conf)
    return {"precision": precision, "recall": recall, "f1": f1}


def evaluate(
    X,
    y,
    k: int = 5,
    seed: int = 0,
    risk_map: dict | None = None,
    **forest_params,
) -> CVReport:
    """Stratified k-fold CV of the forest; metrics aggregated mean +/- std.

    risk_map sends each class label to "high" or "low" for the binary
    rollup; pass None to skip it.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    classes = sorted(set(y.tolist()))
    folds = stratified_kfold(y, k=k, seed=seed)

    fold_acc, pooled = [], np.zeros((len(classes), len(classes)), dtype=int)
    fold_metrics = {c: {"precision": [], "recall": [], "f1": []} for c in classes}
    binary_acc, binary_metrics = [], {g: {"precision": [], "recall": [], "f1": []} for g in ("high", "low")}

    for fold_no, (train, test) in enumerate(folds):
        fold_seed = int(np.random.SeedSequence(seed, spawn_key=(1000 + fold_no,)).generate_state(1)[0])
        model = forest_fit(X[train], y[train], seed=fold_seed, **forest_params)
        preds = model.predict(X[test])
        truth = y[test].tolist()
        conf = confusion_matrix(truth, preds, classes)
        pooled += conf
        fold_acc.append(float(np.trace(conf) / conf.sum()))
        metrics = _per_fold_metrics(conf)
        for i, c in enumerate(classes):
            for name in ("precision", "recall", "f1"):
                fold_metrics[c][name].append(float(metrics[name][i]))
        if risk_map is not None:
            bt = [risk_map[t] for t in truth]
            bp = [risk_map[p] for p in preds]
            bconf = confusion_matrix(bt, bp, ["high", "low"])
            binary_acc.append(float(np.trace(bconf) / bconf.sum()))
            bmet = _per_fold_metrics(bconf)
            for i, g in enumerate(("high", "low")):
                for name in ("precision", "recall", "f1"):
                    binary_metrics[g][name].append(float(bmet[name][i]))

    per_class = {
        c: {name: _mean_std(vals) for name, vals in metrics.items()}
        for c, metrics in fold_metrics.items()
    }
    binary = None
    if risk_map is not None:
        acc_mean, acc_std = _mean_std(binary_acc)
        binary = {
            "accuracy_mean": acc_mean,
            "accuracy_std": acc_std,
            "groups": {
                g: {name: _mean_std(vals) for name, vals in metrics.items()}
                for g, metrics in binary_metrics.items()
            },
        }
    acc_mean, acc_std = _mean_std(fold_acc)
    return CVReport(
        classes=classes,
        fold_accuracies=fold_acc,
        accuracy_mean=acc_mean,
        accuracy_std=acc_std,
        per_class=per_class,
        confusion=pooled,
        binary=binary,
        params={"k": k, "seed": seed, **forest_params},
    )


def evaluate_holdout(X, y, test_fraction: float = 0.25, seed: int = 0, **forest_params) -> dict:
    """Single stratified holdout split; returns accuracy and the confusion."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    test_idx: list[int] = []
    for cls in sorted(set(y.tolist())):
        members = np.flatnonzero(y == cls)
        members = members[rng.permutation(len(members))]
        n_test = max(1, round(len(members) * test_fraction))
        test_idx.extend(members[:n_test].tolist())
    test = np.array(sorted(test_idx), dtype=int)
    train = np.setdiff1d(np.arange(len(y)), test)
    classes = sorted(set(y.tolist()))
    model = forest_fit(X[train], y[train], seed=seed, **forest_params)
    conf = confusion_matrix(y[test].tolist(), model.predict(X[test]), classes)
    return {
        "accuracy": float(np.trace(conf) / conf.sum()),
        "confusion": conf.tolist(),
        "classes": [str(c) for c in classes],
        "n_train": int(len(train)),
        "n_test": int(len(test)),
    }


def _pm(mean: float, std: float, pct: bool = False) -> str:
    if pct:
        return f"{mean * 100:.2f} % ± {std * 100:.2f} %"
    return f"{mean:.2f} ± {std:.2f}"


def format_cv_table(report: CVReport) -> str:
    """Human-readable metrics table, one row per metric."""
    lines = []
    if report.binary is not None:
        lines.append(f"{'Metric':<12}{'High-Risk Segment':<24}{'Low-Risk Segment':<24}")
        acc = _pm(report.binary["accuracy_mean"], report.binary["accuracy_std"], pct=True)
        lines.append(f"{'Accuracy':<12}{acc:<24}")
        for title, key in (("Precision", "precision"), ("Recall", "recall"), ("F1-Score", "f1")):
            hi = _pm(*report.binary["groups"]["high"][key])
            lo = _pm(*report.binary["groups"]["low"][key])
            lines.append(f"{title:<12}{hi:<24}{lo:<24}")
        lines.append("")
    lines.append("4-class accuracy: " + _pm(report.accuracy_mean, report.accuracy_std, pct=True))
    lines.append(f"{'Class':<24}{'Precision':<16}{'Recall':<16}{'F1':<16}")
    for c in report.classes:
        m = report.per_class[c]
        precision, recall, f1 = (_pm(*m[key]) for key in ("precision", "recall", "f1"))
        lines.append(f"{str(c):<24}{precision:<16}{recall:<16}{f1:<16}")
    return "\n".join(lines)


def tree_to_dict(tree: DecisionTree, feature_names: list[str] | None = None) -> dict:
    names = feature_names or [f"f{i}" for i in range(tree.n_features)]

    def walk(node: TreeNode) -> dict:
        payload = {
            "gini": float(node.gini),
            "n_samples": int(node.n_samples),
            "class_counts": [float(c) for c in node.class_counts],
        }
        if node.is_leaf:
            payload["predicted_class"] = int(node.predicted_class)
        else:
            payload.update(
                feature=int(node.feature),
                feature_name=names[int(node.feature)],
                threshold=float(node.threshold),
                left=walk(node.left),
                right=walk(node.right),
            )
        return payload

    return {"classes": [str(c) for c in tree.classes], "n_features": tree.n_features, "root": walk(tree.root)}


def _node_from_dict(payload: dict) -> TreeNode:
    node = TreeNode(
        gini=float(payload["gini"]),
        n_samples=int(payload["n_samples"]),
        class_counts=np.asarray(payload["class_counts"], dtype=float),
    )
    if "feature" in payload:
        node.feature = int(payload["feature"])
        node.threshold = float(payload["threshold"])
        node.left = _node_from_dict(payload["left"])
        node.right = _node_from_dict(payload["right"])
    else:
        node.predicted_class = int(payload["predicted_class"])
    return node


def forest_to_dict(model: RandomForestModel) -> dict:
    return {
        "classes": [str(c) for c in model.classes],
        "n_features": model.n_features,
        "n_trees": model.n_trees,
        "seed": model.seed,
        "features_per_split": model.features_per_split,
        "bootstrap": model.bootstrap,
        "feature_names": model.feature_names,
        "trees": [tree_to_dict(t, model.feature_names) for t in model.trees],
    }


def forest_from_dict(payload: dict) -> RandomForestModel:
    classes = list(payload["classes"])
    trees = [
        DecisionTree(root=_node_from_dict(t["root"]), classes=classes, n_features=int(payload["n_features"]))
        for t in payload["trees"]
    ]
    return RandomForestModel(
        trees=trees,
        classes=classes,
        n_features=int(payload["n_features"]),
        seed=int(payload["seed"]),
        n_trees=int(payload["n_trees"]),
        features_per_split=int(payload["features_per_split"]),
        bootstrap=bool(payload["bootstrap"]),
        feature_names=list(payload["feature_names"]),
    )
