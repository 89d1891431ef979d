"""Isolation-forest detection of year-level volume spikes.

Trees partition random subsamples with uniform-random (feature, value)
splits; anomalousness falls out of the average isolation depth through
s(x) = 2^(-E[h(x)] / c(psi)). c(m) is the expected unsuccessful-search path
length in a random binary search tree of m nodes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, InsufficientDataError
from .ingest import AnnualSeries

log = logging.getLogger(__name__)

EULER_GAMMA = 0.5772156649


@dataclass
class IsoNode:
    """Internal split node or leaf; leaves only carry their sample count."""

    size: int
    feature: int | None = None
    value: float | None = None
    left: "IsoNode | None" = None
    right: "IsoNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())


@dataclass
class IsolationForestModel:
    n_trees: int
    psi: int
    height_limit: int
    trees: list[IsoNode]
    seed: int
    n_features: int


def harmonic_estimate(i: int) -> float:
    """H(i) ~ ln(i) + Euler-Mascheroni constant + 1/(2i).

    The 1/(2i) term is the next order of the asymptotic expansion; without it
    c(m) sits a full 1/m away from the directly summed series, which is wider
    than the tolerance the scoring identities are tested at.
    """
    return math.log(i) + EULER_GAMMA + 0.5 / i


def average_path_length(m: int) -> float:
    """c(m): expected isolation depth of a subsample of size m."""
    if m <= 1:
        return 0.0
    if m == 2:
        return 1.0
    return 2.0 * harmonic_estimate(m - 1) - 2.0 * (m - 1) / m


def _grow_tree(X: np.ndarray, rng: np.random.Generator, depth: int, limit: int) -> IsoNode:
    n = len(X)
    if n <= 1 or depth >= limit or np.all(X == X[0]):
        return IsoNode(size=n)
    # Pick among features that still vary in this node so the split value
    # can sit strictly between the observed min and max.
    spans = X.max(axis=0) - X.min(axis=0)
    candidates = np.flatnonzero(spans > 0)
    feature = int(rng.choice(candidates))
    lo = float(X[:, feature].min())
    hi = float(X[:, feature].max())
    value = float(rng.uniform(lo, hi))
    if value <= lo:  # guard the open interval against an exact-lo draw
        value = (lo + hi) / 2.0
    mask = X[:, feature] < value
    return IsoNode(
        size=n,
        feature=feature,
        value=value,
        left=_grow_tree(X[mask], rng, depth + 1, limit),
        right=_grow_tree(X[~mask], rng, depth + 1, limit),
    )


def iforest_fit(points: np.ndarray, n_trees: int = 100, psi: int = 256, seed: int = 0) -> IsolationForestModel:
    """Grow n_trees isolation trees on subsamples of size min(psi, n)."""
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = len(X)
    if n < 2:
        raise InsufficientDataError("isolation forest needs at least 2 points")
    psi = min(psi, n)
    height_limit = math.ceil(math.log2(psi)) if psi > 1 else 0
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        sample = X[rng.choice(n, size=psi, replace=False)]
        trees.append(_grow_tree(sample, rng, 0, height_limit))
    return IsolationForestModel(
        n_trees=n_trees,
        psi=psi,
        height_limit=height_limit,
        trees=trees,
        seed=seed,
        n_features=X.shape[1],
    )


def path_length(node: IsoNode, x: np.ndarray) -> float:
    """Edges walked to reach x's leaf, plus the c(leaf size) adjustment."""
    depth = 0.0
    while not node.is_leaf:
        node = node.left if x[node.feature] < node.value else node.right
        depth += 1.0
    return depth + average_path_length(node.size)


def anomaly_score(model: IsolationForestModel, x) -> float:
    """s(x) = 2^(-mean path length / c(psi)), always in (0, 1]."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n_features,):
        raise DimensionMismatchError(f"expected {model.n_features} features, got shape {x.shape}")
    mean_h = math.fsum(path_length(tree, x) for tree in model.trees) / model.n_trees
    denom = average_path_length(model.psi)
    if denom == 0.0:
        return 1.0
    return 2.0 ** (-mean_h / denom)


@dataclass
class AnomalyFlag:
    hs_code: str
    year: int
    observed_kg: float
    score: float
    threshold_used: float
    is_anomaly: bool


def _standardize(values: np.ndarray) -> np.ndarray:
    std = values.std(ddof=1) if len(values) > 1 else 0.0
    if std == 0.0:
        return np.zeros_like(values)
    return (values - values.mean()) / std


def flag_year_anomalies(
    series_set: list[AnnualSeries],
    mode: str = "per_code",
    threshold: float = 0.6,
    seed: int = 0,
    n_trees: int = 100,
    psi: int = 256,
) -> list[AnomalyFlag]:
    """Score every (code, year) volume point; scores >= threshold are flagged.

    per_code fits one forest per series on (year index, standardized kg);
    pooled fits a single forest on (kg z-scored within code, kg over code
    mean) pairs across all codes. Series shorter than 3 points are skipped.
    """
    usable = []
    for series in sorted(series_set, key=lambda s: s.hs_code):
        if len(series.points) < 3:
            log.warning("skipping %s: %d point(s) is too short to score", series.hs_code, len(series.points))
            continue
        usable.append(series)

    flags: list[AnomalyFlag] = []
    if mode == "per_code":
        for idx, series in enumerate(usable):
            kgs = np.array([p.kg for p in series.points], dtype=float)
            years = np.array([p.year for p in series.points], dtype=float)
            X = np.column_stack([years - years.min(), _standardize(kgs)])
            code_seed = int(np.random.SeedSequence(seed, spawn_key=(idx,)).generate_state(1)[0])
            model = iforest_fit(X, n_trees=n_trees, psi=psi, seed=code_seed)
            for point, row in zip(series.points, X):
                score = anomaly_score(model, row)
                flags.append(
                    AnomalyFlag(
                        hs_code=series.hs_code,
                        year=point.year,
                        observed_kg=point.kg,
                        score=score,
                        threshold_used=threshold,
                        is_anomaly=score >= threshold,
                    )
                )
    elif mode == "pooled":
        rows, owners = [], []
        for series in usable:
            kgs = np.array([p.kg for p in series.points], dtype=float)
            z = _standardize(kgs)
            mean = kgs.mean()
            ratio = kgs / mean if mean > 0 else np.zeros_like(kgs)
            for point, zi, ri in zip(series.points, z, ratio):
                rows.append((zi, ri))
                owners.append((series.hs_code, point.year, point.kg))
        if not rows:
            return []
        X = np.array(rows, dtype=float)
        model = iforest_fit(X, n_trees=n_trees, psi=psi, seed=seed)
        for (code, year, kg), row in zip(owners, X):
            score = anomaly_score(model, row)
            flags.append(
                AnomalyFlag(
                    hs_code=code,
                    year=year,
                    observed_kg=kg,
                    score=score,
                    threshold_used=threshold,
                    is_anomaly=score >= threshold,
                )
            )
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return flags
