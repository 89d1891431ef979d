"""K-means market segmentation with elbow-based K selection.

Lloyd iterations with k-means++ seeding and a fixed number of restarts;
everything is derived deterministically from one master seed so repeated
runs are bit-identical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionMismatchError
from .features import NormalizedMatrix

log = logging.getLogger(__name__)

ARCHETYPES = [
    "HighVolumeCommodity",
    "EmergingCommodity",
    "StableMidMarket",
    "HighPriceNiche",
]
HIGH_RISK_ARCHETYPES = {"HighVolumeCommodity", "EmergingCommodity"}


@dataclass
class KMeansModel:
    k: int
    centroids: np.ndarray  # (k, p) in normalized feature space
    assignments: dict[str, int]  # hs_code -> cluster id
    inertia: float
    seed: int
    n_init: int
    iterations_run: int
    inertia_history: list[float] = field(default_factory=list)
    feature_names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "centroids": self.centroids.tolist(),
            "assignments": self.assignments,
            "inertia": self.inertia,
            "seed": self.seed,
            "n_init": self.n_init,
            "iterations_run": self.iterations_run,
            "feature_names": self.feature_names,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "KMeansModel":
        return cls(
            k=int(payload["k"]),
            centroids=np.asarray(payload["centroids"], dtype=float),
            assignments={str(k): int(v) for k, v in payload["assignments"].items()},
            inertia=float(payload["inertia"]),
            seed=int(payload["seed"]),
            n_init=int(payload["n_init"]),
            iterations_run=int(payload["iterations_run"]),
            feature_names=list(payload.get("feature_names", [])),
        )


def _nearest(X: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Assign rows to nearest centroid (squared Euclidean, ties -> lowest id)."""
    d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)  # argmin takes the first minimum
    return labels, d2[np.arange(len(X)), labels]


def _kmeanspp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total == 0.0:
            centers[i] = X[rng.integers(n)]
            continue
        centers[i] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((X - centers[i]) ** 2).sum(axis=1))
    return centers


def _lloyd(X: np.ndarray, k: int, rng: np.random.Generator, max_iter: int, tol: float):
    centroids = _kmeanspp_init(X, k, rng)
    history: list[float] = []
    for iteration in range(1, max_iter + 1):
        labels, dists = _nearest(X, centroids)
        history.append(float(dists.sum()))
        # Update step. An empty cluster is re-seeded with the point farthest
        # from its assigned centroid (distinct points when several clusters
        # empty out at once); replacing an unused centroid cannot raise the
        # current inertia, so the recorded history stays non-increasing.
        new_centroids = centroids.copy()
        dist_pool = dists.copy()
        for cid in range(k):
            members = labels == cid
            if np.any(members):
                new_centroids[cid] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(dist_pool))
                new_centroids[cid] = X[far]
                dist_pool[far] = -1.0
        shift = float(np.max(np.abs(new_centroids - centroids)))
        centroids = new_centroids
        if shift <= tol:
            break
    labels, dists = _nearest(X, centroids)
    inertia = float(dists.sum())
    history.append(inertia)
    return centroids, labels, inertia, iteration, history


def kmeans_fit(
    X: NormalizedMatrix,
    k: int,
    seed: int,
    n_init: int = 10,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> KMeansModel:
    """Best-of-n_init Lloyd runs; restart seeds spawn from the master seed.

    Accepts a NormalizedMatrix (row/column names carried onto the model) or
    any (n, p) array, in which case rows are named by index.
    """
    if isinstance(X, NormalizedMatrix):
        data, row_names, col_names = X.values, X.rows, list(X.cols)
    else:
        data = np.asarray(X, dtype=float)
        row_names, col_names = [str(i) for i in range(len(data))], []
    if len(data) < k:
        raise DataError(f"k={k} infeasible with {len(data)} rows")
    best = None
    for run, child in enumerate(np.random.SeedSequence(seed).spawn(n_init)):
        rng = np.random.default_rng(child)
        result = _lloyd(data, k, rng, max_iter, tol)
        if best is None or result[2] < best[2]:
            best = result
    centroids, labels, inertia, iterations, history = best
    return KMeansModel(
        k=k,
        centroids=centroids,
        assignments={code: int(lab) for code, lab in zip(row_names, labels)},
        inertia=inertia,
        seed=seed,
        n_init=n_init,
        iterations_run=iterations,
        inertia_history=history,
        feature_names=col_names,
    )


def elbow_scan(
    X: NormalizedMatrix,
    k_range=range(1, 11),
    seed: int = 0,
    n_init: int = 10,
) -> tuple[list[tuple[int, float]], int | None]:
    """Inertia curve over k plus the maximum-curvature recommendation.

    The recommendation is the interior k maximizing the second difference
    inertia(k-1) - 2*inertia(k) + inertia(k+1); the full curve is always
    returned so a human can override it.
    """
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise DataError("empty k range")
    curve = []
    for k in ks:
        k_seed = int(np.random.SeedSequence(seed, spawn_key=(k,)).generate_state(1)[0])
        curve.append((k, kmeans_fit(X, k, seed=k_seed, n_init=n_init).inertia))

    if len(curve) < 3:
        log.warning("elbow scan needs >= 3 k values for a recommendation; got %d", len(curve))
        return curve, None
    inertias = dict(curve)
    best_k, best_curv = None, -np.inf
    for prev_k, k, next_k in zip(ks, ks[1:], ks[2:]):
        curvature = inertias[prev_k] - 2.0 * inertias[k] + inertias[next_k]
        if curvature > best_curv:
            best_k, best_curv = k, curvature
    return curve, best_k


@dataclass
class ArchetypeLabeling:
    labels: dict[int, str]  # cluster id -> archetype
    rationale: dict[int, str]

    def to_dict(self) -> dict:
        return {
            "labels": {str(c): a for c, a in self.labels.items()},
            "rationale": {str(c): r for c, r in self.rationale.items()},
        }


def centroid_stats(model: KMeansModel, X: NormalizedMatrix) -> dict[int, dict[str, float]]:
    """Centroids mapped back to raw feature units."""
    return {
        cid: dict(zip(X.cols, X.denormalize(model.centroids[cid])))
        for cid in range(model.k)
    }


def label_archetypes(model: KMeansModel, stats: dict[int, dict[str, float]]) -> ArchetypeLabeling:
    """Name the four clusters from their de-normalized centroid profiles.

    Priority order: highest mean price -> HighPriceNiche; highest mean volume
    of the rest -> HighVolumeCommodity; larger volume trend of the remaining
    pair -> EmergingCommodity; the last is StableMidMarket. Exact ties go to
    the lower cluster id and are noted in the rationale.
    """
    if model.k != 4:
        raise DataError(f"archetype labels are defined for k=4 only, got k={model.k}")

    def argmax(candidates: list[int], key: str) -> tuple[int, bool]:
        best = max(candidates, key=lambda c: (stats[c][key], -c))
        tied = sum(1 for c in candidates if stats[c][key] == stats[best][key]) > 1
        return best, tied

    remaining = sorted(stats)
    labels: dict[int, str] = {}
    rationale: dict[int, str] = {}

    niche, tied = argmax(remaining, "avg_price")
    rationale[niche] = f"highest avg_price {stats[niche]['avg_price']:.4g}" + (
        " (tie broken by lowest cluster id)" if tied else ""
    )
    labels[niche] = "HighPriceNiche"
    remaining.remove(niche)

    bulk, tied = argmax(remaining, "avg_kg")
    rationale[bulk] = f"highest remaining avg_kg {stats[bulk]['avg_kg']:.4g}" + (
        " (tie broken by lowest cluster id)" if tied else ""
    )
    labels[bulk] = "HighVolumeCommodity"
    remaining.remove(bulk)

    emerging, tied = argmax(remaining, "kg_trend")
    rationale[emerging] = f"larger kg_trend {stats[emerging]['kg_trend']:.4g}" + (
        " (tie broken by lowest cluster id)" if tied else ""
    )
    labels[emerging] = "EmergingCommodity"
    remaining.remove(emerging)

    last = remaining[0]
    labels[last] = "StableMidMarket"
    rationale[last] = "remaining cluster"
    return ArchetypeLabeling(labels=labels, rationale=rationale)


def assign(model: KMeansModel, z: np.ndarray) -> int:
    """Cluster id of a single normalized vector (ties -> lowest id)."""
    z = np.asarray(z, dtype=float)
    if z.shape != (model.centroids.shape[1],):
        raise DimensionMismatchError(
            f"expected vector of length {model.centroids.shape[1]}, got shape {z.shape}"
        )
    d2 = ((model.centroids - z) ** 2).sum(axis=1)
    return int(np.argmin(d2))
