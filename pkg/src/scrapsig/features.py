"""Per-code economic features and z-score normalization.

Five primary features (mean volume, mean price, price volatility, volume
trend, price trend) plus an interaction term and log transforms. Trends are
OLS slopes against the year index (year minus first year of the series);
volatility is the sample standard deviation of the annual unit price.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InsufficientDataError, UndefinedSlopeError
from .ingest import AnnualSeries

PRIMARY_FEATURES = ["avg_kg", "avg_price", "price_volatility", "kg_trend", "price_trend"]
DERIVED_FEATURES = ["volatility_x_price_trend", "log_avg_kg", "log_avg_price"]
ALL_FEATURES = PRIMARY_FEATURES + DERIVED_FEATURES

VOLUME_FEATURES = {"avg_kg", "kg_trend", "log_avg_kg"}
PRICE_FEATURES = {"avg_price", "price_volatility", "price_trend", "volatility_x_price_trend", "log_avg_price"}


@dataclass(frozen=True)
class FeatureVector:
    hs_code: str
    avg_kg: float
    avg_price: float
    price_volatility: float
    kg_trend: float
    price_trend: float

    @property
    def volatility_x_price_trend(self) -> float:
        return self.price_volatility * self.price_trend

    @property
    def log_avg_kg(self) -> float:
        return math.log1p(self.avg_kg)

    @property
    def log_avg_price(self) -> float:
        return math.log1p(self.avg_price)

    def value(self, name: str) -> float:
        return getattr(self, name)

    def as_dict(self) -> dict[str, float]:
        return {name: self.value(name) for name in ALL_FEATURES}


def ols_slope(xs, ys) -> float:
    """Least-squares slope sum((x-xbar)(y-ybar)) / sum((x-xbar)^2)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape:
        raise ValueError("xs and ys must have equal length")
    if xs.size < 2:
        raise InsufficientDataError("OLS slope needs at least 2 points")
    dx = xs - xs.mean()
    if not np.any(dx):
        raise UndefinedSlopeError("all x values identical; slope undefined")
    dy = ys - ys.mean()
    return float(np.dot(dx, dy) / np.dot(dx, dx))


def ols_fit(xs, ys) -> tuple[float, float]:
    """(slope, intercept); the fitted line passes through the means."""
    slope = ols_slope(xs, ys)
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    return slope, float(ys.mean() - slope * xs.mean())


def compute_features(series: AnnualSeries) -> FeatureVector:
    """Table of per-code statistics; needs at least 2 priced points."""
    priced = [p for p in series.points if p.unit_price is not None]
    if len(priced) < 2:
        raise InsufficientDataError(
            f"{series.hs_code}: need >= 2 priced points, have {len(priced)}",
            hs_code=series.hs_code,
        )
    first_year = min(p.year for p in series.points)
    kg_idx = [p.year - first_year for p in series.points]
    kgs = [p.kg for p in series.points]
    price_idx = [p.year - first_year for p in priced]
    prices = [p.unit_price for p in priced]

    return FeatureVector(
        hs_code=series.hs_code,
        avg_kg=float(np.mean(kgs)),
        avg_price=float(np.mean(prices)),
        price_volatility=float(np.std(prices, ddof=1)),
        kg_trend=ols_slope(kg_idx, kgs),
        price_trend=ols_slope(price_idx, prices),
    )


def signature_flag(fv: FeatureVector) -> bool:
    """True iff volume trends up while price trends down (both strict)."""
    return fv.kg_trend > 0 and fv.price_trend < 0


@dataclass
class NormalizedMatrix:
    rows: list[str]  # hs codes, one per matrix row
    cols: list[str]
    values: np.ndarray  # z-scores, shape (len(rows), len(cols))
    means: np.ndarray
    stds: np.ndarray  # zero-variance columns recorded as 1
    zero_variance: list[str] = field(default_factory=list)

    def normalize(self, fv: FeatureVector) -> np.ndarray:
        """Project a new vector into this matrix's z-score space."""
        raw = np.array([fv.value(c) for c in self.cols], dtype=float)
        return (raw - self.means) / self.stds

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.stds + self.means

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "values": self.values.tolist(),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "zero_variance": self.zero_variance,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "NormalizedMatrix":
        return cls(
            rows=list(payload["rows"]),
            cols=list(payload["cols"]),
            values=np.asarray(payload["values"], dtype=float),
            means=np.asarray(payload["means"], dtype=float),
            stds=np.asarray(payload["stds"], dtype=float),
            zero_variance=list(payload.get("zero_variance", [])),
        )


def zscore_normalize(vectors: list[FeatureVector], feature_subset: list[str] | None = None) -> NormalizedMatrix:
    """Column-wise (x - mean) / sample-std over the given feature subset.

    Zero-variance columns map to all zeros with std recorded as 1 so the
    inverse transform stays well defined.
    """
    cols = list(feature_subset) if feature_subset is not None else list(ALL_FEATURES)
    if not cols:
        raise ConfigError("feature subset is empty")
    unknown = [c for c in cols if c not in ALL_FEATURES]
    if unknown:
        raise ConfigError(f"unknown features: {unknown}")
    if len(vectors) < 2:
        raise InsufficientDataError("normalization needs at least 2 vectors")

    raw = np.array([[fv.value(c) for c in cols] for fv in vectors], dtype=float)
    means = raw.mean(axis=0)
    stds = raw.std(axis=0, ddof=1)
    degenerate = stds == 0.0
    stds = np.where(degenerate, 1.0, stds)
    values = (raw - means) / stds
    return NormalizedMatrix(
        rows=[fv.hs_code for fv in vectors],
        cols=cols,
        values=values,
        means=means,
        stds=stds,
        zero_variance=[c for c, d in zip(cols, degenerate) if d],
    )
