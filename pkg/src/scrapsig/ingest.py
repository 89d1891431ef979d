"""Parse raw trade rows and clean them into per-code annual series.

Cleaning order used by the pipeline: aggregate -> interpolate short gaps ->
exclude sparse codes -> deflate -> winsorize unit prices.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError

HS_CODE_RE = re.compile(r"^[0-9]{6,10}$")

# Column headers as exported by UN Comtrade (comtradeplus.un.org bulk CSV).
COMTRADE_MAPPING = {
    "hs_code": "cmdCode",
    "year": "refYear",
    "flow": "flowCode",
    "reporter": "reporterISO",
    "partner": "partnerISO",
    "value_usd": "primaryValue",
    "mass_kg": "netWgt",
}

_IMPORT_TOKENS = {"import", "imports", "i", "m"}
_EXPORT_TOKENS = {"export", "exports", "e", "x"}

OBSERVED = "observed"
INTERPOLATED = "interpolated"


@dataclass(frozen=True)
class TradeRecord:
    """One declared transaction or aggregate row."""

    hs_code: str
    year: int
    flow: str  # "import" | "export"
    reporter: str
    partner: str
    value_usd: float
    mass_kg: float


@dataclass
class SeriesPoint:
    year: int
    kg: float
    usd: float
    unit_price: float | None  # USD/kg, None when kg == 0
    source: str = OBSERVED  # "observed" | "interpolated"
    capped: bool = False
    # Price as reported before winsorization; set only on capped points so
    # re-capping is idempotent and the original value stays auditable.
    reported_price: float | None = None

    @property
    def flags(self) -> list[str]:
        out = [self.source]
        if self.capped:
            out.append("capped")
        return out


@dataclass
class AnnualSeries:
    hs_code: str
    points: list[SeriesPoint] = field(default_factory=list)

    def years(self) -> list[int]:
        return [p.year for p in self.points]

    def point(self, year: int) -> SeriesPoint:
        for p in self.points:
            if p.year == year:
                return p
        raise KeyError(year)


@dataclass
class CleaningConfig:
    max_missing_fraction: float = 0.20
    max_interp_gap: int = 1
    cap_lo: float = 0.01  # percentile as a fraction
    cap_hi: float = 0.99
    cap_scope: str = "pooled"  # "pooled" | "per_code"
    base_year: int | None = None
    cpi_index: dict[int, float] | None = None  # year -> deflator; None = all 1.0

    def __post_init__(self):
        if not 0.0 <= self.max_missing_fraction <= 1.0:
            raise ConfigError("max_missing_fraction must lie in [0, 1]")
        if not self.cap_lo < self.cap_hi:
            raise ConfigError("cap_lo must be smaller than cap_hi")
        if self.cap_scope not in ("pooled", "per_code"):
            raise ConfigError(f"unknown cap_scope {self.cap_scope!r}")
        if self.cpi_index is not None:
            if any(v <= 0 for v in self.cpi_index.values()):
                raise ConfigError("deflators must be positive")
            if self.base_year is None:
                raise ConfigError("base_year required when cpi_index is given")
            if self.base_year not in self.cpi_index:
                raise ConfigError(f"base_year {self.base_year} missing from cpi_index")


@dataclass
class ParseResult:
    records: list[TradeRecord]
    rejected: list[tuple[int, str]]  # (1-based data line number, reason)

    @property
    def n_accepted(self) -> int:
        return len(self.records)

    @property
    def n_rejected(self) -> int:
        return len(self.rejected)


def _normalize_flow(cell: str) -> str:
    token = cell.strip().lower()
    if token in _IMPORT_TOKENS:
        return "import"
    if token in _EXPORT_TOKENS:
        return "export"
    raise ValueError(f"unrecognized flow {cell!r}")


def _parse_money(cell: str) -> float:
    value = float(cell)
    if math.isnan(value) or math.isinf(value):
        raise ValueError(f"non-finite value {cell!r}")
    if value < 0:
        raise ValueError(f"negative value {cell!r}")
    return value


def parse_records(stream, column_mapping: dict[str, str], delimiter: str = ",") -> ParseResult:
    """Read delimiter-separated rows with a header into TradeRecords.

    `stream` is a text-file object or a string of file contents.
    `column_mapping` maps each TradeRecord field to its column header;
    a missing mapped column is a fatal ConfigError, a malformed cell only
    rejects its row.
    """
    missing = {f for f in COMTRADE_MAPPING if f not in column_mapping}
    if missing:
        raise ConfigError(f"column mapping lacks fields: {sorted(missing)}")
    if isinstance(stream, (str, bytes)):
        stream = io.StringIO(stream.decode() if isinstance(stream, bytes) else stream)

    # lines whose first non-blank character is '#' are metadata comments
    lines = (line for line in stream if not line.lstrip().startswith("#"))
    reader = csv.DictReader(lines, delimiter=delimiter)
    if reader.fieldnames is None:
        raise ConfigError("input has no header row")
    absent = [col for col in column_mapping.values() if col not in reader.fieldnames]
    if absent:
        raise ConfigError(f"mapped columns missing from header: {absent}")

    records: list[TradeRecord] = []
    rejected: list[tuple[int, str]] = []
    for line_no, row in enumerate(reader, start=1):
        try:
            hs_code = (row[column_mapping["hs_code"]] or "").strip()
            if not HS_CODE_RE.match(hs_code):
                raise ValueError(f"hs_code {hs_code!r} is not 6-10 digits")
            records.append(
                TradeRecord(
                    hs_code=hs_code,
                    year=int(row[column_mapping["year"]]),
                    flow=_normalize_flow(row[column_mapping["flow"]]),
                    reporter=(row[column_mapping["reporter"]] or "").strip(),
                    partner=(row[column_mapping["partner"]] or "").strip(),
                    value_usd=_parse_money(row[column_mapping["value_usd"]]),
                    mass_kg=_parse_money(row[column_mapping["mass_kg"]]),
                )
            )
        except (ValueError, TypeError, KeyError) as exc:
            rejected.append((line_no, str(exc)))
    return ParseResult(records=records, rejected=rejected)


def aggregate_annual(
    records: list[TradeRecord],
    flow: str | None = None,
    reporter: str | None = None,
    assume_unique: bool = False,
) -> list[AnnualSeries]:
    """Sum mass and value per (hs_code, year) into sorted annual series.

    With assume_unique=True the input is taken to be pre-aggregated and a
    duplicate (code, year) pair raises instead of summing.
    """
    buckets: dict[str, dict[int, list[TradeRecord]]] = {}
    for rec in records:
        if flow is not None and rec.flow != flow:
            continue
        if reporter is not None and rec.reporter != reporter:
            continue
        buckets.setdefault(rec.hs_code, {}).setdefault(rec.year, []).append(rec)

    out = []
    for hs_code in sorted(buckets):
        points = []
        for year in sorted(buckets[hs_code]):
            group = buckets[hs_code][year]
            if assume_unique and len(group) > 1:
                raise DataError(f"duplicate rows for ({hs_code}, {year}) with aggregation disabled")
            kg = math.fsum(r.mass_kg for r in group)
            usd = math.fsum(r.value_usd for r in group)
            points.append(SeriesPoint(year=year, kg=kg, usd=usd, unit_price=usd / kg if kg > 0 else None))
        out.append(AnnualSeries(hs_code=hs_code, points=points))
    return out


def interpolate_gaps(series: AnnualSeries, config: CleaningConfig) -> AnnualSeries:
    """Fill interior year gaps no longer than max_interp_gap.

    kg and usd are interpolated linearly and independently; the unit price is
    recomputed from the filled values. Leading/trailing years are never added
    and observed points are returned untouched.
    """
    pts = sorted(series.points, key=lambda p: p.year)
    if len(pts) < 2:
        return AnnualSeries(series.hs_code, list(pts))
    filled: list[SeriesPoint] = []
    for left, right in zip(pts, pts[1:]):
        filled.append(left)
        gap = right.year - left.year - 1
        if 0 < gap <= config.max_interp_gap:
            for year in range(left.year + 1, right.year):
                frac = (year - left.year) / (right.year - left.year)
                kg = left.kg + frac * (right.kg - left.kg)
                usd = left.usd + frac * (right.usd - left.usd)
                filled.append(
                    SeriesPoint(
                        year=year,
                        kg=kg,
                        usd=usd,
                        unit_price=usd / kg if kg > 0 else None,
                        source=INTERPOLATED,
                    )
                )
    filled.append(pts[-1])
    return AnnualSeries(series.hs_code, filled)


def exclude_sparse(
    series_set: list[AnnualSeries],
    window_years: tuple[int, int],
    config: CleaningConfig,
) -> tuple[list[AnnualSeries], list[tuple[str, float]]]:
    """Drop codes missing more than max_missing_fraction of window years.

    Interpolated years count as present. Returns (kept, dropped) where each
    dropped entry records the offending missing fraction.
    """
    first, last = window_years
    if last < first:
        raise ConfigError(f"bad window {window_years}")
    window = range(first, last + 1)
    n_years = len(window)

    kept, dropped = [], []
    for series in series_set:
        present = {p.year for p in series.points if first <= p.year <= last}
        missing_fraction = 1.0 - len(present) / n_years
        if missing_fraction > config.max_missing_fraction:
            dropped.append((series.hs_code, missing_fraction))
        else:
            kept.append(series)
    return kept, dropped


def adjust_inflation(series: AnnualSeries, config: CleaningConfig) -> AnnualSeries:
    """Deflate usd and unit_price to base-year terms; kg is untouched."""
    if config.cpi_index is None:
        return AnnualSeries(series.hs_code, [replace(p) for p in series.points])
    base = config.cpi_index[config.base_year]
    out = []
    for p in series.points:
        if p.year not in config.cpi_index:
            raise ConfigError(f"no deflator for year {p.year} (hs {series.hs_code})")
        factor = config.cpi_index[p.year] / base
        usd = p.usd / factor
        out.append(
            replace(p, usd=usd, unit_price=usd / p.kg if p.kg > 0 else None)
        )
    return AnnualSeries(series.hs_code, out)


def _winsorize_points(points: list[SeriesPoint], lo_q: float, hi_q: float) -> int:
    """Cap the listed points' unit prices in place; returns capped count.

    Thresholds come from the as-reported prices (reported_price of already
    capped points), which makes repeated application a fixed point.
    """
    raw = [
        (p, p.reported_price if p.capped else p.unit_price)
        for p in points
        if (p.reported_price if p.capped else p.unit_price) is not None
    ]
    values = np.array([v for _, v in raw], dtype=float)
    if len(np.unique(values)) < 2:
        return 0
    lo, hi = np.percentile(values, [lo_q * 100.0, hi_q * 100.0])  # linear interpolation
    n_capped = 0
    for p, price in raw:
        if price < lo or price > hi:
            p.reported_price = price
            p.unit_price = float(np.clip(price, lo, hi))
            p.usd = p.unit_price * p.kg
            p.capped = True
            n_capped += 1
        elif p.capped:
            # Threshold changed (or re-run on a tighter pool): restore.
            p.unit_price = price
            p.usd = price * p.kg
            p.capped = False
            p.reported_price = None
    return n_capped


def cap_outliers(series_set: list[AnnualSeries], config: CleaningConfig) -> list[AnnualSeries]:
    """Winsorize unit prices at the configured percentile thresholds.

    Pooled scope (default) computes one [p_lo, p_hi] interval over every
    priced point in the dataset; per_code computes per-series intervals.
    Fewer than 2 distinct prices leaves the data unchanged. usd is
    recomputed as price * kg on capped points.
    """
    out = [AnnualSeries(s.hs_code, [replace(p) for p in s.points]) for s in series_set]
    if config.cap_scope == "pooled":
        _winsorize_points([p for s in out for p in s.points], config.cap_lo, config.cap_hi)
    else:
        for s in out:
            _winsorize_points(s.points, config.cap_lo, config.cap_hi)
    return out


def clean_pipeline(
    series_set: list[AnnualSeries],
    window_years: tuple[int, int],
    config: CleaningConfig,
) -> tuple[list[AnnualSeries], dict]:
    """interpolate -> exclude sparse -> deflate -> winsorize, with a report."""
    interpolated = [interpolate_gaps(s, config) for s in series_set]
    n_interp = sum(1 for s in interpolated for p in s.points if p.source == INTERPOLATED)
    kept, dropped = exclude_sparse(interpolated, window_years, config)
    adjusted = [adjust_inflation(s, config) for s in kept]
    capped = cap_outliers(adjusted, config)
    n_capped = sum(1 for s in capped for p in s.points if p.capped)
    report = {
        "codes_in": len(series_set),
        "codes_kept": len(capped),
        "dropped_codes": [{"hs_code": c, "missing_fraction": f} for c, f in dropped],
        "interpolated_points": n_interp,
        "capped_points": n_capped,
        "window_years": list(window_years),
    }
    return capped, report


def series_to_dict(series: AnnualSeries) -> dict:
    points = []
    for p in series.points:
        d = {
            "year": p.year,
            "kg": p.kg,
            "usd": p.usd,
            "unit_price": p.unit_price,
            "flags": p.flags,
        }
        if p.capped:
            d["reported_unit_price"] = p.reported_price
        points.append(d)
    return {"hs_code": series.hs_code, "points": points}


def series_from_dict(payload: dict) -> AnnualSeries:
    points = []
    for d in payload["points"]:
        flags = d.get("flags", [OBSERVED])
        points.append(
            SeriesPoint(
                year=int(d["year"]),
                kg=float(d["kg"]),
                usd=float(d["usd"]),
                unit_price=None if d.get("unit_price") is None else float(d["unit_price"]),
                source=INTERPOLATED if INTERPOLATED in flags else OBSERVED,
                capped="capped" in flags,
                reported_price=d.get("reported_unit_price"),
            )
        )
    return AnnualSeries(hs_code=str(payload["hs_code"]), points=points)
