"""Risk fusion: signature flags, forecasts, Basel overlap, duty gaps, dilution.

Everything upstream (segmentation, anomaly flags, classification) describes a
code in isolation; this module combines those views with regulatory context
into a ranked watchlist plus the two financial side models: the duty gap a
misclassified shipment evades and the value dilution a poisoned consignment
hides.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

from . import SCHEMA_VERSION
from .errors import ConfigError, DataError, InsufficientDataError
from .features import FeatureVector, compute_features, ols_fit, signature_flag
from .ingest import AnnualSeries
from .segment import HIGH_RISK_ARCHETYPES
from .svgchart import dual_axis_chart, scatter_loglog

Y48_LEVELS = ("likely", "possible", "no")


# ---------------------------------------------------------------------------
# signature detection


def detect_signature_codes(
    series_set: dict[str, AnnualSeries],
    strong_thresholds: tuple[float, float] = (0.10, 0.10),
) -> list[tuple[str, bool, bool]]:
    """Flag each code for the inverse price-volume signature.

    Returns (hs_code, signature, strong_signature) sorted by code.  The plain
    flag is the strict sign rule on the fitted trends.  The strong flag
    additionally requires the cumulative change between the fitted-line
    endpoints to reach a >= 10% price decline and >= 10% volume growth
    (thresholds given as positive magnitudes), which filters codes whose
    trends are directionally right but economically negligible.
    """
    price_drop, kg_growth = strong_thresholds
    if price_drop < 0 or kg_growth < 0:
        raise ConfigError("strong thresholds are magnitudes and must be >= 0")
    out = []
    for code in sorted(series_set):
        series = series_set[code]
        fv = compute_features(series)
        sig = signature_flag(fv)
        strong = False
        if sig:
            kg_change = _fitted_relative_change(series, "kg")
            price_change = _fitted_relative_change(series, "price")
            if kg_change is not None and price_change is not None:
                strong = price_change <= -price_drop and kg_change >= kg_growth
        out.append((code, sig, strong))
    return out


def _fitted_relative_change(series: AnnualSeries, which: str) -> float | None:
    """Relative change between the fitted-line values at the window ends.

    None when the fitted start value is not positive (relative change
    undefined there).
    """
    first_year = min(p.year for p in series.points)
    if which == "kg":
        pts = [(p.year - first_year, p.kg) for p in series.points]
    else:
        pts = [(p.year - first_year, p.unit_price) for p in series.points if p.unit_price is not None]
    xs = [x for x, _ in pts]
    ys = [y for _, y in pts]
    slope, intercept = ols_fit(xs, ys)
    start = intercept + slope * min(xs)
    end = intercept + slope * max(xs)
    if start <= 0:
        return None
    return (end - start) / start


# ---------------------------------------------------------------------------
# linear forecast


@dataclass(frozen=True)
class ForecastPoint:
    year: int
    kg_hat: float
    price_hat: float
    kg_clamped: bool = False
    price_clamped: bool = False

    def to_dict(self) -> dict:
        return {
            "year": self.year,
            "kg_hat": self.kg_hat,
            "price_hat": self.price_hat,
            "kg_clamped": self.kg_clamped,
            "price_clamped": self.price_clamped,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastPoint":
        return cls(
            year=int(d["year"]),
            kg_hat=float(d["kg_hat"]),
            price_hat=float(d["price_hat"]),
            kg_clamped=bool(d["kg_clamped"]),
            price_clamped=bool(d["price_clamped"]),
        )


def forecast_linear(series: AnnualSeries, horizon_year: int = 2030) -> list[ForecastPoint]:
    """Extrapolate kg and unit price to the horizon with independent OLS fits.

    Emits one point per year from the last observed year through the horizon
    inclusive, so the first point is the fitted value at the boundary (no
    extrapolation drift there).  Negative projections are floored at 0 and
    the point flagged clamped; the flag is set whenever the fitted value sits
    at or below the floor.
    """
    if len(series.points) < 2:
        raise InsufficientDataError(
            f"{series.hs_code}: forecast needs >= 2 points, have {len(series.points)}",
            hs_code=series.hs_code,
        )
    priced = [p for p in series.points if p.unit_price is not None]
    if len(priced) < 2:
        raise InsufficientDataError(
            f"{series.hs_code}: forecast needs >= 2 priced points, have {len(priced)}",
            hs_code=series.hs_code,
        )
    last_year = max(p.year for p in series.points)
    if horizon_year < last_year:
        raise ConfigError(
            f"horizon {horizon_year} precedes last observed year {last_year}"
        )
    first_year = min(p.year for p in series.points)
    kg_slope, kg_b = ols_fit([p.year - first_year for p in series.points], [p.kg for p in series.points])
    pr_slope, pr_b = ols_fit([p.year - first_year for p in priced], [p.unit_price for p in priced])

    out = []
    for year in range(last_year, horizon_year + 1):
        idx = year - first_year
        kg_fit = kg_b + kg_slope * idx
        pr_fit = pr_b + pr_slope * idx
        out.append(
            ForecastPoint(
                year=year,
                kg_hat=max(0.0, kg_fit),
                price_hat=max(0.0, pr_fit),
                kg_clamped=kg_fit <= 0.0,
                price_clamped=pr_fit <= 0.0,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Basel PIC overlap


@dataclass(frozen=True)
class BaselInfo:
    """Overlap of one HS code with the Basel PIC categories Y48 and A3210."""

    y48: str  # likely | possible | no
    a3210: bool
    note: str

    def to_dict(self) -> dict:
        return {"y48": self.y48, "a3210": self.a3210, "note": self.note}

    @classmethod
    def from_dict(cls, d: dict) -> "BaselInfo":
        return cls(y48=str(d["y48"]), a3210=bool(d["a3210"]), note=str(d["note"]))


UNMAPPED_BASEL = BaselInfo(y48="no", a3210=False, note="unmapped")


def _read_package_csv(name: str) -> list[dict]:
    text = resources.files("scrapsig").joinpath(f"data/{name}").read_text(encoding="utf-8")
    return list(csv.DictReader(io.StringIO(text)))


def load_basel_table(path: str | Path | None = None) -> dict[str, BaselInfo]:
    """Basel mapping keyed by 6-digit HS code; bundled table when no path."""
    if path is None:
        rows = _read_package_csv("basel_pic.csv")
    else:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    table = {}
    for row in rows:
        code = row["hs_code"].strip()
        y48 = row["y48"].strip().lower()
        if y48 not in Y48_LEVELS:
            raise DataError(f"basel table: bad y48 value {y48!r} for {code}")
        table[code] = BaselInfo(
            y48=y48,
            a3210=row["a3210"].strip().lower() == "true",
            note=row["note"].strip(),
        )
    return table


def basel_overlap(hs_code: str, table: dict[str, BaselInfo] | None = None) -> BaselInfo:
    """Lookup by the code's 6-digit heading; unknown codes map to no overlap."""
    if table is None:
        table = load_basel_table()
    return table.get(str(hs_code).strip()[:6], UNMAPPED_BASEL)


# ---------------------------------------------------------------------------
# tariffs and duty gap


def _money(x) -> Fraction:
    """Exact rational for a monetary quantity.

    Floats are read through their shortest decimal representation, so a rate
    written 0.34 means exactly 34/100 rather than its binary neighbour.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ConfigError(f"monetary value must be finite, got {x}")
        return Fraction(str(x))
    return Fraction(x)


@dataclass(frozen=True)
class TariffTable:
    """Ad-valorem rate bands keyed by HS prefix; longest prefix wins.

    Rates are held as exact fractions so band arithmetic never accumulates
    rounding error; only final duty-gap endpoints are floats.
    """

    rates: dict[str, tuple[Fraction, Fraction]]

    def __post_init__(self):
        exact = {}
        for prefix, (lo, hi) in self.rates.items():
            if not prefix.isdigit():
                raise ConfigError(f"tariff prefix {prefix!r} is not numeric")
            lo, hi = _money(lo), _money(hi)
            if not (0 <= lo <= hi <= 1):
                raise ConfigError(
                    f"tariff band for {prefix} must satisfy 0 <= lo <= hi <= 1, got ({lo}, {hi})"
                )
            exact[prefix] = (lo, hi)
        object.__setattr__(self, "rates", exact)

    def resolve(self, hs_code: str) -> tuple[str, tuple[Fraction, Fraction]]:
        """Longest prefix of the code present in the table."""
        code = str(hs_code).strip()
        for cut in range(len(code), 1, -1):
            prefix = code[:cut]
            if prefix in self.rates:
                return prefix, self.rates[prefix]
        raise DataError(f"no tariff rate for any prefix of {code}")

    @classmethod
    def default(cls) -> "TariffTable":
        return cls._from_rows(_read_package_csv("tariffs.csv"))

    @classmethod
    def from_csv(cls, path: str | Path) -> "TariffTable":
        with open(path, newline="", encoding="utf-8") as fh:
            return cls._from_rows(list(csv.DictReader(fh)))

    @classmethod
    def _from_rows(cls, rows: list[dict]) -> "TariffTable":
        rates = {}
        for row in rows:
            try:
                band = (Fraction(row["rate_lo"].strip()), Fraction(row["rate_hi"].strip()))
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(f"tariff rate for {row['hs_prefix']}: {exc}") from exc
            rates[row["hs_prefix"].strip()] = band
        return cls(rates=rates)


def duty_gap(
    declared_code: str,
    true_code: str,
    customs_value_usd: float,
    tariff_table: TariffTable,
) -> tuple[float, float]:
    """Band of duty evaded by declaring under the wrong code.

    Worst case pairs the highest true rate with the lowest declared rate and
    vice versa.  Codes resolving to the same prefix carry the same (possibly
    banded) rate, so the gap is identically zero rather than the spurious
    symmetric band the endpoint arithmetic would produce.  Negative values
    mean the declared rate was the higher one.
    """
    if customs_value_usd < 0:
        raise ConfigError(f"customs value must be >= 0, got {customs_value_usd}")
    declared_prefix, (declared_lo, declared_hi) = tariff_table.resolve(declared_code)
    true_prefix, (true_lo, true_hi) = tariff_table.resolve(true_code)
    if declared_prefix == true_prefix:
        return (0.0, 0.0)
    value = _money(customs_value_usd)
    return (
        float((true_lo - declared_hi) * value),
        float((true_hi - declared_lo) * value),
    )


# ---------------------------------------------------------------------------
# container dilution model


@dataclass(frozen=True)
class DilutionScenario:
    """Consignment where some containers hold scrap declared as virgin resin."""

    n_containers: int
    n_poisoned: int
    kg_per_container: float
    declared_price: float  # USD/kg
    scrap_price: float  # USD/kg

    def __post_init__(self):
        if self.n_containers < 0:
            raise ConfigError("n_containers must be >= 0")
        if not (0 <= self.n_poisoned <= self.n_containers):
            raise ConfigError(
                f"n_poisoned must lie in [0, {self.n_containers}], got {self.n_poisoned}"
            )
        for name in ("kg_per_container", "declared_price", "scrap_price"):
            v = getattr(self, name)
            if isinstance(v, float) and not math.isfinite(v):
                raise ConfigError(f"{name} must be finite, got {v}")
            if v < 0:
                raise ConfigError(f"{name} must be >= 0, got {v}")


def dilution_model(scenario: DilutionScenario) -> dict:
    """Value overstated by a partially poisoned consignment.

    All arithmetic is exact: inputs become rationals (floats via their
    decimal representation, so $0.50 is exactly half a dollar) and the
    blended price is the convex combination declared + w * (scrap - declared)
    with w = poisoned mass fraction.  The returned values are Fractions,
    hence the conservation identity actual_value == blended_price * total_kg
    holds exactly, not merely to rounding; callers wanting floats convert at
    the edge.
    """
    kg_pc = _money(scenario.kg_per_container)
    declared_price = _money(scenario.declared_price)
    scrap_price = _money(scenario.scrap_price)
    total_kg = scenario.n_containers * kg_pc
    if total_kg == 0:
        raise DataError("blended price undefined: consignment has zero mass")
    poisoned_kg = scenario.n_poisoned * kg_pc
    w = poisoned_kg / total_kg
    blended_price = declared_price + w * (scrap_price - declared_price)
    declared_value = declared_price * total_kg
    actual_value = blended_price * total_kg
    overstatement = declared_value - actual_value
    return {
        "total_kg": total_kg,
        "poisoned_kg": poisoned_kg,
        "declared_value": declared_value,
        "actual_value": actual_value,
        "blended_price": blended_price,
        "overstatement_usd": overstatement,
        "overstatement_fraction": overstatement / declared_value if declared_value > 0 else Fraction(0),
    }


# ---------------------------------------------------------------------------
# watchlist


@dataclass(frozen=True)
class DutyContext:
    """Inputs the watchlist needs to price each code's misdeclaration."""

    tariff_table: TariffTable
    customs_values: dict[str, float]  # hs_code -> window customs value, USD
    scrap_code: str = "3915"


@dataclass
class WatchlistEntry:
    hs_code: str
    archetype: str
    signature: bool
    strong_signature: bool
    anomaly_years: list[int]
    forecast: list[ForecastPoint]
    basel: BaselInfo
    duty_gap_usd: float  # band high; headline number
    duty_gap_band: tuple[float, float]
    risk_rank: int
    rank_key: dict

    def to_dict(self) -> dict:
        return {
            "hs_code": self.hs_code,
            "archetype": self.archetype,
            "signature": self.signature,
            "strong_signature": self.strong_signature,
            "anomaly_years": list(self.anomaly_years),
            "forecast": [p.to_dict() for p in self.forecast],
            "basel": self.basel.to_dict(),
            "duty_gap_usd": self.duty_gap_usd,
            "duty_gap_band": list(self.duty_gap_band),
            "risk_rank": self.risk_rank,
            "rank_key": dict(self.rank_key),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WatchlistEntry":
        return cls(
            hs_code=str(d["hs_code"]),
            archetype=str(d["archetype"]),
            signature=bool(d["signature"]),
            strong_signature=bool(d["strong_signature"]),
            anomaly_years=[int(y) for y in d["anomaly_years"]],
            forecast=[ForecastPoint.from_dict(p) for p in d["forecast"]],
            basel=BaselInfo.from_dict(d["basel"]),
            duty_gap_usd=float(d["duty_gap_usd"]),
            duty_gap_band=(float(d["duty_gap_band"][0]), float(d["duty_gap_band"][1])),
            risk_rank=int(d["risk_rank"]),
            rank_key=dict(d["rank_key"]),
        )


def build_watchlist(
    segments: dict[str, str],
    signatures: dict[str, tuple[bool, bool]],
    anomalies: dict[str, list[int]],
    forecasts: dict[str, list[ForecastPoint]],
    basel: dict[str, BaselInfo],
    duty_context: DutyContext,
) -> list[WatchlistEntry]:
    """Fuse per-code views into one ranked list.

    Ranking is a lexicographic total order: signature desc, strong desc,
    anomaly count desc, archetype risk class (high-risk archetypes first),
    duty-gap band high desc, hs_code asc.  The compared key is stored on each
    entry so any pairwise ordering can be audited.  All inputs must cover
    exactly the same code universe.
    """
    universes = {
        "segments": set(segments),
        "signatures": set(signatures),
        "anomalies": set(anomalies),
        "forecasts": set(forecasts),
        "basel": set(basel),
        "customs_values": set(duty_context.customs_values),
    }
    full = set.union(*universes.values())
    problems = []
    for name, keys in universes.items():
        missing = full - keys
        if missing:
            problems.append(f"{name} missing {sorted(missing)}")
    if problems:
        raise DataError("watchlist inputs disagree on the code universe: " + "; ".join(problems))

    entries = []
    for code in sorted(full):
        sig, strong = signatures[code]
        band = duty_gap(
            code, duty_context.scrap_code, duty_context.customs_values[code], duty_context.tariff_table
        )
        archetype = segments[code]
        n_anom = len(anomalies[code])
        rank_key = {
            "signature": sig,
            "strong_signature": strong,
            "anomaly_count": n_anom,
            "archetype_risk": 0 if archetype in HIGH_RISK_ARCHETYPES else 1,
            "duty_gap_hi": band[1],
            "hs_code": code,
        }
        entries.append(
            WatchlistEntry(
                hs_code=code,
                archetype=archetype,
                signature=sig,
                strong_signature=strong,
                anomaly_years=sorted(anomalies[code]),
                forecast=list(forecasts[code]),
                basel=basel[code],
                duty_gap_usd=band[1],
                duty_gap_band=band,
                risk_rank=0,
                rank_key=rank_key,
            )
        )

    entries.sort(
        key=lambda e: (
            not e.rank_key["signature"],
            not e.rank_key["strong_signature"],
            -e.rank_key["anomaly_count"],
            e.rank_key["archetype_risk"],
            -e.rank_key["duty_gap_hi"],
            e.rank_key["hs_code"],
        )
    )
    for i, entry in enumerate(entries):
        entry.risk_rank = i + 1
    return entries


# ---------------------------------------------------------------------------
# report rendering


CSV_COLUMNS = [
    "risk_rank",
    "hs_code",
    "archetype",
    "signature",
    "strong_signature",
    "n_anomalies",
    "anomaly_years",
    "duty_gap_lo_usd",
    "duty_gap_hi_usd",
    "basel_y48",
    "basel_a3210",
    "forecast_year",
    "forecast_kg",
    "forecast_price",
]


def _meta_comment(metadata: dict | None) -> str:
    """Flat `k=v` rendering of the metadata block for comment headers."""
    if not metadata:
        return ""
    block = metadata.get("metadata", metadata)
    if not isinstance(block, dict):
        return ""
    return " ".join(f"{k}={block[k]}" for k in sorted(block))


def watchlist_to_json(watchlist: list[WatchlistEntry], metadata: dict | None = None) -> str:
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(metadata or {})
    doc["entries"] = [e.to_dict() for e in watchlist]
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def watchlist_from_json(text: str) -> tuple[list[WatchlistEntry], dict]:
    doc = json.loads(text)
    entries = [WatchlistEntry.from_dict(d) for d in doc.pop("entries")]
    return entries, doc


def _watchlist_csv(watchlist: list[WatchlistEntry]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_COLUMNS)
    for e in watchlist:
        tail = e.forecast[-1] if e.forecast else None
        writer.writerow(
            [
                e.risk_rank,
                e.hs_code,
                e.archetype,
                str(e.signature).lower(),
                str(e.strong_signature).lower(),
                len(e.anomaly_years),
                ";".join(str(y) for y in e.anomaly_years),
                repr(e.duty_gap_band[0]),
                repr(e.duty_gap_band[1]),
                e.basel.y48,
                str(e.basel.a3210).lower(),
                tail.year if tail else "",
                repr(tail.kg_hat) if tail else "",
                repr(tail.price_hat) if tail else "",
            ]
        )
    return buf.getvalue()


def render_report(
    watchlist: list[WatchlistEntry],
    formats: list[str],
    out_dir: str | Path,
    series: dict[str, AnnualSeries] | None = None,
    features: dict[str, FeatureVector] | None = None,
    metadata: dict | None = None,
) -> list[Path]:
    """Write the watchlist as JSON dossiers, flat CSV, and/or SVG charts.

    SVG output needs the raw series (observed lines, anomaly markers) and the
    feature vectors (segment scatter); per-code charts are emitted for
    signature-flagged entries only.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt not in ("json", "csv", "svg"):
            raise ConfigError(f"unknown report format {fmt!r}")
    comment = _meta_comment(metadata)

    if "json" in formats:
        path = out_dir / "watchlist.json"
        path.write_text(watchlist_to_json(watchlist, metadata), encoding="utf-8")
        written.append(path)
    if "csv" in formats:
        path = out_dir / "watchlist.csv"
        body = _watchlist_csv(watchlist)
        if comment:
            body = f"# {comment}\n{body}"
        path.write_text(body, encoding="utf-8")
        written.append(path)
    if "svg" in formats:
        if series is None or features is None:
            raise ConfigError("svg rendering requires series and features")
        by_arch = {e.hs_code: e.archetype for e in watchlist}
        pts = [
            (fv.avg_kg, fv.avg_price, by_arch.get(code, "unsegmented"))
            for code, fv in sorted(features.items())
        ]
        path = out_dir / "segments_scatter.svg"
        path.write_text(_stamp_svg(scatter_loglog(pts, title="Archetype segments"), comment), encoding="utf-8")
        written.append(path)
        for entry in watchlist:
            if not entry.signature:
                continue
            s = series[entry.hs_code]
            observed = [(p.year, p.kg, p.unit_price) for p in s.points]
            fc = [(p.year, p.kg_hat, p.price_hat) for p in entry.forecast[1:]]
            path = out_dir / f"code_{entry.hs_code}.svg"
            chart = dual_axis_chart(
                observed,
                forecast=fc,
                anomaly_years=entry.anomaly_years,
                title=f"HS {entry.hs_code} ({entry.archetype})",
            )
            path.write_text(_stamp_svg(chart, comment), encoding="utf-8")
            written.append(path)
    return written


def _stamp_svg(svg_text: str, comment: str) -> str:
    if not comment:
        return svg_text
    head, rest = svg_text.split("\n", 1)
    return f"{head}\n<!-- {comment} -->\n{rest}"
