"""Deterministic synthetic trade-data generator.

Series follow an additive trend model so OLS recovers the generating
parameters exactly when noise is zero; that makes every downstream stage
testable against closed-form ground truth. Poisoning moves mass between a
scrap donor and a premium code at scrap-level prices, which is precisely
the mechanism the signature detector is meant to catch.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .ingest import COMTRADE_MAPPING, AnnualSeries, SeriesPoint

PRICE_FLOOR = 0.01

ARCHETYPE_TEMPLATES = {
    # Each archetype owns a distinct direction of the feature space so the
    # four clusters stay separable: volume level for the high-volume
    # commodity, price level for the niche, volume growth for the emerging
    # commodity, and near-zero volatility for the stable mid market. The
    # niche drifts upward in a narrow, fairly steep band: that widens the
    # spread of the price-trend column (so a flipped commodity code is not
    # an extreme outlier on it) while keeping niche codes tightly packed.
    # risk_drift is the downward drift magnitude for at-risk codes; None
    # marks archetypes that never carry the signature. Its floor stays
    # above 4 sigma of the OLS slope error at the matching noise level, so
    # the flipped sign is always recovered from a 10-year window.
    "HighVolumeCommodity": {
        "base_kg": (5.5e6, 6.5e6),
        "kg_growth_rel": (0.002, 0.004),
        "base_price": (1.4, 1.6),
        "price_drift": (0.0015, 0.0045),
        "risk_drift": (0.0011, 0.0018),
        "price_noise_abs": (0.0, 0.0),
        "kg_noise_rel": 0.004,
    },
    "EmergingCommodity": {
        "base_kg": (4.0e4, 5.0e4),
        "kg_growth_rel": (0.9, 1.1),
        "base_price": (1.6, 1.8),
        "price_drift": (0.0015, 0.0045),
        "risk_drift": (0.0011, 0.0018),
        "price_noise_abs": (0.0015, 0.0025),
        "kg_noise_rel": 0.02,
    },
    "StableMidMarket": {
        "base_kg": (8.5e5, 9.5e5),
        "kg_growth_rel": (-0.013, -0.007),
        "base_price": (3.8, 4.2),
        "price_drift": (0.0003, 0.0007),
        "risk_drift": None,
        "price_noise_abs": (0.0004, 0.0006),
        "kg_noise_rel": 0.0005,
    },
    "HighPriceNiche": {
        "base_kg": (5.2e5, 5.8e5),
        "kg_growth_rel": (-0.002, -0.0005),
        "base_price": (5.8, 6.4),
        "price_drift": (0.0035, 0.0045),
        "risk_drift": None,
        "price_noise_abs": (0.0015, 0.0025),
        "kg_noise_rel": 0.0005,
    },
}

ARCHETYPE_CODE_PREFIX = {
    "HighVolumeCommodity": "3901",
    "EmergingCommodity": "3902",
    "StableMidMarket": "3907",
    "HighPriceNiche": "3904",
}

DEFAULT_YEARS = range(2015, 2025)


@dataclass(frozen=True)
class SeriesSpec:
    hs_code: str
    years: tuple
    base_kg: float
    base_price: float
    kg_growth_per_year: float = 0.0
    price_drift_per_year: float = 0.0
    noise_sd_kg: float = 0.0
    noise_sd_price: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.base_kg <= 0:
            raise ConfigError("base_kg must be positive")
        if self.base_price <= 0:
            raise ConfigError("base_price must be positive")
        if self.noise_sd_kg < 0 or self.noise_sd_price < 0:
            raise ConfigError("noise standard deviations must be non-negative")
        if len(tuple(self.years)) == 0:
            raise ConfigError("years range is empty")


@dataclass(frozen=True)
class PoisonSpec:
    virgin_code: str
    scrap_code: str
    fraction_schedule: dict  # year -> fraction of scrap mass moved
    scrap_price: float

    def __post_init__(self):
        bad = {y: f for y, f in self.fraction_schedule.items() if not 0.0 <= f <= 1.0}
        if bad:
            raise ConfigError(f"fractions outside [0, 1]: {bad}")
        if self.scrap_price < 0:
            raise ConfigError("scrap_price must be non-negative")


def generate_series(spec: SeriesSpec) -> AnnualSeries:
    """kg(t) = base + growth*t + noise; price likewise, floored at 0.01.

    Noise is Gaussian from a generator seeded by spec.seed, so equal specs
    give identical series and zero noise gives an exactly linear series.
    """
    years = sorted(int(y) for y in spec.years)
    n = len(years)
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    # both streams are always drawn so kg values match across noise settings
    eps_kg = rng.normal(0.0, 1.0, n) * spec.noise_sd_kg
    eps_price = rng.normal(0.0, 1.0, n) * spec.noise_sd_price

    points = []
    for t, year in enumerate(years):
        kg = max(0.0, spec.base_kg + spec.kg_growth_per_year * t + eps_kg[t])
        price = max(PRICE_FLOOR, spec.base_price + spec.price_drift_per_year * t + eps_price[t])
        points.append(
            SeriesPoint(
                year=year,
                kg=kg,
                usd=kg * price,
                unit_price=price if kg > 0 else None,
            )
        )
    return AnnualSeries(hs_code=spec.hs_code, points=points)


def _transfer(point: SeriesPoint, d_kg: float, d_usd: float) -> SeriesPoint:
    kg = point.kg + d_kg
    usd = point.usd + d_usd
    return SeriesPoint(year=point.year, kg=kg, usd=usd, unit_price=usd / kg if kg > 0 else None)


def inject_misclassification(
    virgin: AnnualSeries, scrap: AnnualSeries, spec: PoisonSpec
) -> tuple[AnnualSeries, AnnualSeries]:
    """Move scheduled fractions of scrap mass into the virgin code.

    The moved mass is declared at scrap_price, so the virgin code's volume
    rises while its unit price is dragged down; kg and usd totals over the
    pair are conserved year by year.
    """
    if spec.virgin_code != virgin.hs_code or spec.scrap_code != scrap.hs_code:
        raise ConfigError(
            f"spec codes ({spec.virgin_code}, {spec.scrap_code}) do not match "
            f"series ({virgin.hs_code}, {scrap.hs_code})"
        )
    virgin_years = set(virgin.years())
    scrap_years = set(scrap.years())
    missing = [y for y in sorted(spec.fraction_schedule) if y not in virgin_years or y not in scrap_years]
    if missing:
        raise DataError(f"schedule years absent from one of the series: {missing}")

    poisoned = AnnualSeries(virgin.hs_code, list(virgin.points))
    depleted = AnnualSeries(scrap.hs_code, list(scrap.points))
    scrap_index = {p.year: i for i, p in enumerate(depleted.points)}
    for i, vp in enumerate(poisoned.points):
        frac = spec.fraction_schedule.get(vp.year, 0.0)
        if frac == 0.0:
            continue
        j = scrap_index[vp.year]
        sp = depleted.points[j]
        moved_kg = frac * sp.kg
        moved_usd = moved_kg * spec.scrap_price
        poisoned.points[i] = _transfer(vp, moved_kg, moved_usd)
        depleted.points[j] = _transfer(sp, -moved_kg, -moved_usd)
    return poisoned, depleted


@dataclass
class SynthCorpus:
    """Generated series plus the ground truth the generator knows."""

    series: list[AnnualSeries]
    labels: dict[str, str] = field(default_factory=dict)  # hs_code -> class
    at_risk: dict[str, bool] = field(default_factory=dict)

    def codes(self) -> list[str]:
        return [s.hs_code for s in self.series]


def _code_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=(index,)).generate_state(1)[0])


def generate_archetype_corpus(
    n_per_archetype: int,
    seed: int,
    years=DEFAULT_YEARS,
    at_risk_fraction: float = 0.1,
) -> SynthCorpus:
    """Four separable market archetypes with known labels.

    A fraction of each commodity archetype's codes carries the inverse
    price-volume signature (negative price drift); the stable and niche
    templates decline slightly in volume, so their codes can never carry
    it. At-risk codes draw their volume growth from the top quarter of the
    archetype range, mirroring how misdeclared mass inflates apparent
    growth. The fraction is kept small by default so flagged codes are a
    rarity the ranking stage has to surface, not the bulk of the corpus.
    """
    if n_per_archetype < 1:
        raise ConfigError("n_per_archetype must be >= 1")
    if not 0.0 <= at_risk_fraction <= 1.0:
        raise ConfigError("at_risk_fraction must lie in [0, 1]")

    corpus = SynthCorpus(series=[])
    index = 0
    for arch in sorted(ARCHETYPE_TEMPLATES):
        tpl = ARCHETYPE_TEMPLATES[arch]
        n_risky = round(n_per_archetype * at_risk_fraction) if tpl["risk_drift"] else 0
        for j in range(n_per_archetype):
            code_seed = _code_seed(seed, index)
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, 1)))
            at_risk = j < n_risky
            base_kg = rng.uniform(*tpl["base_kg"])
            base_price = rng.uniform(*tpl["base_price"])
            if at_risk:
                drift = -rng.uniform(*tpl["risk_drift"])
            else:
                drift = rng.uniform(*tpl["price_drift"])
            growth_lo, growth_hi = tpl["kg_growth_rel"]
            if at_risk:
                growth_lo = growth_lo + 0.75 * (growth_hi - growth_lo)
            spec = SeriesSpec(
                hs_code=f"{ARCHETYPE_CODE_PREFIX[arch]}{index:02d}",
                years=tuple(years),
                base_kg=base_kg,
                base_price=base_price,
                kg_growth_per_year=rng.uniform(growth_lo, growth_hi) * base_kg,
                price_drift_per_year=drift,
                noise_sd_kg=tpl["kg_noise_rel"] * base_kg,
                noise_sd_price=rng.uniform(*tpl["price_noise_abs"]),
                seed=code_seed,
            )
            corpus.series.append(generate_series(spec))
            corpus.labels[spec.hs_code] = arch
            corpus.at_risk[spec.hs_code] = at_risk
            index += 1
    return corpus


def generate_signature_corpus(
    n_clean: int = 40,
    n_poisoned: int = 10,
    seed: int = 0,
    years=DEFAULT_YEARS,
    noise_frac: float = 0.0,
    max_fraction: float = 0.4,
) -> SynthCorpus:
    """Signature-detector oracle: clean codes plus ramp-poisoned codes.

    Clean codes always have a non-negative price drift, so with zero noise
    their price trend can never be negative. Poisoned codes start from a
    flat series and receive a linear injection ramp from 0 to max_fraction,
    which forces volume up and unit price down. `noise_frac` applies
    multiplicative Gaussian noise to the observed kg and price after
    poisoning.
    """
    yrs = sorted(int(y) for y in years)
    n_years = len(yrs)
    corpus = SynthCorpus(series=[])

    for i in range(n_clean):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i, 2)))
        base_kg = rng.uniform(2e5, 3e6)
        spec = SeriesSpec(
            hs_code=f"3926{i:02d}",
            years=tuple(yrs),
            base_kg=base_kg,
            base_price=rng.uniform(1.0, 6.0),
            kg_growth_per_year=rng.uniform(-0.05, 0.10) * base_kg,
            price_drift_per_year=rng.uniform(0.005, 0.05),
            seed=_code_seed(seed, i),
        )
        corpus.series.append(generate_series(spec))
        corpus.labels[spec.hs_code] = "clean"
        corpus.at_risk[spec.hs_code] = False

    ramp = {y: max_fraction * t / (n_years - 1) for t, y in enumerate(yrs)}
    for i in range(n_poisoned):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(n_clean + i, 2)))
        code = f"3915{i:02d}"
        virgin = generate_series(
            SeriesSpec(
                hs_code=code,
                years=tuple(yrs),
                base_kg=rng.uniform(5e5, 1.5e6),
                base_price=rng.uniform(4.0, 6.0),
                seed=_code_seed(seed, n_clean + i),
            )
        )
        donor_kg = rng.uniform(0.8, 1.2) * virgin.points[0].kg
        scrap = generate_series(
            SeriesSpec(
                hs_code="391590",
                years=tuple(yrs),
                base_kg=donor_kg,
                base_price=0.5,
                seed=_code_seed(seed, 10_000 + i),
            )
        )
        poisoned, _ = inject_misclassification(
            virgin, scrap, PoisonSpec(code, "391590", ramp, scrap_price=0.5)
        )
        corpus.series.append(poisoned)
        corpus.labels[code] = "poisoned"
        corpus.at_risk[code] = True

    if noise_frac > 0.0:
        noisy = []
        for idx, series in enumerate(corpus.series):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(idx, 3)))
            pts = []
            for p in series.points:
                kg = p.kg * (1.0 + rng.normal(0.0, noise_frac))
                price = (p.unit_price or 0.0) * (1.0 + rng.normal(0.0, noise_frac))
                kg = max(0.0, kg)
                price = max(PRICE_FLOOR, price)
                pts.append(SeriesPoint(year=p.year, kg=kg, usd=kg * price, unit_price=price if kg > 0 else None))
            noisy.append(AnnualSeries(series.hs_code, pts))
        corpus.series = noisy
    return corpus


DRIVER_CLASSES = {
    "price": {"low_price": (1.0, 2.0), "high_price": (6.0, 9.0)},
    "volume": {"low_volume": (5e4, 2e5), "high_volume": (3e6, 8e6)},
}


def generate_driver_corpus(driver: str, n_per_class: int = 64, seed: int = 0, years=DEFAULT_YEARS) -> SynthCorpus:
    """Two-class corpus whose classes differ only along one driver axis.

    driver="price" separates classes by price level with volume parameters
    shared; driver="volume" does the reverse. A classifier trained on it can
    only exploit the driver features, which pins the expected importance
    ranking.
    """
    if driver not in DRIVER_CLASSES:
        raise ConfigError(f"driver must be one of {sorted(DRIVER_CLASSES)}, got {driver!r}")
    corpus = SynthCorpus(series=[])
    index = 0
    for cls in sorted(DRIVER_CLASSES[driver]):
        lo, hi = DRIVER_CLASSES[driver][cls]
        for _ in range(n_per_class):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, 4)))
            if driver == "price":
                base_price = rng.uniform(lo, hi)
                base_kg = rng.uniform(5e5, 5e6)
            else:
                base_kg = rng.uniform(lo, hi)
                base_price = rng.uniform(1.0, 8.0)
            spec = SeriesSpec(
                hs_code=f"39{index:04d}",
                years=tuple(years),
                base_kg=base_kg,
                base_price=base_price,
                kg_growth_per_year=rng.uniform(-0.01, 0.02) * base_kg,
                price_drift_per_year=rng.uniform(-0.01, 0.02) * base_price,
                noise_sd_kg=0.01 * base_kg,
                noise_sd_price=0.01 * base_price,
                seed=_code_seed(seed, 20_000 + index),
            )
            corpus.series.append(generate_series(spec))
            corpus.labels[spec.hs_code] = cls
            index += 1
    return corpus


def corpus_to_csv(corpus: SynthCorpus, stream=None, reporter: str = "SYN", partner: str = "WLD") -> str | None:
    """Emit the corpus in the ingest CSV layout (one row per code-year)."""
    own = stream is None
    if own:
        stream = io.StringIO()
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow([COMTRADE_MAPPING[f] for f in ("hs_code", "year", "flow", "reporter", "partner", "value_usd", "mass_kg")])
    for series in corpus.series:
        for p in series.points:
            writer.writerow([series.hs_code, p.year, "M", reporter, partner, repr(float(p.usd)), repr(float(p.kg))])
    if own:
        return stream.getvalue()
    return None


def labels_to_csv(corpus: SynthCorpus, stream=None) -> str | None:
    """Ground-truth sidecar: hs_code, label, at_risk."""
    own = stream is None
    if own:
        stream = io.StringIO()
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["hs_code", "label", "at_risk"])
    for code in corpus.codes():
        writer.writerow([code, corpus.labels.get(code, ""), str(corpus.at_risk.get(code, False)).lower()])
    if own:
        return stream.getvalue()
    return None
