"""Shared fixtures: synthetic corpora are expensive, so build them once."""

import pytest

from scrapsig.features import compute_features, zscore_normalize
from scrapsig.ingest import AnnualSeries, SeriesPoint
from scrapsig.synth import generate_archetype_corpus, generate_signature_corpus


def make_series(code, rows):
    """AnnualSeries from (year, kg, price) rows; price None keeps kg-only years."""
    points = []
    for year, kg, price in rows:
        usd = kg * price if price is not None else 0.0
        points.append(SeriesPoint(year=year, kg=kg, usd=usd, unit_price=price))
    return AnnualSeries(hs_code=code, points=points)


@pytest.fixture(scope="session")
def archetype_corpus():
    return generate_archetype_corpus(32, seed=7)


@pytest.fixture(scope="session")
def archetype_matrix(archetype_corpus):
    return zscore_normalize([compute_features(s) for s in archetype_corpus.series])


@pytest.fixture(scope="session")
def archetype_labels(archetype_corpus, archetype_matrix):
    return [archetype_corpus.labels[code] for code in archetype_matrix.rows]


@pytest.fixture(scope="session")
def signature_corpus():
    return generate_signature_corpus(n_clean=40, n_poisoned=10, seed=0)
