import json
import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scrapsig.errors import ConfigError, DataError, InsufficientDataError
from scrapsig.features import compute_features
from scrapsig.risk import (
    UNMAPPED_BASEL,
    BaselInfo,
    DilutionScenario,
    DutyContext,
    ForecastPoint,
    TariffTable,
    WatchlistEntry,
    basel_overlap,
    build_watchlist,
    detect_signature_codes,
    dilution_model,
    duty_gap,
    forecast_linear,
    load_basel_table,
    render_report,
    watchlist_from_json,
    watchlist_to_json,
)
from tests.conftest import make_series


class TestDetectSignatureCodes:
    def test_worked_example_strong(self):
        series = {"390210": make_series("390210", [(2020, 100, 3.0), (2021, 200, 2.0), (2022, 300, 1.0)])}
        # fitted endpoints move +200% in kg, -66% in price
        assert detect_signature_codes(series) == [("390210", True, True)]

    def test_flat_price_is_not_a_signature(self):
        series = {"390210": make_series("390210", [(2020, 100, 2.0), (2021, 200, 2.0), (2022, 300, 2.0)])}
        assert detect_signature_codes(series) == [("390210", False, False)]

    def test_weak_signature_below_thresholds(self):
        # price declines 1% over the window: directionally right, economically negligible
        rows = [(2020 + i, 100.0 + i, 2.0 - 0.005 * i) for i in range(5)]
        out = detect_signature_codes({"390210": make_series("390210", rows)})
        assert out == [("390210", True, False)]

    def test_threshold_boundary_inclusive(self):
        # dyadic values keep the fitted changes exact: kg +12.5%, price -25%
        rows = [(2020 + i, 1000.0 + 31.25 * i, 2.0 - 0.125 * i) for i in range(5)]
        out = detect_signature_codes({"390210": make_series("390210", rows)}, strong_thresholds=(0.25, 0.125))
        assert out[0][2] is True

    def test_custom_thresholds(self):
        rows = [(2020 + i, 100.0 + 10 * i, 2.0 - 0.01 * i) for i in range(5)]
        series = {"390210": make_series("390210", rows)}
        assert detect_signature_codes(series, strong_thresholds=(0.01, 0.01))[0][2] is True
        assert detect_signature_codes(series, strong_thresholds=(0.5, 0.5))[0][2] is False

    def test_negative_thresholds_rejected(self):
        series = {"390210": make_series("390210", [(2020, 1, 1.0), (2021, 2, 0.5)])}
        with pytest.raises(ConfigError):
            detect_signature_codes(series, strong_thresholds=(-0.1, 0.1))

    def test_nonpositive_fitted_start_never_strong(self):
        # kg fit at the window start is negative; relative growth is undefined
        rows = [(2020, 0.0, 3.0), (2021, 1.0, 2.5), (2022, 50.0, 2.0), (2023, 200.0, 1.0)]
        out = detect_signature_codes({"390210": make_series("390210", rows)})
        assert out == [("390210", True, False)]

    def test_sorted_by_code(self):
        mk = lambda c: make_series(c, [(2020, 1, 1.0), (2021, 2, 1.0)])
        out = detect_signature_codes({c: mk(c) for c in ("391590", "390210", "390410")})
        assert [c for c, _, _ in out] == ["390210", "390410", "391590"]


class TestForecastLinear:
    def test_exact_linear_kg(self):
        series = make_series("390210", [(2020, 100, 5.0), (2021, 200, 5.0), (2022, 300, 5.0)])
        points = forecast_linear(series, horizon_year=2030)
        assert points[0].year == 2022 and points[-1].year == 2030
        assert points[-1].kg_hat == pytest.approx(1100.0, abs=1e-9)
        assert not points[-1].kg_clamped

    def test_price_floor_and_clamp_flag(self):
        rows = [(2020, 10, 2.0), (2021, 10, 1.5), (2022, 10, 1.0)]  # slope -0.5 from 2.0
        points = forecast_linear(make_series("390210", rows), horizon_year=2027)
        by_year = {p.year: p for p in points}
        assert by_year[2023].price_hat == pytest.approx(0.5)
        assert by_year[2024].price_hat == 0.0 and by_year[2024].price_clamped
        assert all(by_year[y].price_hat == 0.0 and by_year[y].price_clamped for y in range(2024, 2028))

    def test_constant_series_forecasts_mean(self):
        series = make_series("390210", [(2020 + i, 400.0, 2.5) for i in range(4)])
        points = forecast_linear(series, horizon_year=2030)
        assert all(p.kg_hat == pytest.approx(400.0) and p.price_hat == pytest.approx(2.5) for p in points)

    def test_boundary_horizon_reproduces_fit(self):
        series = make_series("390210", [(2020, 100, 5.0), (2021, 220, 4.0), (2022, 290, 3.5)])
        only = forecast_linear(series, horizon_year=2022)
        assert len(only) == 1
        fv = compute_features(series)
        # fitted value at the last year index: mean + slope * (x - xbar)
        assert only[0].kg_hat == pytest.approx(fv.avg_kg + fv.kg_trend * 1.0, rel=1e-12)

    def test_errors(self):
        with pytest.raises(InsufficientDataError):
            forecast_linear(make_series("390210", [(2020, 1, 1.0)]))
        with pytest.raises(InsufficientDataError):
            forecast_linear(make_series("390210", [(2020, 1, 1.0), (2021, 0.0, None)]))
        good = make_series("390210", [(2020, 1, 1.0), (2021, 2, 1.0)])
        with pytest.raises(ConfigError):
            forecast_linear(good, horizon_year=2019)

    def test_point_round_trip(self):
        point = ForecastPoint(2030, 12.5, 0.0, False, True)
        assert ForecastPoint.from_dict(point.to_dict()) == point


class TestBasel:
    def test_bundled_table_rows(self):
        table = load_basel_table()
        assert table["390210"] == BaselInfo("likely", False, "Often used to disguise mixed scrap.")
        assert table["392690"].y48 == "possible" and not table["392690"].a3210
        assert table["390410"] == BaselInfo("no", True, "PVC is explicitly listed under A3210")
        assert table["390729"].y48 == "no" and "price manipulation" in table["390729"].note
        assert table["392020"].y48 == "likely" and not table["392020"].a3210
        assert len(table) == 5

    def test_eight_digit_code_resolves_by_heading(self):
        assert basel_overlap("39021000") == basel_overlap("390210")

    def test_unmapped_code(self):
        assert basel_overlap("999999") == UNMAPPED_BASEL

    def test_custom_file_and_validation(self, tmp_path):
        path = tmp_path / "basel.csv"
        path.write_text("hs_code,y48,a3210,note\n390110,LIKELY,TRUE,custom\n")
        table = load_basel_table(path)
        assert table["390110"] == BaselInfo("likely", True, "custom")
        bad = tmp_path / "bad.csv"
        bad.write_text("hs_code,y48,a3210,note\n390110,maybe,false,x\n")
        with pytest.raises(DataError):
            load_basel_table(bad)


class TestTariffTable:
    def test_longest_prefix_wins(self):
        table = TariffTable(rates={"39": (0.05, 0.05), "3915": (0.34, 0.34)})
        assert table.resolve("391530")[0] == "3915"
        assert table.resolve("390210")[0] == "39"

    def test_unknown_code(self):
        with pytest.raises(DataError):
            TariffTable(rates={"3915": (0.34, 0.34)}).resolve("870321")

    def test_rates_exact_fractions(self):
        table = TariffTable.default()
        assert table.resolve("390210")[1] == (Fraction(8, 100), Fraction(11, 100))
        assert table.resolve("391590")[1] == (Fraction(34, 100), Fraction(34, 100))

    def test_band_validation(self):
        with pytest.raises(ConfigError):
            TariffTable(rates={"39": (0.2, 0.1)})
        with pytest.raises(ConfigError):
            TariffTable(rates={"39": (-0.1, 0.1)})
        with pytest.raises(ConfigError):
            TariffTable(rates={"39": (0.5, 1.5)})
        with pytest.raises(ConfigError):
            TariffTable(rates={"39x": (0.1, 0.1)})

    def test_from_csv(self, tmp_path):
        path = tmp_path / "tariffs.csv"
        path.write_text("hs_prefix,rate_lo,rate_hi\n39,0.05,0.07\n")
        assert TariffTable.from_csv(path).resolve("390210")[1] == (Fraction(1, 20), Fraction(7, 100))


class TestDutyGap:
    def test_worked_band(self):
        gap = duty_gap("390210", "391590", 100_000.0, TariffTable.default())
        assert gap == (23_000.0, 26_000.0)

    def test_same_resolved_prefix_is_zero(self):
        table = TariffTable.default()
        assert duty_gap("390210", "390210", 5e6, table) == (0.0, 0.0)
        assert duty_gap("390210", "390299", 5e6, table) == (0.0, 0.0)

    def test_zero_value(self):
        assert duty_gap("390210", "391590", 0.0, TariffTable.default()) == (0.0, 0.0)

    def test_negative_value_rejected(self):
        with pytest.raises(ConfigError):
            duty_gap("390210", "391590", -1.0, TariffTable.default())

    @given(st.floats(0, 1e9, allow_nan=False), st.sampled_from(["390210", "391590", "390410", "392602"]), st.sampled_from(["390210", "391590", "390761"]))
    @settings(max_examples=60, deadline=None)
    def test_antisymmetry(self, value, a, b):
        table = TariffTable.default()
        lo, hi = duty_gap(a, b, value, table)
        rlo, rhi = duty_gap(b, a, value, table)
        assert (rlo, rhi) == (-hi, -lo)

    def test_scales_linearly_in_value(self):
        # the band is computed in exact rationals, so scaling only wobbles at
        # the final float rounding
        table = TariffTable.default()
        lo, hi = duty_gap("390210", "391590", 1.0, table)
        lo9, hi9 = duty_gap("390210", "391590", 9.0, table)
        assert lo9 == pytest.approx(9 * lo, rel=1e-12)
        assert hi9 == pytest.approx(9 * hi, rel=1e-12)


class TestDilutionModel:
    def test_worked_example_exact(self):
        scenario = DilutionScenario(
            n_containers=10, n_poisoned=2, kg_per_container=20_000.0, declared_price=5.0, scrap_price=0.5
        )
        result = dilution_model(scenario)
        assert result["declared_value"] == 1_000_000
        assert result["actual_value"] == 820_000
        assert result["blended_price"] == Fraction(41, 10)
        assert result["overstatement_usd"] == 180_000
        assert result["overstatement_fraction"] == Fraction(9, 50)

    def test_zero_poisoned(self):
        result = dilution_model(DilutionScenario(10, 0, 1000.0, 3.25, 0.5))
        assert result["blended_price"] == Fraction("3.25")
        assert result["overstatement_usd"] == 0

    def test_fully_poisoned(self):
        result = dilution_model(DilutionScenario(10, 10, 1000.0, 3.25, 0.5))
        assert result["blended_price"] == Fraction(1, 2)

    def test_conservation_identity_exact(self):
        result = dilution_model(DilutionScenario(7, 3, 1234.5, 4.99, 0.37))
        assert result["actual_value"] == result["blended_price"] * result["total_kg"]

    def test_guards(self):
        with pytest.raises(ConfigError):
            DilutionScenario(5, 6, 1000.0, 5.0, 0.5)
        with pytest.raises(ConfigError):
            DilutionScenario(5, -1, 1000.0, 5.0, 0.5)
        with pytest.raises(ConfigError):
            DilutionScenario(5, 1, 1000.0, -5.0, 0.5)
        with pytest.raises(ConfigError):
            DilutionScenario(5, 1, float("nan"), 5.0, 0.5)
        with pytest.raises(DataError):
            dilution_model(DilutionScenario(0, 0, 1000.0, 5.0, 0.5))

    @given(
        st.integers(1, 50),
        st.data(),
        st.floats(0.01, 1e5),
        st.floats(0.0, 100.0),
        st.floats(0.0, 100.0),
    )
    @settings(max_examples=80, deadline=None)
    def test_properties(self, n, data, kg_pc, declared, scrap):
        poisoned = data.draw(st.integers(0, n))
        result = dilution_model(DilutionScenario(n, poisoned, kg_pc, declared, scrap))
        blended = result["blended_price"]
        assert min(declared, scrap) - 1e-9 <= float(blended) <= max(declared, scrap) + 1e-9
        assert result["actual_value"] == blended * result["total_kg"]
        if poisoned < n and scrap < declared:
            more = dilution_model(DilutionScenario(n, poisoned + 1, kg_pc, declared, scrap))
            assert more["overstatement_usd"] >= result["overstatement_usd"]


def entry_inputs(flags):
    """Minimal aligned watchlist inputs; flags maps code -> (sig, strong, n_anomalies)."""
    segments, signatures, anomalies, forecasts, basel, customs = {}, {}, {}, {}, {}, {}
    for code, (sig, strong, n_anom) in flags.items():
        segments[code] = "HighVolumeCommodity" if code.startswith("3901") else "StableMidMarket"
        signatures[code] = (sig, strong)
        anomalies[code] = [2020 + i for i in range(n_anom)]
        forecasts[code] = [ForecastPoint(2030, 1.0, 1.0)]
        basel[code] = UNMAPPED_BASEL
        customs[code] = 1000.0
    context = DutyContext(tariff_table=TariffTable.default(), customs_values=customs)
    return segments, signatures, anomalies, forecasts, basel, context


class TestBuildWatchlist:
    def test_signature_and_anomalies_dominate(self):
        entries = build_watchlist(
            *entry_inputs(
                {
                    "390761": (True, False, 1),  # signature + anomaly
                    "390762": (True, False, 0),  # signature only
                    "390763": (False, False, 5),  # anomalies but no signature
                }
            )
        )
        assert [e.hs_code for e in entries] == ["390761", "390762", "390763"]
        assert [e.risk_rank for e in entries] == [1, 2, 3]

    def test_strong_breaks_signature_ties(self):
        entries = build_watchlist(
            *entry_inputs({"390761": (True, False, 3), "390762": (True, True, 0)})
        )
        assert [e.hs_code for e in entries] == ["390762", "390761"]

    def test_archetype_risk_class_breaks_count_ties(self):
        entries = build_watchlist(
            *entry_inputs({"390761": (False, False, 1), "390101": (False, False, 1)})
        )
        assert [e.archetype for e in entries] == ["HighVolumeCommodity", "StableMidMarket"]

    def test_no_flags_fall_back_to_code_order(self):
        codes = ["390763", "390761", "390765", "390762"]
        entries = build_watchlist(*entry_inputs({c: (False, False, 0) for c in codes}))
        assert [e.hs_code for e in entries] == sorted(codes)

    def test_shuffle_invariance(self):
        flags = {f"3907{i:02d}": (i % 2 == 0, i % 4 == 0, i % 3) for i in range(12)}
        base = build_watchlist(*entry_inputs(flags))
        shuffled = list(flags.items())
        random.Random(5).shuffle(shuffled)
        again = build_watchlist(*entry_inputs(dict(shuffled)))
        assert [e.to_dict() for e in base] == [e.to_dict() for e in again]

    def test_rank_key_stored_for_audit(self):
        entries = build_watchlist(*entry_inputs({"390761": (True, True, 2)}))
        key = entries[0].rank_key
        assert key["signature"] and key["strong_signature"]
        assert key["anomaly_count"] == 2 and key["hs_code"] == "390761"

    def test_orphan_code_rejected_with_input_name(self):
        segments, signatures, anomalies, forecasts, basel, context = entry_inputs(
            {"390761": (False, False, 0), "390762": (False, False, 0)}
        )
        del anomalies["390762"]
        with pytest.raises(DataError, match="anomalies.*390762"):
            build_watchlist(segments, signatures, anomalies, forecasts, basel, context)


class TestReportRendering:
    def make_watchlist(self):
        flags = {"390164": (True, True, 1), "390761": (False, False, 0)}
        segments, signatures, anomalies, forecasts, basel, context = entry_inputs(flags)
        forecasts["390164"] = [ForecastPoint(2024, 500.0, 2.0), ForecastPoint(2025, 600.0, 1.8)]
        return build_watchlist(segments, signatures, anomalies, forecasts, basel, context)

    def series_and_features(self):
        rows_up = [(2020 + i, 100.0 * (i + 1), 3.0 - 0.5 * i) for i in range(5)]
        rows_flat = [(2020 + i, 50.0, 2.0) for i in range(5)]
        series = {"390164": make_series("390164", rows_up), "390761": make_series("390761", rows_flat)}
        features = {c: compute_features(s) for c, s in series.items()}
        return series, features

    def test_json_round_trip(self):
        watchlist = self.make_watchlist()
        text = watchlist_to_json(watchlist, metadata={"metadata": {"seed": 7}})
        entries, doc = watchlist_from_json(text)
        assert [e.to_dict() for e in entries] == [e.to_dict() for e in watchlist]
        assert doc["metadata"] == {"seed": 7}
        assert "schema_version" in doc

    def test_entry_round_trip(self):
        for entry in self.make_watchlist():
            assert WatchlistEntry.from_dict(json.loads(json.dumps(entry.to_dict()))).to_dict() == entry.to_dict()

    def test_empty_watchlist_files_valid(self, tmp_path):
        paths = render_report([], formats=["json", "csv"], out_dir=tmp_path)
        entries, _ = watchlist_from_json((tmp_path / "watchlist.json").read_text())
        assert entries == []
        header = (tmp_path / "watchlist.csv").read_text().splitlines()[0]
        assert header.startswith("risk_rank,hs_code,")
        assert len(paths) == 2

    def test_csv_contents(self, tmp_path):
        render_report(self.make_watchlist(), formats=["csv"], out_dir=tmp_path, metadata={"metadata": {"seed": 3}})
        lines = (tmp_path / "watchlist.csv").read_text().splitlines()
        assert lines[0] == "# seed=3"
        assert lines[1].split(",")[:3] == ["risk_rank", "hs_code", "archetype"]
        top = lines[2].split(",")
        assert top[0] == "1" and top[1] == "390164" and top[3] == "true"

    def test_svg_dashed_forecast_once_per_flagged_code(self, tmp_path):
        series, features = self.series_and_features()
        render_report(
            self.make_watchlist(), formats=["svg"], out_dir=tmp_path, series=series, features=features
        )
        flagged = tmp_path / "code_390164.svg"
        assert flagged.exists()
        assert not (tmp_path / "code_390761.svg").exists()  # unflagged: no chart
        text = flagged.read_text()
        assert text.count("stroke-dasharray") == 1
        assert (tmp_path / "segments_scatter.svg").exists()

    def test_svg_requires_series_and_features(self, tmp_path):
        with pytest.raises(ConfigError):
            render_report(self.make_watchlist(), formats=["svg"], out_dir=tmp_path)

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            render_report([], formats=["pdf"], out_dir=tmp_path)
