"""Pipeline orchestration as composable subcommands.

Each stage reads the previous stage's JSON artifact from the run directory
and writes its own, so any intermediate can be deleted and regenerated, and
global vs firm-level datasets become two run directories sharing code.  All
outputs embed {schema_version, stage, seed, config_hash} and contain no
timestamps: a rerun with identical inputs and configuration is byte
identical.

Exit codes: 0 success, 1 data errors, 2 configuration errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSION, __version__
from .anomaly import flag_year_anomalies
from .errors import ConfigError, DataError, ScrapsigError
from .features import (
    ALL_FEATURES,
    PRIMARY_FEATURES,
    FeatureVector,
    NormalizedMatrix,
    compute_features,
    zscore_normalize,
)
from .ingest import (
    COMTRADE_MAPPING,
    CleaningConfig,
    _normalize_flow,
    aggregate_annual,
    clean_pipeline,
    parse_records,
    series_from_dict,
    series_to_dict,
)
from .risk import (
    BaselInfo,
    DutyContext,
    ForecastPoint,
    TariffTable,
    basel_overlap,
    build_watchlist,
    detect_signature_codes,
    forecast_linear,
    load_basel_table,
    render_report,
)
from .segment import (
    HIGH_RISK_ARCHETYPES,
    KMeansModel,
    centroid_stats,
    elbow_scan,
    kmeans_fit,
    label_archetypes,
)
from .svgchart import hbar_chart
from .synth import (
    generate_archetype_corpus,
    generate_driver_corpus,
    generate_signature_corpus,
    corpus_to_csv,
    labels_to_csv,
)
from .trees import (
    evaluate,
    forest_fit,
    forest_from_dict,
    forest_to_dict,
    format_cv_table,
)
from .explain import ShapSummary, shapley_values

log = logging.getLogger(__name__)

CONFIG_ENV = "SCRAPSIG_CONFIG"

FEATURE_SETS = {"all8": None, "primary5": PRIMARY_FEATURES}

# artifact name -> (filename, producing subcommand)
ARTIFACTS = {
    "series": ("series.json", "ingest"),
    "features": ("features.json", "features"),
    "segments": ("segments.json", "segment"),
    "anomalies": ("anomalies.json", "detect-anomalies"),
    "model": ("model.json", "train"),
    "forecasts": ("forecasts.json", "forecast"),
}


@dataclass
class RunConfig:
    """Fully resolved run settings; hashed into every output's metadata."""

    # run
    out_dir: str = "run"
    seed: int = 0
    threads: int = 1
    input_path: str = "-"
    # ingest
    flow: str = "M"
    reporter: str = ""
    window_lo: int = 0  # 0 = derive from the data
    window_hi: int = 0
    max_missing_fraction: float = 0.20
    max_interp_gap: int = 1
    cap_lo: float = 0.01
    cap_hi: float = 0.99
    cap_scope: str = "pooled"
    base_year: int = 0
    cpi_file: str = ""
    # features
    feature_set: str = "all8"
    # segment
    k: int = 0  # 0 = accept the elbow recommendation
    k_min: int = 1
    k_max: int = 10
    # anomalies
    anomaly_mode: str = "per_code"
    anomaly_threshold: float = 0.6
    anomaly_trees: int = 100
    anomaly_psi: int = 256
    # classifier (train and evaluate)
    rf_trees: int = 100
    rf_max_depth: int = 0  # 0 = unlimited
    rf_min_samples_split: int = 2
    folds: int = 5
    # explain
    explain_sample: str = ""
    # forecast / watchlist
    horizon: int = 2030
    strong_price: float = 0.10
    strong_volume: float = 0.10
    scrap_code: str = "3915"
    tariffs_file: str = ""
    basel_file: str = ""
    report_formats: str = "json,csv,svg"
    # synth
    synth_mode: str = "archetypes"
    n_per_archetype: int = 32
    at_risk_fraction: float = 0.1
    n_clean: int = 40
    n_poisoned: int = 10
    noise_frac: float = 0.0
    driver: str = "price"
    n_per_class: int = 64


# INI (section, option) -> RunConfig field
INI_SCHEMA = {
    ("run", "out"): "out_dir",
    ("run", "seed"): "seed",
    ("run", "threads"): "threads",
    ("run", "input"): "input_path",
    ("ingest", "flow"): "flow",
    ("ingest", "reporter"): "reporter",
    ("ingest", "window_lo"): "window_lo",
    ("ingest", "window_hi"): "window_hi",
    ("ingest", "max_missing_fraction"): "max_missing_fraction",
    ("ingest", "max_interp_gap"): "max_interp_gap",
    ("ingest", "cap_lo"): "cap_lo",
    ("ingest", "cap_hi"): "cap_hi",
    ("ingest", "cap_scope"): "cap_scope",
    ("ingest", "base_year"): "base_year",
    ("ingest", "cpi_file"): "cpi_file",
    ("features", "set"): "feature_set",
    ("segment", "k"): "k",
    ("segment", "k_min"): "k_min",
    ("segment", "k_max"): "k_max",
    ("anomaly", "mode"): "anomaly_mode",
    ("anomaly", "threshold"): "anomaly_threshold",
    ("anomaly", "trees"): "anomaly_trees",
    ("anomaly", "psi"): "anomaly_psi",
    ("train", "trees"): "rf_trees",
    ("train", "max_depth"): "rf_max_depth",
    ("train", "min_samples_split"): "rf_min_samples_split",
    ("evaluate", "folds"): "folds",
    ("explain", "sample"): "explain_sample",
    ("forecast", "horizon"): "horizon",
    ("watchlist", "scrap_code"): "scrap_code",
    ("watchlist", "strong_price"): "strong_price",
    ("watchlist", "strong_volume"): "strong_volume",
    ("watchlist", "tariffs"): "tariffs_file",
    ("watchlist", "basel"): "basel_file",
    ("watchlist", "formats"): "report_formats",
    ("synth", "mode"): "synth_mode",
    ("synth", "archetypes"): "n_per_archetype",
    ("synth", "at_risk_fraction"): "at_risk_fraction",
    ("synth", "clean"): "n_clean",
    ("synth", "poisoned"): "n_poisoned",
    ("synth", "noise"): "noise_frac",
    ("synth", "driver"): "driver",
    ("synth", "n_per_class"): "n_per_class",
}

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def load_config_file(path: str | Path) -> dict:
    """INI file -> {field: value} with type coercion and typo rejection."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    overrides = {}
    for section in parser.sections():
        for option, raw in parser.items(section):
            field = INI_SCHEMA.get((section, option))
            if field is None:
                raise ConfigError(f"unknown config entry [{section}] {option}")
            overrides[field] = _coerce(field, raw)
    return overrides


def _coerce(field: str, raw: str):
    kind = _FIELD_TYPES[field]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return str(raw)
    except ValueError as exc:
        raise ConfigError(f"config value {field}={raw!r}: {exc}") from exc


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults <- config file (flag or env) <- explicit flags."""
    config = RunConfig()
    config_path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if config_path:
        for field, value in load_config_file(config_path).items():
            setattr(config, field, value)
    for f in dataclasses.fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(config, f.name, value)
    if config.threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {config.threads}")
    if config.feature_set not in FEATURE_SETS:
        raise ConfigError(f"feature set must be one of {sorted(FEATURE_SETS)}, got {config.feature_set!r}")
    return config


# excluded from the hash: locations and the worker cap cannot affect results
UNHASHED_FIELDS = ("out_dir", "input_path", "threads")


def config_hash(config: RunConfig) -> str:
    payload = dataclasses.asdict(config)
    for name in UNHASHED_FIELDS:
        payload.pop(name)
    canonical = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def metadata_block(config: RunConfig, stage: str, **extra) -> dict:
    meta = {
        "schema_version": SCHEMA_VERSION,
        "stage": stage,
        "seed": config.seed,
        "config_hash": config_hash(config),
    }
    meta.update(extra)
    return meta


def _meta_line(meta: dict) -> str:
    core = {k: meta[k] for k in ("schema_version", "stage", "seed", "config_hash")}
    return "# " + " ".join(f"{k}={v}" for k, v in core.items())


def write_json_artifact(path: Path, doc: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


def load_artifact(config: RunConfig, key: str) -> dict:
    filename, producer = ARTIFACTS[key]
    path = Path(config.out_dir) / filename
    if not path.exists():
        raise DataError(f"missing artifact {path}: produce it with `scrapsig {producer}`")
    return json.loads(path.read_text(encoding="utf-8"))


def _out(config: RunConfig) -> Path:
    path = Path(config.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# stages


def cmd_ingest(config: RunConfig) -> list[Path]:
    if config.input_path in ("", "-"):
        if sys.stdin.isatty():
            raise ConfigError("no input: pass --input PATH or pipe a CSV on stdin")
        stream = sys.stdin
    else:
        path = Path(config.input_path)
        if not path.exists():
            raise ConfigError(f"input file not found: {path}")
        stream = path.read_text(encoding="utf-8")

    result = parse_records(stream, COMTRADE_MAPPING)
    if not result.records:
        raise DataError("no valid trade records in input")
    if config.flow:
        try:
            flow = _normalize_flow(config.flow)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        flow = None
    series_set = aggregate_annual(result.records, flow=flow, reporter=config.reporter or None)
    if not series_set:
        raise DataError(f"no records match flow={config.flow!r} reporter={config.reporter!r}")
    years = [p.year for s in series_set for p in s.points]
    window = (
        config.window_lo or min(years),
        config.window_hi or max(years),
    )
    cleaning = CleaningConfig(
        max_missing_fraction=config.max_missing_fraction,
        max_interp_gap=config.max_interp_gap,
        cap_lo=config.cap_lo,
        cap_hi=config.cap_hi,
        cap_scope=config.cap_scope,
        base_year=config.base_year or None,
        cpi_index=_load_cpi(config.cpi_file),
    )
    cleaned, report = clean_pipeline(series_set, window, cleaning)
    if not cleaned:
        raise DataError("cleaning dropped every code; loosen --max-missing-fraction or the window")
    report["rejected_rows"] = result.n_rejected
    doc = {
        "metadata": metadata_block(config, "ingest", window=list(window), flow=config.flow),
        "report": report,
        "series": [series_to_dict(s) for s in sorted(cleaned, key=lambda s: s.hs_code)],
    }
    path = write_json_artifact(_out(config) / "series.json", doc)
    print(f"ingest: {report['codes_kept']}/{report['codes_in']} codes kept -> {path}")
    return [path]


def _load_cpi(path: str) -> dict[int, float] | None:
    if not path:
        return None
    if not Path(path).exists():
        raise ConfigError(f"cpi file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    try:
        return {int(r["year"]): float(r["deflator"]) for r in rows}
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"cpi file needs year,deflator columns: {exc}") from exc


def _load_series(config: RunConfig) -> dict:
    art = load_artifact(config, "series")
    return {d["hs_code"]: series_from_dict(d) for d in art["series"]}


def cmd_features(config: RunConfig) -> list[Path]:
    series = _load_series(config)
    vectors, skipped = [], {}
    for code in sorted(series):
        try:
            vectors.append(compute_features(series[code]))
        except ScrapsigError as exc:
            skipped[code] = str(exc)
            log.warning("features: skipping %s: %s", code, exc)
    if not vectors:
        raise DataError("no code has enough priced points to compute features")
    matrix = zscore_normalize(vectors, FEATURE_SETS[config.feature_set])
    doc = {
        "metadata": metadata_block(
            config, "features", feature_set=config.feature_set, columns=matrix.cols
        ),
        "features": {fv.hs_code: fv.as_dict() for fv in vectors},
        "matrix": matrix.to_dict(),
        "skipped": skipped,
    }
    path = write_json_artifact(_out(config) / "features.json", doc)
    print(f"features: {len(vectors)} vectors ({config.feature_set}) -> {path}")
    return [path]


def _load_matrix(config: RunConfig) -> tuple[NormalizedMatrix, dict]:
    art = load_artifact(config, "features")
    return NormalizedMatrix.from_dict(art["matrix"]), art


def cmd_segment(config: RunConfig) -> list[Path]:
    matrix, _ = _load_matrix(config)
    k_range = range(config.k_min, config.k_max + 1)
    curve, recommended = elbow_scan(matrix, k_range=k_range, seed=config.seed)
    chosen = config.k or recommended
    if not chosen:
        raise ConfigError("elbow scan made no recommendation; pass --k explicitly")
    # refit with the same spawned seed the scan used so inertia matches the curve
    k_seed = int(np.random.SeedSequence(config.seed, spawn_key=(chosen,)).generate_state(1)[0])
    model = kmeans_fit(matrix, chosen, seed=k_seed)
    stats = centroid_stats(model, matrix)
    if chosen == 4:
        labeling = label_archetypes(model, stats)
        archetypes = {code: labeling.labels[cid] for code, cid in model.assignments.items()}
        labeling_doc = labeling.to_dict()
    else:
        log.warning("k=%d: archetype names apply to k=4 only; using cluster ids", chosen)
        archetypes = {code: f"cluster{cid}" for code, cid in model.assignments.items()}
        labeling_doc = None
    doc = {
        "metadata": metadata_block(config, "segment", k=chosen, recommended_k=recommended),
        "elbow": {"curve": [[k, inertia] for k, inertia in curve], "recommended_k": recommended},
        "model": model.to_dict(),
        "labeling": labeling_doc,
        "archetypes": {code: archetypes[code] for code in sorted(archetypes)},
        "centroid_stats": {str(cid): stats[cid] for cid in sorted(stats)},
    }
    path = write_json_artifact(_out(config) / "segments.json", doc)
    print(f"segment: k={chosen} (elbow recommends {recommended}), inertia {model.inertia:.4g} -> {path}")
    return [path]


def cmd_detect_anomalies(config: RunConfig) -> list[Path]:
    series = _load_series(config)
    flags = flag_year_anomalies(
        list(series.values()),
        mode=config.anomaly_mode,
        threshold=config.anomaly_threshold,
        seed=config.seed,
        n_trees=config.anomaly_trees,
        psi=config.anomaly_psi,
    )
    anomaly_years: dict[str, list[int]] = {code: [] for code in series}
    for flag in flags:
        if flag.is_anomaly:
            anomaly_years[flag.hs_code].append(flag.year)
    for code in anomaly_years:
        anomaly_years[code].sort()
    doc = {
        "metadata": metadata_block(
            config, "detect-anomalies", mode=config.anomaly_mode, threshold=config.anomaly_threshold
        ),
        "anomaly_years": {code: anomaly_years[code] for code in sorted(anomaly_years)},
        "flags": [dataclasses.asdict(f) for f in flags],
    }
    path = write_json_artifact(_out(config) / "anomalies.json", doc)
    n_flagged = sum(1 for f in flags if f.is_anomaly)
    print(f"detect-anomalies: {n_flagged} flagged points across {len(series)} codes -> {path}")
    return [path]


def _training_set(config: RunConfig) -> tuple[NormalizedMatrix, list[str]]:
    matrix, _ = _load_matrix(config)
    segments = load_artifact(config, "segments")
    archetypes = segments["archetypes"]
    missing = [code for code in matrix.rows if code not in archetypes]
    if missing:
        raise DataError(f"segments.json lacks archetypes for {missing[:5]}; rerun `scrapsig segment`")
    return matrix, [archetypes[code] for code in matrix.rows]


def cmd_train(config: RunConfig) -> list[Path]:
    matrix, labels = _training_set(config)
    model = forest_fit(
        matrix.values,
        labels,
        n_trees=config.rf_trees,
        seed=config.seed,
        max_depth=config.rf_max_depth or None,
        min_samples_split=config.rf_min_samples_split,
        feature_names=matrix.cols,
    )
    doc = {
        "metadata": metadata_block(config, "train", n_trees=config.rf_trees, label_source="archetypes"),
        "forest": forest_to_dict(model),
    }
    path = write_json_artifact(_out(config) / "model.json", doc)
    print(f"train: forest of {config.rf_trees} trees on {len(matrix.rows)} rows -> {path}")
    return [path]


def cmd_evaluate(config: RunConfig) -> list[Path]:
    matrix, labels = _training_set(config)
    risk_map = {name: ("high" if name in HIGH_RISK_ARCHETYPES else "low") for name in set(labels)}
    report = evaluate(
        matrix.values,
        labels,
        k=config.folds,
        seed=config.seed,
        risk_map=risk_map,
        n_trees=config.rf_trees,
        max_depth=config.rf_max_depth or None,
        min_samples_split=config.rf_min_samples_split,
    )
    table = format_cv_table(report)
    meta = metadata_block(config, "evaluate", folds=config.folds)
    json_path = write_json_artifact(
        _out(config) / "evaluation.json", {"metadata": meta, "report": report.to_dict()}
    )
    txt_path = _out(config) / "evaluation.txt"
    txt_path.write_text(_meta_line(meta) + "\n" + table + "\n", encoding="utf-8")
    print(table)
    return [json_path, txt_path]


def cmd_explain(config: RunConfig) -> list[Path]:
    art = load_artifact(config, "model")
    model = forest_from_dict(art["forest"])
    matrix, _ = _load_matrix(config)
    if list(model.feature_names) != list(matrix.cols):
        raise DataError(
            f"model was trained on {model.feature_names}, features.json has {matrix.cols}; "
            "rerun `scrapsig train`"
        )
    if config.explain_sample:
        if config.explain_sample not in matrix.rows:
            raise DataError(f"sample {config.explain_sample} not in the feature matrix")
        codes = [config.explain_sample]
    else:
        codes = list(matrix.rows)
    row_of = {code: matrix.values[i] for i, code in enumerate(matrix.rows)}

    def one(code: str):
        return shapley_values(model, row_of[code], sample=code)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            explanations = list(pool.map(one, codes))
    else:
        explanations = [one(code) for code in codes]

    # aggregate: mean |phi| per feature per class, ranked like mean_abs_shap
    mean_abs = np.mean([np.abs(e.contributions) for e in explanations], axis=0)
    ranked = lambda vals: sorted(
        [(n, float(v)) for n, v in zip(model.feature_names, vals)], key=lambda kv: (-kv[1], kv[0])
    )
    summary = ShapSummary(
        classes=list(model.classes),
        per_class={cls: ranked(mean_abs[:, ci]) for ci, cls in enumerate(model.classes)},
        overall=ranked(mean_abs.mean(axis=1)),
    )

    meta = metadata_block(config, "explain", target="class probability", samples=len(codes))
    doc = {
        "metadata": meta,
        "explanations": [e.to_dict() for e in explanations],
        "summary": summary.to_dict(),
    }
    json_path = write_json_artifact(_out(config) / "explanations.json", doc)

    csv_path = _out(config) / "explanations.csv"
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["feature", "class", "mean_abs_shap"])
    for ci, cls in enumerate(model.classes):
        for feature, value in summary.per_class[cls]:
            writer.writerow([feature, cls, repr(value)])
    csv_path.write_text(_meta_line(meta) + "\n" + buf.getvalue(), encoding="utf-8")

    svg_path = _out(config) / "shap_summary.svg"
    names = [n for n, _ in summary.overall]
    vals = [v for _, v in summary.overall]
    chart = hbar_chart(names, vals, title="Mean |SHAP| by feature")
    head, rest = chart.split("\n", 1)
    svg_path.write_text(f"{head}\n<!-- {_meta_line(meta)[2:]} -->\n{rest}", encoding="utf-8")

    top = summary.overall[0]
    print(f"explain: {len(codes)} samples, top feature {top[0]} ({top[1]:.4g}) -> {json_path}")
    return [json_path, csv_path, svg_path]


def cmd_forecast(config: RunConfig) -> list[Path]:
    series = _load_series(config)
    forecasts = {}
    for code in sorted(series):
        forecasts[code] = [p.to_dict() for p in forecast_linear(series[code], config.horizon)]
    doc = {
        "metadata": metadata_block(config, "forecast", horizon=config.horizon),
        "forecasts": forecasts,
    }
    path = write_json_artifact(_out(config) / "forecasts.json", doc)
    print(f"forecast: {len(forecasts)} codes to {config.horizon} -> {path}")
    return [path]


def cmd_watchlist(config: RunConfig) -> list[Path]:
    series = _load_series(config)
    matrix, features_art = _load_matrix(config)
    segments_art = load_artifact(config, "segments")
    anomalies_art = load_artifact(config, "anomalies")
    forecasts_art = load_artifact(config, "forecasts")

    universe = list(matrix.rows)

    def pick(art: dict, key: str, name: str, producer: str) -> dict:
        table = art[key]
        missing = [code for code in universe if code not in table]
        if missing:
            raise DataError(
                f"{name} lacks codes {missing[:5]} from the feature matrix; rerun `scrapsig {producer}`"
            )
        return {code: table[code] for code in universe}

    series = pick({"series": series}, "series", "series.json", "ingest")
    signatures = {
        code: (sig, strong)
        for code, sig, strong in detect_signature_codes(
            series, (config.strong_price, config.strong_volume)
        )
    }
    segments = pick(segments_art, "archetypes", "segments.json", "segment")
    anomalies = {
        code: [int(y) for y in years]
        for code, years in pick(anomalies_art, "anomaly_years", "anomalies.json", "detect-anomalies").items()
    }
    forecasts = {
        code: [ForecastPoint.from_dict(d) for d in docs]
        for code, docs in pick(forecasts_art, "forecasts", "forecasts.json", "forecast").items()
    }
    basel_table = load_basel_table(config.basel_file or None)
    basel = {code: basel_overlap(code, basel_table) for code in universe}
    tariffs = TariffTable.from_csv(config.tariffs_file) if config.tariffs_file else TariffTable.default()
    customs = {code: float(sum(p.usd for p in series[code].points)) for code in universe}
    context = DutyContext(tariff_table=tariffs, customs_values=customs, scrap_code=config.scrap_code)

    watchlist = build_watchlist(segments, signatures, anomalies, forecasts, basel, context)

    formats = [f.strip() for f in config.report_formats.split(",") if f.strip()]
    feature_vectors = {
        code: FeatureVector(
            hs_code=code,
            **{name: features_art["features"][code][name] for name in PRIMARY_FEATURES},
        )
        for code in universe
    }
    meta = metadata_block(config, "watchlist", scrap_code=config.scrap_code, formats=formats)
    paths = render_report(
        watchlist,
        formats,
        config.out_dir,
        series=series,
        features=feature_vectors,
        metadata={"metadata": meta},
    )
    n_sig = sum(1 for e in watchlist if e.signature)
    print(f"watchlist: {len(watchlist)} codes, {n_sig} signature-flagged -> {paths[0]}")
    for entry in watchlist[:10]:
        marks = "".join(
            m
            for m, on in (
                ("S", entry.signature),
                ("!", entry.strong_signature),
                ("A", bool(entry.anomaly_years)),
            )
            if on
        )
        print(
            f"  {entry.risk_rank:>3}. {entry.hs_code:<10} {entry.archetype:<20} "
            f"{marks:<4} duty_gap_hi ${entry.duty_gap_usd:,.0f}"
        )
    return paths


def cmd_synth(config: RunConfig) -> list[Path]:
    if config.synth_mode == "archetypes":
        corpus = generate_archetype_corpus(
            config.n_per_archetype, seed=config.seed, at_risk_fraction=config.at_risk_fraction
        )
    elif config.synth_mode == "signature":
        corpus = generate_signature_corpus(
            n_clean=config.n_clean,
            n_poisoned=config.n_poisoned,
            seed=config.seed,
            noise_frac=config.noise_frac,
        )
    elif config.synth_mode == "driver":
        corpus = generate_driver_corpus(config.driver, n_per_class=config.n_per_class, seed=config.seed)
    else:
        raise ConfigError(f"synth mode must be archetypes|signature|driver, got {config.synth_mode!r}")

    meta = metadata_block(config, "synth", mode=config.synth_mode)
    trades = _meta_line(meta) + "\n" + corpus_to_csv(corpus)
    labels = _meta_line(meta) + "\n" + labels_to_csv(corpus)
    if not config.out_dir or config.out_dir == "-":
        sys.stdout.write(trades)
        return []
    out = _out(config)
    trades_path = out / "trades.csv"
    trades_path.write_text(trades, encoding="utf-8")
    labels_path = out / "labels.csv"
    labels_path.write_text(labels, encoding="utf-8")
    print(f"synth: {len(corpus.series)} codes ({config.synth_mode}) -> {trades_path}", file=sys.stderr)
    return [trades_path, labels_path]


PIPELINE_STAGES = [
    ("ingest", cmd_ingest),
    ("features", cmd_features),
    ("segment", cmd_segment),
    ("detect-anomalies", cmd_detect_anomalies),
    ("train", cmd_train),
    ("evaluate", cmd_evaluate),
    ("explain", cmd_explain),
    ("forecast", cmd_forecast),
    ("watchlist", cmd_watchlist),
]


def cmd_pipeline(config: RunConfig) -> list[Path]:
    written = []
    for name, fn in PIPELINE_STAGES:
        log.info("pipeline stage: %s", name)
        written.extend(fn(config))
    return written


# ---------------------------------------------------------------------------
# argument parsing


def _common(parser: argparse.ArgumentParser, out_default: bool = True) -> None:
    parser.add_argument("--config", help=f"INI config file (default ${CONFIG_ENV})")
    parser.add_argument("--out", dest="out_dir", help="run directory (default run/)")
    parser.add_argument("--seed", type=int, help="master seed (default 0)")
    parser.add_argument("--threads", type=int, help="worker cap; never changes results")
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")


def _ingest_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", dest="input_path", help="trade CSV ('-' = stdin)")
    parser.add_argument("--flow", help="trade flow to keep (default M)")
    parser.add_argument("--reporter", help="reporter filter (default: all)")
    parser.add_argument("--window-lo", dest="window_lo", type=int, help="window start year")
    parser.add_argument("--window-hi", dest="window_hi", type=int, help="window end year")
    parser.add_argument("--max-missing-fraction", dest="max_missing_fraction", type=float)
    parser.add_argument("--max-interp-gap", dest="max_interp_gap", type=int)
    parser.add_argument("--cap-lo", dest="cap_lo", type=float, help="lower winsor percentile")
    parser.add_argument("--cap-hi", dest="cap_hi", type=float, help="upper winsor percentile")
    parser.add_argument("--cap-scope", dest="cap_scope", choices=["pooled", "per_code"])
    parser.add_argument("--base-year", dest="base_year", type=int, help="deflator base year")
    parser.add_argument("--cpi-file", dest="cpi_file", help="CSV of year,deflator")


def _classifier_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--trees", dest="rf_trees", type=int, help="forest size (default 100)")
    parser.add_argument("--max-depth", dest="rf_max_depth", type=int, help="0 = unlimited")
    parser.add_argument("--min-samples-split", dest="rf_min_samples_split", type=int)


def _watchlist_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scrap-code", dest="scrap_code", help="true code for duty gaps")
    parser.add_argument("--strong-price", dest="strong_price", type=float, help="strong price-decline threshold")
    parser.add_argument("--strong-volume", dest="strong_volume", type=float, help="strong volume-growth threshold")
    parser.add_argument("--tariffs", dest="tariffs_file", help="tariff CSV (default: bundled)")
    parser.add_argument("--basel", dest="basel_file", help="Basel mapping CSV (default: bundled)")
    parser.add_argument("--formats", dest="report_formats", help="comma list of json,csv,svg")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scrapsig",
        description="Detect the inverse price-volume signature of plastic-scrap "
        "misclassification in annual trade data.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse, aggregate, and clean a trade CSV")
    _common(p)
    _ingest_flags(p)

    p = sub.add_parser("features", help="compute per-code feature vectors and z-scores")
    _common(p)
    p.add_argument("--features", dest="feature_set", choices=sorted(FEATURE_SETS), help="feature subset")

    p = sub.add_parser("segment", help="k-means market archetypes with elbow scan")
    _common(p)
    p.add_argument("--k", type=int, help="cluster count (default: elbow recommendation)")
    p.add_argument("--k-min", dest="k_min", type=int, help="elbow scan lower bound")
    p.add_argument("--k-max", dest="k_max", type=int, help="elbow scan upper bound")

    p = sub.add_parser("detect-anomalies", help="isolation-forest volume anomalies per year")
    _common(p)
    p.add_argument("--mode", dest="anomaly_mode", choices=["per_code", "pooled"])
    p.add_argument("--threshold", dest="anomaly_threshold", type=float, help="score cutoff (default 0.6)")
    p.add_argument("--anomaly-trees", dest="anomaly_trees", type=int)
    p.add_argument("--psi", dest="anomaly_psi", type=int, help="subsample size (default 256)")

    p = sub.add_parser("train", help="random forest on archetype labels")
    _common(p)
    _classifier_flags(p)

    p = sub.add_parser("evaluate", help="stratified k-fold cross-validation report")
    _common(p)
    _classifier_flags(p)
    p.add_argument("--folds", type=int, help="fold count (default 5)")

    p = sub.add_parser("explain", help="exact Shapley attributions for the forest")
    _common(p)
    p.add_argument("--sample", dest="explain_sample", help="explain one hs_code only")

    p = sub.add_parser("forecast", help="linear kg/price projections to the horizon")
    _common(p)
    p.add_argument("--horizon", type=int, help="final forecast year (default 2030)")

    p = sub.add_parser("watchlist", help="fuse all stages into a ranked watchlist")
    _common(p)
    _watchlist_flags(p)

    p = sub.add_parser("synth", help="generate a synthetic corpus (stdout unless --out)")
    p.add_argument("--config", help=f"INI config file (default ${CONFIG_ENV})")
    p.add_argument("--out", dest="out_dir", default="-", help="output directory ('-' = trades CSV on stdout)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--threads", type=int, help=argparse.SUPPRESS)
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--mode", dest="synth_mode", choices=["archetypes", "signature", "driver"])
    p.add_argument("--archetypes", dest="n_per_archetype", type=int, help="codes per archetype")
    p.add_argument("--at-risk-fraction", dest="at_risk_fraction", type=float)
    p.add_argument("--clean", dest="n_clean", type=int, help="clean codes (signature mode)")
    p.add_argument("--poisoned", dest="n_poisoned", type=int, help="poisoned codes (signature mode)")
    p.add_argument("--noise", dest="noise_frac", type=float, help="multiplicative noise sd")
    p.add_argument("--driver", choices=["price", "volume"], help="driver-corpus axis")
    p.add_argument("--n-per-class", dest="n_per_class", type=int)

    p = sub.add_parser("pipeline", help="run every stage: ingest through watchlist")
    _common(p)
    _ingest_flags(p)
    p.add_argument("--features", dest="feature_set", choices=sorted(FEATURE_SETS))
    p.add_argument("--k", type=int, help="cluster count (default: elbow recommendation)")
    p.add_argument("--threshold", dest="anomaly_threshold", type=float)
    _classifier_flags(p)
    p.add_argument("--folds", type=int)
    p.add_argument("--horizon", type=int)
    _watchlist_flags(p)

    return parser


COMMANDS = {
    "ingest": cmd_ingest,
    "features": cmd_features,
    "segment": cmd_segment,
    "detect-anomalies": cmd_detect_anomalies,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "forecast": cmd_forecast,
    "watchlist": cmd_watchlist,
    "synth": cmd_synth,
    "pipeline": cmd_pipeline,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = resolve_config(args)
        COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ScrapsigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
