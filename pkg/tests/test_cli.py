import json
import shutil
import subprocess
import sys

import pytest

from scrapsig.cli import CONFIG_ENV, main

EXPECTED_FILES = {
    "trades.csv",
    "labels.csv",
    "series.json",
    "features.json",
    "segments.json",
    "anomalies.json",
    "model.json",
    "evaluation.json",
    "evaluation.txt",
    "explanations.json",
    "explanations.csv",
    "shap_summary.svg",
    "forecasts.json",
    "watchlist.json",
    "watchlist.csv",
    "segments_scatter.svg",
}

STAGE_OF = {
    "series.json": "ingest",
    "features.json": "features",
    "segments.json": "segment",
    "anomalies.json": "detect-anomalies",
    "model.json": "train",
    "evaluation.json": "evaluate",
    "explanations.json": "explain",
    "forecasts.json": "forecast",
    "watchlist.json": "watchlist",
}


@pytest.fixture(autouse=True)
def no_ambient_config(monkeypatch):
    monkeypatch.delenv(CONFIG_ENV, raising=False)


@pytest.fixture(scope="module")
def pipe(tmp_path_factory):
    """One full pipeline run on a small synthetic corpus, bytes frozen."""
    root = tmp_path_factory.mktemp("cli")
    run_dir = root / "run"
    assert main(["synth", "--mode", "archetypes", "--archetypes", "8", "--seed", "3", "--out", str(run_dir)]) == 0
    ini = root / "scrapsig.ini"
    ini.write_text(
        "[run]\n"
        f"out = {run_dir}\n"
        "seed = 1\n"
        f"input = {run_dir / 'trades.csv'}\n"
        "[train]\n"
        "trees = 25\n"
        "[anomaly]\n"
        "trees = 50\n"
    )
    assert main(["pipeline", "--config", str(ini)]) == 0
    frozen = {p.name: p.read_bytes() for p in run_dir.iterdir()}
    return {"root": root, "run": run_dir, "ini": ini, "frozen": frozen}


class TestPipeline:
    def test_artifact_set_complete(self, pipe):
        names = {p.name for p in pipe["run"].iterdir()}
        assert EXPECTED_FILES <= names
        extras = names - EXPECTED_FILES
        assert all(n.startswith("code_") and n.endswith(".svg") for n in extras)

    def test_metadata_blocks(self, pipe):
        for name, stage in STAGE_OF.items():
            doc = json.loads(pipe["frozen"][name])
            meta = doc["metadata"]
            assert meta["stage"] == stage
            assert meta["seed"] == 1
            assert meta["schema_version"] >= 1
            assert len(meta["config_hash"]) == 12

    def test_text_artifacts_stamped(self, pipe):
        for name in ("evaluation.txt", "watchlist.csv", "explanations.csv"):
            first = pipe["frozen"][name].decode().splitlines()[0]
            assert first.startswith("#") and "schema_version=" in first, name
        assert "<!-- schema_version=" in pipe["frozen"]["shap_summary.svg"].decode()

    def test_watchlist_ranks_contiguous(self, pipe):
        doc = json.loads(pipe["frozen"]["watchlist.json"])
        ranks = [e["risk_rank"] for e in doc["entries"]]
        assert ranks == list(range(1, 33))

    def test_rerun_byte_identical(self, pipe):
        run2 = pipe["root"] / "run2"
        shutil.copy(pipe["run"] / "trades.csv", pipe["root"] / "trades.csv")
        assert main(["pipeline", "--config", str(pipe["ini"]), "--out", str(run2)]) == 0
        for name, blob in pipe["frozen"].items():
            if name in ("trades.csv", "labels.csv"):
                continue  # synth inputs live only in the first run dir
            assert (run2 / name).read_bytes() == blob, name

    def test_stage_delete_and_regenerate(self, pipe):
        (pipe["run"] / "segments.json").unlink()
        assert main(["segment", "--config", str(pipe["ini"])]) == 0
        assert (pipe["run"] / "segments.json").read_bytes() == pipe["frozen"]["segments.json"]

    def test_threads_flag_never_changes_results(self, pipe):
        assert main(["explain", "--config", str(pipe["ini"]), "--threads", "4"]) == 0
        assert (pipe["run"] / "explanations.json").read_bytes() == pipe["frozen"]["explanations.json"]

    def test_explain_single_sample(self, pipe):
        doc = json.loads(pipe["frozen"]["features.json"])
        code = sorted(doc["features"])[0]
        assert main(["explain", "--config", str(pipe["ini"]), "--sample", code]) == 0
        out = json.loads((pipe["run"] / "explanations.json").read_text())
        assert len(out["explanations"]) == 1
        assert out["explanations"][0]["sample"] == code
        # restore the full artifact for any later byte comparisons
        assert main(["explain", "--config", str(pipe["ini"])]) == 0

    def test_evaluate_prints_cv_table(self, pipe, capsys):
        assert main(["evaluate", "--config", str(pipe["ini"])]) == 0
        out = capsys.readouterr().out
        assert "±" in out and "High-Risk Segment" in out

    def test_segment_k_override(self, pipe, tmp_path):
        shutil.copy(pipe["run"] / "features.json", tmp_path / "features.json")
        assert main(["segment", "--out", str(tmp_path), "--seed", "1", "--k", "3"]) == 0
        doc = json.loads((tmp_path / "segments.json").read_text())
        assert doc["metadata"]["k"] == 3
        assert set(doc["archetypes"].values()) <= {"cluster0", "cluster1", "cluster2"}
        assert doc["labeling"] is None


class TestErrors:
    def test_missing_input_is_config_error(self, tmp_path, capsys):
        code = main(["ingest", "--input", str(tmp_path / "nope.csv"), "--out", str(tmp_path)])
        assert code == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_bad_flow_is_config_error(self, pipe, tmp_path):
        code = main(["ingest", "--input", str(pipe["run"] / "trades.csv"), "--flow", "Q", "--out", str(tmp_path)])
        assert code == 2

    def test_missing_artifact_is_data_error(self, tmp_path, capsys):
        code = main(["features", "--out", str(tmp_path)])
        assert code == 1
        assert "scrapsig ingest" in capsys.readouterr().err

    def test_no_valid_records_is_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("cmdCode,refYear,flowCode,reporterISO,partnerISO,primaryValue,netWgt\nxx,bad,M,A,B,1,1\n")
        assert main(["ingest", "--input", str(bad), "--out", str(tmp_path)]) == 1

    def test_unknown_config_entry_rejected(self, tmp_path, capsys):
        ini = tmp_path / "bad.ini"
        ini.write_text("[run]\nbogus = 1\n")
        assert main(["synth", "--config", str(ini)]) == 2
        assert "bogus" in capsys.readouterr().err

    def test_unknown_feature_set_rejected(self, tmp_path):
        assert main(["features", "--out", str(tmp_path), "--features", "all8"]) in (0, 1)  # valid choice parses
        with pytest.raises(SystemExit):
            main(["features", "--out", str(tmp_path), "--features", "everything"])

    def test_bad_threads_rejected(self, tmp_path):
        assert main(["forecast", "--out", str(tmp_path), "--threads", "0"]) == 2


class TestConfigPrecedence:
    def synth_args(self):
        return ["synth", "--mode", "signature", "--clean", "2", "--poisoned", "1"]

    def test_env_config_applies(self, tmp_path, monkeypatch, capsys):
        ini = tmp_path / "cfg.ini"
        ini.write_text("[run]\nseed = 5\n")
        monkeypatch.setenv(CONFIG_ENV, str(ini))
        assert main(self.synth_args()) == 0
        first = capsys.readouterr().out.splitlines()[0]
        assert first.startswith("#") and " seed=5 " in first

    def test_flag_beats_config_file(self, tmp_path, monkeypatch, capsys):
        ini = tmp_path / "cfg.ini"
        ini.write_text("[run]\nseed = 5\n")
        monkeypatch.setenv(CONFIG_ENV, str(ini))
        assert main(self.synth_args() + ["--seed", "9"]) == 0
        assert " seed=9 " in capsys.readouterr().out.splitlines()[0]

    def test_synth_stdout_contains_csv(self, capsys):
        assert main(self.synth_args()) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[1].split(",")[0] == "cmdCode"
        assert len(lines) == 2 + 3 * 10  # meta + header + 3 codes x 10 years


class TestStdinEntryPoint:
    def test_module_invocation_reads_stdin(self, pipe, tmp_path):
        trades = (pipe["run"] / "trades.csv").read_bytes()
        out = tmp_path / "stdin_run"
        proc = subprocess.run(
            [sys.executable, "-m", "scrapsig", "ingest", "--seed", "1", "--out", str(out)],
            input=trades,
            capture_output=True,
        )
        assert proc.returncode == 0, proc.stderr.decode()
        via_stdin = json.loads((out / "series.json").read_text())
        via_file = json.loads(pipe["frozen"]["series.json"])
        assert via_stdin["series"] == via_file["series"]
