import json
import os

import pytest

from qforecast.cli import main
from qforecast.syngen import PatternSpec, TemplateSpec, WorkloadSpec


@pytest.fixture
def small_spec_file(tmp_path):
    spec = WorkloadSpec(seed=5, start="2023-01-01T00:00:00Z", templates=[
        TemplateSpec(sql="SELECT * FROM a WHERE x = $1 AND tag = $2", count=160,
                     params=[PatternSpec("periodic", "int", period=6),
                             PatternSpec("periodic", "str", values=["p", "q"])],
                     gap_seconds=60),
        TemplateSpec(sql="SELECT * FROM b WHERE d >= $1", count=80,
                     params=[PatternSpec("trend", "date", start="2023-01-01",
                                         step=1, step_every=10)],
                     gap_seconds=120),
    ]).to_json()
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    return str(path)


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "engine.cfg"
    path.write_text("k = 6\ndelta_t = 10m\ndelta_t_fine = 1m\nhorizon_t = 20m\n"
                    "max_epochs = 6\nseed = 3\n")
    return str(path)


class TestExitCodes:
    def test_usage_error_is_one(self):
        assert main([]) == 1
        assert main(["forecast", "--store", "x"]) == 1  # missing horizon flags
        assert main(["gen", "-o", "out.jsonl"]) == 1     # neither spec nor demo

    def test_data_error_is_two(self, tmp_path):
        missing = str(tmp_path / "missing.jsonl")
        assert main(["templatize", missing, "-o", str(tmp_path / "r.json")]) == 2

    def test_unknown_flag_is_one(self):
        assert main(["templatize", "--bogus"]) == 1


class TestGen:
    def test_gen_writes_log_and_labels(self, small_spec_file, tmp_path, capsys):
        out = str(tmp_path / "wl.jsonl")
        assert main(["gen", small_spec_file, "-o", out]) == 0
        assert os.path.exists(out)
        assert os.path.exists(out + ".labels.json")
        assert "240 queries" in capsys.readouterr().out

    def test_gen_demo_deterministic(self, tmp_path):
        out1, out2 = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
        assert main(["gen", "--demo", "periodic", "-o", out1]) == 0
        assert main(["gen", "--demo", "periodic", "-o", out2]) == 0
        assert open(out1, "rb").read() == open(out2, "rb").read()


class TestEndToEnd:
    def test_per_template_flow(self, small_spec_file, cfg_file, tmp_path, capsys):
        log = str(tmp_path / "wl.jsonl")
        store = str(tmp_path / "store")
        forecast = str(tmp_path / "fc.jsonl")
        report = str(tmp_path / "report.json")
        assert main(["gen", small_spec_file, "-o", log]) == 0
        assert main(["templatize", log, "-o", str(tmp_path / "reg.json")]) == 0
        assert main(["--config", cfg_file, "train", log, "--mode", "per-template",
                     "-o", store]) == 0
        assert main(["forecast", "--store", store, "--next-k", "6",
                     "-o", forecast]) == 0
        assert len(open(forecast).read().splitlines()) == 6
        assert main(["evaluate", log, forecast, "-o", report]) == 0
        payload = json.loads(open(report).read())
        assert set(payload) >= {"recall", "precision", "f1", "avg_cnt_diff"}
        assert os.path.exists(str(tmp_path / "report.csv"))
        assert os.path.exists(str(tmp_path / "report.png"))

    def test_per_bin_flow_with_plan(self, small_spec_file, cfg_file, tmp_path):
        log = str(tmp_path / "wl.jsonl")
        store = str(tmp_path / "store")
        assert main(["gen", small_spec_file, "-o", log]) == 0
        assert main(["--config", cfg_file, "plan", log,
                     "-o", str(tmp_path / "plan.json")]) == 0
        plan = json.loads(open(str(tmp_path / "plan.json")).read())
        assert plan["bins"]
        assert main(["--config", cfg_file, "train", log, "--mode", "per-bin",
                     "-o", store]) == 0
        forecast = str(tmp_path / "fc.jsonl")
        assert main(["forecast", "--store", store, "--next-dt", "10m",
                     "-o", forecast]) == 0

    def test_self_evaluation_is_perfect(self, small_spec_file, tmp_path):
        log = str(tmp_path / "wl.jsonl")
        report = str(tmp_path / "self.json")
        assert main(["gen", small_spec_file, "-o", log]) == 0
        assert main(["evaluate", log, log, "-o", report]) == 0
        payload = json.loads(open(report).read())
        assert payload["recall"] == payload["precision"] == payload["f1"] == 1.0

    def test_analyze_labels_parameters(self, small_spec_file, tmp_path, capsys):
        log = str(tmp_path / "wl.jsonl")
        report = str(tmp_path / "analysis.json")
        assert main(["gen", small_spec_file, "-o", log]) == 0
        assert main(["analyze", log, "-o", report]) == 0
        payload = json.loads(open(report).read())
        assert payload["tau"] == 0.75
        assert len(payload["parameters"]) == 3
        assert os.path.exists(str(tmp_path / "analysis.csv"))
        assert os.path.exists(str(tmp_path / "analysis.png"))

    def test_monitor_runs_rounds(self, small_spec_file, cfg_file, tmp_path):
        log = str(tmp_path / "wl.jsonl")
        future = str(tmp_path / "future.jsonl")
        store = str(tmp_path / "store")
        outdir = str(tmp_path / "mon")
        assert main(["gen", small_spec_file, "-o", log]) == 0
        assert main(["--config", cfg_file, "train", log, "--mode", "per-template",
                     "-o", store]) == 0
        # a later run of the same generator provides the observed future
        spec = json.loads(open(small_spec_file).read())
        spec["start"] = "2023-01-02T00:00:00Z"
        future_spec = str(tmp_path / "future_spec.json")
        open(future_spec, "w").write(json.dumps(spec))
        assert main(["gen", future_spec, "-o", future]) == 0
        assert main(["monitor", future, "--store", store, "--rounds", "3",
                     "-o", outdir]) == 0
        rounds = open(os.path.join(outdir, "rounds.csv")).read().splitlines()
        assert len(rounds) > 1
        assert os.path.exists(os.path.join(outdir, "drift_events.jsonl"))
        assert os.path.exists(os.path.join(outdir, "rounds.png"))
