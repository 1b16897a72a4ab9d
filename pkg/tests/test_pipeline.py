"""Pipeline runner: staged execution, integrity checks, reproducibility."""

import json

import pytest

from aicscale.catalog import save_manifest
from aicscale.pipeline import (
    REPORT_NAME,
    STAGES,
    PipelineError,
    RunConfig,
    load_run_config,
    run,
)
from conftest import build_synthetic_manifest

CONFIG_DOC = {
    "seed": 17,
    "manifest": "manifest.json",
    "design": {"cross_count": 4, "batch_size": 28},
    "simulate": {"target_coverage": 4, "not_sure_rate": 0.05},
    "fit": {"n_restarts": 2, "max_iterations": 300},
    "bootstrap": {"n_boot": 12, "grid_size": 25},
}


def make_config(tmp_path, out_dir="out", **overrides):
    base = tmp_path
    manifest = build_synthetic_manifest(n_sources=2, codecs=("cA", "cB"),
                                        levels=3)
    save_manifest(manifest, base / "manifest.json")
    doc = json.loads(json.dumps(CONFIG_DOC))
    doc.update(overrides)
    doc["out_dir"] = out_dir
    path = base / "run.json"
    path.write_text(json.dumps(doc))
    return load_run_config(path)


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipeline")
    config = make_config(tmp)
    report = run(config)
    return tmp, config, report


class TestFullRun:
    def test_all_stages_green(self, finished_run):
        _, _, report = finished_run
        assert [s for s in STAGES if s in report["stages"]] == list(STAGES)
        assert all(e["status"] == "green"
                   for e in report["stages"].values())

    def test_artifacts_exist(self, finished_run):
        _, config, _ = finished_run
        for name in ("design_btc", "design_ptc", "responses", "retained",
                     "audit", "model", "bands", "bench_report", "bench_json"):
            assert config.path(name).exists(), name

    def test_report_written_with_hashes(self, finished_run):
        tmp, config, report = finished_run
        on_disk = json.loads((config.out_root / REPORT_NAME).read_text())
        assert on_disk["root_seed"] == 17
        fit = on_disk["stages"]["fit"]
        assert fit["inputs"] and fit["outputs"]
        assert all(len(h) == 64 for h in fit["outputs"].values())
        assert on_disk["environment"]["kernel_backend"] in ("compiled",
                                                            "python")

    def test_stage_seeds_differ(self, finished_run):
        _, _, report = finished_run
        seeds = [e["seed"] for e in report["stages"].values()]
        assert len(set(seeds)) == len(seeds)

    def test_summaries_carry_key_figures(self, finished_run):
        _, _, report = finished_run
        stages = report["stages"]
        assert stages["design"]["summary"]["btc"]["triplets"] == 56
        assert stages["export"]["summary"]["rows"] == 2 * 56 * 4
        assert stages["bootstrap"]["summary"]["bands"] == 4
        assert set(stages["bench"]["summary"]) == {"mock-sharp", "mock-blunt"}


class TestReproducibility:
    def test_same_seed_same_artifacts(self, finished_run, tmp_path):
        _, first_config, first_report = finished_run
        config = make_config(tmp_path)
        report = run(config)
        for stage in STAGES:
            assert (report["stages"][stage]["outputs"]
                    == first_report["stages"][stage]["outputs"]), stage

    def test_different_seed_differs(self, finished_run, tmp_path):
        _, _, first_report = finished_run
        config = make_config(tmp_path, seed=18)
        report = run(config)
        assert (report["stages"]["fit"]["outputs"]
                != first_report["stages"]["fit"]["outputs"])


class TestStagedExecution:
    def test_stages_can_run_in_separate_invocations(self, tmp_path):
        config = make_config(tmp_path)
        run(config, ["design"])
        run(config, ["simulate", "export"])
        report = run(config, ["clean", "fit", "bootstrap", "bench"])
        assert all(e["status"] == "green" for e in report["stages"].values())
        assert len(report["stages"]) == len(STAGES)

    def test_missing_prerequisite_halts(self, tmp_path):
        config = make_config(tmp_path)
        with pytest.raises(PipelineError, match="required input"):
            run(config, ["fit"])

    def test_tampered_intermediate_halts(self, tmp_path):
        config = make_config(tmp_path)
        run(config, ["design", "simulate", "export"])
        responses = config.path("responses")
        text = responses.read_text()
        responses.write_text(text.replace("left", "right", 1))
        with pytest.raises(PipelineError, match="does not match the hash"):
            run(config, ["clean"])

    def test_simulate_refuses_existing_event_log(self, tmp_path):
        config = make_config(tmp_path)
        run(config, ["design", "simulate"])
        with pytest.raises(PipelineError, match="fresh data directory"):
            run(config, ["simulate"])

    def test_unknown_stage_rejected(self, tmp_path):
        config = make_config(tmp_path)
        with pytest.raises(PipelineError, match="unknown stage"):
            run(config, ["design", "deploy"])

    def test_failed_stage_recorded(self, tmp_path):
        config = make_config(tmp_path)
        with pytest.raises(PipelineError):
            run(config, ["fit"])
        report = json.loads((config.out_root / REPORT_NAME).read_text())
        assert report["stages"]["fit"]["status"] == "failed"
        assert "error" in report["stages"]["fit"]


class TestConfig:
    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"seed": 1, "extra_knob": True}))
        with pytest.raises(PipelineError, match="extra_knob"):
            load_run_config(path)

    def test_unknown_stage_in_config_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"stages": ["design", "ship"]}))
        with pytest.raises(PipelineError, match="ship"):
            load_run_config(path)

    def test_stage_order_normalized(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"stages": ["fit", "design", "clean"]}))
        config = load_run_config(path)
        assert config.stages == ["design", "clean", "fit"]

    def test_stage_seed_depends_on_root_seed(self, tmp_path):
        a = RunConfig(base=tmp_path, seed=1)
        b = RunConfig(base=tmp_path, seed=2)
        assert a.stage_seed("fit") != b.stage_seed("fit")
        assert a.stage_seed("fit") == RunConfig(base=tmp_path,
                                                seed=1).stage_seed("fit")
