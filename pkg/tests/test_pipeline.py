"""Config loading, staged orchestration, determinism, and the CLI."""
from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from polycap.cli import main as cli_main
from polycap.corpus import load_manifest
from polycap.errors import PolycapError, StageOrderError
from polycap.pipeline import (
    STAGES,
    load_config,
    load_registries,
    pipeline_config_hash,
    run_pipeline,
    run_stage,
    stage_arbitrate,
    stage_filter,
    stage_score,
    stage_select,
    stage_translate,
)

from conftest import CONFIG_YAML, REGISTRY_YAML, write_pipeline_fixture


class TestLoadConfig:
    def test_loads_fixture(self, pipeline_config_path):
        config = load_config(pipeline_config_path)
        assert config.languages == ("yor", "hau")
        assert config.filter_policy.lower == 0.53
        assert config.filter_policy.upper == 0.98
        assert config.clock == "2024-01-01T00:00:00Z"
        assert config.manifest_path.is_absolute()

    def test_missing_file(self, tmp_path):
        with pytest.raises(PolycapError, match="does not exist"):
            load_config(tmp_path / "absent.yaml")

    def test_missing_required_key(self, tmp_path):
        (tmp_path / "config.yaml").write_text(
            "registry: registry.yaml\n", encoding="utf-8"
        )
        with pytest.raises(PolycapError, match="manifest"):
            load_config(tmp_path / "config.yaml")

    def test_unknown_embedding_backend(self, tmp_path):
        bad = CONFIG_YAML.replace("arbitration: mock-multilingual",
                                  "arbitration: no-such-backend")
        write_pipeline_fixture(tmp_path, config_yaml=bad)
        with pytest.raises(PolycapError, match="no-such-backend"):
            load_config(tmp_path / "config.yaml")

    def test_unrouted_language(self, tmp_path):
        bad = CONFIG_YAML.replace("languages: [yor, hau]",
                                  "languages: [yor, hau, ibo]")
        write_pipeline_fixture(tmp_path, config_yaml=bad)
        with pytest.raises(PolycapError, match="ibo"):
            load_config(tmp_path / "config.yaml")

    def test_invalid_language_code(self, tmp_path):
        bad = CONFIG_YAML.replace("languages: [yor, hau]",
                                  "languages: [klingon]")
        write_pipeline_fixture(tmp_path, config_yaml=bad)
        with pytest.raises(PolycapError, match="klingon"):
            load_config(tmp_path / "config.yaml")

    def test_missing_registry_file(self, tmp_path):
        write_pipeline_fixture(tmp_path)
        (tmp_path / "registry.yaml").unlink()
        with pytest.raises(PolycapError, match="registry"):
            load_config(tmp_path / "config.yaml")


class TestConfigHash:
    def test_stable_across_loads(self, pipeline_config_path):
        config = load_config(pipeline_config_path)
        _, ensemble = load_registries(config)
        again = load_config(pipeline_config_path)
        _, ensemble_again = load_registries(again)
        assert pipeline_config_hash(config, ensemble) == pipeline_config_hash(
            again, ensemble_again
        )

    def test_sensitive_to_filter_policy(self, tmp_path):
        path_a = write_pipeline_fixture(tmp_path / "a")
        changed = CONFIG_YAML.replace("lower: 0.53", "lower: 0.60")
        path_b = write_pipeline_fixture(tmp_path / "b", config_yaml=changed)
        a, b = load_config(path_a), load_config(path_b)
        _, ens_a = load_registries(a)
        _, ens_b = load_registries(b)
        assert pipeline_config_hash(a, ens_a) != pipeline_config_hash(b, ens_b)

    def test_sensitive_to_routing(self, tmp_path):
        path_a = write_pipeline_fixture(tmp_path / "a")
        changed = REGISTRY_YAML.replace("yor: [mock-a, mock-b]", "yor: [mock-a]")
        path_b = write_pipeline_fixture(tmp_path / "b", registry_yaml=changed)
        a, b = load_config(path_a), load_config(path_b)
        _, ens_a = load_registries(a)
        _, ens_b = load_registries(b)
        assert pipeline_config_hash(a, ens_a) != pipeline_config_hash(b, ens_b)

    def test_insensitive_to_worker_count(self, tmp_path):
        path_a = write_pipeline_fixture(tmp_path / "a")
        changed = CONFIG_YAML.replace("workers: 4", "workers: 9")
        path_b = write_pipeline_fixture(tmp_path / "b", config_yaml=changed)
        a, b = load_config(path_a), load_config(path_b)
        _, ens_a = load_registries(a)
        _, ens_b = load_registries(b)
        assert pipeline_config_hash(a, ens_a) == pipeline_config_hash(b, ens_b)


class TestRunPipeline:
    def test_full_run_counts(self, pipeline_config_path):
        config = load_config(pipeline_config_path)
        report = run_pipeline(config)
        assert list(report.stages) == list(STAGES)
        assert report.stages["select"]["selected"] == 2
        assert report.stages["translate"]["generated"] == 6  # 2 images x 3 routes
        assert report.stages["score"]["scored"] == 6
        assert report.stages["arbitrate"]["entries"] == 4  # 2 images x 2 languages
        counts = report.stages["filter"]
        assert counts["kept"] + counts["below"] + counts["above"] == 4
        formatted = report.format()
        assert "select" in formatted and "filter" in formatted

    def test_manifest_records_config_hash(self, pipeline_config_path):
        config = load_config(pipeline_config_path)
        run_pipeline(config)
        manifest = load_manifest(config.manifest_path)
        _, ensemble = load_registries(config)
        assert manifest.pipeline_config_hash == pipeline_config_hash(
            config, ensemble
        )
        assert manifest.filter_policy == config.filter_policy

    def test_two_clean_runs_are_byte_identical(self, tmp_path):
        path_a = write_pipeline_fixture(tmp_path / "a")
        path_b = write_pipeline_fixture(tmp_path / "b")
        run_pipeline(load_config(path_a))
        run_pipeline(load_config(path_b))
        bytes_a = (tmp_path / "a" / "manifest.jsonl").read_bytes()
        bytes_b = (tmp_path / "b" / "manifest.jsonl").read_bytes()
        assert bytes_a == bytes_b

    def test_rerun_does_no_new_work(self, pipeline_config_path):
        config = load_config(pipeline_config_path)
        run_pipeline(config)
        before = config.manifest_path.read_bytes()
        report = run_pipeline(config)
        assert config.manifest_path.read_bytes() == before
        assert report.stages["select"]["selected"] == 0
        assert report.stages["select"]["skipped"] == 2
        assert report.stages["translate"]["generated"] == 0
        assert report.stages["translate"]["skipped"] == 6
        assert report.stages["score"] == {"scored": 0, "skipped": 0, "failed": 0}

    def test_interrupted_run_resumes_to_identical_bytes(self, tmp_path):
        clean_path = write_pipeline_fixture(tmp_path / "clean")
        run_pipeline(load_config(clean_path))
        golden = (tmp_path / "clean" / "manifest.jsonl").read_bytes()

        resumed_path = write_pipeline_fixture(tmp_path / "resumed")
        config = load_config(resumed_path)
        stage_select(config)  # simulate a run killed after two stages
        stage_translate(config)
        assert config.candidates_path().exists()
        run_pipeline(config)
        assert (tmp_path / "resumed" / "manifest.jsonl").read_bytes() == golden
        assert not config.candidates_path().exists()

    def test_resume_after_score_stage(self, tmp_path):
        clean_path = write_pipeline_fixture(tmp_path / "clean")
        run_pipeline(load_config(clean_path))
        golden = (tmp_path / "clean" / "manifest.jsonl").read_bytes()

        resumed_path = write_pipeline_fixture(tmp_path / "resumed")
        config = load_config(resumed_path)
        for stage in ("select", "translate", "score"):
            run_stage(config, stage)
        run_pipeline(config)
        assert (tmp_path / "resumed" / "manifest.jsonl").read_bytes() == golden

    def test_filter_report_written(self, pipeline_config_path):
        config = load_config(pipeline_config_path)
        run_pipeline(config)
        report_path = config.reports_dir / "filter_report.json"
        doc = json.loads(report_path.read_text(encoding="utf-8"))
        assert doc["total"] == 4
        assert doc["above_label"] == "suspiciously high"
        assert set(doc["per_language"]) == {"yor", "hau"}


class TestStageOrdering:
    def test_score_before_translate(self, pipeline_config_path):
        config = load_config(pipeline_config_path)
        stage_select(config)
        with pytest.raises(StageOrderError, match="translate stage first"):
            stage_score(config)

    def test_arbitrate_before_score(self, pipeline_config_path):
        config = load_config(pipeline_config_path)
        stage_select(config)
        with pytest.raises(StageOrderError, match="translate and score"):
            stage_arbitrate(config)

    def test_filter_before_entries(self, pipeline_config_path):
        config = load_config(pipeline_config_path)
        stage_select(config)
        with pytest.raises(StageOrderError, match="arbitrate"):
            stage_filter(config)

    def test_translate_before_select(self, pipeline_config_path):
        config = load_config(pipeline_config_path)
        with pytest.raises(StageOrderError, match="select"):
            stage_translate(config)

    def test_unknown_stage_rejected(self, pipeline_config_path):
        config = load_config(pipeline_config_path)
        with pytest.raises(PolycapError, match="unknown stage"):
            run_stage(config, "polish")


class TestEmptyLanguages:
    def test_no_languages_no_ops_after_selection(self, tmp_path):
        config_yaml = CONFIG_YAML.replace("languages: [yor, hau]", "languages: []")
        path = write_pipeline_fixture(tmp_path, config_yaml=config_yaml)
        config = load_config(path)
        report = run_pipeline(config)
        assert report.stages["select"]["selected"] == 2
        assert report.stages["translate"] == {
            "generated": 0, "skipped": 0, "failed": 0
        }
        assert report.stages["filter"] == {
            "kept": 0, "below": 0, "above": 0, "unscorable": 0
        }
        manifest = load_manifest(config.manifest_path)
        assert manifest.entries == {}


class TestCli:
    def invoke(self, args, config_path):
        runner = CliRunner()
        return runner.invoke(
            cli_main, ["--config", str(config_path), *args], catch_exceptions=False
        )

    def test_run_and_validate(self, pipeline_config_path):
        result = self.invoke(["run"], pipeline_config_path)
        assert result.exit_code == 0
        assert "select" in result.output and "filter" in result.output

        result = self.invoke(["validate"], pipeline_config_path)
        assert result.exit_code == 0
        doc = json.loads(result.output)
        assert doc["records"] == 2
        assert doc["entries"] == 4

    def test_individual_stage_commands(self, pipeline_config_path):
        for command in ("select", "translate", "score", "arbitrate", "filter"):
            result = self.invoke([command], pipeline_config_path)
            assert result.exit_code == 0, result.output
            assert result.output.startswith(f"{command}:")

    def test_filter_bound_overrides(self, pipeline_config_path):
        self.invoke(["run"], pipeline_config_path)
        result = self.invoke(
            ["filter", "--lower", "0.0", "--upper", "1.0"], pipeline_config_path
        )
        assert result.exit_code == 0
        assert "kept=4" in result.output

    def test_stats_command(self, pipeline_config_path):
        self.invoke(["run"], pipeline_config_path)
        result = self.invoke(["stats"], pipeline_config_path)
        assert result.exit_code == 0
        assert "eng baseline avg_words" in result.output
        assert "avg_length" in result.output
        reports_dir = pipeline_config_path.parent / "reports"
        assert (reports_dir / "stats_yor.json").exists()
        assert (reports_dir / "stats_hau.json").exists()

    def test_qa_backtranslate_command(self, pipeline_config_path):
        self.invoke(["run"], pipeline_config_path)
        result = self.invoke(["qa", "backtranslate"], pipeline_config_path)
        assert result.exit_code == 0, result.output
        assert "bleu" in result.output
        doc = json.loads(
            (pipeline_config_path.parent / "reports" / "qa_yor.json").read_text()
        )
        assert doc["n_items"] == 2
        assert doc["bleu"] == pytest.approx(1.0)  # reversible mock round-trip

    def test_qa_bleu_and_chrf_commands(self, tmp_path, pipeline_config_path):
        hyp = tmp_path / "hyp.txt"
        ref = tmp_path / "ref.txt"
        hyp.write_text("a dog runs\nthe cat sleeps\n", encoding="utf-8")
        ref.write_text("a dog runs\nthe cat sleeps\n", encoding="utf-8")
        result = self.invoke(
            ["qa", "bleu", "--hyp", str(hyp), "--ref", str(ref)],
            pipeline_config_path,
        )
        assert result.exit_code == 0
        assert float(result.output.strip()) == pytest.approx(1.0)
        result = self.invoke(
            ["qa", "bleu", "--hyp", str(hyp), "--ref", str(ref), "--x100"],
            pipeline_config_path,
        )
        assert float(result.output.strip()) == pytest.approx(100.0)
        result = self.invoke(
            ["qa", "chrf", "--hyp", str(hyp), "--ref", str(ref)],
            pipeline_config_path,
        )
        assert float(result.output.strip()) == pytest.approx(100.0)

    def test_humaneval_report_empty_store(self, pipeline_config_path):
        result = self.invoke(["humaneval", "report"], pipeline_config_path)
        assert result.exit_code == 0
        assert "no ratings" in result.output

    def test_humaneval_ingest_and_report(self, tmp_path, pipeline_config_path):
        csv_path = tmp_path / "incoming.csv"
        csv_path.write_text(
            "rater_id,image_id,language,score,catastrophic,submitted_at\n"
            "r1,img0,yor,7,false,2024-01-01T00:00:00Z\n"
            "r2,img0,yor,5,false,2024-01-01T00:00:00Z\n"
            "r1,img1,yor,9,false,2024-01-01T00:00:00Z\n"
            "r2,img1,yor,4,true,2024-01-01T00:00:00Z\n"
            "r9,img0,yor,12,false,2024-01-01T00:00:00Z\n",
            encoding="utf-8",
        )
        result = self.invoke(
            ["humaneval", "ingest", str(csv_path)], pipeline_config_path
        )
        assert result.exit_code == 0
        assert "ingested 4 rating(s), rejected 1 row(s)" in result.output

        result = self.invoke(["humaneval", "report"], pipeline_config_path)
        assert result.exit_code == 0
        assert "yor" in result.output
        report_path = pipeline_config_path.parent / "reports" / "humaneval_yor.json"
        doc = json.loads(report_path.read_text(encoding="utf-8"))
        assert doc["n_ratings"] == 4
        assert doc["n_raters"] == 2

    def test_stage_order_error_is_clean(self, pipeline_config_path):
        runner = CliRunner()
        result = runner.invoke(
            cli_main, ["--config", str(pipeline_config_path), "score"]
        )
        assert result.exit_code != 0
        assert "translate stage first" in result.output

    def test_missing_config_is_usage_error(self):
        runner = CliRunner()
        result = runner.invoke(cli_main, ["run"])
        assert result.exit_code != 0
        assert "--config" in result.output
