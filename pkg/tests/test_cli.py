from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from irm.cli import main

FIXTURE = "fixtures/cert-mini"


@pytest.fixture
def runner():
    return CliRunner()


class TestIngestCommand:
    def test_golden_run(self, runner, tmp_path):
        result = runner.invoke(
            main, ["ingest", "--dir", FIXTURE, "--data-dir", str(tmp_path / "d1")]
        )
        assert result.exit_code == 0, result.output
        golden = open(f"{FIXTURE}/golden.txt").read()
        assert result.output == golden

    def test_missing_dir_usage_error(self, runner):
        result = runner.invoke(main, ["ingest", "--dir", "does/not/exist"])
        assert result.exit_code == 2

    def test_bad_config_exit_2(self, runner, tmp_path):
        bad = tmp_path / "config.json"
        bad.write_text("{not json")
        result = runner.invoke(
            main, ["ingest", "--dir", FIXTURE, "--config", str(bad), "--data-dir", str(tmp_path / "d")]
        )
        assert result.exit_code == 2


class TestScoreCommand:
    def test_prints_both_scorers(self, runner, tmp_path):
        data_dir = str(tmp_path / "d")
        runner.invoke(main, ["ingest", "--dir", FIXTURE, "--data-dir", data_dir])
        # find a stored session id via the store
        from irm.store import RiskStore

        store = RiskStore(data_dir)
        session_id = store.scores()[0]["subject"]
        store.close()

        result = runner.invoke(main, ["score", "--session", session_id, "--data-dir", data_dir])
        assert result.exit_code == 0, result.output
        assert "PRISM raw=" in result.output
        assert "AIRS s_ai=" in result.output
        assert "multiplier" in result.output

    def test_unknown_session_exit_1(self, runner, tmp_path):
        result = runner.invoke(main, ["score", "--session", "S-nope", "--data-dir", str(tmp_path)])
        assert result.exit_code == 1


class TestServeCommand:
    def test_bad_config_path_exit_2(self, runner):
        result = runner.invoke(main, ["serve", "--config", "no/such/config.json"])
        assert result.exit_code == 2


class TestBenchCommand:
    def test_emits_rate_latency_table(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["bench", "--rate", "3000", "--duration", "1", "--data-dir", str(tmp_path / "bench")],
        )
        assert result.exit_code == 0, result.output
        lines = result.output.strip().splitlines()
        assert "target eps" in lines[0] and "q p95 ms" in lines[0]
        assert len(lines) == 2
        assert "3,000" in lines[1]


class TestStoreVerifyCommand:
    def test_clean_store(self, runner, tmp_path):
        data_dir = str(tmp_path / "d")
        runner.invoke(main, ["ingest", "--dir", FIXTURE, "--data-dir", data_dir])
        result = runner.invoke(main, ["store", "verify", "--data-dir", data_dir])
        assert result.exit_code == 0, result.output
        report = json.loads(result.output)
        assert report["corrupt"] == []
        assert report["segments_checked"] >= 1
