"""CLI subcommands, output formats, and exit codes."""

from __future__ import annotations

import json
import re

import pytest

from secrag.cli import main

BINOM3_DESC = (
    "An issue was discovered in BINOM3 Universal Multifunctional Electric "
    "Power Quality Meter."
)


class TestEvalFailure:
    def test_reproduces_published_failure_numbers(self, capsys):
        code = main(
            ["eval", "failure", "--rates", "0.28,0.19,0.23,0.21", "--n", "2500"]
        )
        assert code == 0
        out = capsys.readouterr().out
        collective = float(re.search(r"([\d.]+)%", out.splitlines()[0]).group(1))
        upper = float(re.search(r"([\d.]+)%", out.splitlines()[1]).group(1))
        assert collective == pytest.approx(0.2569, abs=1e-4)
        assert upper == pytest.approx(0.46, abs=0.01)

    def test_bad_rates_usage_error(self, capsys):
        assert main(["eval", "failure", "--rates", "a,b", "--n", "10"]) == 1

    def test_missing_n_is_usage_error(self):
        assert main(["eval", "failure", "--rates", "0.5"]) == 1


class TestEvalBattles:
    def test_tie_only_file_keeps_ratings_at_initial(self, tmp_path, capsys):
        path = tmp_path / "battles.jsonl"
        rows = [{"model_a": "A", "model_b": "B", "outcome": "tie"}] * 6
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        code = main(
            ["eval", "battles", "--file", str(path), "--rounds", "50", "--seed", "3"]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert out.count("1000.0") >= 4  # Elo and bootstrap medians for A and B

    def test_missing_file_is_runtime_error(self, capsys):
        assert main(["eval", "battles", "--file", "/no/such.jsonl"]) == 2


class TestEvalMetrics:
    def test_metrics_table(self, tmp_path, capsys):
        items = tmp_path / "items.jsonl"
        items.write_text(
            json.dumps(
                {
                    "question": "What is X?",
                    "ground_truth": "X is a scanner.",
                    "answers": {"model-a": "X is a scanner. It scans."},
                }
            )
            + "\n"
        )
        script = tmp_path / "script.jsonl"
        script.write_text(
            json.dumps({"output": '{"TP": ["X is a scanner"], "FP": [], "FN": []}'}) + "\n"
        )
        code = main(
            ["eval", "metrics", "--items", str(items), "--judge-script", str(script)]
        )
        assert code == 0
        assert "model-a" in capsys.readouterr().out


class TestIngestAndQuery:
    def test_ingest_then_query_roundtrip(self, tmp_path, capsys):
        src = tmp_path / "exploits.jsonl"
        src.write_text(
            json.dumps({"id": "exp-1", "text": "# CVE-2017-5162 BINOM3 exploit\ncode"})
            + "\n"
            + json.dumps({"id": "exp-2", "text": "# unrelated\ncode"})
            + "\n"
        )
        out_dir = tmp_path / "kb"
        assert (
            main(["ingest", str(src), "--kind", "exploitdb", "--out", str(out_dir)])
            == 0
        )
        assert (out_dir / "manifest.json").exists()
        capsys.readouterr()
        code = main(["query", "What is CVE-2017-5162?", "--kb", str(out_dir), "--json"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["path"] == "structured"
        assert any(
            seg["retriever_id"] == "exploitdb" for seg in payload["context_segments"]
        )

    def test_query_without_kb_is_runtime_error(self, tmp_path, capsys):
        code = main(["query", "hello", "--kb", str(tmp_path / "missing")])
        assert code == 2
        assert "missing" in capsys.readouterr().err

    def test_unknown_command_is_usage_error(self):
        assert main(["frobnicate"]) == 1

    def test_unknown_kind_is_usage_error(self, tmp_path):
        assert (
            main(["ingest", str(tmp_path), "--kind", "mystery", "--out", "kb"]) == 1
        )
