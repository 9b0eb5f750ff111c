import json

import pytest

from conftest import FIXTURES, make_fact, write_mock_config
from factrag.cli import main
from factrag.extraction import merge_into_delta
from factrag.store import GraphStore

CORPUS = str(FIXTURES / "corpus")
DATASET = str(FIXTURES / "eval_dataset.jsonl")

MEDICAL_QUESTION = (
    "Which diagnosis matches serum creatinine 115-133 umol/L in male hypertensive patients?"
)


@pytest.fixture
def config_path(tmp_path):
    return str(write_mock_config(tmp_path))


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestBuild:
    def test_build_counts(self, config_path, capsys):
        code, out, _ = run(capsys, "--config", config_path, "build", CORPUS)
        assert code == 0
        assert "documents:        3" in out
        assert "chunks processed: 3" in out
        assert "facts extracted:  5" in out
        assert "entities:         12" in out
        assert "hyperedges:       5" in out
        assert "incidences:       16" in out
        assert "TP1kT" in out and "CP1kT" in out

    def test_rebuild_skips_known_chunks(self, config_path, capsys):
        run(capsys, "--config", config_path, "build", CORPUS)
        code, out, _ = run(capsys, "--config", config_path, "build", CORPUS)
        assert code == 0
        assert "chunks processed: 0" in out
        assert "chunks skipped:   3" in out
        assert "entities:         12" in out

    def test_empty_corpus_warns(self, config_path, tmp_path, capsys):
        empty = tmp_path / "empty_corpus"
        empty.mkdir()
        code, _, err = run(capsys, "--config", config_path, "build", str(empty))
        assert code == 0
        assert "corpus is empty" in err

    def test_missing_corpus_usage_error(self, config_path, capsys):
        code, _, err = run(capsys, "--config", config_path, "build", "/nonexistent/corpus")
        assert code == 1
        assert "error:" in err


class TestQuery:
    def test_plain_answer(self, config_path, capsys):
        run(capsys, "--config", config_path, "build", CORPUS)
        code, out, _ = run(capsys, "--config", config_path, "query", MEDICAL_QUESTION)
        assert code == 0
        assert out.strip() == "Mild serum creatinine elevation"

    def test_trace_shows_retrieval(self, config_path, capsys):
        run(capsys, "--config", config_path, "build", CORPUS)
        code, out, _ = run(capsys, "--config", config_path, "query", MEDICAL_QUESTION, "--trace")
        assert code == 0
        assert "query entities:" in out
        assert "hyperedge hits:" in out
        assert (
            "Male hypertensive patient with serum creatinine 115-133 umol/L" in out
        )
        assert "fused bundle:" in out

    def test_json_envelope(self, config_path, capsys):
        run(capsys, "--config", config_path, "build", CORPUS)
        code, out, _ = run(capsys, "--config", config_path, "query", MEDICAL_QUESTION, "--json")
        assert code == 0
        payload = json.loads(out)
        assert payload["ok"] is True
        assert payload["error"] is None
        assert payload["data"]["answer"] == "Mild serum creatinine elevation"
        assert payload["data"]["facts"]
        assert payload["usage"]["prompt_tokens"] > 0

    def test_degenerate_zero_k_still_answers(self, config_path, capsys):
        run(capsys, "--config", config_path, "build", CORPUS)
        code, out, _ = run(
            capsys,
            "--config", config_path,
            "query", MEDICAL_QUESTION,
            "--json",
            "--k-entities", "0",
            "--k-hyperedges", "0",
            "--k-chunks", "0",
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["ok"] is True
        assert payload["data"]["facts"] == []
        assert payload["data"]["answer"]

    def test_empty_store_usage_error(self, config_path, capsys):
        code, _, err = run(capsys, "--config", config_path, "query", "anything?")
        assert code == 1
        assert "empty" in err


class TestStats:
    def test_counts_after_build(self, config_path, capsys):
        run(capsys, "--config", config_path, "build", CORPUS)
        code, out, _ = run(capsys, "--config", config_path, "stats")
        assert code == 0
        assert "entities:         12" in out
        assert "hyperedges:       5" in out
        assert "incidences:       16" in out
        assert "chunks:           3" in out

    def test_single_fact_store(self, tmp_path, capsys):
        store_dir = tmp_path / "store"
        fact = make_fact("w binds x and y and z", ["w", "x", "y", "z"])
        GraphStore(store_dir).apply_delta(merge_into_delta([fact]))
        config = str(write_mock_config(tmp_path, store_dir=store_dir))
        code, out, _ = run(capsys, "--config", config, "stats")
        assert code == 0
        assert "entities:         4" in out
        assert "hyperedges:       1" in out
        assert "  4: 1" in out  # arity histogram

    def test_dot_output(self, config_path, tmp_path, capsys):
        run(capsys, "--config", config_path, "build", CORPUS)
        dot_path = tmp_path / "graph.dot"
        code, _, _ = run(capsys, "--config", config_path, "stats", "--dot", str(dot_path))
        assert code == 0
        dot = dot_path.read_text(encoding="utf-8")
        assert dot.startswith("graph knowledge {")
        assert dot.count(" -- ") == 16


class TestEval:
    def test_aggregate_table(self, config_path, tmp_path, capsys):
        run(capsys, "--config", config_path, "build", CORPUS)
        out_path = tmp_path / "report.json"
        code, out, _ = run(
            capsys, "--config", config_path, "eval", DATASET, "--output", str(out_path)
        )
        assert code == 0
        for group in ("binary", "nary", "overall"):
            assert group in out
        assert "TPQ" in out and "CP1kQ" in out
        report = json.loads(out_path.read_text(encoding="utf-8"))
        assert len(report["items"]) == 4
        assert report["aggregates"]["overall"]["count"] == 4

    def test_limit(self, config_path, tmp_path, capsys):
        run(capsys, "--config", config_path, "build", CORPUS)
        out_path = tmp_path / "report.json"
        code, out, _ = run(
            capsys,
            "--config", config_path,
            "eval", DATASET, "--limit", "2", "--output", str(out_path),
        )
        assert code == 0
        report = json.loads(out_path.read_text(encoding="utf-8"))
        assert len(report["items"]) == 2

    def test_missing_dataset(self, config_path, capsys):
        code, _, err = run(capsys, "--config", config_path, "eval", "/nonexistent.jsonl")
        assert code == 1
        assert "error:" in err


class TestErrors:
    def test_unknown_config_key(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("no_such_option: 1\n", encoding="utf-8")
        code, _, err = run(capsys, "--config", str(bad), "stats")
        assert code == 1
        assert "error:" in err
