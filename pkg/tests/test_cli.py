from __future__ import annotations

import json

import pytest

from convmr.cli import EXIT_GENERATOR_FAILURES, EXIT_OK, EXIT_VALIDATION, main
from convmr.corpus import load_examples, load_knowledge_base
from convmr.harness import RunConfig, prepare_instances
from convmr.synthetic import perfect_table


@pytest.fixture
def cli_corpus(corpus_dir, tmp_path):
    config = RunConfig(kb_path=corpus_dir["kb"], data_path=corpus_dir["data"], split="dev")
    kb = load_knowledge_base(config.kb_path)
    examples = load_examples(config.data_path, "dev")
    pairs = prepare_instances(kb, examples, config)
    script = tmp_path / "script.json"
    script.write_text(json.dumps(perfect_table(pairs)), encoding="utf-8")
    return {**corpus_dir, "script": script, "out": tmp_path}


def test_index_and_retrieve(cli_corpus):
    index_path = cli_corpus["out"] / "index.json"
    assert main(["index", "--kb", str(cli_corpus["kb"]), "--out", str(index_path)]) == EXIT_OK
    assert index_path.exists()

    hits_path = cli_corpus["out"] / "hits.jsonl"
    code = main([
        "retrieve", "--kb", str(cli_corpus["kb"]), "--data", str(cli_corpus["data"]),
        "--split", "dev", "--top-m", "3", "--out", str(hits_path),
    ])
    assert code == EXIT_OK
    rows = [json.loads(line) for line in hits_path.read_text().splitlines()]
    assert len(rows) == len(cli_corpus["examples"])
    assert all(len(row["results"]) == 3 for row in rows)
    assert all(row["results"][0]["rank"] == 1 for row in rows)

    # retrieval from the persisted index gives the same ranking
    hits2_path = cli_corpus["out"] / "hits2.jsonl"
    code = main([
        "retrieve", "--kb", str(cli_corpus["kb"]), "--data", str(cli_corpus["data"]),
        "--split", "dev", "--top-m", "3", "--index", str(index_path),
        "--out", str(hits2_path),
    ])
    assert code == EXIT_OK
    assert hits_path.read_text() == hits2_path.read_text()


def test_segment_command(cli_corpus):
    out_path = cli_corpus["out"] / "edus.jsonl"
    assert main(["segment", "--kb", str(cli_corpus["kb"]), "--out", str(out_path)]) == EXIT_OK
    rows = [json.loads(line) for line in out_path.read_text().splitlines()]
    assert all(row["edus"] for row in rows)


def test_export_instances(cli_corpus):
    out_path = cli_corpus["out"] / "instances.jsonl"
    code = main([
        "export-instances", "--kb", str(cli_corpus["kb"]), "--data", str(cli_corpus["data"]),
        "--split", "dev", "--out", str(out_path),
    ])
    assert code == EXIT_OK
    rows = [json.loads(line) for line in out_path.read_text().splitlines()]
    assert len(rows) == len(cli_corpus["examples"])
    assert all(set(row) == {"id", "input", "target"} for row in rows)
    assert all(row["input"].startswith("[QU]") for row in rows)


def test_run_eval_round_trip(cli_corpus):
    report_path = cli_corpus["out"] / "report.json"
    trace_path = cli_corpus["out"] / "trace.jsonl"
    code = main([
        "run", "--kb", str(cli_corpus["kb"]), "--data", str(cli_corpus["data"]),
        "--split", "dev", "--generator", f"scripted:{cli_corpus['script']}",
        "--out", str(report_path), "--trace", str(trace_path),
    ])
    assert code == EXIT_OK
    report = json.loads(report_path.read_text())
    assert report["micro"] == 1.0
    assert report["macro"] == 1.0
    assert report["f1_bleu1"]["f1"] == 1.0

    eval_path = cli_corpus["out"] / "offline.json"
    code = main(["eval", "--trace", str(trace_path), "--out", str(eval_path)])
    assert code == EXIT_OK
    assert json.loads(eval_path.read_text()) == report


def test_run_tsv_format(cli_corpus):
    report_path = cli_corpus["out"] / "report.tsv"
    code = main([
        "run", "--kb", str(cli_corpus["kb"]), "--data", str(cli_corpus["data"]),
        "--split", "dev", "--generator", f"scripted:{cli_corpus['script']}",
        "--out", str(report_path), "--format", "tsv",
    ])
    assert code == EXIT_OK
    lines = report_path.read_text().strip().split("\n")
    assert lines[0].startswith("subset\t")


def test_sweep_command_deterministic(cli_corpus):
    outs = []
    for run in range(2):
        out_path = cli_corpus["out"] / f"sweep{run}.tsv"
        code = main([
            "sweep", "--kb", str(cli_corpus["kb"]), "--data", str(cli_corpus["data"]),
            "--split", "dev", "--generator", f"scripted:{cli_corpus['script']}",
            "--param", "max-gen-len", "--values", "10,20,50,70",
            "--format", "tsv", "--out", str(out_path),
        ])
        assert code == EXIT_OK
        outs.append(out_path.read_bytes())
    assert outs[0] == outs[1]
    header = outs[0].decode().split("\n")[0].split("\t")
    assert len(header) == 1 + 4 * 4


def test_validation_error_exit_code(cli_corpus, tmp_path):
    missing = tmp_path / "missing.jsonl"
    code = main([
        "run", "--kb", str(cli_corpus["kb"]), "--data", str(cli_corpus["data"]),
        "--split", "dev",  # no --generator
    ])
    assert code == EXIT_VALIDATION

    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "r1", "source": "s", "text": ""}\n', encoding="utf-8")
    code = main(["index", "--kb", str(bad), "--out", str(tmp_path / "i.json")])
    assert code == EXIT_VALIDATION


def test_generator_failure_exit_code(cli_corpus):
    # empty scripted table: every output is the default "", parsed via fallback,
    # so generation itself never fails -> exit 0; a dead remote endpoint fails hard
    code = main([
        "run", "--kb", str(cli_corpus["kb"]), "--data", str(cli_corpus["data"]),
        "--split", "dev", "--generator", "remote:cmd:false",
    ])
    assert code in (EXIT_GENERATOR_FAILURES, EXIT_VALIDATION)
