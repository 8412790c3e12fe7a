import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from linecomplete.cli import main

REPO_FILES = {
    "alpha/app.toy": 'def load(name):\n    data = read(name)\n    return data\n',
    "alpha/util.toy": 'def count(items):\n    total = size(items)\n    return total\n',
    "beta/main.toy": 'value = load("config")\nprint(value)\n',
    "beta/extra.toy": 'result = count(value)\nprint(result)\n',
    "gamma/one.toy": 'x = read("data")\ny = size(x)\n',
    "delta/two.toy": 'answer = load("config")\nprint(answer)\n',
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Corpus on disk plus the artifacts of the full CLI pipeline."""
    root = tmp_path_factory.mktemp("cli")
    corpus_dir = root / "corpus"
    for rel, text in REPO_FILES.items():
        path = corpus_dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)

    runner = CliRunner()
    paths = {
        "corpus": corpus_dir,
        "index": root / "index.tsv",
        "manifest": root / "manifest.tsv",
        "vocab": root / "vocab.tsv",
        "table": root / "literals.tsv",
        "ngram": root / "model.ngram",
        "ckpt": root / "model.ckpt",
        "report": root / "report.txt",
    }

    result = runner.invoke(
        main, ["ingest", "--root", str(corpus_dir), "--out", str(paths["index"])]
    )
    assert result.exit_code == 0, result.output

    result = runner.invoke(
        main,
        ["split", "--index", str(paths["index"]), "--seed", "3", "--out", str(paths["manifest"])],
    )
    assert result.exit_code == 0, result.output

    result = runner.invoke(
        main,
        [
            "train-vocab", "--manifest", str(paths["manifest"]),
            "--size", "400", "--keep-strings", "3", "--keep-numbers", "2",
            "--out", str(paths["vocab"]), "--table-out", str(paths["table"]),
        ],
    )
    assert result.exit_code == 0, result.output

    result = runner.invoke(
        main,
        [
            "train-ngram", "--manifest", str(paths["manifest"]),
            "--vocab", str(paths["vocab"]), "--table", str(paths["table"]),
            "-n", "3", "--out", str(paths["ngram"]),
        ],
    )
    assert result.exit_code == 0, result.output
    return {"runner": runner, "paths": paths}


def test_ingest_reports_counts(workspace):
    index_text = workspace["paths"]["index"].read_text()
    assert len(index_text.strip().split("\n")) == len(REPO_FILES)


def test_split_manifest_structure(workspace):
    lines = workspace["paths"]["manifest"].read_text().strip().split("\n")
    splits = {line.split("\t")[0] for line in lines}
    assert "train" in splits and "test" in splits


def test_lex_command(workspace, tmp_path):
    source = tmp_path / "sample.toy"
    source.write_text("x=1\n")
    result = workspace["runner"].invoke(main, ["lex", str(source)])
    assert result.exit_code == 0
    assert result.output == "x = <NUM_LIT>\n"


def test_lex_token_dump(workspace, tmp_path):
    source = tmp_path / "sample.toy"
    source.write_text("x = 1\n")
    result = workspace["runner"].invoke(main, ["lex", "--tokens", str(source)])
    assert result.exit_code == 0
    assert "identifier\tx" in result.output
    assert "num-lit-sentinel\t<NUM_LIT>" in result.output


def test_eval_with_ngram(workspace):
    paths = workspace["paths"]
    result = workspace["runner"].invoke(
        main,
        [
            "eval", "--manifest", str(paths["manifest"]),
            "--vocab", str(paths["vocab"]), "--table", str(paths["table"]),
            "--ngram", str(paths["ngram"]), "--split", "train",
            "--beam", "2", "--out", str(paths["report"]),
        ],
    )
    assert result.exit_code == 0, result.output
    assert paths["report"].exists()
    assert (paths["report"].parent / "report.txt.json").exists()
    report = json.loads((paths["report"].parent / "report.txt.json").read_text())
    assert 0.0 <= report["edit_similarity_pct"] <= 100.0


def test_complete_with_ngram(workspace):
    paths = workspace["paths"]
    result = workspace["runner"].invoke(
        main,
        [
            "complete", "--vocab", str(paths["vocab"]), "--table", str(paths["table"]),
            "--ngram", str(paths["ngram"]), "--json",
        ],
        input="value = load(",
    )
    assert result.exit_code == 0, result.output
    body = json.loads(result.output)
    assert body["schema"] == "v1"
    assert body["suggestions"]


def test_train_gptc_distill_and_golden_complete(workspace):
    paths = workspace["paths"]
    runner = workspace["runner"]
    result = runner.invoke(
        main,
        [
            "train-gptc", "--manifest", str(paths["manifest"]),
            "--vocab", str(paths["vocab"]), "--table", str(paths["table"]),
            "--layers", "2", "--d-model", "32", "--heads", "2", "--ctx", "64",
            "--epochs", "60", "--batch-size", "4", "--lr", "3e-3",
            "--warmup-epochs", "0", "--decay", "1.0",
            "--out", str(paths["ckpt"]),
        ],
    )
    assert result.exit_code == 0, result.output
    assert paths["ckpt"].read_bytes().startswith(b"gptc-ckpt v1\n")

    student = paths["ckpt"].parent / "student.ckpt"
    result = runner.invoke(
        main,
        ["distill", "--teacher", str(paths["ckpt"]), "--layers", "1", "--out", str(student)],
    )
    assert result.exit_code == 0, result.output
    assert student.exists()

    # Golden-fixture check: the CLI reproduces the library pipeline exactly
    # and is deterministic across invocations.
    from linecomplete import lexnorm, suggest
    from linecomplete.decoder import TransformerAdapter
    from linecomplete.model import load_checkpoint
    from linecomplete.service import CompletionEngine
    from linecomplete.vocab import read_vocabulary

    context = "value = load("
    engine = CompletionEngine(
        TransformerAdapter(load_checkpoint(paths["ckpt"])),
        read_vocabulary(paths["vocab"]),
        lexnorm.read_literal_table(paths["table"]),
    )
    expected = engine.complete(context, beam_width=3, max_len=24)
    golden = "".join(suggest.traverse_greedy(expected.trie)) + "\n"
    golden_file = paths["ckpt"].parent / "golden.txt"
    golden_file.write_text(golden)

    args = [
        "complete", "--vocab", str(paths["vocab"]), "--table", str(paths["table"]),
        "--ckpt", str(paths["ckpt"]),
    ]
    first = runner.invoke(main, args, input=context)
    second = runner.invoke(main, args, input=context)
    assert first.exit_code == 0, first.output
    assert first.output == second.output == golden_file.read_text()


def test_bench_call_table(workspace):
    result = workspace["runner"].invoke(
        main, ["bench", "--vocab-size", "32", "--scenario", "10,10", "--scenario", "10,1"]
    )
    assert result.exit_code == 0, result.output
    lines = [l for l in result.output.strip().split("\n") if l and l[0] != "a"]
    header, *rows = [l.split() for l in lines if not l.startswith("all modes")]
    assert header == ["L", "k", "sequential", "parallel", "cached"]
    for row in rows:
        length, width, seq, par, cached = (int(x) for x in row)
        assert par <= length
        assert cached <= length
        assert seq <= length * width


def test_unknown_flag_shows_usage(workspace):
    result = workspace["runner"].invoke(main, ["bench", "--no-such-flag"])
    assert result.exit_code != 0
    assert "no-such-flag" in result.output or "Usage" in result.output


def test_unknown_subcommand(workspace):
    result = workspace["runner"].invoke(main, ["frobnicate"])
    assert result.exit_code != 0
