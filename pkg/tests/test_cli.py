"""Operator CLI: full artifact pipeline, eval reports, chat REPL, errors."""

import json

import pytest
from click.testing import CliRunner

from polyfind import synthetic
from polyfind.cli import main
from polyfind.encoder import load_model
from polyfind.index import load_index

from conftest import CITY3_ENTITIES, city3_photo_rows, city3_texts

runner = CliRunner()


def run_ok(args, **kwargs):
    result = runner.invoke(main, args, catch_exceptions=False, **kwargs)
    assert result.exit_code == 0, result.output
    return result


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Artifacts produced end-to-end through the CLI itself."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus.tsv"
    corpus.write_text(
        "".join(f"{t}\t{t}\n" for t in dict.fromkeys(city3_texts())),
        encoding="utf-8")
    (root / "encoder.ini").write_text(
        "[encoder]\n"
        "embed_dim = 24\nhidden_dim = 32\nhidden_layers = 2\nout_dim = 24\n"
        "batch_size = 8\nepochs = 150\nlearn_rate = 0.5\nseed = 11\n",
        encoding="utf-8")
    synthetic.write_city(CITY3_ENTITIES, city3_photo_rows(),
                         root / "entities.json", root / "photos.jsonl")

    run_ok(["build-vocab", str(corpus), "-o", str(root / "vocab.txt"),
            "--min-count", "1"])
    run_ok(["train", str(corpus), "--vocab", str(root / "vocab.txt"),
            "--config", str(root / "encoder.ini"),
            "-o", str(root / "encoder.pfnd")])
    run_ok(["train-photos", str(root / "photos.jsonl"),
            "--model", str(root / "encoder.pfnd"),
            "--vocab", str(root / "vocab.txt"),
            "-o", str(root / "head.npz"), "--epochs", "5"])
    run_ok(["train-intents", "--model", str(root / "encoder.pfnd"),
            "--vocab", str(root / "vocab.txt"),
            "-o", str(root / "intents")])
    run_ok(["build-index", str(root / "entities.json"),
            str(root / "photos.jsonl"),
            "--model", str(root / "encoder.pfnd"),
            "--head", str(root / "head.npz"),
            "--vocab", str(root / "vocab.txt"),
            "-o", str(root / "testville.pfix")])
    (root / "service.ini").write_text(
        "[service]\nlisten = 127.0.0.1:8123\n"
        "[models]\n"
        f"vocab = {root / 'vocab.txt'}\n"
        f"model = {root / 'encoder.pfnd'}\n"
        "[flow]\nthreshold = 0.5\n"
        "[cities]\n"
        f"testville = {root / 'testville.pfix'}\n",
        encoding="utf-8")
    return root


class TestPipeline:
    def test_vocab_message_and_file(self, workspace):
        assert (workspace / "vocab.txt").exists()
        head = (workspace / "vocab.txt").read_text("utf-8").splitlines()[0]
        assert head.startswith("#polyfind-vocab")

    def test_trained_model_loads(self, workspace):
        model = load_model(workspace / "encoder.pfnd")
        assert model.cfg.out_dim == 24
        assert model.scale > 0.5  # scale grows during training

    def test_intent_artifacts_written(self, workspace):
        assert (workspace / "intents" / "reset.npz").exists()
        assert (workspace / "intents" / "booking.npz").exists()

    def test_index_stats_round_trip(self, workspace):
        index = load_index(workspace / "testville.pfix")
        assert index.stats.n_entities == 3
        assert index.stats.n_photos == 3

    def test_inspect_index_json(self, workspace):
        result = run_ok(["inspect-index", str(workspace / "testville.pfix")])
        stats = json.loads(result.output.strip())
        assert stats == {"city": "testville", "language": "en",
                         "candidates": 22, "n_entities": 3, "n_photos": 3,
                         "n_fact_sentences": 9, "n_review_sentences": 7}

    def test_approx_flag_accepted(self, workspace, tmp_path):
        out = tmp_path / "approx.pfix"
        run_ok(["build-index", str(workspace / "entities.json"),
                str(workspace / "photos.jsonl"),
                "--model", str(workspace / "encoder.pfnd"),
                "--head", str(workspace / "head.npz"),
                "--vocab", str(workspace / "vocab.txt"),
                "-o", str(out), "--approx"])
        assert out.exists()


class TestEval:
    def test_metrics_json_line(self, workspace):
        result = run_ok(["eval", "--corpus", str(workspace / "corpus.tsv"),
                         "--vocab", str(workspace / "vocab.txt"),
                         "--model", str(workspace / "encoder.pfnd")])
        metrics = json.loads(result.output.strip().splitlines()[-1])
        assert "recall@1" in metrics
        assert 0.0 <= metrics["recall@1"] <= 1.0
        # self-paired corpus with a trained encoder ranks itself well
        assert metrics["recall@1"] >= 0.5

    def test_report_dir_writes_tsv_and_figure(self, workspace, tmp_path):
        report = tmp_path / "report"
        run_ok(["eval", "--corpus", str(workspace / "corpus.tsv"),
                "--vocab", str(workspace / "vocab.txt"),
                "--model", str(workspace / "encoder.pfnd"),
                "--report-dir", str(report)])
        assert (report / "recall.tsv").exists()
        assert (report / "recall_at_k.png").exists()
        lines = (report / "recall.tsv").read_text("utf-8").splitlines()
        assert lines[0] == "k\trecall"
        assert all("\t" in line for line in lines[1:])
        assert (report / "recall_at_k.png").read_bytes()[:8] == \
            b"\x89PNG\r\n\x1a\n"


class TestChat:
    def test_scripted_session_narrows_to_one(self, workspace):
        result = run_ok(
            ["chat", "--config", str(workspace / "service.ini")],
            input="sourdough pizza heaven\n/quit\n")
        assert "chatting about testville (3 restaurants)" in result.output
        assert "[1 remaining, mode=search]" in result.output
        assert "Alpha Trattoria" in result.output
        assert result.output.rstrip().endswith("bye")

    def test_eof_terminates_cleanly(self, workspace):
        result = run_ok(["chat", "--config", str(workspace / "service.ini")],
                        input="")
        assert result.output.rstrip().endswith("bye")


class TestDemoData:
    def test_writes_three_files(self, tmp_path):
        out = tmp_path / "demo"
        run_ok(["demo-data", str(out), "--entities", "4", "--photos", "6",
                "--reviews", "10", "--pairs", "30"])
        entities = json.loads((out / "entities.json").read_text("utf-8"))
        assert len(entities) == 4
        photo_lines = [line for line in
                       (out / "photos.jsonl").read_text("utf-8").splitlines()
                       if line]
        assert len(photo_lines) == 6
        pair_lines = (out / "corpus.tsv").read_text("utf-8").splitlines()
        assert len(pair_lines) == 30
        assert all("\t" in line for line in pair_lines)


def read_pairs(path):
    lines = path.read_text("utf-8").splitlines()
    return [tuple(line.split("\t")) for line in lines if line]


class TestMakeChatCorpus:
    def catalog_texts(self, with_photos=True):
        texts = []
        for entity in CITY3_ENTITIES:
            texts.append(entity["name"])
            texts.extend(entity["reviews"])
            texts.extend(entity["menu_items"])
            texts.extend(v for v in entity["attributes"].values()
                         if isinstance(v, str))
        if with_photos:
            texts.extend(row["caption"] for row in city3_photo_rows()
                         if row["caption"])
        return list(dict.fromkeys(texts))

    def test_pair_counts_and_structure(self, workspace, tmp_path):
        out = tmp_path / "chat.tsv"
        run_ok(["make-chat-corpus", str(workspace / "entities.json"),
                str(workspace / "photos.jsonl"), "-o", str(out)])
        pairs = read_pairs(out)
        catalog = self.catalog_texts()
        # catalog self-pairs, then 20 reset + 20 booking + 20 negative lines
        assert len(pairs) == len(catalog) + 60
        assert pairs[:len(catalog)] == [(t, t) for t in catalog]
        reset = pairs[len(catalog):len(catalog) + 20]
        booking = pairs[len(catalog) + 20:len(catalog) + 40]
        negative = pairs[len(catalog) + 40:]
        assert {r for _, r in reset} == {
            "Okay, let's start over. "
            "What kind of restaurant are you looking for?"}
        assert {r for _, r in booking} == {
            "What date would you like to book {name} for?"}
        assert all(c == r for c, r in negative)
        assert len({c for c, _ in reset + booking + negative}) == 60

    def test_photos_argument_is_optional(self, workspace, tmp_path):
        out = tmp_path / "no_photos.tsv"
        run_ok(["make-chat-corpus", str(workspace / "entities.json"),
                "-o", str(out)])
        contexts = {c for c, _ in read_pairs(out)}
        assert "wood fired sourdough pizza" not in contexts
        assert CITY3_ENTITIES[0]["name"] in contexts

    def test_language_selects_templates_and_fixtures(self, workspace,
                                                     tmp_path):
        out = tmp_path / "chat_de.tsv"
        run_ok(["make-chat-corpus", str(workspace / "entities.json"),
                "-o", str(out), "--language", "de"])
        replies = {r for _, r in read_pairs(out)}
        assert ("Okay, fangen wir von vorne an. "
                "Welche Art von Restaurant suchen Sie?") in replies

    def test_trains_cleanly(self, workspace, tmp_path):
        corpus = tmp_path / "chat.tsv"
        run_ok(["make-chat-corpus", str(workspace / "entities.json"),
                str(workspace / "photos.jsonl"), "-o", str(corpus)])
        run_ok(["build-vocab", str(corpus), "-o", str(tmp_path / "vocab.txt"),
                "--min-count", "1"])
        result = run_ok(
            ["train", str(corpus), "--vocab", str(tmp_path / "vocab.txt"),
             "--epochs", "1", "--batch-size", "8", "--learn-rate", "0.1",
             "-o", str(tmp_path / "encoder.pfnd")])
        assert "scale=" in result.output
        model = load_model(tmp_path / "encoder.pfnd")
        assert 0.5 <= model.scale <= model.scale_max


class TestFailureModes:
    def test_empty_corpus_one_line_diagnostic(self, tmp_path):
        empty = tmp_path / "empty.tsv"
        empty.write_text("", encoding="utf-8")
        result = runner.invoke(
            main, ["build-vocab", str(empty), "-o", str(tmp_path / "v.txt")])
        assert result.exit_code == 1
        assert result.stderr.startswith("error: ")
        assert len(result.stderr.strip().splitlines()) == 1

    def test_corrupt_model_one_line_diagnostic(self, workspace, tmp_path):
        bad = tmp_path / "bad.pfnd"
        bad.write_bytes(b"not a model")
        result = runner.invoke(
            main, ["eval", "--corpus", str(workspace / "corpus.tsv"),
                   "--vocab", str(workspace / "vocab.txt"),
                   "--model", str(bad)])
        assert result.exit_code == 1
        assert result.stderr.startswith("error: ")

    def test_missing_file_rejected_by_click(self, tmp_path):
        result = runner.invoke(
            main, ["build-vocab", str(tmp_path / "ghost.tsv"),
                   "-o", str(tmp_path / "v.txt")])
        assert result.exit_code != 0

    def test_bad_provider_spec(self, workspace, tmp_path):
        result = runner.invoke(
            main, ["build-index", str(workspace / "entities.json"),
                   str(workspace / "photos.jsonl"),
                   "--model", str(workspace / "encoder.pfnd"),
                   "--head", str(workspace / "head.npz"),
                   "--vocab", str(workspace / "vocab.txt"),
                   "-o", str(tmp_path / "x.pfix"),
                   "--provider", "telepathy"])
        assert result.exit_code == 1
        assert "error:" in result.stderr


class TestVersion:
    def test_version_flag(self):
        result = run_ok(["--version"])
        assert "0.1.0" in result.output
