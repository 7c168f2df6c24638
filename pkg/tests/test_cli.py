from __future__ import annotations

import json

import pytest

from conftest import GOLDEN, write_tsv_file
from lident.cli import build_parser, main
from lident.corpus import read_tsv


@pytest.fixture(autouse=True)
def fixed_terminal_width(monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")
    monkeypatch.delenv("LIDENT_SEED", raising=False)


@pytest.fixture
def toy_tsv(tmp_path):
    return write_tsv_file(
        tmp_path / "train.tsv",
        [
            ("bonjour le monde entier", "fr"),
            ("bonsoir les amis proches", "fr"),
            ("salut tout le monde", "fr"),
            ("hola mundo entero amigos", "es"),
            ("buenos dias queridos amigos", "es"),
            ("adios mundo cruel amigo", "es"),
        ],
    )


@pytest.fixture
def clstm_cfg(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(
        "seq_len = 24\n"
        "conv_features = 2\n"
        "conv_kernels = 3,2,2\n"
        "pools = 2,2,2\n"
        "lstm_hidden = 2\n"
        "dense_units = 4\n"
        "dropout_rate = 0.2\n"
        "epochs = 2\n"
        "batch_size = 4\n"
        "# trailing comment\n",
        encoding="utf-8",
    )
    return cfg


class TestHelpGolden:
    @pytest.mark.parametrize("name", ["main", "train", "predict", "eval", "sweep", "stats"])
    def test_help_matches_golden(self, name, capsys):
        argv = ["--help"] if name == "main" else [name, "--help"]
        assert main(argv) == 0
        assert capsys.readouterr().out == (GOLDEN / f"help_{name}.txt").read_text()

    def test_every_flag_documented(self, capsys):
        parser = build_parser()
        sub_actions = next(a for a in parser._actions if a.dest == "command")
        for name, sub in sub_actions.choices.items():
            assert main([name, "--help"]) == 0
            out = capsys.readouterr().out
            for action in sub._actions:
                for option in action.option_strings:
                    assert option in out, f"{option} missing from {name} --help"


class TestTrainCommand:
    def test_ngram_train_creates_model(self, toy_tsv, tmp_path, capsys):
        out = tmp_path / "m.lidn"
        code = main(["train", "--kind", "ngram", "--n", "2", "--alpha", "0.1",
                     "--train", str(toy_tsv), "--out", str(out)])
        assert code == 0
        assert out.exists()
        summary = capsys.readouterr().out
        assert "2 labels" in summary and "6 instances" in summary

    def test_ngram_train_idempotent_bytes(self, toy_tsv, tmp_path):
        a, b = tmp_path / "a.lidn", tmp_path / "b.lidn"
        base = ["train", "--kind", "ngram", "--n", "3", "--train", str(toy_tsv)]
        assert main(base + ["--out", str(a)]) == 0
        assert main(base + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_invalid_order_is_usage_error(self, toy_tsv, tmp_path, capsys):
        code = main(["train", "--kind", "ngram", "--n", "0",
                     "--train", str(toy_tsv), "--out", str(tmp_path / "m")])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_missing_train_file(self, tmp_path, capsys):
        code = main(["train", "--kind", "ngram", "--train", str(tmp_path / "nope.tsv"),
                     "--out", str(tmp_path / "m")])
        assert code == 1

    def test_kind_flag_groups_are_exclusive(self, toy_tsv, tmp_path, capsys):
        code = main(["train", "--kind", "ngram", "--epochs", "3",
                     "--train", str(toy_tsv), "--out", str(tmp_path / "m")])
        assert code == 1
        assert "not valid with --kind ngram" in capsys.readouterr().err
        code = main(["train", "--kind", "clstm", "--n", "4",
                     "--train", str(toy_tsv), "--out", str(tmp_path / "m")])
        assert code == 1
        assert "not valid with --kind clstm" in capsys.readouterr().err

    def test_no_partial_output_on_failure(self, tmp_path, capsys):
        bad = tmp_path / "bad.tsv"
        bad.write_text("no tab on this line\n", encoding="utf-8")
        out = tmp_path / "m.lidn"
        assert main(["train", "--kind", "ngram", "--train", str(bad), "--out", str(out)]) == 1
        assert not out.exists()

    def test_clstm_train_deterministic_and_history(self, toy_tsv, clstm_cfg, tmp_path):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        history = tmp_path / "h.csv"
        base = ["train", "--kind", "clstm", "--train", str(toy_tsv), "--dev", str(toy_tsv),
                "--config", str(clstm_cfg), "--seed", "1"]
        assert main(base + ["--out", str(a), "--history", str(history)]) == 0
        assert main(base + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        lines = history.read_text().strip().split("\n")
        assert lines[0] == "epoch,train_loss,dev_accuracy"
        assert len(lines) == 3

    def test_env_seed_fallback_matches_flag(self, toy_tsv, clstm_cfg, tmp_path, monkeypatch):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        base = ["train", "--kind", "clstm", "--train", str(toy_tsv),
                "--config", str(clstm_cfg)]
        monkeypatch.setenv("LIDENT_SEED", "5")
        assert main(base + ["--out", str(a)]) == 0
        monkeypatch.delenv("LIDENT_SEED")
        assert main(base + ["--out", str(b), "--seed", "5"]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_config_file_seed_not_clobbered(self, toy_tsv, clstm_cfg, tmp_path):
        seeded_cfg = tmp_path / "seeded.cfg"
        seeded_cfg.write_text(clstm_cfg.read_text() + "seed = 9\n", encoding="utf-8")
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        assert main(["train", "--kind", "clstm", "--train", str(toy_tsv),
                     "--config", str(seeded_cfg), "--out", str(a)]) == 0
        assert main(["train", "--kind", "clstm", "--train", str(toy_tsv),
                     "--config", str(clstm_cfg), "--seed", "9", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_bad_config_key_reported(self, toy_tsv, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("not_a_key = 3\n", encoding="utf-8")
        code = main(["train", "--kind", "clstm", "--train", str(toy_tsv),
                     "--config", str(cfg), "--out", str(tmp_path / "m")])
        assert code == 1
        assert "not_a_key" in capsys.readouterr().err

    def test_divergence_exit_code(self, toy_tsv, clstm_cfg, tmp_path, capsys):
        import numpy as np

        with np.errstate(over="ignore", invalid="ignore"):
            code = main(["train", "--kind", "clstm", "--train", str(toy_tsv),
                         "--config", str(clstm_cfg), "--lr", "1e308",
                         "--out", str(tmp_path / "m.ckpt")])
        assert code == 2
        assert "non-finite" in capsys.readouterr().err
        assert not (tmp_path / "m.ckpt").exists()


class TestPredictCommand:
    @pytest.fixture
    def model_path(self, toy_tsv, tmp_path):
        out = tmp_path / "m.lidn"
        assert main(["train", "--kind", "ngram", "--n", "2",
                     "--train", str(toy_tsv), "--out", str(out)]) == 0
        return out

    def test_one_label_per_line(self, model_path, tmp_path, capsys):
        inp = tmp_path / "texts.txt"
        inp.write_text("bonjour les amis\nhola amigos\nbonsoir\n", encoding="utf-8")
        capsys.readouterr()
        assert main(["predict", "--model", str(model_path), "--input", str(inp)]) == 0
        assert capsys.readouterr().out == "fr\nes\nfr\n"

    def test_scores_column_count(self, model_path, tmp_path, capsys):
        inp = tmp_path / "texts.txt"
        inp.write_text("bonjour\nhola\n", encoding="utf-8")
        capsys.readouterr()
        assert main(["predict", "--model", str(model_path), "--input", str(inp), "--scores"]) == 0
        for line in capsys.readouterr().out.strip().split("\n"):
            assert len(line.split("\t")) == 1 + 2  # best + one score per label

    def test_empty_input(self, model_path, tmp_path, capsys):
        inp = tmp_path / "empty.txt"
        inp.write_text("", encoding="utf-8")
        capsys.readouterr()
        assert main(["predict", "--model", str(model_path), "--input", str(inp)]) == 0
        assert capsys.readouterr().out == ""

    def test_dump_is_valid_json(self, model_path, capsys):
        assert main(["predict", "--model", str(model_path), "--dump"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["kind"] == "ngram"
        assert doc["labels"] == ["es", "fr"]

    def test_input_required_without_dump(self, model_path, capsys):
        assert main(["predict", "--model", str(model_path)]) == 1

    def test_unrecognized_model_file(self, tmp_path, capsys):
        bogus = tmp_path / "bogus.bin"
        bogus.write_bytes(b"XXXXsome junk")
        assert main(["predict", "--model", str(bogus), "--dump"]) == 1
        assert "not a recognized model" in capsys.readouterr().err


class TestEvalCommand:
    def test_from_matrix_with_groups(self, fixtures_dir, capsys):
        assert main(["eval", "--from-matrix", str(fixtures_dir / "confusion_ngram7.csv"),
                     "--groups", str(fixtures_dir / "groups.tsv"), "--format", "json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["accuracy"] == 10614 / 12000
        assert doc["group_split"]["cross_group_errors"] == 19

    def test_model_against_gold(self, toy_tsv, tmp_path, capsys):
        model = tmp_path / "m.lidn"
        assert main(["train", "--kind", "ngram", "--n", "2",
                     "--train", str(toy_tsv), "--out", str(model)]) == 0
        capsys.readouterr()
        assert main(["eval", "--model", str(model), "--gold", str(toy_tsv),
                     "--format", "json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["accuracy"] == 1.0
        assert all(row["f1"] == 1.0 for row in doc["per_class"])

    def test_unknown_gold_label_named(self, toy_tsv, tmp_path, capsys):
        model = tmp_path / "m.lidn"
        assert main(["train", "--kind", "ngram", "--n", "2",
                     "--train", str(toy_tsv), "--out", str(model)]) == 0
        gold = write_tsv_file(tmp_path / "gold.tsv", [("hello there", "en")])
        assert main(["eval", "--model", str(model), "--gold", str(gold)]) == 1
        assert "'en'" in capsys.readouterr().err

    def test_needs_exactly_one_source(self, fixtures_dir, toy_tsv, tmp_path, capsys):
        assert main(["eval", "--format", "json"]) == 1
        model = tmp_path / "m.lidn"
        assert main(["train", "--kind", "ngram", "--train", str(toy_tsv),
                     "--out", str(model)]) == 0
        assert main(["eval", "--model", str(model),
                     "--from-matrix", str(fixtures_dir / "confusion_ngram7.csv")]) == 1

    def test_report_written_atomically(self, fixtures_dir, tmp_path):
        out = tmp_path / "report.json"
        assert main(["eval", "--from-matrix", str(fixtures_dir / "confusion_ngram7.csv"),
                     "--format", "json", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["accuracy"] == 10614 / 12000


class TestSweepCommand:
    def test_csv_shape(self, toy_tsv, capsys):
        assert main(["sweep", "--train", str(toy_tsv), "--dev", str(toy_tsv),
                     "--n-min", "1", "--n-max", "4"]) == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert lines[0] == "n,accuracy,model_table_entries,peak_memory_estimate"
        assert len(lines) == 5

    def test_inverted_range(self, toy_tsv, capsys):
        assert main(["sweep", "--train", str(toy_tsv), "--dev", str(toy_tsv),
                     "--n-min", "3", "--n-max", "2"]) == 1


class TestStatsCommand:
    def test_single_instance_exact(self, tmp_path, capsys):
        tsv = write_tsv_file(tmp_path / "one.tsv", [("a b", "L1")])
        assert main(["stats", "--input", str(tsv), "--format", "json"]) == 0
        rows = json.loads(capsys.readouterr().out)
        assert rows[0] == {"label": "L1", "count": 1, "avg_chars": 3.0, "avg_tokens": 2.0}
        assert rows[-1]["label"] == "TOTAL"

    def test_text_table(self, toy_tsv, capsys):
        assert main(["stats", "--input", str(toy_tsv)]) == 0
        out = capsys.readouterr().out
        assert "label" in out and "TOTAL" in out

    def test_missing_file(self, tmp_path, capsys):
        assert main(["stats", "--input", str(tmp_path / "nope.tsv")]) == 1


class TestArgparseBehavior:
    def test_unknown_subcommand_is_exit_one(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_missing_required_flag_is_exit_one(self, capsys):
        assert main(["train"]) == 1

    def test_roundtrip_corpus_unchanged_by_cli(self, toy_tsv):
        # the CLI must not normalize or reorder its inputs
        assert read_tsv(toy_tsv) == read_tsv(toy_tsv)
