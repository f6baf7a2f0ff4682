import json

import numpy as np
import pytest

from ioparse.cli import build_parser, main
from ioparse.parser import parse_sexpr
from ioparse.synth import SynthGrammar, write_dataset


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    write_dataset(str(d), n=60, seed=5, dim=8, prefix="tiny")
    return d


def _train_args(d, out, extra=()):
    return [
        "train",
        "--corpus", str(d / "tiny_corpus.txt"),
        "--embeddings", str(d / "tiny_embeddings.txt"),
        "--out", str(out),
        "--dim", "8", "--embed-dim", "8",
        "--steps", "4", "--batch", "8", "--negatives", "6",
        "--seed", "3", "--quiet",
        *extra,
    ]


@pytest.fixture(scope="module")
def checkpoint(workdir):
    path = workdir / "model.ckpt"
    assert main(_train_args(workdir, path)) == 0
    return path


class TestTrain:
    def test_deterministic_checkpoints(self, workdir, tmp_path):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        assert main(_train_args(workdir, a)) == 0
        assert main(_train_args(workdir, b)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_corpus_names_path(self, tmp_path, capsys):
        missing = tmp_path / "nope.txt"
        code = main(
            ["train", "--corpus", str(missing), "--out", str(tmp_path / "x.ckpt")]
        )
        assert code == 2
        assert str(missing) in capsys.readouterr().err

    def test_flag_echo_in_checkpoint(self, workdir, tmp_path):
        out = tmp_path / "flags.ckpt"
        code = main(
            _train_args(
                workdir, out,
                extra=["--compose", "mlp", "--kernel", "--loss", "softmax", "--share"],
            )
        )
        assert code == 0
        from ioparse.trainer import Checkpoint

        cfg = Checkpoint.load(str(out)).config
        assert cfg["compose"] == "mlp"
        assert cfg["kernel"] is True
        assert cfg["loss"] == "softmax"
        assert cfg["share"] is True

    def test_usage_error_exit_code(self):
        assert main(["train", "--corpus"]) == 1
        assert main(["bogus-command"]) == 1

    def test_numeric_divergence_exit_code(self, workdir, tmp_path, capsys):
        out = tmp_path / "diverged.ckpt"
        with np.errstate(over="ignore", invalid="ignore"):
            code = main(_train_args(workdir, out, extra=["--lr", "1e200"]))
        assert code == 3
        assert "divergence" in capsys.readouterr().err

    def test_config_file_precedence(self, workdir, tmp_path):
        from ioparse.trainer import Checkpoint

        cfg = tmp_path / "train.json"
        cfg.write_text(json.dumps({"dim": 8, "loss": "softmax", "seed": 5}))
        out = tmp_path / "cfg.ckpt"
        code = main([
            "train", "--corpus", str(workdir / "tiny_corpus.txt"),
            "--embeddings", str(workdir / "tiny_embeddings.txt"),
            "--out", str(out), "--config", str(cfg),
            "--embed-dim", "8",
            "--steps", "2", "--batch", "8", "--negatives", "4",
            "--seed", "3", "--quiet",
        ])
        assert code == 0
        echoed = Checkpoint.load(str(out)).config
        assert echoed["dim"] == 8  # from the file
        assert echoed["loss"] == "softmax"  # from the file
        assert echoed["seed"] == 3  # flag beats file
        assert echoed["steps"] == 2  # flag beats default

    def test_config_file_unknown_field(self, workdir, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"learning_rate": 1.0}))
        code = main([
            "train", "--corpus", str(workdir / "tiny_corpus.txt"),
            "--out", str(tmp_path / "x.ckpt"), "--config", str(cfg), "--quiet",
        ])
        assert code == 2

    def test_validation_column_logged(self, workdir, tmp_path, capsys):
        out = tmp_path / "val.ckpt"
        args = _train_args(workdir, out)
        args.remove("--quiet")
        args += ["--treebank", str(workdir / "tiny_treebank.txt")]
        code = main(args)
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 4
        assert all(len(l.split("\t")) >= 3 for l in lines)


class TestParse:
    def test_two_token_sentence_unique_tree(self, checkpoint, tmp_path, capsys):
        corpus = tmp_path / "two.txt"
        corpus.write_text("d00 na01\n", encoding="utf-8")
        code = main(["parse", "--checkpoint", str(checkpoint), "--corpus", str(corpus)])
        assert code == 0
        assert capsys.readouterr().out == "(d00 na01)\n"

    def test_pp_flag_roots_trailing_punct(self, checkpoint, tmp_path, capsys):
        corpus = tmp_path / "punct.txt"
        corpus.write_text("d00 na01 vi02 .\n", encoding="utf-8")
        code = main(
            ["parse", "--checkpoint", str(checkpoint), "--corpus", str(corpus), "--pp"]
        )
        assert code == 0
        tree = parse_sexpr(capsys.readouterr().out.strip())
        assert tree.children[1].token == "."

    def test_deterministic_output(self, checkpoint, workdir, tmp_path):
        out1, out2 = tmp_path / "p1.txt", tmp_path / "p2.txt"
        base = ["parse", "--checkpoint", str(checkpoint),
                "--corpus", str(workdir / "tiny_corpus.txt")]
        assert main(base + ["--out", str(out1)]) == 0
        assert main(base + ["--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_threads_match_single(self, checkpoint, workdir, tmp_path):
        out1, out2 = tmp_path / "t1.txt", tmp_path / "t4.txt"
        base = ["parse", "--checkpoint", str(checkpoint),
                "--corpus", str(workdir / "tiny_corpus.txt")]
        assert main(base + ["--threads", "1", "--out", str(out1)]) == 0
        assert main(base + ["--threads", "4", "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_show_scores_annotates(self, checkpoint, tmp_path, capsys):
        corpus = tmp_path / "three.txt"
        corpus.write_text("d00 na01 vi02\n", encoding="utf-8")
        code = main(
            ["parse", "--checkpoint", str(checkpoint), "--corpus", str(corpus),
             "--show-scores"]
        )
        assert code == 0
        assert "=" in capsys.readouterr().out

    def test_embedding_dimension_mismatch(self, checkpoint, workdir, tmp_path, capsys):
        bad = tmp_path / "bad_emb.txt"
        bad.write_text("d00 0.1 0.2\n", encoding="utf-8")
        code = main(
            ["parse", "--checkpoint", str(checkpoint),
             "--corpus", str(workdir / "tiny_corpus.txt"),
             "--embeddings", str(bad)]
        )
        assert code == 2


class TestEval:
    def test_identical_files_perfect_f1(self, checkpoint, workdir, tmp_path, capsys):
        preds = tmp_path / "preds.txt"
        code = main(["parse", "--checkpoint", str(checkpoint),
                     "--corpus", str(workdir / "tiny_corpus.txt"),
                     "--out", str(preds)])
        assert code == 0
        code = main(["eval", "--pred", str(preds), "--treebank", str(preds)])
        assert code == 0
        out = capsys.readouterr().out
        assert "f1\t1.0000" in out

    def test_hand_built_fixture(self, tmp_path, capsys):
        pred = tmp_path / "p.txt"
        gold = tmp_path / "g.txt"
        pred.write_text("((a b) c)\n(x (y z))\n", encoding="utf-8")
        gold.write_text("(a (b c))\n(x (y z))\n", encoding="utf-8")
        code = main(["eval", "--pred", str(pred), "--treebank", str(gold)])
        assert code == 0
        out = capsys.readouterr().out
        # pooled: sentence one matches trivially only (1/2), two fully (2/2)
        assert "f1\t0.7500" in out

    def test_count_mismatch_is_data_error(self, tmp_path):
        pred = tmp_path / "p.txt"
        gold = tmp_path / "g.txt"
        pred.write_text("(a b)\n", encoding="utf-8")
        gold.write_text("(a b)\n(c d)\n", encoding="utf-8")
        assert main(["eval", "--pred", str(pred), "--treebank", str(gold)]) == 2

    def test_wsj10_length_exclusion(self, tmp_path, capsys):
        # eleven tokens incl. punct: stripped length 10 stays, 11 drops
        pred = tmp_path / "p.txt"
        gold = tmp_path / "g.txt"
        ten = "(a (b (c (d (e (f (g (h (i (j .))))))))))"
        eleven = "(a (b (c (d (e (f (g (h (i (j (k .)))))))))))"
        pred.write_text(f"{ten}\n{eleven}\n", encoding="utf-8")
        gold.write_text(f"{ten}\n{eleven}\n", encoding="utf-8")
        code = main(["eval", "--pred", str(pred), "--treebank", str(gold),
                     "--preset", "wsj10"])
        assert code == 0
        out = capsys.readouterr().out
        assert "sentences\t1" in out
        assert "skipped\t1" in out

    def test_json_report(self, tmp_path):
        pred = tmp_path / "p.txt"
        pred.write_text("((a b) c)\n", encoding="utf-8")
        out = tmp_path / "report.json"
        assert main(["eval", "--pred", str(pred), "--treebank", str(pred),
                     "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert payload["f1"] == 1.0


class TestPhrases:
    def test_report_rows(self, checkpoint, workdir, capsys):
        code = main(["phrases", "--checkpoint", str(checkpoint),
                     "--treebank", str(workdir / "tiny_treebank.txt")])
        assert code == 0
        out = capsys.readouterr().out
        assert "P@1\t" in out
        assert "P@10\t" in out
        assert "P@100\t" in out

    def test_matches_module_oracle(self, checkpoint, workdir, tmp_path, capsys):
        code = main(["phrases", "--checkpoint", str(checkpoint),
                     "--treebank", str(workdir / "tiny_treebank.txt"),
                     "--out", str(tmp_path / "p.json")])
        assert code == 0
        payload = json.loads((tmp_path / "p.json").read_text())

        from ioparse.chart import fill_chart
        from ioparse.evaluation import labeled_spans, phrase_precision_at_k
        from ioparse.parser import read_treebank
        from ioparse.trainer import Checkpoint
        from ioparse import numeric as nm

        ckpt = Checkpoint.load(str(checkpoint))
        params = ckpt.build_params()
        table = ckpt.embedding_table()
        reps, labels = [], []
        with nm.no_grad():
            for tree in read_treebank(str(workdir / "tiny_treebank.txt")):
                chart = fill_chart(
                    np.stack([table.vector(t) for t in tree.tokens()]), params
                )
                for start, length, label in labeled_spans(tree):
                    reps.append(chart.span_representation((start, length)))
                    labels.append(label)
        expected = phrase_precision_at_k(np.stack(reps), labels, 1)
        assert payload["P@1"] == pytest.approx(expected)


class TestHelpReflection:
    def test_every_flag_documented_in_help(self):
        parser = build_parser()
        subparsers = parser._subparsers._group_actions[0].choices
        for name, sub in subparsers.items():
            text = sub.format_help()
            for action in sub._actions:
                for opt in action.option_strings:
                    assert opt in text, f"{name} is missing {opt} in --help"

    def test_required_interface_flags_exist(self):
        parser = build_parser()
        subparsers = parser._subparsers._group_actions[0].choices
        all_flags = {
            opt
            for sub in subparsers.values()
            for action in sub._actions
            for opt in action.option_strings
        }
        required = {
            "--corpus", "--embeddings", "--treebank", "--checkpoint", "--dim",
            "--lr", "--batch", "--steps", "--loss", "--compose", "--kernel",
            "--share", "--negatives", "--seed", "--preset", "--pp", "--threads",
            "--out",
        }
        missing = required - all_flags
        assert not missing, missing
