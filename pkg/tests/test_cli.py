import json

import numpy as np
import pytest

import synthetic
from seqlab import checkpoint, cli, crf, trainer
from seqlab.corpus import Sentence, read_column_corpus, write_column_corpus
from seqlab.trainer import HyperParams


def write_pos_corpus(path, sentences):
    write_column_corpus(path, sentences, ("token", "label"))


@pytest.fixture
def pos_setup(tmp_path):
    sents = synthetic.separable_corpus(20, seed=21)
    train = tmp_path / "train.col"
    dev = tmp_path / "dev.col"
    write_pos_corpus(train, sents[:15])
    write_pos_corpus(dev, sents[15:])
    return tmp_path, train, dev, sents


def run_cli(args):
    return cli.main(args)


TRAIN_ARGS = [
    "--set", "task=POS", "--set", "language=EN", "--set", "mode=discrete",
    "--set", "epochs=4", "--set", "seed=3",
]


class TestConfig:
    def test_config_file_plus_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("task = POS\nmode = discrete\n# comment\nepochs=7\n", encoding="utf-8")
        config = cli.RunConfig.load(cfg, ["epochs=9", "seed=4"])
        assert config.task == "POS"
        assert config.values["epochs"] == 9
        assert config.values["seed"] == 4

    def test_unknown_key_rejected(self):
        with pytest.raises(cli.ConfigError):
            cli.RunConfig.load(None, ["no_such_key=1"])

    def test_bad_value_types(self):
        with pytest.raises(ValueError):
            cli.RunConfig.load(None, ["epochs=three"])
        with pytest.raises(cli.ConfigError):
            cli.RunConfig.load(None, ["shuffle=maybe"])

    def test_hypers_override(self):
        config = cli.RunConfig.load(None, ["eta=0.1", "dropout=0.5", "l2=0.0"])
        h = config.hypers()
        assert (h.eta, h.dropout_p, h.l2) == (0.1, 0.5, 0.0)

    @pytest.mark.parametrize(
        "command,overrides",
        [
            ("train", ["task=POS"]),  # no train/dev/model_out at all
            ("train", ["task=POS", "train=/nonexistent", "dev=/nonexistent", "model_out=/tmp/x"]),
            ("predict", ["task=POS"]),
            ("eval", ["task=POS"]),
            ("compare", ["task=POS"]),
        ],
    )
    def test_missing_inputs_fail_before_work(self, command, overrides, capsys):
        args = [command]
        for item in overrides:
            args += ["--set", item]
        assert run_cli(args) == 2
        assert "error:" in capsys.readouterr().err


class TestTrainCommand:
    def test_smoke_writes_checkpoint_and_report(self, pos_setup, capsys):
        tmp_path, train, dev, _ = pos_setup
        model_out = tmp_path / "m.bin"
        summary = tmp_path / "summary.tsv"
        status = run_cli(
            ["train", *TRAIN_ARGS,
             "--set", f"train={train}", "--set", f"dev={dev}",
             "--set", f"model_out={model_out}", "--set", f"report_summary={summary}"]
        )
        assert status == 0
        assert model_out.exists()
        lines = summary.read_text().splitlines()
        assert len(lines) == 4
        assert all(len(line.split("\t")) == 3 for line in lines)
        record = json.loads(capsys.readouterr().out)
        assert record["command"] == "train"
        assert 0.0 <= record["dev_metric"] <= 1.0

    def test_missing_dev_fails_before_training(self, pos_setup, capsys):
        tmp_path, train, _, _ = pos_setup
        model_out = tmp_path / "m.bin"
        status = run_cli(
            ["train", *TRAIN_ARGS,
             "--set", f"train={train}", "--set", f"dev={tmp_path/'missing.col'}",
             "--set", f"model_out={model_out}"]
        )
        assert status == 2
        assert not model_out.exists()

    def test_same_seed_same_bytes(self, pos_setup):
        tmp_path, train, dev, _ = pos_setup
        blobs = []
        for tag in ("a", "b"):
            model_out = tmp_path / f"m{tag}.bin"
            summary = tmp_path / f"s{tag}.tsv"
            assert run_cli(
                ["train", *TRAIN_ARGS,
                 "--set", f"train={train}", "--set", f"dev={dev}",
                 "--set", f"model_out={model_out}", "--set", f"report_summary={summary}"]
            ) == 0
            blobs.append((model_out.read_bytes(), summary.read_bytes()))
        assert blobs[0] == blobs[1]


class TestPredictCommand:
    def train_once(self, pos_setup):
        tmp_path, train, dev, sents = pos_setup
        model_out = tmp_path / "m.bin"
        assert run_cli(
            ["train", *TRAIN_ARGS, "--set", "epochs=8",
             "--set", f"train={train}", "--set", f"dev={dev}",
             "--set", f"model_out={model_out}"]
        ) == 0
        return tmp_path, train, model_out, sents

    def test_reproduces_gold_on_training_data(self, pos_setup):
        tmp_path, train, model_out, sents = self.train_once(pos_setup)
        out = tmp_path / "pred.col"
        assert run_cli(
            ["predict", "--set", "task=POS",
             "--set", f"model_in={model_out}", "--set", f"input={train}",
             "--set", f"output={out}"]
        ) == 0
        predicted = read_column_corpus(out)
        assert [p.gold_labels for p in predicted] == [s.gold_labels for s in sents[:15]]

    def test_unlabeled_input(self, pos_setup, tmp_path):
        _, train, model_out, sents = self.train_once(pos_setup)
        bare = tmp_path / "bare.col"
        write_column_corpus(bare, [Sentence(tokens=s.tokens) for s in sents[:3]], ("token",))
        out = tmp_path / "pred.col"
        assert run_cli(
            ["predict", "--set", "task=POS",
             "--set", f"model_in={model_out}", "--set", f"input={bare}",
             "--set", f"output={out}"]
        ) == 0
        assert len(read_column_corpus(out)) == 3

    def test_empty_input_empty_output(self, pos_setup, tmp_path):
        _, _, model_out, _ = self.train_once(pos_setup)
        empty = tmp_path / "empty.col"
        empty.write_text("", encoding="utf-8")
        out = tmp_path / "pred.col"
        assert run_cli(
            ["predict", "--set", "task=POS",
             "--set", f"model_in={model_out}", "--set", f"input={empty}",
             "--set", f"output={out}"]
        ) == 0
        assert out.read_text() == ""

    def test_task_mismatch_rejected(self, pos_setup, capsys):
        tmp_path, train, model_out, _ = self.train_once(pos_setup)
        out = tmp_path / "pred.col"
        status = run_cli(
            ["predict", "--set", "task=SEG",
             "--set", f"model_in={model_out}", "--set", f"input={train}",
             "--set", f"output={out}"]
        )
        assert status == 2

    def test_corrupted_checkpoint_diagnostics(self, pos_setup, tmp_path, capsys):
        _, train, model_out, _ = self.train_once(pos_setup)
        corrupt = tmp_path / "bad.bin"
        corrupt.write_bytes(b"XXXX" + model_out.read_bytes()[4:])
        status = run_cli(
            ["predict", "--set", "task=POS",
             "--set", f"model_in={corrupt}", "--set", f"input={train}",
             "--set", f"output={tmp_path/'p.col'}"]
        )
        assert status == 2
        assert "magic" in capsys.readouterr().err


class TestEvalCommand:
    def test_identical_files_perfect(self, pos_setup, capsys):
        tmp_path, train, _, _ = pos_setup
        assert run_cli(
            ["eval", "--set", "task=POS",
             "--set", f"gold={train}", "--set", f"predictions={train}"]
        ) == 0
        record = json.loads(capsys.readouterr().out)
        assert record["accuracy"] == 1.0

    def test_misaligned_rejected(self, pos_setup, tmp_path):
        _, train, _, sents = pos_setup
        other = tmp_path / "other.col"
        write_pos_corpus(other, sents[:3])
        assert run_cli(
            ["eval", "--set", "task=POS",
             "--set", f"gold={train}", "--set", f"predictions={other}"]
        ) == 2


class TestCompareCommand:
    def test_self_comparison_is_diagonal(self, pos_setup, tmp_path):
        tmp, train, dev, _ = pos_setup
        model_out = tmp / "m.bin"
        assert run_cli(
            ["train", *TRAIN_ARGS,
             "--set", f"train={train}", "--set", f"dev={dev}",
             "--set", f"model_out={model_out}"]
        ) == 0
        out = tmp_path / "cmp.tsv"
        assert run_cli(
            ["compare", "--set", "task=POS",
             "--set", f"model_a={model_out}", "--set", f"model_b={model_out}",
             "--set", f"input={dev}", "--set", f"compare_out={out}"]
        ) == 0
        rows = [line.split("\t") for line in out.read_text().splitlines()]
        assert rows and all(a == b for _, a, b in rows)


class TestGradcheckCommand:
    def test_passes_and_reports(self, capsys):
        assert run_cli(["gradcheck", "--set", "mode=joint", "--set", "seed=1"]) == 0
        record = json.loads(capsys.readouterr().out)
        assert record["passed"] is True
        assert set(record["max_rel_err"]) >= {
            "theta_out", "theta_edge", "theta_dense", "tau", "lstm_weights",
            "lstm_biases", "embeddings",
        }
        assert all(v < record["tolerance"] for v in record["max_rel_err"].values())


class TestCheckpointRoundTrip:
    def test_decode_identical_after_reload(self, tmp_path):
        sents = synthetic.separable_corpus(10, seed=33)
        h = HyperParams(word_hidden=8, char_emb=3, word_emb=5, epochs=2, seed=2)
        model = trainer.build_model("joint", "POS", "EN", sents, h)
        best, _ = trainer.train(model, sents, sents, h, "POS")
        path = tmp_path / "m.bin"
        checkpoint.save_model(path, best, {"task": "POS"})
        reloaded, meta = checkpoint.load_model(path)
        assert meta == {"task": "POS"}
        rng = np.random.default_rng(5)
        vocab = [t for s in sents for t in s.tokens]
        for _ in range(30):
            toks = list(rng.choice(vocab, size=int(rng.integers(1, 9))))
            sent = Sentence(tokens=toks)
            a = crf.viterbi(crf.build_lattice(best, sent))
            b = crf.viterbi(crf.build_lattice(reloaded, sent))
            assert np.array_equal(a.labels, b.labels)
            assert a.score == b.score

    def test_truncated_file_rejected(self, tmp_path):
        sents = synthetic.separable_corpus(5, seed=1)
        model = trainer.build_model("discrete", "POS", "EN", sents, HyperParams())
        path = tmp_path / "m.bin"
        checkpoint.save_model(path, model, {"task": "POS"})
        blob = path.read_bytes()
        (tmp_path / "t.bin").write_bytes(blob[: len(blob) - 16])
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.load_model(tmp_path / "t.bin")

    def test_version_diagnostics(self, tmp_path):
        sents = synthetic.separable_corpus(5, seed=1)
        model = trainer.build_model("discrete", "POS", "EN", sents, HyperParams())
        path = tmp_path / "m.bin"
        checkpoint.save_model(path, model, {"task": "POS"})
        blob = bytearray(path.read_bytes())
        blob[4] = 99  # bump the version field
        (tmp_path / "v.bin").write_bytes(bytes(blob))
        with pytest.raises(checkpoint.CheckpointError, match="version"):
            checkpoint.load_model(tmp_path / "v.bin")
