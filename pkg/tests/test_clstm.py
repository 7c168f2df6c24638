from __future__ import annotations

import math

import numpy as np
import pytest

from lident import clstm
from lident.clstm import ClstmConfig
from lident.corpus import Charset, Corpus, build_charset
from lident.errors import (
    ChecksumError,
    CompatibilityError,
    ConfigError,
    DivergenceError,
    ModelIOError,
)
from reference import central_difference, max_rel_err
from synth import disjoint_corpus

# Small pipeline used across tests: 16 -> 14 -> 7 -> 6 -> 3 -> 2 -> 1
TINY = ClstmConfig(
    seq_len=16,
    charset_dim=4,
    conv_features=2,
    conv_kernels=(3, 2, 2),
    pools=(2, 2, 2),
    lstm_hidden=2,
    dense_units=4,
    dropout_rate=0.3,
    num_classes=2,
    seed=0,
)
TINY_CHARSET = Charset(tuple("abc"))


def tiny_batch(data_seed=1234, target=1):
    rng = np.random.default_rng(data_seed)
    text = "".join(rng.choice(list("abcz")) for _ in range(16))
    return clstm.encode_batch([text], [target], TINY_CHARSET, TINY.seq_len)


class TestConfig:
    def test_default_stage_lengths(self):
        assert ClstmConfig(num_classes=12).stage_lengths() == [250, 83, 77, 25, 23, 7]

    def test_short_input_collapses(self):
        cfg = ClstmConfig(seq_len=32, num_classes=3)
        with pytest.raises(ConfigError):
            cfg.stage_lengths()

    def test_validation_errors(self):
        with pytest.raises(ConfigError):
            ClstmConfig(num_classes=1).validate()
        with pytest.raises(ConfigError):
            ClstmConfig(num_classes=3, dropout_rate=1.0).validate()
        with pytest.raises(ConfigError):
            ClstmConfig(num_classes=3, conv_kernels=(7, 7), pools=(3, 3, 3)).validate()
        TINY.validate()


class TestEncode:
    def test_one_hot_rows_with_padding(self):
        charset = Charset(("a", "b"))
        out = clstm.encode("ab", charset, 4)
        expected = np.zeros((4, 3))
        expected[0, 0] = 1.0
        expected[1, 1] = 1.0
        assert np.array_equal(out, expected)

    def test_long_text_truncated(self):
        charset = Charset(("x",))
        out = clstm.encode("x" * 300, charset, 256)
        assert out.shape == (256, 2)
        assert out.sum() == 256  # every row one-hot, none zero

    def test_empty_text_all_zero(self):
        out = clstm.encode("", Charset(("a",)), 8)
        assert out.shape == (8, 2) and not out.any()

    def test_unknown_chars_hit_reserved_slot(self):
        charset = Charset(("a",))
        out = clstm.encode("q", charset, 2)
        assert out[0, charset.unk_index] == 1.0

    def test_row_sums_zero_or_one_and_idempotent(self):
        charset = Charset(tuple("abc"))
        first = clstm.encode("abwxyz", charset, 10)
        second = clstm.encode("abwxyz", charset, 10)
        assert np.array_equal(first, second)
        sums = first.sum(axis=1)
        assert set(sums.tolist()) <= {0.0, 1.0}


class TestForward:
    def test_zeroed_params_give_uniform(self):
        params = {k: np.zeros_like(v) for k, v in clstm.init_params(TINY, np.random.default_rng(0)).items()}
        loss, probs = clstm.forward(params, TINY, tiny_batch())
        assert probs[0] == pytest.approx(np.full(2, 0.5), abs=1e-12)
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_symmetric_output_layer_loss_is_log_k(self):
        params = clstm.init_params(TINY, np.random.default_rng(3))
        params["out_w"][:] = 0.0
        params["out_b"][:] = 0.0
        loss, _ = clstm.forward(params, TINY, tiny_batch())
        assert abs(loss - math.log(TINY.num_classes)) <= 1e-9

    def test_probability_rows_normalized(self):
        params = clstm.init_params(TINY, np.random.default_rng(4))
        rng = np.random.default_rng(0)
        texts = ["".join(rng.choice(list("abcz")) for _ in range(12)) for _ in range(5)]
        batch = clstm.encode_batch(texts, [0, 1, 0, 1, 1], TINY_CHARSET, TINY.seq_len)
        _, probs = clstm.forward(params, TINY, batch)
        assert probs.sum(axis=1) == pytest.approx(np.ones(5), abs=1e-9)

    def test_end_to_end_gradient_check(self):
        # seeds chosen so no ReLU argument or pool tie sits within the
        # finite-difference step and every array receives gradient
        params = clstm.init_params(TINY, np.random.default_rng(0))
        batch = tiny_batch(1234, target=1)
        fwd_seed = 0
        _, _, grads = clstm.loss_and_grads(params, TINY, batch, train_mode=True, seed=fwd_seed)
        assert all(np.count_nonzero(g) for g in grads.values())
        worst = 0.0
        for name, arr in params.items():
            def value() -> float:
                loss, _ = clstm.forward(params, TINY, batch, train_mode=True, seed=fwd_seed)
                return loss

            fd = central_difference(value, arr)
            worst = max(worst, max_rel_err(grads[name], fd))
        assert worst < 1e-5


class TestTrain:
    def test_zero_epochs_returns_initial_params(self):
        corpus = disjoint_corpus(4, 20, seed=0)
        cfg = ClstmConfig(
            seq_len=24, charset_dim=20, conv_features=2, conv_kernels=(3, 2, 2),
            pools=(2, 2, 2), lstm_hidden=2, dense_units=4, epochs=0, batch_size=4, seed=9,
        )
        model, history = clstm.train(corpus, None, cfg)
        assert history == []
        expected = clstm.init_params(model.config, np.random.default_rng(9))
        for name, arr in model.params.items():
            assert np.array_equal(arr, expected[name])

    def test_loss_decreases_on_toy_task(self):
        corpus = disjoint_corpus(8, 30, seed=1)
        cfg = ClstmConfig(
            seq_len=32, charset_dim=20, conv_features=4, conv_kernels=(3, 3, 2),
            pools=(2, 2, 2), lstm_hidden=3, dense_units=8, dropout_rate=0.1,
            epochs=15, batch_size=4, seed=2,
        )
        model, history = clstm.train(corpus, None, cfg)
        assert history[-1].train_loss < history[0].train_loss
        assert math.isnan(history[0].dev_accuracy)
        assert model.config.num_classes == 2

    def test_divergence_reported_with_location(self):
        corpus = disjoint_corpus(4, 20, seed=3)
        cfg = ClstmConfig(
            seq_len=24, charset_dim=20, conv_features=2, conv_kernels=(3, 2, 2),
            pools=(2, 2, 2), lstm_hidden=2, dense_units=4, lr=1e308,
            epochs=3, batch_size=4, seed=0,
        )
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(DivergenceError) as exc_info:
                clstm.train(corpus, None, cfg)
        assert exc_info.value.epoch == 0
        assert exc_info.value.batch >= 1

    def test_empty_corpus_rejected(self):
        with pytest.raises(ConfigError):
            clstm.train(Corpus.from_instances([]), None, TINY)


@pytest.fixture(scope="module")
def trained():
    corpus = disjoint_corpus(8, 30, seed=5)
    dev = disjoint_corpus(3, 30, seed=6)
    cfg = ClstmConfig(
        seq_len=32, charset_dim=20, conv_features=8, conv_kernels=(3, 3, 2),
        pools=(2, 2, 2), lstm_hidden=4, dense_units=16, dropout_rate=0.2,
        epochs=30, batch_size=4, seed=4,
    )
    model, _ = clstm.train(corpus, dev, cfg)
    return model


class TestPredict:
    def test_deterministic_scores(self, trained):
        a, b = clstm.predict(trained, ["abcabc"]), clstm.predict(trained, ["abcabc"])
        assert a[0].per_label == b[0].per_label
        assert a[0].best == b[0].best

    def test_empty_string_is_legal(self, trained):
        scores = clstm.predict(trained, [""])[0]
        total = sum(math.exp(v) for v in scores.per_label.values())
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_separable_task_generalizes(self, trained):
        held = disjoint_corpus(6, 30, seed=7)
        preds = clstm.predict(trained, [i.text for i in held])
        accuracy = sum(p.best == i.label for p, i in zip(preds, held)) / len(held)
        assert accuracy == 1.0


class TestCheckpoint:
    def _model(self):
        corpus = disjoint_corpus(4, 24, seed=8)
        cfg = ClstmConfig(
            seq_len=24, charset_dim=20, conv_features=2, conv_kernels=(3, 2, 2),
            pools=(2, 2, 2), lstm_hidden=2, dense_units=4, epochs=2, batch_size=4, seed=1,
        )
        model, _ = clstm.train(corpus, None, cfg)
        return model

    def test_round_trip_bit_exact(self, tmp_path):
        model = self._model()
        path = tmp_path / "m.ckpt"
        clstm.save_checkpoint(model, path)
        again = clstm.load_checkpoint(path)
        assert again.config == model.config
        assert again.charset == model.charset
        assert again.labels == model.labels
        for name, arr in model.params.items():
            assert arr.tobytes() == again.params[name].tobytes()
        rng = np.random.default_rng(0)
        texts = ["".join(rng.choice(list("abz "))) * rng.integers(1, 9) for _ in range(50)]
        for s1, s2 in zip(clstm.predict(model, texts), clstm.predict(again, texts)):
            assert s1.per_label == s2.per_label

    def test_retrain_byte_identical(self, tmp_path):
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        clstm.save_checkpoint(self._model(), p1)
        clstm.save_checkpoint(self._model(), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        clstm.save_checkpoint(self._model(), path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 9])
        with pytest.raises(ModelIOError):
            clstm.load_checkpoint(path)

    def test_corruption_detected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        clstm.save_checkpoint(self._model(), path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0x01
        path.write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            clstm.load_checkpoint(path)

    def test_charset_mismatch_is_explicit(self, tmp_path):
        model = self._model()
        path = tmp_path / "m.ckpt"
        clstm.save_checkpoint(model, path)
        clstm.load_checkpoint(path, expected_charset=model.charset)  # matching is fine
        other = Charset(tuple("qrs"))
        with pytest.raises(CompatibilityError, match="hash"):
            clstm.load_checkpoint(path, expected_charset=other)


class TestTrainedCharset:
    def test_charset_built_from_corpus_with_cap(self):
        corpus = disjoint_corpus(4, 24, seed=10)
        cfg = ClstmConfig(
            seq_len=24, charset_dim=6, conv_features=2, conv_kernels=(3, 2, 2),
            pools=(2, 2, 2), lstm_hidden=2, dense_units=4, epochs=1, batch_size=4, seed=1,
        )
        model, _ = clstm.train(corpus, None, cfg)
        assert model.charset.size <= 6
        assert model.config.charset_dim == model.charset.size
        explicit = build_charset(corpus, 6)
        assert model.charset == explicit
