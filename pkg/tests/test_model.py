from __future__ import annotations

import numpy as np
import pytest

from tweetkey import bioes
from tweetkey.dataprep import TaggedSample
from tweetkey.errors import ContractViolation, MalformedInput, NumericFailure
from tweetkey.model import (
    LstmParams,
    NetworkParams,
    TrainConfig,
    backward,
    bioes_label_ids,
    checkpoint_bytes,
    forward,
    head_losses,
    init_params,
    joint_loss,
    keyword_labels_from_tags,
    load_checkpoint,
    lstm_cell,
    params_from_checkpoint,
    predict_tags,
    save_checkpoint,
    train,
    window_features,
    _run_direction,
)

from conftest import make_table, planted_corpus
from oracles import reference_lstm_step

TINY_CORPUS = [
    TaggedSample(id="a", tokens=("storm", "hits", "the", "coast", "now"),
                 tags=("S", "O", "O", "O", "O")),
    TaggedSample(id="b", tokens=("big", "boston", "bombing", "event", "x"),
                 tags=("O", "B", "E", "O", "O")),
]


def tiny_params(seed=0, hidden=4, embed=6, **kw):
    config = TrainConfig(hidden_units=hidden, embedding_dim=embed, seed=seed, **kw)
    return init_params(TINY_CORPUS, config, rng=np.random.default_rng(seed)), config


def zeroed_params():
    params, config = tiny_params()
    for arr in params.tensors().values():
        arr[...] = 0.0
    return params, config


class TestTrainConfig:
    def test_defaults(self):
        config = TrainConfig()
        assert config.hidden_units == 300
        assert config.embedding_dim == 100
        assert config.window == 3
        assert config.gamma == 0.5
        assert config.dropout == 0.5
        assert config.learning_rate == 0.0015

    def test_window_fixed(self):
        with pytest.raises(ContractViolation):
            TrainConfig(window=5)

    def test_ranges(self):
        with pytest.raises(ContractViolation):
            TrainConfig(gamma=1.5)
        with pytest.raises(ContractViolation):
            TrainConfig(dropout=1.0)
        with pytest.raises(ContractViolation):
            TrainConfig(hidden_units=0)


class TestWindowFeatures:
    def test_length_one(self):
        sos, eos = np.full(2, -1.0), np.full(2, -2.0)
        vec = np.array([[3.0, 4.0]])
        out = window_features(vec, sos, eos)
        assert out.shape == (1, 6)
        assert np.array_equal(out[0], [-1, -1, 3, 4, -2, -2])

    def test_length_three_structure(self):
        # ([SOS, s1, s2], [s1, s2, s3], [s2, s3, EOS])
        sos, eos = np.array([-1.0]), np.array([-2.0])
        vectors = np.array([[1.0], [2.0], [3.0]])
        out = window_features(vectors, sos, eos)
        assert np.array_equal(out, [[-1, 1, 2], [1, 2, 3], [2, 3, -2]])

    def test_width_is_three_embeddings(self):
        rng = np.random.default_rng(0)
        for n in (1, 2, 7):
            vectors = rng.normal(size=(n, 5))
            out = window_features(vectors, rng.normal(size=5), rng.normal(size=5))
            assert out.shape == (n, 15)

    def test_empty_rejected(self):
        with pytest.raises(ContractViolation):
            window_features(np.zeros((0, 3)), np.zeros(3), np.zeros(3))


def random_lstm(rng, in_dim, h_units) -> LstmParams:
    def mat(r, c):
        return rng.normal(scale=0.5, size=(r, c))
    return LstmParams(
        w_f=mat(in_dim, h_units), w_i=mat(in_dim, h_units),
        w_o=mat(in_dim, h_units), w_c=mat(in_dim, h_units),
        u_f=mat(h_units, h_units), u_i=mat(h_units, h_units),
        u_o=mat(h_units, h_units), u_c=mat(h_units, h_units),
        b_f=rng.normal(size=h_units), b_i=rng.normal(size=h_units),
        b_o=rng.normal(size=h_units), b_c=rng.normal(size=h_units),
    )


class TestLstmCell:
    def test_all_zero_collapses(self):
        params = LstmParams(*[np.zeros((3, 2))] * 4, *[np.zeros((2, 2))] * 4,
                            *[np.zeros(2)] * 4)
        h, c = lstm_cell(np.zeros(3), np.zeros(2), np.zeros(2), params)
        assert np.array_equal(h, [0.0, 0.0])
        assert np.array_equal(c, [0.0, 0.0])

    def test_forget_bias_saturation(self):
        # with b_f = 20 and zero pre-activation elsewhere, f ~ 1 within 1e-8
        rng = np.random.default_rng(1)
        params = random_lstm(rng, 3, 2)
        params.w_f[...] = 0.0
        params.u_f[...] = 0.0
        params.b_f[...] = 20.0
        x = rng.normal(size=3)
        h_prev = rng.normal(size=2)
        c_prev = rng.normal(size=2)
        _, c = lstm_cell(x, h_prev, c_prev, params)
        i = 1.0 / (1.0 + np.exp(-(x @ params.w_i + h_prev @ params.u_i + params.b_i)))
        g = np.tanh(x @ params.w_c + h_prev @ params.u_c + params.b_c)
        assert np.allclose(c, c_prev + i * g, atol=1e-8)

    def test_matches_straight_line_reference(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            params = random_lstm(rng, 3, 2)
            x = rng.normal(size=3)
            h_prev = rng.normal(size=2)
            c_prev = rng.normal(size=2)
            h, c = lstm_cell(x, h_prev, c_prev, params)
            ref_h, ref_c = reference_lstm_step(
                list(x), list(h_prev), list(c_prev),
                w={"f": params.w_f.tolist(), "i": params.w_i.tolist(),
                   "o": params.w_o.tolist(), "c": params.w_c.tolist()},
                u={"f": params.u_f.tolist(), "i": params.u_i.tolist(),
                   "o": params.u_o.tolist(), "c": params.u_c.tolist()},
                b={"f": params.b_f.tolist(), "i": params.b_i.tolist(),
                   "o": params.b_o.tolist(), "c": params.b_c.tolist()},
            )
            assert np.allclose(h, ref_h, atol=1e-12)
            assert np.allclose(c, ref_c, atol=1e-12)

    def test_non_finite_names_gate(self):
        params = LstmParams(*[np.zeros((2, 2))] * 4, *[np.zeros((2, 2))] * 4,
                            *[np.zeros(2)] * 4)
        params.b_f[0] = np.nan
        with pytest.raises(NumericFailure, match="forget gate"):
            lstm_cell(np.zeros(2), np.zeros(2), np.zeros(2), params)

    def test_run_direction_equals_chained_cells(self):
        rng = np.random.default_rng(3)
        params = random_lstm(rng, 4, 3)
        x = rng.normal(size=(6, 4))
        trace = _run_direction(x, params)
        h_prev, c_prev = np.zeros(3), np.zeros(3)
        for t in range(6):
            h_prev, c_prev = lstm_cell(x[t], h_prev, c_prev, params)
            assert np.allclose(trace.h[t], h_prev, atol=1e-12)
            assert np.allclose(trace.c[t], c_prev, atol=1e-12)


def _mirrored(params: NetworkParams) -> NetworkParams:
    """Swap directions, boundary vectors, and the matching weight blocks.

    Reversing the token sequence reverses each three-block window
    (outer blocks swap), and swaps the forward/backward halves of the
    concatenated hidden states feeding layer 2 and the heads.
    """
    e = params.embedding_dim
    h = params.hidden_units

    def swap_outer_window_blocks(arr):
        out = arr.copy()
        out[:e] = arr[2 * e : 3 * e]
        out[2 * e : 3 * e] = arr[:e]
        return out

    def swap_halves_rows(arr):
        out = arr.copy()
        out[:h] = arr[h:]
        out[h:] = arr[:h]
        return out

    def remap_lstm(p: LstmParams, row_map) -> LstmParams:
        return LstmParams(
            w_f=row_map(p.w_f), w_i=row_map(p.w_i),
            w_o=row_map(p.w_o), w_c=row_map(p.w_c),
            u_f=p.u_f.copy(), u_i=p.u_i.copy(), u_o=p.u_o.copy(), u_c=p.u_c.copy(),
            b_f=p.b_f.copy(), b_i=p.b_i.copy(), b_o=p.b_o.copy(), b_c=p.b_c.copy(),
        )

    from tweetkey.model import BiLstmParams

    layer1 = BiLstmParams(
        fwd=remap_lstm(params.layer1.bwd, swap_outer_window_blocks),
        bwd=remap_lstm(params.layer1.fwd, swap_outer_window_blocks),
    )
    layer2 = BiLstmParams(
        fwd=remap_lstm(params.layer2.bwd, swap_halves_rows),
        bwd=remap_lstm(params.layer2.fwd, swap_halves_rows),
    )
    return NetworkParams(
        vocab=params.vocab,
        aux_vocab=params.aux_vocab,
        embeddings=params.embeddings.copy(),
        sos=params.eos.copy(),
        eos=params.sos.copy(),
        aux_embeddings=None,
        layer1=layer1,
        layer2=layer2,
        head1_w=swap_halves_rows(params.head1_w),
        head1_b=params.head1_b.copy(),
        head2_w=swap_halves_rows(params.head2_w),
        head2_b=params.head2_b.copy(),
    )


class TestForward:
    def test_eval_deterministic(self):
        params, _ = tiny_params()
        ids = params.token_ids(TINY_CORPUS[0].tokens)
        a = forward(params, ids)
        b = forward(params, ids)
        assert np.array_equal(a.probs1, b.probs1)
        assert np.array_equal(a.probs2, b.probs2)

    def test_probability_rows_sum_to_one(self):
        params, _ = tiny_params(seed=5)
        ids = params.token_ids(TINY_CORPUS[1].tokens)
        trace = forward(params, ids, mode="train", dropout=0.5,
                        rng=np.random.default_rng(0))
        assert np.abs(trace.probs1.sum(axis=1) - 1.0).max() < 1e-9
        assert np.abs(trace.probs2.sum(axis=1) - 1.0).max() < 1e-9

    def test_reversal_mirror_symmetry(self):
        # reversing tokens and mirroring direction parameters mirrors the output
        params, _ = tiny_params(seed=7)
        ids = params.token_ids(("storm", "hits", "coast"))
        straight = forward(params, ids)
        mirrored = forward(_mirrored(params), ids[::-1])
        assert np.allclose(mirrored.h1, _swap_halves(straight.h1[::-1]), atol=1e-12)
        assert np.allclose(mirrored.h2, _swap_halves(straight.h2[::-1]), atol=1e-12)
        assert np.allclose(mirrored.probs1, straight.probs1[::-1], atol=1e-12)
        assert np.allclose(mirrored.probs2, straight.probs2[::-1], atol=1e-12)

    def test_out_of_vocab_index_rejected(self):
        params, _ = tiny_params()
        with pytest.raises(ContractViolation):
            forward(params, [0, 999])

    def test_empty_sequence_rejected(self):
        params, _ = tiny_params()
        with pytest.raises(ContractViolation):
            forward(params, [])

    def test_dropout_needs_rng(self):
        params, _ = tiny_params()
        with pytest.raises(ContractViolation):
            forward(params, [1, 2], mode="train", dropout=0.5)

    def test_aux_contract(self):
        params, _ = tiny_params()
        with pytest.raises(ContractViolation):
            forward(params, [1, 2], aux_ids=[0, 0])


def _swap_halves(arr):
    half = arr.shape[1] // 2
    return np.hstack([arr[:, half:], arr[:, :half]])


class TestJointLoss:
    def test_uniform_heads_give_log_class_counts(self):
        params, _ = zeroed_params()
        ids = params.token_ids(TINY_CORPUS[0].tokens)
        trace = forward(params, ids)
        kw = keyword_labels_from_tags(TINY_CORPUS[0].tags)
        bi = bioes_label_ids(TINY_CORPUS[0].tags)
        j1, j2 = head_losses(trace, kw, bi)
        assert j1 == pytest.approx(np.log(2), abs=1e-12)
        assert j2 == pytest.approx(np.log(5), abs=1e-12)

    def test_gamma_combination(self):
        params, _ = tiny_params(seed=9)
        ids = params.token_ids(TINY_CORPUS[0].tokens)
        trace = forward(params, ids)
        kw = keyword_labels_from_tags(TINY_CORPUS[0].tags)
        bi = bioes_label_ids(TINY_CORPUS[0].tags)
        j1, j2 = head_losses(trace, kw, bi)
        for gamma in (0.0, 0.25, 0.5, 1.0):
            assert joint_loss(trace, kw, bi, gamma) == pytest.approx(
                gamma * j1 + (1 - gamma) * j2, abs=1e-15
            )
        assert joint_loss(trace, kw, bi, 1.0) == j1
        assert joint_loss(trace, kw, bi, 0.0) == j2

    def test_gamma_range_checked(self):
        params, _ = tiny_params()
        trace = forward(params, params.token_ids(TINY_CORPUS[0].tokens))
        with pytest.raises(ContractViolation):
            joint_loss(trace, [0] * 5, [2] * 5, 1.5)


class TestBackward:
    @staticmethod
    def _setup(seed=0, dropout=0.5, gamma=0.5):
        params, _ = tiny_params(seed=seed)
        ids = params.token_ids(TINY_CORPUS[0].tokens)
        kw = keyword_labels_from_tags(TINY_CORPUS[0].tags)
        bi = bioes_label_ids(TINY_CORPUS[0].tags)
        trace = forward(params, ids, mode="train", dropout=dropout,
                        rng=np.random.default_rng(seed + 50))
        grads = backward(trace, kw, bi, params, gamma)
        return params, trace, kw, bi, grads

    def test_gradients_finite(self):
        _, _, _, _, grads = self._setup()
        for name, grad in grads.items():
            assert np.all(np.isfinite(grad)), name

    def test_finite_differences(self):
        params, trace, kw, bi, grads = self._setup(seed=3)
        tensors = params.tensors()
        names = list(tensors)
        rs = np.random.default_rng(77)
        step = 1e-4
        for _ in range(50):
            name = names[rs.integers(len(names))]
            arr = tensors[name]
            idx = np.unravel_index(rs.integers(arr.size), arr.shape)
            orig = arr[idx]
            arr[idx] = orig + step
            up = joint_loss(
                forward(params, trace.token_ids, mode="train",
                        dropout=trace.dropout, masks=trace.masks),
                kw, bi, 0.5,
            )
            arr[idx] = orig - step
            down = joint_loss(
                forward(params, trace.token_ids, mode="train",
                        dropout=trace.dropout, masks=trace.masks),
                kw, bi, 0.5,
            )
            arr[idx] = orig
            numeric = (up - down) / (2 * step)
            analytic = grads[name][idx]
            assert abs(numeric - analytic) / max(
                abs(numeric), abs(analytic), 1e-6
            ) < 1e-5

    def test_gamma_one_zeroes_bioes_head(self):
        params, trace, kw, bi, _ = self._setup()
        grads = backward(trace, kw, bi, params, gamma=1.0)
        assert np.all(grads["head2_w"] == 0.0)
        assert np.all(grads["head2_b"] == 0.0)
        for name, grad in grads.items():
            if name.startswith("layer2/"):
                assert np.all(grad == 0.0), name

    def test_gamma_zero_zeroes_keyword_head(self):
        params, trace, kw, bi, _ = self._setup()
        grads = backward(trace, kw, bi, params, gamma=0.0)
        assert np.all(grads["head1_w"] == 0.0)
        assert np.all(grads["head1_b"] == 0.0)
        # layer 1 still learns through the second layer
        assert np.any(grads["layer1/fwd/w_c"] != 0.0)

    def test_label_alignment_checked(self):
        params, trace, kw, bi, _ = self._setup()
        with pytest.raises(ContractViolation):
            backward(trace, kw[:-1], bi[:-1], params, 0.5)


class TestLabels:
    def test_keyword_iff_not_outside(self):
        tags = ("B", "I", "O", "E", "S", "O")
        labels = keyword_labels_from_tags(tags)
        assert labels == [1, 1, 0, 1, 1, 0]
        for tag, label in zip(tags, labels):
            assert (label == 1) == (tag != "O")

    def test_bioes_ids_canonical_order(self):
        assert bioes_label_ids(("B", "I", "O", "E", "S")) == [0, 1, 2, 3, 4]
        with pytest.raises(ContractViolation):
            bioes_label_ids(("B", "Q"))


class TestTrain:
    def test_loss_decreases_and_both_heads_improve(self):
        corpus = planted_corpus(60, seed=21, n_fillers=40)
        config = TrainConfig(hidden_units=8, embedding_dim=16, epochs=3,
                             batch_size=16, seed=1)
        _, history = train(corpus, config)
        assert history[1].loss < history[0].loss
        assert history[-1].keyword_loss < history[0].keyword_loss
        assert history[-1].bioes_loss < history[0].bioes_loss

    def test_same_seed_identical_parameters(self):
        corpus = planted_corpus(20, seed=22, n_fillers=30)
        config = TrainConfig(hidden_units=6, embedding_dim=8, epochs=2,
                             batch_size=8, seed=5)
        params_a, history_a = train(corpus, config)
        params_b, history_b = train(corpus, config)
        assert history_a == history_b
        for name, arr in params_a.tensors().items():
            assert np.array_equal(arr, params_b.tensors()[name]), name

    def test_planted_pattern_is_learned(self):
        corpus = planted_corpus(220, seed=23, n_fillers=60)
        train_split, eval_split = corpus[:180], corpus[180:]
        # a hotter learning rate keeps this desk-scale check fast
        config = TrainConfig(hidden_units=16, embedding_dim=24, epochs=10,
                             batch_size=16, seed=2, learning_rate=0.01)
        params, _ = train(train_split, config)
        exact = 0
        for sample in eval_split:
            predicted = predict_tags(params, sample.tokens)
            gold_spans = set(bioes.decode_tags(sample.tags))
            pred_spans = set(bioes.decode_tags(predicted))
            exact += gold_spans == pred_spans
        assert exact / len(eval_split) >= 0.9

    def test_empty_corpus_rejected(self):
        with pytest.raises(ContractViolation):
            train([], TrainConfig())

    def test_pretrained_initialization(self):
        table = make_table({"storm": tuple(range(8))})
        config = TrainConfig(hidden_units=4, embedding_dim=8, epochs=1, seed=0)
        params = init_params(TINY_CORPUS, config, pretrained=table)
        idx = params.token_ids(["storm"])[0]
        assert np.array_equal(params.embeddings[idx], np.arange(8.0))

    def test_pretrained_dim_mismatch(self):
        table = make_table({"storm": (1.0, 2.0)})
        config = TrainConfig(hidden_units=4, embedding_dim=8)
        with pytest.raises(ContractViolation):
            init_params(TINY_CORPUS, config, pretrained=table)


class TestPredict:
    def test_one_hot_head_recovers_labels(self):
        corpus = planted_corpus(40, seed=31, n_fillers=20)
        config = TrainConfig(hidden_units=6, embedding_dim=8, epochs=4,
                             batch_size=8, seed=3)
        params, _ = train(corpus, config)
        tags = predict_tags(params, corpus[0].tokens)
        assert len(tags) == len(corpus[0].tokens)
        assert all(t in bioes.TAGS for t in tags)

    def test_tie_breaks_toward_earlier_canonical_label(self):
        params, _ = zeroed_params()
        # tie between O (index 2) and S (index 4) resolves to O
        params.head2_b[...] = [0.0, 0.0, 1.0, 0.0, 1.0]
        assert predict_tags(params, ("storm", "x")) == ["O", "O"]
        # five-way tie resolves to B, the first canonical label
        params.head2_b[...] = 0.0
        assert predict_tags(params, ("storm", "x")) == ["B", "B"]

    def test_unknown_words_map_to_unk(self):
        params, _ = tiny_params()
        tags = predict_tags(params, ("neverseen", "words"))
        assert len(tags) == 2


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        corpus = planted_corpus(20, seed=41, n_fillers=25)
        config = TrainConfig(hidden_units=5, embedding_dim=7, epochs=1,
                             batch_size=8, seed=11)
        params, _ = train(corpus, config)
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, config, path)
        loaded, loaded_config = load_checkpoint(path)
        assert loaded_config == config
        assert loaded.vocab == params.vocab
        for name, arr in params.tensors().items():
            assert np.array_equal(arr, loaded.tensors()[name]), name
        tokens = corpus[0].tokens
        assert predict_tags(loaded, tokens) == predict_tags(params, tokens)
        before = forward(params, params.token_ids(tokens))
        after = forward(loaded, loaded.token_ids(tokens))
        assert np.array_equal(before.probs2, after.probs2)

    def test_bytes_deterministic(self):
        params, config = tiny_params(seed=13)
        assert checkpoint_bytes(params, config) == checkpoint_bytes(params, config)

    def test_bad_magic_rejected(self):
        with pytest.raises(MalformedInput):
            params_from_checkpoint(b"NOTACKPT" + b"\x00" * 16)

    def test_truncated_rejected(self):
        params, config = tiny_params()
        blob = checkpoint_bytes(params, config)
        with pytest.raises(MalformedInput):
            params_from_checkpoint(blob[: len(blob) - 40])
