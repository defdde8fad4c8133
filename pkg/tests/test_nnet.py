import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdvad.errors import ContractError, FormatError, TrainingDivergedError
from sdvad.feats import FeatureMatrix, bin_features
from sdvad.nnet import (
    LstmModel, MlpModel, TrainConfig, TrainLog, attach_speaker, cross_entropy, fit, grad_check, init_lstm, init_mlp,
    load_model, loss_and_grads, lstm_forward, mlp_forward, predict, save_model, softmax, train_step,
)
from sdvad.serialize import MAGIC, decode, encode


def random_params(model, rng, scale=1.0):
    m = model.copy()
    m.params = {k: rng.uniform(-scale, scale, v.shape) for k, v in m.params.items()}
    return m


def gates_oracle(params, xs):
    """Scalar loops over every unit of a single-layer LSTM."""
    Wx, Wh, b = params["l0.Wx"], params["l0.Wh"], params["l0.b"]
    H = Wh.shape[0]
    h = [0.0] * H
    c = [0.0] * H
    outs = []
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    for x in xs:
        z = []
        for k in range(4 * H):
            v = b[k] + sum(x[j] * Wx[j, k] for j in range(len(x))) + sum(h[j] * Wh[j, k] for j in range(H))
            z.append(v)
        new_h, new_c = [], []
        for u in range(H):
            i, f, o, g = sig(z[u]), sig(z[H + u]), sig(z[2 * H + u]), math.tanh(z[3 * H + u])
            cu = f * c[u] + i * g
            new_c.append(cu)
            new_h.append(o * math.tanh(cu))
        h, c = new_h, new_c
        logits = [params["out.b"][k] + sum(h[j] * params["out.W"][j, k] for j in range(H)) for k in range(2)]
        m = max(logits)
        e = [math.exp(v - m) for v in logits]
        outs.append([v / sum(e) for v in e])
    return np.array(outs)


class TestAttach:
    def test_empty_embedding(self):
        x = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(attach_speaker(x, np.zeros(0)), x)

    def test_broadcast(self):
        out = attach_speaker(FeatureMatrix(np.zeros((3, 2))), np.array([0.5, -1.0]))
        assert out.values.shape == (3, 4)
        assert (out.values[:, 2:] == [0.5, -1.0]).all()

    def test_paper_dimensions(self):
        assert attach_speaker(np.zeros((5, 36)), np.ones(200)).shape == (5, 236)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 20), st.integers(1, 5), st.integers(0, 4))
    def test_commutes_with_binning(self, T, n, d):
        rng = np.random.default_rng(T * 31 + n * 7 + d)
        fm = FeatureMatrix(rng.standard_normal((T, 3)))
        emb = rng.standard_normal(d)
        a = attach_speaker(bin_features(fm, n), emb).values
        b = bin_features(attach_speaker(fm, emb), n).values
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


class TestMlp:
    def test_zero_weights(self):
        m = init_mlp(4, (3, 3), seed=0)
        m.params = {k: np.zeros_like(v) for k, v in m.params.items()}
        np.testing.assert_array_equal(mlp_forward(m, np.ones(4)), [0.5, 0.5])

    def test_equal_logits(self):
        for z in (-40.0, 0.0, 3.3, 700.0):
            np.testing.assert_array_equal(softmax(np.array([z, z])), [0.5, 0.5])

    def test_hand_rolled_oracle(self):
        rng = np.random.default_rng(0)
        m = random_params(init_mlp(2, (2,), seed=0), rng)
        x = rng.standard_normal(2)
        W1, b1, W2, b2 = m.params["l0.W"], m.params["l0.b"], m.params["out.W"], m.params["out.b"]
        h = [math.tanh(b1[k] + x[0] * W1[0, k] + x[1] * W1[1, k]) for k in range(2)]
        z = [b2[k] + h[0] * W2[0, k] + h[1] * W2[1, k] for k in range(2)]
        p1 = 1.0 / (1.0 + math.exp(z[0] - z[1]))
        np.testing.assert_allclose(mlp_forward(m, x), [1 - p1, p1], rtol=0, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            mlp_forward(init_mlp(3, (2,)), np.zeros(4))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000), st.floats(0.1, 30.0))
    def test_softmax_normalised(self, seed, scale):
        rng = np.random.default_rng(seed)
        m = random_params(init_mlp(3, (4,), seed=seed), rng, scale)
        p = predict(m, rng.standard_normal((5, 3)) * scale)
        assert np.all(np.abs(p.sum(1) - 1.0) <= 1e-9)
        assert np.all(p > 0)


class TestLstm:
    def test_prefix_causality(self):
        rng = np.random.default_rng(1)
        m = random_params(init_lstm(3, 4, 2, seed=1), rng)
        X = rng.standard_normal((9, 3))
        full = lstm_forward(m, X)
        for k in range(9):
            np.testing.assert_array_equal(lstm_forward(m, X[:k + 1]), full[:k + 1])

    def test_zero_gates(self):
        m = init_lstm(3, 4, 1, seed=0)
        m.params["l0.Wx"][:] = 0
        m.params["l0.Wh"][:] = 0
        m.params["l0.b"][:] = 0
        out = lstm_forward(m, np.random.default_rng(2).standard_normal((6, 3)))
        assert np.all(out == out[0])

    def test_gate_oracle(self):
        rng = np.random.default_rng(3)
        m = random_params(init_lstm(2, 3, 1, seed=3), rng)
        X = rng.standard_normal((4, 2))
        np.testing.assert_allclose(lstm_forward(m, X), gates_oracle(m.params, X), rtol=0, atol=1e-12)

    def test_empty(self):
        assert lstm_forward(init_lstm(2, 3, 1), np.zeros((0, 2))).shape == (0, 2)

    def test_forget_bias(self):
        m = init_lstm(5, 4, 2, seed=0)
        for l in range(2):
            np.testing.assert_array_equal(m.params[f"l{l}.b"][4:8], 1.0)


class TestCrossEntropy:
    def test_perfect(self):
        assert cross_entropy([[0.0, 1.0], [1.0, 0.0]], [1, 0]) == 0.0

    def test_uniform(self):
        assert cross_entropy([[0.5, 0.5]] * 3, [0, 1, 1]) == pytest.approx(math.log(2), abs=1e-15)

    def test_quarter(self):
        assert cross_entropy([[0.75, 0.25], [0.25, 0.75]], [1, 0]) == pytest.approx(math.log(4), abs=1e-15)

    def test_floor(self):
        assert cross_entropy([[1.0, 0.0]], [1]) == pytest.approx(-math.log(1e-12))

    def test_mismatch(self):
        with pytest.raises(ContractError):
            cross_entropy([[0.5, 0.5]], [0, 1])


def toy_batch(rng, dim, n_seq=2, max_T=5):
    return [(rng.standard_normal((int(rng.integers(1, max_T + 1)), dim)),
             rng.integers(0, 2, max_T)) for _ in range(n_seq)]


def fix_lengths(batch):
    return [(x, y[:len(x)]) for x, y in batch]


class TestGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_mlp(self, seed):
        rng = np.random.default_rng(seed)
        m = random_params(init_mlp(4, (5, 3), seed=seed), rng)
        assert grad_check(m, fix_lengths(toy_batch(rng, 4))) < 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_lstm(self, seed):
        rng = np.random.default_rng(seed)
        m = random_params(init_lstm(3, 4, 1 + seed % 2, seed=seed), rng)
        assert grad_check(m, fix_lengths(toy_batch(rng, 3, max_T=6))) < 1e-4

    def test_zero_model(self):
        m = init_mlp(3, (2,), seed=0)
        m.params = {k: np.zeros_like(v) for k, v in m.params.items()}
        batch = [(np.ones((2, 3)), np.array([0, 1]))]
        assert grad_check(m, batch) == 0.0


class TestTraining:
    def test_zero_learning_rate(self):
        rng = np.random.default_rng(4)
        m = init_lstm(3, 4, 1, seed=0)
        new, loss = train_step(m, fix_lengths(toy_batch(rng, 3)), TrainConfig(learning_rate=0.0))
        assert np.isfinite(loss)
        for k in m.params:
            assert new.params[k].tobytes() == m.params[k].tobytes()

    def test_separable_converges(self):
        m = init_mlp(2, (4,), seed=0)
        batch = [(np.array([[2.0, 1.0], [-2.0, -1.0], [1.5, 2.0], [-1.0, -2.5]]), np.array([1, 0, 1, 0]))]
        cfg = TrainConfig(learning_rate=0.5)
        for _ in range(200):
            m, loss = train_step(m, batch, cfg)
        assert loss < 0.01

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        data = [fix_lengths(toy_batch(rng, 3))[0] for _ in range(6)]
        cfg = TrainConfig(learning_rate=0.1, epochs=3, batch_size=2, seed=7)
        a = fit(init_lstm(3, 4, 2, seed=1), data, cfg)
        b = fit(init_lstm(3, 4, 2, seed=1), data, cfg)
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()

    def test_clipping(self):
        rng = np.random.default_rng(6)
        m = random_params(init_mlp(3, (4,), seed=0), rng, 3.0)
        batch = fix_lengths(toy_batch(rng, 3))
        _, grads = loss_and_grads(m, batch)
        norm = np.sqrt(sum(np.sum(g ** 2) for g in grads.values()))
        for clip, expected in ((norm / 4, norm / 4), (norm * 4, norm)):
            new, _ = train_step(m, batch, TrainConfig(learning_rate=1.0, clip_norm=clip))
            step = np.sqrt(sum(np.sum((new.params[k] - m.params[k]) ** 2) for k in m.params))
            assert step == pytest.approx(expected, rel=1e-9)

    def test_divergence(self):
        m = init_mlp(2, (2,), seed=0)
        with pytest.raises(TrainingDivergedError):
            train_step(m, [(np.array([[np.nan, 0.0]]), np.array([1]))], TrainConfig())

    def test_keep_best_and_log(self):
        rng = np.random.default_rng(7)
        data = [fix_lengths(toy_batch(rng, 2))[0] for _ in range(4)]
        log = TrainLog()
        fit(init_mlp(2, (3,), seed=0), data, TrainConfig(learning_rate=0.3, epochs=4, batch_size=2), data, log)
        assert len(log.epoch_loss) == 4 and len(log.dev_acc) == 4
        assert all(0.0 <= a <= 1.0 for a in log.dev_acc)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        for m in (init_mlp(5, (4, 3), seed=1, bin_n=4, context=2).rounded(),
                  init_lstm(5, 3, 2, seed=2, bin_n=2).rounded()):
            m.fit_normalizer(np.random.default_rng(0).standard_normal((10, 5)))
            m = m.rounded()
            save_model(m, tmp_path / "m.sdvd")
            back = load_model(tmp_path / "m.sdvd")
            assert type(back) is type(m)
            assert (back.bin_n, back.context) == (m.bin_n, m.context)
            for k in m.params:
                assert back.params[k].tobytes() == m.params[k].tobytes()
            assert back.in_scale.tobytes() == m.in_scale.tobytes()

    def test_truncated(self, tmp_path):
        data = encode(init_mlp(3, (2,)).rounded().to_tensors())
        for cut in (2, 10, len(data) // 2, len(data) - 1):
            (tmp_path / "t.sdvd").write_bytes(data[:cut])
            with pytest.raises(FormatError, match="offset"):
                load_model(tmp_path / "t.sdvd")

    def test_wrong_magic(self, tmp_path):
        data = encode(init_mlp(3, (2,)).rounded().to_tensors())
        (tmp_path / "w.sdvd").write_bytes(b"XXXX" + data[4:])
        with pytest.raises(FormatError, match=MAGIC.decode()):
            load_model(tmp_path / "w.sdvd")

    def test_layout(self):
        data = encode({"mlp.x": np.array([[1.0, 2.0]])})
        assert data[:4] == b"SDVD"
        assert int.from_bytes(data[4:8], "little") == 1
        assert int.from_bytes(data[8:12], "little") == 1
        assert int.from_bytes(data[12:14], "little") == 5
        assert data[14:19] == b"mlp.x"
        assert data[19] == 2
        assert np.frombuffer(data[28:], "<f4").tolist() == [1.0, 2.0]
        assert decode(data)["mlp.x"].shape == (1, 2)

    def test_bad_version(self):
        data = bytearray(encode({"mlp.x": np.zeros(1)}))
        data[4] = 9
        with pytest.raises(FormatError, match="version"):
            decode(bytes(data))

    def test_inconsistent_shapes(self, tmp_path):
        m = init_mlp(3, (2,)).rounded()
        t = m.to_tensors()
        t["mlp.out.W"] = np.zeros((5, 2))
        (tmp_path / "s.sdvd").write_bytes(encode(t))
        with pytest.raises(FormatError):
            load_model(tmp_path / "s.sdvd")

    def test_isinstance(self):
        assert isinstance(init_mlp(2, (2,)), MlpModel)
        assert isinstance(init_lstm(2, 2, 1), LstmModel)
