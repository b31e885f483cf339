import numpy as np
import pytest

from esckit import autodiff as ad
from esckit import model as acrnn
from esckit.autodiff import ShapeError, Tensor
from esckit.fdcheck import MODEL_TOLERANCE, model_gradient_checks

PAPER_TRACE = [
    ("l2-pool", (32, 42, 32)),
    ("l4-pool", (8, 42, 64)),
    ("l6-pool", (8, 14, 128)),
    ("l8-pool", (4, 7, 256)),
    ("gru-input", (7, 1024)),
    ("gru-output", (7, 512)),
    ("head", (512,)),
]


def tiny_config(**kw):
    defaults = dict(num_classes=3, conv_channels=(2, 2, 3, 3, 4, 4, 5, 5), gru_hidden=4,
                    dropout_p=0.5, input_bands=32, input_frames=32)
    defaults.update(kw)
    return acrnn.ACRNNConfig(**defaults)


class TestBuild:
    def test_parameter_count_frozen_for_paper_config(self):
        # regression value enumerated once from the layer shape table
        params = acrnn.build(acrnn.ACRNNConfig(num_classes=50), seed=0)
        assert params.parameter_count() == 4_351_282
        again = acrnn.build(acrnn.ACRNNConfig(num_classes=50), seed=99)
        assert again.parameter_count() == 4_351_282

    def test_same_seed_bitwise_identical(self):
        a = acrnn.build(tiny_config(), seed=7)
        b = acrnn.build(tiny_config(), seed=7)
        for name in a.tensors:
            assert a.tensors[name].data.tobytes() == b.tensors[name].data.tobytes(), name

    def test_gamma_starts_at_one_biases_at_zero(self):
        params = acrnn.build(tiny_config(), seed=0)
        for i in range(1, 9):
            assert np.all(params.tensors[f"bn{i}.gamma"].data == 1.0)
            assert np.all(params.tensors[f"conv{i}.bias"].data == 0.0)

    def test_invalid_placement_rejected(self):
        with pytest.raises(ValueError):
            acrnn.ACRNNConfig(attention_placement="l3")


class TestForward:
    def test_rows_sum_to_one(self):
        params = acrnn.build(tiny_config(), seed=1)
        x = np.random.default_rng(0).standard_normal((4, 32, 32, 2)).astype(np.float32)
        probs = acrnn.forward(params, x).data
        assert probs.shape == (4, 3)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-5)

    def test_shape_trace_matches_derived_table(self):
        params = acrnn.build(acrnn.ACRNNConfig(num_classes=50), seed=0)
        assert acrnn.shape_trace(params) == PAPER_TRACE

    def test_infer_mode_is_deterministic(self):
        params = acrnn.build(tiny_config(), seed=2)
        x = np.random.default_rng(1).standard_normal((2, 32, 32, 2)).astype(np.float32)
        a = acrnn.forward(params, x, mode="infer").data
        b = acrnn.forward(params, x, mode="infer").data
        assert np.array_equal(a, b)

    def test_wrong_input_shape_raises(self):
        params = acrnn.build(tiny_config(), seed=0)
        with pytest.raises(ShapeError):
            acrnn.forward(params, np.zeros((2, 32, 30, 2), np.float32))

    def test_every_placement_runs(self):
        x = np.random.default_rng(2).standard_normal((2, 32, 32, 2)).astype(np.float32)
        for placement in acrnn.PLACEMENTS:
            params = acrnn.build(tiny_config(attention_placement=placement), seed=3)
            probs = acrnn.forward(params, x).data
            assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-5), placement


class TestCnnAttention:
    def _setup(self, rng):
        m = Tensor(rng.standard_normal((5, 6, 3)).astype(np.float32))
        kernel = Tensor(0.3 * rng.standard_normal((3, 3, 3, 1)).astype(np.float32))
        bias = Tensor(np.zeros(1, np.float32))
        return m, kernel, bias

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            m, kernel, bias = self._setup(rng)
            a = acrnn.cnn_attention_weights(m, kernel, bias).data
            assert a.shape == (1, 6, 1)
            assert abs(a.sum() - 1.0) <= 1e-6

    def test_zero_kernel_gives_uniform_map(self):
        rng = np.random.default_rng(4)
        m = Tensor(rng.standard_normal((4, 8, 2)).astype(np.float32))
        kernel = Tensor(np.zeros((3, 3, 2, 1), np.float32))
        bias = Tensor(np.zeros(1, np.float32))
        out = acrnn.cnn_attention(m, kernel, bias).data
        assert np.allclose(out, m.data / 8.0, atol=1e-6)

    def test_output_shape_equals_input(self):
        rng = np.random.default_rng(5)
        m, kernel, bias = self._setup(rng)
        assert acrnn.cnn_attention(m, kernel, bias).shape == m.shape
        batched = Tensor(rng.standard_normal((3, 5, 6, 3)).astype(np.float32))
        assert acrnn.cnn_attention(batched, kernel, bias).shape == batched.shape


class TestRnnAttention:
    def _params(self, form="mlp", hidden=2, seed=6):
        cfg = tiny_config(gru_hidden=hidden, rnn_attention_form=form)
        return acrnn.build(cfg, seed=seed)

    def test_single_step_returns_that_step(self):
        params = self._params()
        h = np.random.default_rng(7).standard_normal((1, 4)).astype(np.float32)
        v = acrnn.rnn_attention(Tensor(h), params).data
        assert np.array_equal(v, h[0])

    def test_identical_steps_return_that_vector(self):
        params = self._params()
        row = np.random.default_rng(8).standard_normal(4).astype(np.float32)
        h = np.tile(row, (5, 1))
        v = acrnn.rnn_attention(Tensor(h), params).data
        assert np.allclose(v, row, atol=1e-6)

    def test_two_step_weights_match_direct_evaluation(self):
        params = self._params()
        w1 = params.tensors["att.w1"].data
        b1 = params.tensors["att.b1"].data
        ctx = params.tensors["att.ctx"].data
        h = np.array([[0.5, -1.0, 2.0, 0.25], [1.5, 0.0, -0.5, 1.0]], dtype=np.float32)
        scores = np.tanh(h @ w1 + b1) @ ctx
        e = np.exp(scores - scores.max())
        beta_direct = e / e.sum()
        v_direct = beta_direct @ h
        beta = acrnn.rnn_attention_weights(Tensor(h), params).data
        v = acrnn.rnn_attention(Tensor(h), params).data
        assert np.allclose(beta, beta_direct, atol=1e-6)
        assert np.allclose(v, v_direct, atol=1e-6)

    def test_weights_sum_to_one_both_forms(self):
        rng = np.random.default_rng(9)
        for form in ("mlp", "linear"):
            params = self._params(form=form)
            h = Tensor(rng.standard_normal((2, 7, 4)).astype(np.float32))
            beta = acrnn.rnn_attention_weights(h, params).data
            assert beta.shape == (2, 7)
            assert np.allclose(beta.sum(axis=1), 1.0, atol=1e-6)

    def test_pooling_is_permutation_invariant_over_steps(self):
        # v = sum_t beta_t h_t with beta_t a function of h_t alone, so jointly
        # permuting the steps permutes the summands and leaves v unchanged
        params = self._params(seed=11)
        rng = np.random.default_rng(10)
        h = rng.standard_normal((6, 4)).astype(np.float32)
        v = acrnn.rnn_attention(Tensor(h), params).data
        v_shuffled = acrnn.rnn_attention(Tensor(h[rng.permutation(6)]), params).data
        assert np.allclose(v, v_shuffled, atol=1e-5)

    def test_gru_input_order_changes_output_within_convex_hull(self):
        from esckit.autodiff import BiGRUParams, GRUDirParams, gru_bidirectional

        params = self._params(seed=11)
        rng = np.random.default_rng(10)
        hidden, din, t_len = 2, 3, 6
        def direction():
            return GRUDirParams(Tensor(rng.standard_normal((din, 3 * hidden)), dtype=np.float32),
                                Tensor(rng.standard_normal((hidden, 3 * hidden)), dtype=np.float32),
                                Tensor(rng.standard_normal(3 * hidden), dtype=np.float32))
        gru = BiGRUParams(fw=direction(), bw=direction())
        x = rng.standard_normal((t_len, din)).astype(np.float32)
        h = gru_bidirectional(Tensor(x), gru).data
        h_shuffled = gru_bidirectional(Tensor(x[rng.permutation(t_len)]), gru).data
        v = acrnn.rnn_attention(Tensor(h), params).data
        v_shuffled = acrnn.rnn_attention(Tensor(h_shuffled), params).data
        # the recurrence is order-sensitive, so the pooled vector moves...
        assert not np.allclose(v, v_shuffled, atol=1e-4)
        # ...but always stays inside the coordinate-wise hull of its own steps
        for vec, steps in ((v, h), (v_shuffled, h_shuffled)):
            assert np.all(vec >= steps.min(axis=0) - 1e-6)
            assert np.all(vec <= steps.max(axis=0) + 1e-6)


class TestRegularizationLoss:
    def test_zero_weights_give_zero(self):
        params = acrnn.build(tiny_config(), seed=0)
        for name in params.weight_names:
            params.tensors[name].data[:] = 0.0
        assert acrnn.regularization_loss(params).item() == 0.0

    def test_single_tensor_hand_value(self):
        params = acrnn.build(tiny_config(), seed=0)
        for name in params.weight_names:
            params.tensors[name].data[:] = 0.0
        params.tensors["fc.weight"].data.flat[:2] = [3.0, 4.0]
        assert acrnn.regularization_loss(params, 1e-4).item() == pytest.approx(25e-4, rel=1e-6)

    def test_doubling_weights_quadruples(self):
        params = acrnn.build(tiny_config(), seed=12)
        base = acrnn.regularization_loss(params).item()
        for name in params.weight_names:
            params.tensors[name].data *= 2.0
        assert acrnn.regularization_loss(params).item() == pytest.approx(4.0 * base, rel=1e-5)

    def test_biases_and_bn_excluded(self):
        params = acrnn.build(tiny_config(), seed=13)
        base = acrnn.regularization_loss(params).item()
        params.tensors["conv1.bias"].data[:] = 100.0
        params.tensors["bn3.gamma"].data[:] = 50.0
        assert acrnn.regularization_loss(params).item() == pytest.approx(base, rel=1e-6)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        params = acrnn.build(tiny_config(), seed=14)
        # make running stats non-trivial before saving
        x = np.random.default_rng(3).standard_normal((2, 32, 32, 2)).astype(np.float32)
        acrnn.forward(params, x, mode="train", rng=np.random.default_rng(0))
        path = tmp_path / "ckpt_test"
        acrnn.save_checkpoint(path, params)
        arrays = acrnn.read_checkpoint(path)
        state = acrnn.state_arrays(params)
        assert list(arrays) == list(state)
        for name in state:
            assert arrays[name].tobytes() == state[name].astype("<f4").tobytes(), name
        other = acrnn.build(tiny_config(), seed=999)
        acrnn.load_state(other, arrays)
        for name, tensor in params.tensors.items():
            assert np.array_equal(other.tensors[name].data, tensor.data), name

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(acrnn.CheckpointFormatError):
            acrnn.read_checkpoint(path)

    def test_bad_version_rejected(self, tmp_path):
        params = acrnn.build(tiny_config(), seed=0)
        path = tmp_path / "ckpt"
        acrnn.save_checkpoint(path, params)
        blob = bytearray(path.read_bytes())
        blob[4] = 9
        path.write_bytes(bytes(blob))
        with pytest.raises(acrnn.CheckpointFormatError):
            acrnn.read_checkpoint(path)

    def test_truncation_rejected(self, tmp_path):
        params = acrnn.build(tiny_config(), seed=0)
        path = tmp_path / "ckpt"
        acrnn.save_checkpoint(path, params)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(acrnn.CheckpointFormatError):
            acrnn.read_checkpoint(path)

    def test_state_name_mismatch_rejected(self):
        a = acrnn.build(tiny_config(), seed=0)
        b = acrnn.build(tiny_config(attention_placement="l2"), seed=0)
        with pytest.raises(acrnn.CheckpointFormatError):
            acrnn.load_state(a, acrnn.state_arrays(b))


def test_full_model_gradients_match_finite_differences():
    results = model_gradient_checks(seed=0, samples_per_tensor=4)
    bad = {k: v for k, v in results.items() if v > MODEL_TOLERANCE}
    assert not bad, f"parameters exceeding {MODEL_TOLERANCE}: {bad}"
