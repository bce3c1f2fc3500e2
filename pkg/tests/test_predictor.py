import numpy as np
import pytest

from conftest import central_diff, rel_error
from moepredict.exceptions import BadMagicError, ConfigurationError, UsageError
from moepredict.predictor import (
    PredictorModel,
    backward,
    forward,
    gelu_tanh,
    init_model,
    load_model,
    n_params,
    predict_logits,
    predict_topk,
    save_model,
    silu,
)


def perturbed_model(arch, rng, d=8, hidden=16, n_experts=8, seed=7):
    model = init_model(arch, d, hidden, n_experts, seed=seed)
    for p in model.param_dict().values():
        p += 0.3 * rng.standard_normal(p.shape)
    if arch == "arch1":
        model.bn_mean += 0.1 * rng.standard_normal(hidden)
        model.bn_var = np.abs(model.bn_var + 0.2 * rng.standard_normal(hidden))
    return model


class TestForward:
    def test_arch2_zero_weights_zero_output(self):
        model = PredictorModel(
            "arch2", np.zeros((4, 3)), np.zeros(4), np.zeros((5, 4)), np.zeros(5)
        )
        assert np.array_equal(forward(model, np.ones(3)), np.zeros(5))

    def test_silu_hand_value(self):
        # one hidden unit passes x[0]=2 straight through: SiLU(2) = 2 sigma(2)
        d = 3
        w1 = np.zeros((d, d))
        w1[0, 0] = 1.0
        w2 = np.zeros((d, d))
        w2[0, 0] = 1.0
        model = PredictorModel("arch2", w1, np.zeros(d), w2, np.zeros(d))
        out = forward(model, np.array([2.0, 0.5, -1.0]))
        assert out[0] == pytest.approx(2.0 / (1.0 + np.exp(-2.0)), abs=1e-12)
        assert out[0] == pytest.approx(1.7616, abs=1e-4)

    def test_arch1_eval_deterministic(self, rng):
        model = perturbed_model("arch1", rng)
        x = rng.standard_normal(8)
        assert np.array_equal(forward(model, x), forward(model, x))

    def test_train_mode_dropout_varies(self, rng):
        model = perturbed_model("arch1", rng)
        model.train()
        x = rng.standard_normal((16, 8))
        a = forward(model, x)
        b = forward(model, x)
        assert not np.array_equal(a, b)

    def test_dropout_stream_reproducible(self, rng):
        x = rng.standard_normal((16, 8))
        outs = []
        for _ in range(2):
            model = init_model("arch1", 8, 16, 8, seed=11)
            model.train()
            outs.append(np.concatenate([forward(model, x), forward(model, x)]))
        assert np.array_equal(outs[0], outs[1])

    def test_dimension_mismatch(self, rng):
        model = perturbed_model("arch2", rng)
        with pytest.raises(ConfigurationError):
            forward(model, np.zeros(9))

    def test_batch_matches_per_row(self, rng):
        model = perturbed_model("arch2", rng)
        x = rng.standard_normal((5, 8))
        batch = forward(model, x)
        for i in range(5):
            assert np.allclose(batch[i], forward(model, x[i]), atol=1e-12)


class TestBackward:
    def test_zero_upstream_zero_grads(self, rng):
        model = perturbed_model("arch2", rng)
        x = rng.standard_normal((4, 8))
        grads = backward(model, x, np.zeros((4, 8)))
        assert all(np.all(g == 0) for g in grads.values())

    def test_b2_gradient_equals_upstream(self, rng):
        model = perturbed_model("arch2", rng)
        x = rng.standard_normal(8)
        up = rng.standard_normal(8)
        grads = backward(model, x, up)
        assert np.allclose(grads["b2"], up, atol=1e-12)

    @pytest.mark.parametrize("arch", ["arch1", "arch2"])
    def test_eval_mode_fd(self, arch, rng):
        model = perturbed_model(arch, rng)
        x = rng.standard_normal((4, 8))
        w = rng.standard_normal((4, 8))  # random linear functional of logits

        def scalar():
            return float(np.sum(w * predict_logits(model, x)))

        grads = backward(model, x, w)
        fd = central_diff(scalar, model.param_dict())
        for name in grads:
            assert rel_error(grads[name], fd[name]) < 1e-4, name

    @pytest.mark.parametrize("arch", ["arch1", "arch2"])
    def test_train_mode_fd_fixed_mask(self, arch, rng):
        # batch statistics and the dropout mask stay fixed while probing
        model = perturbed_model(arch, rng)
        model.train()
        x = rng.standard_normal((4, 8))
        w = rng.standard_normal((4, 8))
        mask = rng.random((4, 16)) >= 0.1 if arch == "arch1" else None

        def scalar():
            return float(np.sum(w * forward(model, x, dropout_mask=mask)))

        forward(model, x, dropout_mask=mask)
        grads = backward(model, x, w)
        fd = central_diff(scalar, model.param_dict())
        for name in grads:
            assert rel_error(grads[name], fd[name]) < 1e-4, name

    def test_train_backward_requires_paired_forward(self, rng):
        model = perturbed_model("arch1", rng)
        model.train()
        x = rng.standard_normal((4, 8))
        with pytest.raises(UsageError):
            backward(model, x, np.ones((4, 8)))
        forward(model, x)
        with pytest.raises(UsageError):
            backward(model, rng.standard_normal((4, 8)), np.ones((4, 8)))


class TestPredictTopK:
    def test_m_equals_e_selects_all(self, rng):
        model = perturbed_model("arch2", rng)
        sel = predict_topk(model, rng.standard_normal(8), 8)
        assert sel.indices.tolist() == list(range(8))

    def test_m_one_is_argmax(self, rng):
        model = perturbed_model("arch2", rng)
        x = rng.standard_normal(8)
        sel = predict_topk(model, x, 1)
        assert sel.indices[0] == int(np.argmax(sel.raw_scores))

    def test_nesting(self, rng):
        model = perturbed_model("arch2", rng)
        for _ in range(25):
            x = rng.standard_normal(8)
            prev: set = set()
            for m in range(1, 9):
                cur = set(predict_topk(model, x, m).indices.tolist())
                assert prev <= cur
                prev = cur

    def test_m_out_of_range(self, rng):
        model = perturbed_model("arch2", rng)
        with pytest.raises(ValueError):
            predict_topk(model, np.zeros(8), 9)

    def test_requires_eval_mode(self, rng):
        model = perturbed_model("arch1", rng).train()
        with pytest.raises(UsageError):
            predict_topk(model, np.zeros(8), 1)


class TestModelStructure:
    def test_arch2_param_count(self):
        d, hidden, n_experts = 12, 30, 7
        model = init_model("arch2", d, hidden, n_experts)
        assert n_params(model) == hidden * (d + n_experts) + hidden + n_experts

    def test_arch1_requires_bn_state(self):
        with pytest.raises(ConfigurationError):
            PredictorModel(
                "arch1", np.zeros((2, 2)), np.zeros(2), np.zeros((2, 2)), np.zeros(2)
            )

    def test_activation_formulas(self):
        u = np.linspace(-4, 4, 101)
        assert np.allclose(silu(u), u / (1 + np.exp(-u)), atol=1e-12)
        ref = 0.5 * u * (1 + np.tanh(np.sqrt(2 / np.pi) * (u + 0.044715 * u**3)))
        assert np.allclose(gelu_tanh(u), ref, atol=1e-6)


class TestCheckpoints:
    @pytest.mark.parametrize("arch", ["arch1", "arch2"])
    def test_roundtrip_bit_exact(self, arch, rng, tmp_path):
        model = perturbed_model(arch, rng)
        path = tmp_path / "model.ckpt"
        save_model(model, path)
        back = load_model(path)
        assert back.arch == model.arch
        for name, p in model.param_dict().items():
            assert np.array_equal(back.param_dict()[name], p), name
        if arch == "arch1":
            assert np.array_equal(back.bn_mean, model.bn_mean)
            assert np.array_equal(back.bn_var, model.bn_var)
        x = rng.standard_normal((3, 8))
        assert np.array_equal(predict_logits(back, x), predict_logits(model, x))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTAMODEL")
        with pytest.raises(BadMagicError):
            load_model(path)
