import numpy as np
import pytest

from moepredict.core import RouterSpec
from moepredict.exceptions import ConfigurationError, DataError
from moepredict.losses import LossSpec
from moepredict.predictor import predict_logits, save_model
from moepredict.synthgen import TeacherSpec, TraceFile, generate_dataset
from moepredict.trainer import TrainConfig, compare_losses, comparison_to_csv, train


@pytest.fixture(scope="module")
def small_data():
    rng = np.random.default_rng(7)
    router = RouterSpec(16, 8, 2, rng.standard_normal((8, 16)) / 4.0)
    teacher = TeacherSpec(router=router, seed=21)
    return generate_dataset(teacher, 1200)


def quick_config(**kw):
    base = dict(
        loss=LossSpec(family="wbce"),
        arch="arch2",
        hidden=32,
        batch_size=64,
        epochs=2,
        learning_rate=1e-3,
        seed=5,
        eval_fraction=0.2,
    )
    base.update(kw)
    return TrainConfig(**base)


class TestTrain:
    def test_report_has_one_row_per_epoch(self, small_data):
        _, report = train(quick_config(epochs=1), small_data)
        assert len(report.epochs) == 1
        _, report = train(quick_config(epochs=3), small_data)
        assert [r.epoch for r in report.epochs] == [1, 2, 3]

    def test_deterministic_checkpoints(self, small_data, tmp_path):
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        m1, _ = train(quick_config(), small_data)
        m2, _ = train(quick_config(), small_data)
        save_model(m1, p1)
        save_model(m2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_seed_changes_model(self, small_data):
        m1, _ = train(quick_config(seed=5), small_data)
        m2, _ = train(quick_config(seed=6), small_data)
        assert not np.array_equal(m1.w1, m2.w1)

    def test_loss_decreases_on_identity_teacher(self, small_data):
        _, report = train(quick_config(epochs=5), small_data)
        assert report.epochs[4].train_loss < report.epochs[0].train_loss

    def test_all_optimizers_run(self, small_data):
        for opt, lr in (("sgd", 0.05), ("momentum", 0.02), ("adam", 1e-3)):
            model, report = train(
                quick_config(optimizer=opt, learning_rate=lr), small_data
            )
            assert np.all(np.isfinite(model.w1))
            assert report.final.exact_match >= 0.0

    def test_arch1_trains(self, small_data):
        model, report = train(quick_config(arch="arch1", epochs=2), small_data)
        assert model.arch == "arch1"
        assert np.all(np.isfinite(model.bn_var))

    def test_returned_model_is_eval_deterministic(self, small_data):
        model, _ = train(quick_config(arch="arch1"), small_data)
        x = small_data.activations[:5].astype(np.float64)
        assert np.array_equal(predict_logits(model, x), predict_logits(model, x))

    def test_nan_guard_fires_on_divergence(self, small_data):
        # lr large enough that the second step overflows to inf
        exploded = quick_config(optimizer="sgd", learning_rate=1e200, epochs=1)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(FloatingPointError):
                train(exploded, small_data)

    def test_empty_dataset_rejected(self, small_data):
        empty = TraceFile(
            small_data.hidden_dim,
            small_data.n_experts,
            small_data.k,
            small_data.activations[:0],
            small_data.true_scores[:0],
            small_data.true_topk[:0],
        )
        with pytest.raises(DataError):
            train(quick_config(), empty)

    def test_bad_config_rejected(self):
        with pytest.raises(ConfigurationError):
            quick_config(epochs=0)
        with pytest.raises(ConfigurationError):
            quick_config(eval_fraction=1.5)
        with pytest.raises(ConfigurationError):
            quick_config(optimizer="adagrad")

    def test_default_overprov_m(self, small_data):
        _, report = train(quick_config(), small_data)
        assert report.overprov_m == min(small_data.n_experts, small_data.k + 4)


@pytest.fixture(scope="module")
def rows(small_data):
    return compare_losses(quick_config(), small_data)


class TestCompareLosses:
    def test_eight_rows_in_unit_range(self, rows):
        assert len(rows) == 8
        assert {(r["loss"], r["arch"]) for r in rows} == {
            (fam, arch)
            for fam in ("mse", "wbce", "focal", "ranking")
            for arch in ("arch1", "arch2")
        }
        for r in rows:
            assert 0.0 <= r["exact_match"] <= 1.0
            assert 0.0 <= r["top1"] <= 1.0

    def test_deterministic(self, small_data, rows):
        again = compare_losses(quick_config(), small_data)
        assert again == rows

    def test_csv_shape(self, rows, tmp_path):
        path = tmp_path / "grid.csv"
        comparison_to_csv(rows, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "loss,arch,exact_match,top1,overprov"
        assert len(lines) == 9
