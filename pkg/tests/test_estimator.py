import numpy as np
import pytest
from sklearn.base import clone

from moepredict.core import RouterSpec
from moepredict.estimator import ExpertPredictor
from moepredict.synthgen import TeacherSpec, generate_dataset


@pytest.fixture(scope="module")
def xy():
    rng = np.random.default_rng(11)
    router = RouterSpec(12, 6, 2, rng.standard_normal((6, 12)) / 3.0)
    data = generate_dataset(TeacherSpec(router=router, seed=4), 1500)
    X = data.activations.astype(np.float64)
    y = data.true_scores.astype(np.float64)
    return X[:1200], y[:1200], X[1200:], y[1200:]


@pytest.fixture(scope="module")
def fitted(xy):
    X, y, _, _ = xy
    est = ExpertPredictor(k=2, hidden=48, epochs=4, random_state=3)
    return est.fit(X, y)


class TestSklearnContract:
    def test_get_set_params_roundtrip(self):
        est = ExpertPredictor(hidden=99, loss="ranking")
        params = est.get_params()
        assert params["hidden"] == 99
        est2 = ExpertPredictor().set_params(**params)
        assert est2.get_params() == params

    def test_clone(self, fitted):
        fresh = clone(fitted)
        assert fresh.get_params() == fitted.get_params()
        assert not hasattr(fresh, "model_")

    def test_unfitted_raises(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            ExpertPredictor().predict(np.zeros((2, 4)))


class TestFitPredict:
    def test_predict_shapes(self, fitted, xy):
        _, _, Xe, _ = xy
        pred = fitted.predict(Xe)
        assert pred.shape == (len(Xe), 2)
        logits = fitted.decision_function(Xe)
        assert logits.shape == (len(Xe), 6)
        top3 = fitted.predict_topk(Xe, 3)
        assert top3.shape == (len(Xe), 3)

    def test_predict_rows_sorted_distinct(self, fitted, xy):
        _, _, Xe, _ = xy
        for row in fitted.predict(Xe):
            assert row[0] < row[1]

    def test_score_is_exact_match(self, fitted, xy):
        _, _, Xe, ye = xy
        score = fitted.score(Xe, ye)
        assert 0.0 <= score <= 1.0
        # learnable teacher: should be far above the 1/C(6,2) baseline
        assert score > 3.0 / 15.0

    def test_deterministic_given_random_state(self, xy):
        X, y, Xe, _ = xy
        a = ExpertPredictor(k=2, hidden=32, epochs=2, random_state=7).fit(X, y)
        b = ExpertPredictor(k=2, hidden=32, epochs=2, random_state=7).fit(X, y)
        assert np.array_equal(a.decision_function(Xe), b.decision_function(Xe))

    def test_row_mismatch_rejected(self, xy):
        X, y, _, _ = xy
        with pytest.raises(ValueError):
            ExpertPredictor().fit(X[:10], y[:9])

    def test_report_exposed(self, fitted):
        assert len(fitted.report_.epochs) == 4
