"""Scikit-learn style front end for the expert predictor.

``ExpertPredictor`` wraps dataset assembly, training, and top-k
selection behind the usual fit / predict / score surface so the model
drops into sklearn pipelines, clone(), and parameter search.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .losses import LossSpec
from .metrics import evaluate_predictions
from .predictor import predict_logits, predict_topk_batch
from .synthgen import make_dataset
from .trainer import TrainConfig, train


class ExpertPredictor(BaseEstimator):
    """Learns to predict a router's top-k expert set from activations.

    fit(X, y) takes activations X of shape (n, d) and the router's
    affinity scores y of shape (n, E); ground-truth k-sets are derived
    from y. predict(X) returns the predicted k-sets as an (n, k) index
    array; decision_function(X) exposes the raw per-expert logits.
    """

    def __init__(
        self,
        k=2,
        arch="arch2",
        hidden=256,
        loss="wbce",
        epochs=5,
        batch_size=256,
        learning_rate=1e-3,
        optimizer="adam",
        eval_fraction=0.1,
        top_weight=3.0,
        mid_weight=1.5,
        rest_weight=0.5,
        ranking_lambda=0.3,
        margin=0.1,
        focal_gamma=2.0,
        focal_alpha=0.25,
        normalize_ranking=True,
        random_state=0,
    ):
        self.k = k
        self.arch = arch
        self.hidden = hidden
        self.loss = loss
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.eval_fraction = eval_fraction
        self.top_weight = top_weight
        self.mid_weight = mid_weight
        self.rest_weight = rest_weight
        self.ranking_lambda = ranking_lambda
        self.margin = margin
        self.focal_gamma = focal_gamma
        self.focal_alpha = focal_alpha
        self.normalize_ranking = normalize_ranking
        self.random_state = random_state

    def _loss_spec(self) -> LossSpec:
        return LossSpec(
            family=self.loss,
            top_weight=self.top_weight,
            mid_weight=self.mid_weight,
            rest_weight=self.rest_weight,
            ranking_lambda=self.ranking_lambda,
            margin=self.margin,
            focal_gamma=self.focal_gamma,
            focal_alpha=self.focal_alpha,
            normalize_ranking=self.normalize_ranking,
        )

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=np.float64)
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y must have the same number of rows")
        data = make_dataset(X, y, self.k)
        config = TrainConfig(
            loss=self._loss_spec(),
            arch=self.arch,
            hidden=self.hidden,
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            seed=self.random_state,
            eval_fraction=self.eval_fraction,
        )
        self.model_, self.report_ = train(config, data)
        self.n_features_in_ = X.shape[1]
        self.n_experts_ = y.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return predict_logits(self.model_, X)

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return predict_topk_batch(self.model_, X, self.k)

    def predict_topk(self, X, m: int):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return predict_topk_batch(self.model_, X, m)

    def score(self, X, y):
        """Exact-match accuracy of the predicted k-sets against y."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=np.float64)
        truth = make_dataset(X, y, self.k)
        result = evaluate_predictions(
            self.decision_function(X), truth.true_topk, self.n_experts_
        )
        return result.exact_match
