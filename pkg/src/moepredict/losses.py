"""Training objectives for expert prediction.

Four families, all returning (scalar loss, gradient) for a batch:

  mse      regression on softmax-normalized scores
  wbce     weighted binary cross-entropy, two tiers (real top-10 vs rest)
  focal    alpha-balanced focal loss for the class-imbalanced labels
  ranking  three-tier weighted BCE plus a pairwise hinge that preserves
           the predicted ordering among the true top-10 experts

Tier boundaries (10 and 30) clamp to the expert count so small-E test
instances stay meaningful. BCE terms are evaluated in logit space via
softplus; no naive log(sigmoid) anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import rank_order, softmax, top_k_batch
from .exceptions import ConfigurationError

FAMILIES = ("mse", "wbce", "focal", "ranking")

TOP_TIER_SIZE = 10
MID_TIER_SIZE = 30


@dataclass(frozen=True)
class LossSpec:
    """Loss family selection plus every tunable the families share."""

    family: str = "wbce"
    top_weight: float = 3.0
    mid_weight: float = 1.5
    rest_weight: float = 0.5
    ranking_lambda: float = 0.3
    margin: float = 0.1
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    normalize_ranking: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown loss family {self.family!r}")
        if min(self.top_weight, self.mid_weight, self.rest_weight) <= 0:
            raise ConfigurationError("tier weights must be positive")
        if self.ranking_lambda < 0:
            raise ConfigurationError("ranking_lambda must be >= 0")
        if self.margin <= 0:
            raise ConfigurationError("margin must be positive")


@dataclass(frozen=True)
class BatchLabels:
    """Per-batch ground truth in the layouts the losses consume."""

    true_scores: np.ndarray  # (N, E) float64
    topk_mask: np.ndarray  # (N, E) bool
    rank_of: np.ndarray  # (N, E) int, 1-based rank by true score

    @classmethod
    def from_scores(cls, true_scores: np.ndarray, k: int) -> "BatchLabels":
        scores = np.atleast_2d(np.asarray(true_scores, dtype=np.float64))
        n, n_experts = scores.shape
        topk = top_k_batch(scores, k)
        mask = np.zeros((n, n_experts), dtype=bool)
        mask[np.arange(n)[:, None], topk] = True
        order = rank_order(scores)
        ranks = np.empty((n, n_experts), dtype=np.int64)
        ranks[np.arange(n)[:, None], order] = np.arange(1, n_experts + 1)
        return cls(scores, mask, ranks)

    @classmethod
    def from_trace(cls, trace, rows=None) -> "BatchLabels":
        scores = trace.true_scores if rows is None else trace.true_scores[rows]
        return cls.from_scores(scores, trace.k)

    @property
    def n_experts(self) -> int:
        return self.true_scores.shape[1]


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _check_shape(pred: np.ndarray, labels: BatchLabels) -> np.ndarray:
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    if pred.shape != labels.true_scores.shape:
        raise ConfigurationError(
            f"prediction shape {pred.shape} != labels {labels.true_scores.shape}"
        )
    return pred


def mse_loss(pred_scores: np.ndarray, labels: BatchLabels):
    """Squared error against the true affinity scores, averaged over samples.

    ``pred_scores`` are probabilities (softmax of the predictor logits);
    the returned gradient is with respect to those probabilities.
    """
    pred = _check_shape(pred_scores, labels)
    n = pred.shape[0]
    diff = labels.true_scores - pred
    loss = float(np.sum(diff * diff) / n)
    grad = -2.0 * diff / n
    return loss, grad


def _tier_weights(labels: BatchLabels, top_w, rest_w, mid_w=None) -> np.ndarray:
    n_experts = labels.n_experts
    top_cut = min(TOP_TIER_SIZE, n_experts)
    w = np.full(labels.rank_of.shape, rest_w, dtype=np.float64)
    if mid_w is not None:
        mid_cut = min(MID_TIER_SIZE, n_experts)
        w[(labels.rank_of > top_cut) & (labels.rank_of <= mid_cut)] = mid_w
    w[labels.rank_of <= top_cut] = top_w
    return w


def _weighted_bce(logits, labels, weights):
    n, n_experts = logits.shape
    target = labels.topk_mask.astype(np.float64)
    # log sigma(z) = -softplus(-z); log(1 - sigma(z)) = -softplus(z)
    log_terms = np.where(labels.topk_mask, -_softplus(-logits), -_softplus(logits))
    loss = float(-np.sum(weights * log_terms) / (n * n_experts))
    grad = weights * (_sigmoid(logits) - target) / (n * n_experts)
    return loss, grad


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def weighted_bce_loss(
    logits: np.ndarray,
    labels: BatchLabels,
    *,
    top_weight: float = 3.0,
    rest_weight: float = 0.5,
):
    """Two-tier weighted BCE: top-10 experts by true score weigh more."""
    logits = _check_shape(logits, labels)
    weights = _tier_weights(labels, top_weight, rest_weight)
    return _weighted_bce(logits, labels, weights)


def focal_loss(
    logits: np.ndarray,
    labels: BatchLabels,
    *,
    gamma: float = 2.0,
    alpha: float = 0.25,
):
    """Alpha-balanced focal loss, mean-reduced over all (sample, expert)."""
    logits = _check_shape(logits, labels)
    n, n_experts = logits.shape
    pos = labels.topk_mask
    log_pt = np.where(pos, -_softplus(-logits), -_softplus(logits))
    pt = np.exp(log_pt)
    alpha_t = np.where(pos, alpha, 1.0 - alpha)
    focus = (1.0 - pt) ** gamma
    loss = float(np.sum(-alpha_t * focus * log_pt) / (n * n_experts))
    # d/dz of the per-element term, with dp_t/dz = s * p_t (1 - p_t),
    # s = +1 for positives and -1 for negatives.
    sign = np.where(pos, 1.0, -1.0)
    dterm_dz = alpha_t * sign * (
        gamma * pt * (1.0 - pt) ** gamma * log_pt - (1.0 - pt) ** (gamma + 1.0)
    )
    grad = dterm_dz / (n * n_experts)
    return loss, grad


def ranking_hinge(
    logits: np.ndarray,
    labels: BatchLabels,
    *,
    margin: float = 0.1,
    normalize: bool = True,
):
    """Pairwise hinge over true top-10 ordered pairs, on raw logits.

    For every pair (j, l) of true top-10 experts with strictly greater
    true score for j, penalize ReLU(margin - (z_j - z_l)). Exact ties in
    true scores contribute nothing. Adding a constant to all logits of a
    sample leaves the term unchanged.
    """
    logits = _check_shape(logits, labels)
    n, n_experts = logits.shape
    top_cut = min(TOP_TIER_SIZE, n_experts)
    total = 0.0
    grad = np.zeros_like(logits)
    n_pairs = 0
    for i in range(n):
        top_idx = np.where(labels.rank_of[i] <= top_cut)[0]
        s = labels.true_scores[i, top_idx]
        z = logits[i, top_idx]
        higher = s[:, None] > s[None, :]  # j outranks l in truth
        n_pairs += int(higher.sum())
        viol = higher & (margin - (z[:, None] - z[None, :]) > 0)
        total += float(np.sum((margin - (z[:, None] - z[None, :]))[viol]))
        if viol.any():
            dj = viol.sum(axis=1).astype(np.float64)
            dl = viol.sum(axis=0).astype(np.float64)
            grad[i, top_idx] += dl - dj
    if normalize and n_pairs > 0:
        total /= n_pairs
        grad /= n_pairs
    return total, grad, n_pairs


def ranking_aware_loss(
    logits: np.ndarray,
    labels: BatchLabels,
    *,
    top_weight: float = 3.0,
    mid_weight: float = 1.5,
    rest_weight: float = 0.5,
    ranking_lambda: float = 0.3,
    margin: float = 0.1,
    normalize_ranking: bool = True,
):
    """Three-tier weighted BCE plus the pairwise ranking hinge."""
    logits = _check_shape(logits, labels)
    weights = _tier_weights(labels, top_weight, rest_weight, mid_w=mid_weight)
    bce, bce_grad = _weighted_bce(logits, labels, weights)
    hinge, hinge_grad, _ = ranking_hinge(
        logits, labels, margin=margin, normalize=normalize_ranking
    )
    loss = bce + ranking_lambda * hinge
    grad = bce_grad + ranking_lambda * hinge_grad
    return loss, grad


def loss_and_grad(spec: LossSpec, logits: np.ndarray, labels: BatchLabels):
    """Uniform dispatch: any family -> (loss, d loss / d logits).

    The MSE family softmaxes the logits first and chain-rules the
    gradient back through it, since its targets are probabilities.
    """
    logits = _check_shape(logits, labels)
    if spec.family == "mse":
        probs = softmax(logits, axis=1)
        loss, dprobs = mse_loss(probs, labels)
        inner = np.sum(dprobs * probs, axis=1, keepdims=True)
        grad = probs * (dprobs - inner)
        return loss, grad
    if spec.family == "wbce":
        return weighted_bce_loss(
            logits, labels, top_weight=spec.top_weight, rest_weight=spec.rest_weight
        )
    if spec.family == "focal":
        return focal_loss(
            logits, labels, gamma=spec.focal_gamma, alpha=spec.focal_alpha
        )
    return ranking_aware_loss(
        logits,
        labels,
        top_weight=spec.top_weight,
        mid_weight=spec.mid_weight,
        rest_weight=spec.rest_weight,
        ranking_lambda=spec.ranking_lambda,
        margin=spec.margin,
        normalize_ranking=spec.normalize_ranking,
    )
