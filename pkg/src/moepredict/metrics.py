"""Evaluation metrics for predicted expert selections.

Three headline numbers: exact-match (predicted k-set equals the true
k-set), over-provisioning hit rate (all k true experts inside the m
prefetched ones, m >= k), and top-1 (highest-scoring predicted expert is
in the true set). Over-provisioning also gets a per-expert recall
reading since the full-coverage and recall interpretations differ.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .core import rank_order
from .exceptions import DataError
from .predictor import PredictorModel, predict_logits


def exact_match(pred_indices, truth) -> bool:
    """Set equality between a predicted k-set and the true k-set."""
    pred = np.sort(np.asarray(pred_indices, dtype=np.int64))
    true = np.sort(np.asarray(truth, dtype=np.int64))
    if pred.shape != true.shape:
        raise ValueError(f"size mismatch: {pred.shape[0]} vs {true.shape[0]}")
    return bool(np.array_equal(pred, true))


def overprovision_hit(pred_indices, truth) -> bool:
    """Full-coverage semantics: every true expert is among the m loaded."""
    pred = set(np.asarray(pred_indices, dtype=np.int64).tolist())
    true = set(np.asarray(truth, dtype=np.int64).tolist())
    if len(pred) < len(true):
        raise ValueError("over-provisioned set must be at least as large as truth")
    return true.issubset(pred)


def top1_hit(selection, truth) -> bool:
    """Whether the argmax of the raw prediction scores lands in the truth."""
    raw = np.asarray(selection.raw_scores, dtype=np.float64)
    return int(np.argmax(raw)) in set(np.asarray(truth, dtype=np.int64).tolist())


def affinity_tier_profile(true_scores: np.ndarray) -> np.ndarray:
    """Mean of the r-th largest true score across samples, r = 1..E.

    The sorted-mean curve makes the high / flat / tail structure of the
    gate's affinity distribution visible; it is non-increasing because
    means of order statistics are ordered.
    """
    scores = np.atleast_2d(np.asarray(true_scores, dtype=np.float64))
    if scores.shape[0] == 0:
        raise DataError("need at least one sample")
    return np.sort(scores, axis=1)[:, ::-1].mean(axis=0)


@dataclass
class EvalResult:
    """Aggregated metrics for one (model, dataset) evaluation."""

    exact_match: float
    top1: float
    overprov: dict[int, float]  # m -> full-coverage hit rate
    overprov_recall: dict[int, float]  # m -> mean fraction of truth covered
    n_samples: int
    k: int
    n_experts: int
    per_expert_hits: np.ndarray  # correct predictions per expert at m = k
    per_expert_truth: np.ndarray  # ground-truth activations per expert
    tier_profile: np.ndarray | None = None

    def to_json(self, path) -> None:
        payload = {
            "exact_match": self.exact_match,
            "top1": self.top1,
            "overprov": {str(m): v for m, v in self.overprov.items()},
            "overprov_recall": {str(m): v for m, v in self.overprov_recall.items()},
            "n_samples": self.n_samples,
            "k": self.k,
            "n_experts": self.n_experts,
            "per_expert_hits": self.per_expert_hits.tolist(),
            "per_expert_truth": self.per_expert_truth.tolist(),
            "tier_profile": (
                None if self.tier_profile is None else self.tier_profile.tolist()
            ),
        }
        with open(path, "w") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")

    @classmethod
    def from_json(cls, path) -> "EvalResult":
        with open(path) as f:
            payload = json.load(f)
        return cls(
            exact_match=payload["exact_match"],
            top1=payload["top1"],
            overprov={int(m): v for m, v in payload["overprov"].items()},
            overprov_recall={
                int(m): v for m, v in payload["overprov_recall"].items()
            },
            n_samples=payload["n_samples"],
            k=payload["k"],
            n_experts=payload["n_experts"],
            per_expert_hits=np.asarray(payload["per_expert_hits"], dtype=np.int64),
            per_expert_truth=np.asarray(payload["per_expert_truth"], dtype=np.int64),
            tier_profile=(
                None
                if payload["tier_profile"] is None
                else np.asarray(payload["tier_profile"], dtype=np.float64)
            ),
        )

    def to_csv(self, path) -> None:
        """Long-format CSV: one row per metric reading, plot-ready."""
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["metric", "m", "value"])
            w.writerow(["exact_match", self.k, f"{self.exact_match:.6f}"])
            w.writerow(["top1", 1, f"{self.top1:.6f}"])
            for m in sorted(self.overprov):
                w.writerow(["overprov_hit", m, f"{self.overprov[m]:.6f}"])
            for m in sorted(self.overprov_recall):
                w.writerow(["overprov_recall", m, f"{self.overprov_recall[m]:.6f}"])
            if self.tier_profile is not None:
                for r, v in enumerate(self.tier_profile, start=1):
                    w.writerow(["tier_profile", r, f"{v:.6f}"])


def default_m_list(k: int, n_experts: int) -> list[int]:
    """k itself, a mild over-provision, and the everything case."""
    return sorted({k, min(k + 4, n_experts), n_experts})


def evaluate_predictions(
    logits: np.ndarray,
    true_topk: np.ndarray,
    n_experts: int,
    m_list=None,
    true_scores: np.ndarray | None = None,
) -> EvalResult:
    """Score a batch of predictor logits against ground-truth k-sets."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    true_topk = np.atleast_2d(np.asarray(true_topk, dtype=np.int64))
    n, k = true_topk.shape
    if logits.shape != (n, n_experts):
        raise DataError(f"logits shape {logits.shape} != ({n}, {n_experts})")
    if n == 0:
        raise DataError("cannot evaluate zero samples")
    m_values = sorted(set(default_m_list(k, n_experts) if m_list is None else m_list))
    if any(m < k or m > n_experts for m in m_values):
        raise ValueError(f"over-provision sizes must lie in [{k}, {n_experts}]")
    if k not in m_values:
        m_values.insert(0, k)

    order = rank_order(logits)
    rows = np.arange(n)[:, None]
    pred_rank = np.empty_like(order)
    pred_rank[rows, order] = np.arange(n_experts)[None, :]
    truth_rank = pred_rank[rows, true_topk]  # predicted rank of each true expert

    overprov: dict[int, float] = {}
    recall: dict[int, float] = {}
    for m in m_values:
        inside = truth_rank < m
        overprov[m] = float(inside.all(axis=1).mean())
        recall[m] = float(inside.mean())
    em = overprov[k]
    top1 = float((truth_rank == 0).any(axis=1).mean())

    hit_mask = truth_rank < k  # true expert also inside the predicted k-set
    per_expert_hits = np.bincount(
        true_topk[hit_mask].ravel(), minlength=n_experts
    ).astype(np.int64)
    per_expert_truth = np.bincount(true_topk.ravel(), minlength=n_experts).astype(
        np.int64
    )
    tier = None if true_scores is None else affinity_tier_profile(true_scores)
    return EvalResult(
        exact_match=em,
        top1=top1,
        overprov=overprov,
        overprov_recall=recall,
        n_samples=n,
        k=k,
        n_experts=n_experts,
        per_expert_hits=per_expert_hits,
        per_expert_truth=per_expert_truth,
        tier_profile=tier,
    )


def evaluate(model: PredictorModel, trace, m_list=None) -> EvalResult:
    """Evaluate a trained predictor on a trace dataset."""
    if len(trace) == 0:
        raise DataError("empty trace")
    logits = predict_logits(model, trace.activations.astype(np.float64))
    return evaluate_predictions(
        logits,
        trace.true_topk,
        trace.n_experts,
        m_list=m_list,
        true_scores=trace.true_scores,
    )
