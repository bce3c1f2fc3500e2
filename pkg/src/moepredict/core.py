"""Reference MoE gating math and shared domain types.

Everything here is a pure function over immutable inputs. The tie-break
rule for ranking is global to the package: equal scores resolve to the
lower expert index, which makes set-valued metrics reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError

LAYER_NORM_EPS = 1e-5


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax along ``axis``."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores, sorted ascending.

    Ties resolve to the lower index (stable sort on descending score),
    so the result is a canonical set representation.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise ValueError(f"scores must be 1-D, got shape {scores.shape}")
    if not 1 <= k <= scores.shape[0]:
        raise ValueError(f"k={k} out of range for {scores.shape[0]} scores")
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


def top_k_batch(scores: np.ndarray, k: int) -> np.ndarray:
    """Row-wise ``top_k`` for an (n, E) score matrix; returns (n, k)."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= k <= scores.shape[1]:
        raise ValueError(f"k={k} out of range for {scores.shape[1]} scores")
    order = np.argsort(-scores, axis=1, kind="stable")
    return np.sort(order[:, :k], axis=1)


def rank_order(scores: np.ndarray) -> np.ndarray:
    """Descending-score index order per row (ties to lower index)."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    return np.argsort(-scores, axis=1, kind="stable")


def layer_norm(x: np.ndarray, eps: float = LAYER_NORM_EPS) -> np.ndarray:
    """Normalize the last axis to zero mean, unit variance.

    Constant input maps to zeros via the epsilon. Scaling by a positive
    factor and shifting preserve ordering, so argsort(out) == argsort(x).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ValueError("layer_norm needs at least 2 elements")
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps)


def activation_entropy(counts: np.ndarray) -> float:
    """Shannon entropy of an activation histogram, normalized to [0, 1].

    Uniform counts give 1.0, a single active expert gives 0.0. Normalization
    divides by log(E) so the value is comparable across expert counts.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or counts.shape[0] < 2:
        raise ValueError("counts must be a 1-D vector with at least 2 entries")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise ValueError("counts must not be all zero")
    p = counts / total
    nz = p[p > 0]
    h = -np.sum(nz * np.log(nz))
    return float(h / np.log(counts.shape[0]))


@dataclass(frozen=True)
class RouterSpec:
    """One MoE layer's gate: dimensions plus the dense gating matrix."""

    hidden_dim: int
    n_experts: int
    n_active: int
    gate_weights: np.ndarray  # (n_experts, hidden_dim)

    def __post_init__(self):
        if self.hidden_dim < 1 or self.n_experts < 1:
            raise ConfigurationError("hidden_dim and n_experts must be positive")
        if not 1 <= self.n_active <= self.n_experts:
            raise ConfigurationError(
                f"n_active={self.n_active} must be in [1, {self.n_experts}]"
            )
        w = np.asarray(self.gate_weights, dtype=np.float64)
        if w.shape != (self.n_experts, self.hidden_dim):
            raise ConfigurationError(
                f"gate_weights shape {w.shape} != ({self.n_experts}, {self.hidden_dim})"
            )
        if not np.all(np.isfinite(w)):
            raise ConfigurationError("gate_weights must be finite")
        object.__setattr__(self, "gate_weights", w)


def gate_forward(spec: RouterSpec, x: np.ndarray) -> np.ndarray:
    """Affinity scores softmax(W_g x) for one vector or an (n, d) batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.hidden_dim:
        raise ConfigurationError(
            f"activation length {x.shape[-1]} != hidden_dim {spec.hidden_dim}"
        )
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("activation must be finite")
    logits = x @ spec.gate_weights.T
    return softmax(logits, axis=-1)


def gate_logits(spec: RouterSpec, x: np.ndarray) -> np.ndarray:
    """Raw gate logits W_g x (same ranking as gate_forward output)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.hidden_dim:
        raise ConfigurationError(
            f"activation length {x.shape[-1]} != hidden_dim {spec.hidden_dim}"
        )
    return x @ spec.gate_weights.T


@dataclass(frozen=True)
class TraceSample:
    """One token's record: pre-attention activation and router ground truth.

    Arrays are float32, matching on-disk precision, so serialization
    round-trips bit-exactly.
    """

    activation: np.ndarray  # (d,) float32
    true_scores: np.ndarray  # (E,) float32, softmax-normalized
    true_topk: np.ndarray  # (k,) int64, sorted ascending

    def __post_init__(self):
        act = np.asarray(self.activation, dtype=np.float32)
        scores = np.asarray(self.true_scores, dtype=np.float32)
        topk = np.asarray(self.true_topk, dtype=np.int64)
        object.__setattr__(self, "activation", act)
        object.__setattr__(self, "true_scores", scores)
        object.__setattr__(self, "true_topk", topk)
        validate_sample_arrays(act, scores, topk)

    @property
    def n_experts(self) -> int:
        return self.true_scores.shape[0]

    @property
    def k(self) -> int:
        return self.true_topk.shape[0]


def validate_sample_arrays(activation, true_scores, true_topk) -> None:
    """Check the TraceSample invariants; raises ValueError on violation."""
    n_experts = true_scores.shape[0]
    k = true_topk.shape[0]
    if activation.ndim != 1 or true_scores.ndim != 1 or true_topk.ndim != 1:
        raise ValueError("sample fields must be 1-D")
    if not np.all(np.isfinite(activation)):
        raise ValueError("activation must be finite")
    if np.any(true_scores < 0) or np.any(true_scores > 1):
        raise ValueError("true_scores entries must lie in [0, 1]")
    if abs(float(true_scores.sum(dtype=np.float64)) - 1.0) > 1e-5:
        raise ValueError("true_scores must sum to 1 within 1e-5")
    if not 1 <= k <= n_experts:
        raise ValueError(f"top-k size {k} out of range for {n_experts} experts")
    if len(set(true_topk.tolist())) != k:
        raise ValueError("true_topk indices must be distinct")
    if np.any(true_topk < 0) or np.any(true_topk >= n_experts):
        raise ValueError("true_topk indices out of range")
    if np.any(np.diff(true_topk) <= 0):
        raise ValueError("true_topk must be sorted ascending")
    if not np.array_equal(top_k(true_scores, k), true_topk):
        raise ValueError("true_topk inconsistent with top_k(true_scores)")


@dataclass(frozen=True)
class ExpertSelection:
    """A predicted expert set plus the raw logits that produced it."""

    indices: np.ndarray  # sorted ascending, distinct
    raw_scores: np.ndarray  # (E,) pre-activation logits

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        raw = np.asarray(self.raw_scores, dtype=np.float64)
        if idx.ndim != 1 or raw.ndim != 1:
            raise ValueError("indices and raw_scores must be 1-D")
        if len(set(idx.tolist())) != idx.shape[0]:
            raise ValueError("indices must be distinct")
        if np.any(idx < 0) or np.any(idx >= raw.shape[0]):
            raise ValueError("indices out of range")
        object.__setattr__(self, "indices", np.sort(idx))
        object.__setattr__(self, "raw_scores", raw)
