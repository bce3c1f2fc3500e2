"""Synthetic trace generation and the shared binary trace format.

The teacher draws standard-normal activations, pushes them through a
configurable stand-in for the attention block, and labels them with the
reference gate. Difficulty dials from exactly linearly-rankable
(identity transform, no noise) to approximate (nonlinear mix + noise).

Trace format v1 ("MOEPA1"), little-endian:
    magic   6 bytes  b"MOEPA1"
    header  5 x u32  version, d, E, k, n
    record  d x f32 activation, E x f32 scores, k x u32 top-k indices
Records are fixed width, so files are seekable and trivially writable
by external producers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import RouterSpec, TraceSample, gate_forward, layer_norm, top_k_batch
from .exceptions import (
    BadMagicError,
    ConfigurationError,
    DataError,
    RecordValidationError,
    TraceFormatError,
    TruncatedFileError,
    VersionError,
)

MAGIC = b"MOEPA1"
VERSION = 1
_HEADER = struct.Struct("<5I")  # version, d, E, k, n

TRANSFORMS = ("identity", "linear", "nonlinear")

# Philox key namespaces: sample i uses key (seed << 64) + i; teacher
# weight streams live far above any realistic sample index.
_TEACHER_KEY_OFFSET = 1 << 62


def _rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based per-index stream: parallel generation matches serial."""
    key = ((int(seed) & 0xFFFFFFFFFFFFFFFF) << 64) + int(index)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class TeacherSpec:
    """Configurable data-generating layer standing in for real attention."""

    router: RouterSpec
    transform: str = "identity"  # identity | linear | nonlinear
    mix_matrix: np.ndarray | None = None  # (d, d), required for linear
    nonlinear_hidden: int = 64
    post_norm: bool = True
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise ConfigurationError(f"unknown transform {self.transform!r}")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")
        if self.transform == "linear":
            d = self.router.hidden_dim
            m = self.mix_matrix
            if m is None:
                m = random_mix_matrix(d, self.seed)
            m = np.asarray(m, dtype=np.float64)
            if m.shape != (d, d) or not np.all(np.isfinite(m)):
                raise ConfigurationError(f"mix_matrix must be finite ({d}, {d})")
            object.__setattr__(self, "mix_matrix", m)
        if self.transform == "nonlinear" and self.nonlinear_hidden < 1:
            raise ConfigurationError("nonlinear_hidden must be positive")


def random_mix_matrix(d: int, seed: int) -> np.ndarray:
    """Random dense mixing matrix scaled to keep output variance near 1."""
    rng = _rng(seed, _TEACHER_KEY_OFFSET)
    return rng.standard_normal((d, d)) / np.sqrt(d)


def _nonlinear_maps(spec: TeacherSpec) -> tuple[np.ndarray, np.ndarray]:
    d, h = spec.router.hidden_dim, spec.nonlinear_hidden
    rng = _rng(spec.seed, _TEACHER_KEY_OFFSET + 1)
    w_in = rng.standard_normal((h, d)) / np.sqrt(d)
    w_out = rng.standard_normal((d, h)) / np.sqrt(h)
    return w_in, w_out


@dataclass
class TraceFile:
    """A trace dataset held as batch arrays; indexable as TraceSamples."""

    hidden_dim: int
    n_experts: int
    k: int
    activations: np.ndarray  # (n, d) float32
    true_scores: np.ndarray  # (n, E) float32
    true_topk: np.ndarray  # (n, k) int64, rows sorted ascending

    def __len__(self) -> int:
        return self.activations.shape[0]

    def __getitem__(self, i: int) -> TraceSample:
        return TraceSample(self.activations[i], self.true_scores[i], self.true_topk[i])

    def __eq__(self, other) -> bool:
        if not isinstance(other, TraceFile):
            return NotImplemented
        return (
            (self.hidden_dim, self.n_experts, self.k)
            == (other.hidden_dim, other.n_experts, other.k)
            and np.array_equal(self.activations, other.activations)
            and np.array_equal(self.true_scores, other.true_scores)
            and np.array_equal(self.true_topk, other.true_topk)
        )

    def validate(self) -> None:
        """Re-check every record invariant; raises RecordValidationError."""
        n = len(self)
        if self.activations.shape != (n, self.hidden_dim):
            raise RecordValidationError("activation block shape mismatch")
        if self.true_scores.shape != (n, self.n_experts):
            raise RecordValidationError("score block shape mismatch")
        if self.true_topk.shape != (n, self.k):
            raise RecordValidationError("top-k block shape mismatch")
        if not np.all(np.isfinite(self.activations)):
            raise RecordValidationError("non-finite activation")
        scores64 = self.true_scores.astype(np.float64)
        if np.any(scores64 < 0) or np.any(scores64 > 1):
            raise RecordValidationError("score outside [0, 1]")
        sums = scores64.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-5):
            raise RecordValidationError("scores do not sum to 1 within 1e-5")
        if np.any(self.true_topk < 0) or np.any(self.true_topk >= self.n_experts):
            raise RecordValidationError("top-k index out of range")
        if self.k > 1 and np.any(np.diff(self.true_topk, axis=1) <= 0):
            raise RecordValidationError("top-k rows must be sorted and distinct")
        if not np.array_equal(top_k_batch(self.true_scores, self.k), self.true_topk):
            raise RecordValidationError("stored top-k inconsistent with scores")


def make_dataset(activations, true_scores, k: int) -> TraceFile:
    """Assemble a TraceFile from raw arrays, deriving top-k labels.

    Labels are computed from the float32-cast scores so that stored sets
    always agree with top_k() applied to the stored values.
    """
    acts = np.ascontiguousarray(np.asarray(activations), dtype=np.float32)
    scores = np.ascontiguousarray(np.asarray(true_scores), dtype=np.float32)
    if acts.ndim != 2 or scores.ndim != 2 or acts.shape[0] != scores.shape[0]:
        raise DataError("activations and scores must be (n, d) and (n, E)")
    topk = top_k_batch(scores, k)
    return TraceFile(acts.shape[1], scores.shape[1], k, acts, scores, topk)


def generate_dataset(teacher: TeacherSpec, n: int) -> TraceFile:
    """Draw n labeled samples from the teacher, deterministically per seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    router = teacher.router
    d = router.hidden_dim
    x = np.empty((n, d), dtype=np.float64)
    noise = np.zeros((n, d), dtype=np.float64) if teacher.noise_sigma > 0 else None
    for i in range(n):
        rng = _rng(teacher.seed, i)
        x[i] = rng.standard_normal(d)
        if noise is not None:
            noise[i] = rng.standard_normal(d)

    if teacher.transform == "identity":
        post = x.copy()
    elif teacher.transform == "linear":
        post = x @ teacher.mix_matrix.T
    else:
        w_in, w_out = _nonlinear_maps(teacher)
        post = np.tanh(x @ w_in.T) @ w_out.T
    if noise is not None:
        post += teacher.noise_sigma * noise
    if teacher.post_norm:
        post = layer_norm(post)

    scores = gate_forward(router, post)
    return make_dataset(x, scores, router.n_active)


def expert_activation_counts(trace: TraceFile) -> np.ndarray:
    """How many times each expert appears in the ground-truth top-k sets."""
    return np.bincount(trace.true_topk.ravel(), minlength=trace.n_experts)


def write_trace(path, trace: TraceFile) -> None:
    """Serialize a TraceFile; see module docstring for the layout."""
    if len(trace) == 0:
        raise DataError("refusing to write an empty trace")
    trace.validate()
    n = len(trace)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(VERSION, trace.hidden_dim, trace.n_experts, trace.k, n))
        # Interleave per record so external readers can stream. Values are
        # moved as uint32 bit patterns, then stored little-endian.
        rec = np.empty((n, trace.hidden_dim + trace.n_experts + trace.k), dtype="<u4")
        rec[:, : trace.hidden_dim] = np.ascontiguousarray(trace.activations).view(
            np.uint32
        )
        rec[:, trace.hidden_dim : trace.hidden_dim + trace.n_experts] = (
            np.ascontiguousarray(trace.true_scores).view(np.uint32)
        )
        rec[:, trace.hidden_dim + trace.n_experts :] = trace.true_topk.astype(np.uint32)
        f.write(rec.tobytes())


def read_trace(path) -> TraceFile:
    """Parse and validate a trace file; raises TraceFormatError subtypes."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC):
        raise BadMagicError("file too short for magic")
    if blob[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:len(MAGIC)]!r}")
    off = len(MAGIC)
    if len(blob) < off + _HEADER.size:
        raise TruncatedFileError("file too short for header")
    version, d, n_experts, k, n = _HEADER.unpack_from(blob, off)
    off += _HEADER.size
    if version != VERSION:
        raise VersionError(f"unsupported trace version {version}")
    if d < 1 or n_experts < 1 or not 1 <= k <= n_experts or n < 1:
        raise RecordValidationError(
            f"invalid header dims d={d} E={n_experts} k={k} n={n}"
        )
    rec_words = d + n_experts + k
    expected = n * rec_words * 4
    got = len(blob) - off
    if got < expected:
        raise TruncatedFileError(f"expected {expected} record bytes, found {got}")
    if got > expected:
        raise TraceFormatError(f"{got - expected} trailing bytes after records")
    words = np.frombuffer(blob, dtype="<u4", offset=off).reshape(n, rec_words)
    acts = np.ascontiguousarray(words[:, :d], dtype=np.uint32).view(np.float32)
    scores = np.ascontiguousarray(
        words[:, d : d + n_experts], dtype=np.uint32
    ).view(np.float32)
    topk = words[:, d + n_experts :].astype(np.int64)
    trace = TraceFile(d, n_experts, k, acts, scores, topk)
    trace.validate()
    return trace
