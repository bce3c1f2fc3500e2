"""Two-layer expert predictors: forward, backward, selection, checkpoints.

Both architectures map a d-vector to one logit per expert:

    arch1:  linear -> batch-norm -> GELU (tanh form) -> dropout -> linear
    arch2:  linear -> SiLU -> linear

Gradients are computed analytically; the test suite pins them against
central finite differences.

Checkpoint format v1 ("MOEPM1"), little-endian:
    magic   6 bytes  b"MOEPM1"
    header  5 x u32  version, arch (1|2), d, hidden, E
    f64     dropout_rate
    f64[]   w1 (hidden*d), b1, w2 (E*hidden), b2,
            then for arch1: bn_scale, bn_shift, bn_mean, bn_var
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .core import ExpertSelection, top_k, top_k_batch
from .exceptions import BadMagicError, ConfigurationError, UsageError, VersionError

CHECKPOINT_MAGIC = b"MOEPM1"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<5I")

ARCHS = ("arch1", "arch2")

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u, dtype=np.float64)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def silu(u: np.ndarray) -> np.ndarray:
    return u * sigmoid(u)


def silu_grad(u: np.ndarray) -> np.ndarray:
    s = sigmoid(u)
    return s * (1.0 + u * (1.0 - s))


def gelu_tanh(u: np.ndarray) -> np.ndarray:
    """GELU in its tanh approximation; all implementations agree to 1e-6:
    0.5 * u * (1 + tanh(sqrt(2/pi) * (u + 0.044715 * u^3)))."""
    t = np.tanh(_GELU_C * (u + _GELU_A * u**3))
    return 0.5 * u * (1.0 + t)


def gelu_tanh_grad(u: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (u + _GELU_A * u**3))
    dt = (1.0 - t**2) * _GELU_C * (1.0 + 3.0 * _GELU_A * u**2)
    return 0.5 * (1.0 + t) + 0.5 * u * dt


def _dropout_rng(seed: int, step: int) -> np.random.Generator:
    key = ((int(seed) & 0xFFFFFFFFFFFFFFFF) << 64) + int(step)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class PredictorModel:
    """Parameters and normalization state for one per-layer predictor."""

    arch: str
    w1: np.ndarray  # (hidden, d)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (E, hidden)
    b2: np.ndarray  # (E,)
    bn_scale: np.ndarray | None = None
    bn_shift: np.ndarray | None = None
    bn_mean: np.ndarray | None = None
    bn_var: np.ndarray | None = None
    dropout_rate: float = 0.1
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    mode: str = "eval"  # train | eval
    dropout_seed: int = 0
    _dropout_step: int = field(default=0, repr=False)
    _cache: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigurationError(f"unknown arch {self.arch!r}")
        has_bn = all(
            v is not None
            for v in (self.bn_scale, self.bn_shift, self.bn_mean, self.bn_var)
        )
        if self.arch == "arch1" and not has_bn:
            raise ConfigurationError("arch1 requires batch-norm state")
        if self.arch == "arch2" and has_bn:
            raise ConfigurationError("arch2 carries no batch-norm state")
        if self.bn_var is not None and np.any(self.bn_var < 0):
            raise ConfigurationError("running variance must be >= 0")

    @property
    def d(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def n_experts(self) -> int:
        return self.w2.shape[0]

    def train(self) -> "PredictorModel":
        self.mode = "train"
        return self

    def eval(self) -> "PredictorModel":
        self.mode = "eval"
        self._cache = None
        return self

    def param_dict(self) -> dict[str, np.ndarray]:
        params = {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}
        if self.arch == "arch1":
            params["bn_scale"] = self.bn_scale
            params["bn_shift"] = self.bn_shift
        return params


def init_model(
    arch: str,
    d: int,
    hidden: int,
    n_experts: int,
    seed: int = 0,
    dropout_rate: float = 0.1,
) -> PredictorModel:
    """Kaiming-uniform fan-in init; batch-norm starts at identity."""
    if arch not in ARCHS:
        raise ConfigurationError(f"unknown arch {arch!r}")
    rng = np.random.Generator(np.random.Philox(key=(int(seed) << 64)))
    # Kaiming-uniform, fan-in mode, with the leaky slope sqrt(5) used for
    # linear layers: bound = sqrt(1 / fan_in).
    lim1 = np.sqrt(1.0 / d)
    lim2 = np.sqrt(1.0 / hidden)
    w1 = rng.uniform(-lim1, lim1, size=(hidden, d))
    w2 = rng.uniform(-lim2, lim2, size=(n_experts, hidden))
    b1 = np.zeros(hidden)
    b2 = np.zeros(n_experts)
    if arch == "arch1":
        return PredictorModel(
            arch,
            w1,
            b1,
            w2,
            b2,
            bn_scale=np.ones(hidden),
            bn_shift=np.zeros(hidden),
            bn_mean=np.zeros(hidden),
            bn_var=np.ones(hidden),
            dropout_rate=dropout_rate,
            dropout_seed=seed,
        )
    return PredictorModel(arch, w1, b1, w2, b2, dropout_rate=0.0, dropout_seed=seed)


def n_params(model: PredictorModel) -> int:
    return int(sum(p.size for p in model.param_dict().values()))


def _check_input(model: PredictorModel, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != model.d:
        raise ConfigurationError(
            f"input shape {x.shape} incompatible with d={model.d}"
        )
    if not np.all(np.isfinite(batch)):
        raise ConfigurationError("input must be finite")
    return batch, single


def _forward_internal(
    model: PredictorModel,
    x: np.ndarray,
    training: bool,
    dropout_mask: np.ndarray | None,
) -> tuple[np.ndarray, dict]:
    cache: dict = {"x": x, "training": training}
    a = x @ model.w1.T + model.b1
    cache["a"] = a
    if model.arch == "arch2":
        h = silu(a)
        cache["h"] = h
        logits = h @ model.w2.T + model.b2
        return logits, cache

    if training:
        mu = a.mean(axis=0)
        var = a.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + model.bn_eps)
        a_hat = (a - mu) * inv_std
        n = a.shape[0]
        # Running stats use the unbiased batch variance, torch-style.
        var_run = var * (n / (n - 1)) if n > 1 else var
        model.bn_mean *= 1.0 - model.bn_momentum
        model.bn_mean += model.bn_momentum * mu
        model.bn_var *= 1.0 - model.bn_momentum
        model.bn_var += model.bn_momentum * var_run
    else:
        inv_std = 1.0 / np.sqrt(model.bn_var + model.bn_eps)
        a_hat = (a - model.bn_mean) * inv_std
    bn_out = model.bn_scale * a_hat + model.bn_shift
    g = gelu_tanh(bn_out)
    cache.update(a_hat=a_hat, inv_std=inv_std, bn_out=bn_out, g=g)

    if training and model.dropout_rate > 0:
        if dropout_mask is None:
            rng = _dropout_rng(model.dropout_seed, model._dropout_step)
            model._dropout_step += 1
            dropout_mask = rng.random(g.shape) >= model.dropout_rate
        keep = dropout_mask.astype(np.float64) / (1.0 - model.dropout_rate)
        h = g * keep
        cache["keep"] = keep
    else:
        h = g
        cache["keep"] = None
    cache["h"] = h
    logits = h @ model.w2.T + model.b2
    return logits, cache


def forward(
    model: PredictorModel, x: np.ndarray, *, dropout_mask: np.ndarray | None = None
) -> np.ndarray:
    """Predictor logits for one vector or an (n, d) batch.

    Eval mode is pure and deterministic. Train mode uses minibatch
    normalization statistics, draws a fresh dropout mask from the model's
    counter-based stream (unless one is supplied), and retains the
    intermediates needed by a paired backward() call.
    """
    batch, single = _check_input(model, x)
    training = model.mode == "train"
    logits, cache = _forward_internal(model, batch, training, dropout_mask)
    if training:
        model._cache = cache
    return logits[0] if single else logits


def _backward_from_cache(
    model: PredictorModel, cache: dict, dlogits: np.ndarray
) -> dict[str, np.ndarray]:
    h = cache["h"]
    grads = {
        "w2": dlogits.T @ h,
        "b2": dlogits.sum(axis=0),
    }
    dh = dlogits @ model.w2
    if model.arch == "arch2":
        da = dh * silu_grad(cache["a"])
    else:
        if cache["keep"] is not None:
            dg = dh * cache["keep"]
        else:
            dg = dh
        dbn = dg * gelu_tanh_grad(cache["bn_out"])
        grads["bn_scale"] = (dbn * cache["a_hat"]).sum(axis=0)
        grads["bn_shift"] = dbn.sum(axis=0)
        da_hat = dbn * model.bn_scale
        if cache["training"]:
            n = cache["a"].shape[0]
            a_hat = cache["a_hat"]
            da = (
                cache["inv_std"]
                / n
                * (
                    n * da_hat
                    - da_hat.sum(axis=0)
                    - a_hat * (da_hat * a_hat).sum(axis=0)
                )
            )
        else:
            da = da_hat * cache["inv_std"]
    grads["w1"] = da.T @ cache["x"]
    grads["b1"] = da.sum(axis=0)
    return grads


def backward(
    model: PredictorModel, x: np.ndarray, dlogits: np.ndarray
) -> dict[str, np.ndarray]:
    """Parameter gradients given upstream d(loss)/d(logits).

    In train mode this consumes the intermediates of the most recent
    forward() on the same input, so the dropout mask and batch statistics
    match. Eval mode recomputes them on the fly.
    """
    batch, single = _check_input(model, x)
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if single:
        dlogits = dlogits[None, :]
    if dlogits.shape != (batch.shape[0], model.n_experts):
        raise ConfigurationError(
            f"upstream gradient shape {dlogits.shape} mismatches logits"
        )
    if model.mode == "train":
        cache = model._cache
        if cache is None or cache["x"].shape != batch.shape or not np.array_equal(
            cache["x"], batch
        ):
            raise UsageError(
                "train-mode backward requires a paired forward on the same input"
            )
    else:
        _, cache = _forward_internal(model, batch, training=False, dropout_mask=None)
    return _backward_from_cache(model, cache, dlogits)


def predict_logits(model: PredictorModel, x: np.ndarray) -> np.ndarray:
    """Eval-mode logits regardless of the model's current mode flag."""
    batch, single = _check_input(model, x)
    logits, _ = _forward_internal(model, batch, training=False, dropout_mask=None)
    return logits[0] if single else logits


def predict_topk(model: PredictorModel, x: np.ndarray, m: int) -> ExpertSelection:
    """Top-m expert selection for a single activation vector."""
    if model.mode != "eval":
        raise UsageError("predict_topk requires the model in eval mode")
    if not 1 <= m <= model.n_experts:
        raise ValueError(f"m={m} out of range for {model.n_experts} experts")
    logits = predict_logits(model, np.asarray(x, dtype=np.float64).reshape(-1))
    return ExpertSelection(indices=top_k(logits, m), raw_scores=logits)


def predict_topk_batch(model: PredictorModel, x: np.ndarray, m: int) -> np.ndarray:
    """Row-wise top-m predicted expert sets, shape (n, m)."""
    if not 1 <= m <= model.n_experts:
        raise ValueError(f"m={m} out of range for {model.n_experts} experts")
    return top_k_batch(predict_logits(model, x), m)


def save_model(model: PredictorModel, path) -> None:
    """Write a bit-exact checkpoint (float64 parameters, fixed order)."""
    arrays = [model.w1, model.b1, model.w2, model.b2]
    if model.arch == "arch1":
        arrays += [model.bn_scale, model.bn_shift, model.bn_mean, model.bn_var]
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        arch_tag = 1 if model.arch == "arch1" else 2
        f.write(
            _CKPT_HEADER.pack(
                CHECKPOINT_VERSION, arch_tag, model.d, model.hidden, model.n_experts
            )
        )
        f.write(struct.pack("<d", float(model.dropout_rate)))
        for arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> PredictorModel:
    """Read a checkpoint written by save_model; model loads in eval mode."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise BadMagicError("not a predictor checkpoint")
    off = len(CHECKPOINT_MAGIC)
    version, arch_tag, d, hidden, n_experts = _CKPT_HEADER.unpack_from(blob, off)
    off += _CKPT_HEADER.size
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    if arch_tag not in (1, 2):
        raise ConfigurationError(f"unknown arch tag {arch_tag}")
    (dropout_rate,) = struct.unpack_from("<d", blob, off)
    off += 8

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
        off += count * 8
        return arr.astype(np.float64).reshape(shape)

    w1 = take((hidden, d))
    b1 = take((hidden,))
    w2 = take((n_experts, hidden))
    b2 = take((n_experts,))
    if arch_tag == 1:
        return PredictorModel(
            "arch1",
            w1,
            b1,
            w2,
            b2,
            bn_scale=take((hidden,)),
            bn_shift=take((hidden,)),
            bn_mean=take((hidden,)),
            bn_var=take((hidden,)),
            dropout_rate=dropout_rate,
        )
    return PredictorModel("arch2", w1, b1, w2, b2, dropout_rate=dropout_rate)
