"""Mini-batch training loop and the single-epoch loss comparison harness.

Training is fully deterministic given the config seed: the dataset
shuffle, parameter init, and dropout streams are all keyed off it, and
reductions run in a fixed order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigurationError, DataError
from .losses import FAMILIES, BatchLabels, LossSpec, loss_and_grad
from .metrics import evaluate_predictions
from .predictor import PredictorModel, backward, forward, init_model, predict_logits

OPTIMIZERS = ("sgd", "momentum", "adam")

# Philox stream namespace for the dataset shuffle (init and dropout use
# the seed directly inside predictor.init_model).
_SHUFFLE_NS = (1 << 61) + 7


@dataclass(frozen=True)
class TrainConfig:
    loss: LossSpec = field(default_factory=LossSpec)
    arch: str = "arch2"
    hidden: int = 256
    batch_size: int = 256
    epochs: int = 5
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_fraction: float = 0.1
    overprov_m: int | None = None  # defaults to min(E, k + 4)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0 < self.eval_fraction < 1:
            raise ConfigurationError("eval_fraction must lie in (0, 1)")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    exact_match: float
    top1: float
    overprov: float


@dataclass
class TrainingReport:
    epochs: list[EpochStats]
    overprov_m: int

    @property
    def final(self) -> EpochStats:
        return self.epochs[-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_loss", "exact_match", "top1", "overprov"])
            for row in self.epochs:
                w.writerow(
                    [
                        row.epoch,
                        f"{row.train_loss:.6f}",
                        f"{row.exact_match:.6f}",
                        f"{row.top1:.6f}",
                        f"{row.overprov:.6f}",
                    ]
                )


class _Optimizer:
    def __init__(self, config: TrainConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.state = {
            name: {
                "m": np.zeros_like(p),
                "v": np.zeros_like(p) if config.optimizer == "adam" else None,
            }
            for name, p in params.items()
        }
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        cfg = self.config
        self.t += 1
        for name in params:
            p, g = params[name], grads[name]
            st = self.state[name]
            if cfg.optimizer == "sgd":
                p -= cfg.learning_rate * g
            elif cfg.optimizer == "momentum":
                st["m"] *= cfg.momentum
                st["m"] += g
                p -= cfg.learning_rate * st["m"]
            else:
                st["m"] *= cfg.adam_beta1
                st["m"] += (1 - cfg.adam_beta1) * g
                st["v"] *= cfg.adam_beta2
                st["v"] += (1 - cfg.adam_beta2) * g * g
                m_hat = st["m"] / (1 - cfg.adam_beta1**self.t)
                v_hat = st["v"] / (1 - cfg.adam_beta2**self.t)
                p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def _nan_guard(model: PredictorModel, step: int) -> None:
    for name, p in model.param_dict().items():
        if not np.all(np.isfinite(p)):
            raise FloatingPointError(f"non-finite {name} after step {step}")


def train(config: TrainConfig, data) -> tuple[PredictorModel, TrainingReport]:
    """Train a predictor on a trace dataset; returns (model, report).

    The last ``eval_fraction`` of the shuffled dataset is held out; every
    epoch row reports the training loss plus held-out exact-match, top-1,
    and over-provisioned hit rate at m = overprov_m.
    """
    n = len(data)
    if n == 0:
        raise DataError("empty dataset")
    d, n_experts, k = data.hidden_dim, data.n_experts, data.k
    m_over = config.overprov_m if config.overprov_m else min(n_experts, k + 4)
    if not k <= m_over <= n_experts:
        raise ConfigurationError(f"overprov_m={m_over} out of [{k}, {n_experts}]")

    shuffle_rng = np.random.Generator(
        np.random.Philox(key=((int(config.seed) & 0xFFFFFFFFFFFFFFFF) << 64) + _SHUFFLE_NS)
    )
    perm = shuffle_rng.permutation(n)
    n_eval = max(1, int(round(n * config.eval_fraction)))
    if n_eval >= n:
        raise DataError("eval split leaves no training samples")
    train_idx, eval_idx = perm[: n - n_eval], perm[n - n_eval :]

    x_train = data.activations[train_idx].astype(np.float64)
    labels_train = BatchLabels.from_scores(
        data.true_scores[train_idx].astype(np.float64), k
    )
    x_eval = data.activations[eval_idx].astype(np.float64)
    topk_eval = data.true_topk[eval_idx]

    model = init_model(
        config.arch, d, config.hidden, n_experts, seed=config.seed
    )
    optimizer = _Optimizer(config, model.param_dict())

    n_train = x_train.shape[0]
    rows: list[EpochStats] = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n_train)
        model.train()
        loss_sum = 0.0
        for start in range(0, n_train, config.batch_size):
            batch = order[start : start + config.batch_size]
            xb = x_train[batch]
            lb = BatchLabels(
                labels_train.true_scores[batch],
                labels_train.topk_mask[batch],
                labels_train.rank_of[batch],
            )
            logits = forward(model, xb)
            loss, dlogits = loss_and_grad(config.loss, logits, lb)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at step {step}")
            grads = backward(model, xb, dlogits)
            optimizer.step(model.param_dict(), grads)
            _nan_guard(model, step)
            loss_sum += loss * len(batch)
            step += 1
        model.eval()
        result = evaluate_predictions(
            predict_logits(model, x_eval), topk_eval, n_experts, m_list=[m_over]
        )
        rows.append(
            EpochStats(
                epoch=epoch,
                train_loss=loss_sum / n_train,
                exact_match=result.exact_match,
                top1=result.top1,
                overprov=result.overprov[m_over],
            )
        )
    return model, TrainingReport(rows, m_over)


def compare_losses(config: TrainConfig, data) -> list[dict]:
    """Single-epoch comparison grid: 4 loss families x 2 architectures.

    Every run shares the base config's seed, so shuffles, splits, and
    initialization match across cells and only the objective differs.
    """
    rows = []
    for family in FAMILIES:
        for arch in ("arch1", "arch2"):
            cfg = replace(
                config, arch=arch, epochs=1, loss=replace(config.loss, family=family)
            )
            _, report = train(cfg, data)
            final = report.final
            rows.append(
                {
                    "loss": family,
                    "arch": arch,
                    "exact_match": final.exact_match,
                    "top1": final.top1,
                    "overprov": final.overprov,
                }
            )
    return rows


def comparison_to_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["loss", "arch", "exact_match", "top1", "overprov"])
        for r in rows:
            w.writerow(
                [
                    r["loss"],
                    r["arch"],
                    f"{r['exact_match']:.6f}",
                    f"{r['top1']:.6f}",
                    f"{r['overprov']:.6f}",
                ]
            )
