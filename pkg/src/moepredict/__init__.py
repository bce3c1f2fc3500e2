"""moepredict: same-layer MoE expert prediction and prefetch modeling."""

__version__ = "0.1.0"

from .core import (
    ExpertSelection,
    RouterSpec,
    TraceSample,
    activation_entropy,
    gate_forward,
    gate_logits,
    layer_norm,
    softmax,
    top_k,
)
from .estimator import ExpertPredictor
from .losses import (
    BatchLabels,
    LossSpec,
    focal_loss,
    loss_and_grad,
    mse_loss,
    ranking_aware_loss,
    weighted_bce_loss,
)
from .metrics import (
    EvalResult,
    affinity_tier_profile,
    evaluate,
    exact_match,
    overprovision_hit,
    top1_hit,
)
from .pipesim import (
    BUILTIN_PROFILES,
    ExpertBlobSpec,
    HardwareProfile,
    ScheduleResult,
    expected_loading_time,
    get_profile,
    overprov_io_overhead,
    savings_report,
    schedule,
    stall_free,
)
from .predictor import (
    PredictorModel,
    backward,
    forward,
    init_model,
    load_model,
    n_params,
    predict_topk,
    save_model,
)
from .synthgen import (
    TeacherSpec,
    TraceFile,
    generate_dataset,
    make_dataset,
    read_trace,
    write_trace,
)
from .trainer import TrainConfig, TrainingReport, compare_losses, train

__all__ = [
    "ExpertPredictor",
    "ExpertSelection",
    "RouterSpec",
    "TraceSample",
    "TraceFile",
    "TeacherSpec",
    "LossSpec",
    "BatchLabels",
    "TrainConfig",
    "TrainingReport",
    "PredictorModel",
    "EvalResult",
    "HardwareProfile",
    "ExpertBlobSpec",
    "ScheduleResult",
    "BUILTIN_PROFILES",
    "activation_entropy",
    "affinity_tier_profile",
    "backward",
    "compare_losses",
    "evaluate",
    "exact_match",
    "expected_loading_time",
    "focal_loss",
    "forward",
    "gate_forward",
    "gate_logits",
    "generate_dataset",
    "get_profile",
    "init_model",
    "layer_norm",
    "load_model",
    "loss_and_grad",
    "make_dataset",
    "mse_loss",
    "n_params",
    "overprov_io_overhead",
    "overprovision_hit",
    "predict_topk",
    "ranking_aware_loss",
    "read_trace",
    "save_model",
    "savings_report",
    "schedule",
    "softmax",
    "stall_free",
    "top1_hit",
    "top_k",
    "train",
    "weighted_bce_loss",
    "write_trace",
]
