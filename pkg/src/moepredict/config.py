"""Experiment configuration: one JSON file drives every CLI command.

Precedence is flag > config file > built-in default. The config is a
nested dict; helpers below materialize the typed specs each module
expects. Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import copy
import json

import numpy as np

from .core import RouterSpec
from .exceptions import ConfigurationError
from .losses import LossSpec
from .synthgen import TeacherSpec, _rng
from .trainer import TrainConfig

DEFAULT_CONFIG = {
    "router": {"d": 64, "n_experts": 16, "k": 2, "gate_scale": None},
    "teacher": {
        "transform": "identity",
        "post_norm": True,
        "noise_sigma": 0.0,
        "nonlinear_hidden": 64,
    },
    "data": {"n_train": 50000, "n_eval": 10000},
    "train": {
        "arch": "arch2",
        "hidden": 256,
        "batch_size": 256,
        "epochs": 5,
        "learning_rate": 1e-3,
        "optimizer": "adam",
        "eval_fraction": 0.1,
        "overprov_m": None,
        "loss": {
            "family": "wbce",
            "top_weight": 3.0,
            "mid_weight": 1.5,
            "rest_weight": 0.5,
            "ranking_lambda": 0.3,
            "margin": 0.1,
            "focal_gamma": 2.0,
            "focal_alpha": 0.25,
            "normalize_ranking": True,
        },
    },
    "eval": {"m_list": None},
    "sim": {
        "profiles": ["v100-32gb", "a100-40gb", "a100-80gb"],
        "source": "memory",
        "n_tokens": 1000,
        "baseline_accuracy": 0.7879,
        "k": 6,
    },
    "seed": 0,
    "out_dir": "runs",
}

# Gate-weight stream lives in its own Philox namespace.
_GATE_KEY = (1 << 61) + 11


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigurationError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, path + key + ".")
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file, then programmatic overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as f:
            try:
                user = json.load(f)
            except json.JSONDecodeError as err:
                raise ConfigurationError(f"config is not valid JSON: {err}") from err
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def build_router(cfg: dict) -> RouterSpec:
    r = cfg["router"]
    d, n_experts = int(r["d"]), int(r["n_experts"])
    scale = r["gate_scale"] if r["gate_scale"] else 1.0 / np.sqrt(d)
    rng = _rng(cfg["seed"], _GATE_KEY)
    gate = rng.standard_normal((n_experts, d)) * scale
    return RouterSpec(d, n_experts, int(r["k"]), gate)


def build_teacher(cfg: dict) -> TeacherSpec:
    t = cfg["teacher"]
    return TeacherSpec(
        router=build_router(cfg),
        transform=t["transform"],
        nonlinear_hidden=int(t["nonlinear_hidden"]),
        post_norm=bool(t["post_norm"]),
        noise_sigma=float(t["noise_sigma"]),
        seed=int(cfg["seed"]),
    )


def build_loss(cfg: dict) -> LossSpec:
    return LossSpec(**cfg["train"]["loss"])


def build_train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        loss=build_loss(cfg),
        arch=t["arch"],
        hidden=int(t["hidden"]),
        batch_size=int(t["batch_size"]),
        epochs=int(t["epochs"]),
        learning_rate=float(t["learning_rate"]),
        optimizer=t["optimizer"],
        seed=int(cfg["seed"]),
        eval_fraction=float(t["eval_fraction"]),
        overprov_m=t["overprov_m"],
    )
