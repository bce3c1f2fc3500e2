"""Analytic per-layer pipeline schedules and expert-loading arithmetic.

The layer is a fixed stage chain (pre-norm, attention, post-norm, expert
selection, expert computation). Parameter transfers run on a load
channel with ``parallel_load_slots`` lanes: n experts take
ceil(n / slots) waves of the per-expert transfer time. Three schedules
are modeled:

  no_prefetch    loads start only after the gate has selected
  prefetch_hit   predicted experts load in parallel with attention
  prefetch_miss  hit experts as above; missed ones emergency-load after
                 selection, interleaved with computation of the experts
                 already present (even per-expert compute split)

The simulator is closed-form; the stage graph is a small fixed DAG, so
event-driven simulation would add nothing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

from .exceptions import ConfigurationError

MODES = ("no_prefetch", "prefetch_hit", "prefetch_miss")
SOURCES = ("disk", "memory")

DEFAULT_PREDICT_MS = 0.15


@dataclass(frozen=True)
class HardwareProfile:
    """Per-stage timings (ms) and per-expert transfer costs for one box."""

    name: str
    t_pre_norm: float
    t_attn: float
    t_post_norm: float
    t_select: float
    t_expert_compute: float
    t_load_disk_per_expert: float
    t_load_mem_per_expert: float
    t_predict: float = DEFAULT_PREDICT_MS
    parallel_load_slots: int = 1
    std: dict = field(default_factory=dict)  # stage -> stddev, informational

    def __post_init__(self):
        times = (
            self.t_pre_norm,
            self.t_attn,
            self.t_post_norm,
            self.t_select,
            self.t_expert_compute,
            self.t_load_disk_per_expert,
            self.t_load_mem_per_expert,
            self.t_predict,
        )
        if any(t < 0 for t in times):
            raise ConfigurationError("stage times must be >= 0")
        if self.t_attn <= 0:
            raise ConfigurationError("t_attn must be positive")
        if self.parallel_load_slots < 1:
            raise ConfigurationError("parallel_load_slots must be >= 1")

    def per_expert_ms(self, source: str) -> float:
        if source not in SOURCES:
            raise ConfigurationError(f"unknown load source {source!r}")
        return (
            self.t_load_disk_per_expert
            if source == "disk"
            else self.t_load_mem_per_expert
        )

    def full_load_ms(self, k: int, source: str) -> float:
        """Bandwidth total for k experts, independent of lane count."""
        return k * self.per_expert_ms(source)

    def with_slots(self, slots: int) -> "HardwareProfile":
        return replace(self, parallel_load_slots=slots)

    def to_json(self, path) -> None:
        payload = {
            "name": self.name,
            "t_pre_norm": self.t_pre_norm,
            "t_attn": self.t_attn,
            "t_post_norm": self.t_post_norm,
            "t_select": self.t_select,
            "t_expert_compute": self.t_expert_compute,
            "t_load_disk_per_expert": self.t_load_disk_per_expert,
            "t_load_mem_per_expert": self.t_load_mem_per_expert,
            "t_predict": self.t_predict,
            "parallel_load_slots": self.parallel_load_slots,
            "std": self.std,
        }
        with open(path, "w") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")

    @classmethod
    def from_json(cls, path) -> "HardwareProfile":
        with open(path) as f:
            payload = json.load(f)
        return cls(**payload)


# Measured stage means for a mid-size MoE decoder layer (64 experts, 6
# active, ~16.5 MB per expert); per-expert transfer costs are the
# 6-expert totals divided by 6. Lane counts default to the active expert
# count for these cloud parts; use with_slots(1) for the single-channel
# edge scenario.
BUILTIN_PROFILES = {
    "v100-32gb": HardwareProfile(
        name="v100-32gb",
        t_pre_norm=0.1292,
        t_attn=1.1279,
        t_post_norm=0.1292,
        t_select=0.1432,
        t_expert_compute=10.3075,
        t_load_disk_per_expert=48.1 / 6,
        t_load_mem_per_expert=9.5 / 6,
        parallel_load_slots=6,
        std={
            "t_pre_norm": 0.0120,
            "t_attn": 0.0388,
            "t_post_norm": 0.0120,
            "t_select": 0.0138,
            "t_expert_compute": 1.7038,
        },
    ),
    "a100-40gb": HardwareProfile(
        name="a100-40gb",
        t_pre_norm=0.0771,
        t_attn=0.7607,
        t_post_norm=0.0823,
        t_select=0.0972,
        t_expert_compute=6.1970,
        t_load_disk_per_expert=49.8 / 6,
        t_load_mem_per_expert=8.5 / 6,
        parallel_load_slots=6,
        std={
            "t_pre_norm": 0.0007,
            "t_attn": 0.0069,
            "t_post_norm": 0.0012,
            "t_select": 0.0025,
            "t_expert_compute": 1.0668,
        },
    ),
    "a100-80gb": HardwareProfile(
        name="a100-80gb",
        t_pre_norm=0.0750,
        t_attn=0.7385,
        t_post_norm=0.0797,
        t_select=0.1018,
        t_expert_compute=6.8111,
        t_load_disk_per_expert=33.5 / 6,
        t_load_mem_per_expert=4.0 / 6,
        parallel_load_slots=6,
        std={
            "t_pre_norm": 0.0015,
            "t_attn": 0.0074,
            "t_post_norm": 0.0040,
            "t_select": 0.0039,
            "t_expert_compute": 1.1864,
        },
    ),
}


def get_profile(name: str, profile_dir=None) -> HardwareProfile:
    """Resolve a built-in profile or load <name>.json from profile_dir."""
    key = name.lower()
    if key in BUILTIN_PROFILES:
        return BUILTIN_PROFILES[key]
    if profile_dir is not None:
        candidate = f"{profile_dir}/{name}.json"
        try:
            return HardwareProfile.from_json(candidate)
        except FileNotFoundError:
            pass
    raise ConfigurationError(f"unknown hardware profile {name!r}")


@dataclass(frozen=True)
class ExpertBlobSpec:
    """Size model for one expert's parameter blob."""

    params_per_expert: int = 5_780_000
    bytes_per_param: int = 2
    experts_per_token: int = 6

    @property
    def per_expert_mb(self) -> float:
        return self.params_per_expert * self.bytes_per_param / 1e6

    def consistent_with(self, per_expert_mb: float, tol: float = 0.02) -> bool:
        return abs(self.per_expert_mb - per_expert_mb) <= tol * per_expert_mb


@dataclass(frozen=True)
class ScheduleResult:
    """Stage intervals plus the two headline numbers."""

    mode: str
    stages: tuple  # of (name, start_ms, end_ms)
    token_latency: float
    expert_stall: float  # time expert compute waits past selection

    def stage(self, name: str):
        for s in self.stages:
            if s[0] == name:
                return s
        raise KeyError(name)


def _load_waves(start: float, n: int, per_expert: float, slots: int, tag: str):
    """Wave intervals for n experts over the load lanes."""
    waves = []
    for w in range(math.ceil(n / slots)):
        waves.append((f"{tag}_wave{w}", start + w * per_expert, start + (w + 1) * per_expert))
    return waves


def schedule(
    profile: HardwareProfile,
    k: int,
    mode: str,
    source: str = "memory",
    miss_count: int = 0,
    emergency_source: str | None = None,
) -> ScheduleResult:
    """Closed-form schedule of one token through one MoE layer.

    ``miss_count`` applies to prefetch_miss only: that many of the k
    required experts were not prefetched and must emergency-load from
    ``emergency_source`` (defaults to ``source``). If prediction would
    finish after the gate, prefetching degenerates to the naive start
    time, so prefetching never extends the schedule.
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    if mode != "prefetch_miss" and miss_count:
        raise ValueError("miss_count only applies to prefetch_miss")
    if not 0 <= miss_count <= k:
        raise ValueError(f"miss_count={miss_count} out of [0, {k}]")

    p = profile.per_expert_ms(source)
    p_em = profile.per_expert_ms(emergency_source or source)
    slots = profile.parallel_load_slots
    a, b = profile.t_pre_norm, profile.t_attn
    c, e, f = profile.t_post_norm, profile.t_select, profile.t_expert_compute
    t_sel = a + b + c + e

    stages = [
        ("pre_norm", 0.0, a),
        ("attention", a, a + b),
        ("post_norm", a + b, a + b + c),
        ("select", a + b + c, t_sel),
    ]

    if mode == "no_prefetch":
        waves = _load_waves(t_sel, k, p, slots, "load")
        load_end = waves[-1][2] if waves else t_sel
        stages += waves
        stages.append(("expert_compute", load_end, load_end + f))
        latency = load_end + f
        return ScheduleResult("no_prefetch", tuple(stages), latency, latency - t_sel - f)

    # Prefetch paths: prediction runs right after pre-norm, loads follow.
    predict_end = a + profile.t_predict
    stages.append(("predict", a, predict_end))
    prefetch_start = min(predict_end, t_sel)
    waves = _load_waves(prefetch_start, k, p, slots, "prefetch")
    prefetch_end = waves[-1][2] if waves else prefetch_start
    stages += waves

    if mode == "prefetch_hit":
        start = max(t_sel, prefetch_end)
        stages.append(("expert_compute", start, start + f))
        latency = start + f
        return ScheduleResult(
            "prefetch_hit", tuple(stages), latency, latency - t_sel - f
        )

    # prefetch_miss: computation of resident experts overlaps the
    # emergency loads, one even f/k slice per expert.
    t0 = max(t_sel, prefetch_end)
    slice_ms = f / k
    hits = k - miss_count
    cursor = t0
    if hits:
        stages.append(("expert_compute_hits", cursor, cursor + hits * slice_ms))
        cursor += hits * slice_ms
    em_waves = _load_waves(t0, miss_count, p_em, slots, "emergency")
    stages += em_waves
    for j in range(miss_count):
        available = t0 + (j // slots + 1) * p_em
        start = max(cursor, available)
        stages.append((f"expert_compute_miss{j}", start, start + slice_ms))
        cursor = start + slice_ms
    latency = cursor
    return ScheduleResult("prefetch_miss", tuple(stages), latency, latency - t_sel - f)


def prefetch_window_ms(profile: HardwareProfile) -> float:
    """Overlap window from prediction to gate output."""
    return profile.t_attn + profile.t_post_norm + profile.t_select - profile.t_predict


def stall_free(profile: HardwareProfile, k: int, source: str = "memory") -> bool:
    """Closed-form condition for zero stall under prefetch_hit."""
    waves = math.ceil(k / profile.parallel_load_slots)
    return profile.per_expert_ms(source) * waves <= prefetch_window_ms(profile)


def expected_loading_time(accuracy: float, full_load_ms: float) -> float:
    """Expected per-token emergency loading cost: miss rate times reload."""
    if not 0.0 <= accuracy <= 1.0:
        raise ValueError(f"accuracy {accuracy} outside [0, 1]")
    if full_load_ms < 0:
        raise ValueError("full_load_ms must be >= 0")
    return (1.0 - accuracy) * full_load_ms


def overprov_io_overhead(m: int, k: int, per_expert_mb: float):
    """Extra bytes moved when prefetching m instead of k experts."""
    if m < k:
        raise ValueError(f"m={m} must be >= k={k}")
    if k < 1:
        raise ValueError("k must be >= 1")
    extra_mb = (m - k) * per_expert_mb
    return extra_mb, (m - k) / k


def savings_report(
    acc_ours: float,
    acc_baseline: float,
    profiles,
    n_tokens: int,
    source: str = "memory",
    k: int = 6,
) -> dict:
    """Per-profile expected loading times for two accuracies, plus deltas."""
    for acc in (acc_ours, acc_baseline):
        if not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy {acc} outside [0, 1]")
    rows = []
    for profile in profiles:
        full = profile.full_load_ms(k, source)
        ours = expected_loading_time(acc_ours, full)
        base = expected_loading_time(acc_baseline, full)
        rows.append(
            {
                "profile": profile.name,
                "source": source,
                "full_load_ms": full,
                "ms_per_token_ours": ours,
                "ms_per_token_baseline": base,
                "delta_ms_per_token": base - ours,
                "total_delta_ms": (base - ours) * n_tokens,
            }
        )
    ours_values = [r["ms_per_token_ours"] for r in rows]
    return {
        "rows": rows,
        "n_tokens": n_tokens,
        "zero_latency_gain": acc_ours - acc_baseline,
        "span_ms_per_token": (min(ours_values), max(ours_values)) if rows else None,
    }


def savings_to_csv(report: dict, path) -> None:
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            [
                "profile",
                "source",
                "full_load_ms",
                "ms_per_token_ours",
                "ms_per_token_baseline",
                "delta_ms_per_token",
                "total_delta_ms",
            ]
        )
        for r in report["rows"]:
            w.writerow(
                [
                    r["profile"],
                    r["source"],
                    f"{r['full_load_ms']:.4f}",
                    f"{r['ms_per_token_ours']:.4f}",
                    f"{r['ms_per_token_baseline']:.4f}",
                    f"{r['delta_ms_per_token']:.4f}",
                    f"{r['total_delta_ms']:.1f}",
                ]
            )
