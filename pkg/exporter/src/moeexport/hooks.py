"""Instrumentation: locate per-layer norm and router modules, capture
pre-attention activations plus routed-expert scores, and stream them into
per-layer trace files."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .models import resolve_model
from .writer import TraceWriter

GATE_ATTRS = ("gate", "router")
MOE_CONTAINER_ATTRS = ("mlp", "block_sparse_moe", "moe", "feed_forward")
NORM_ATTRS = ("input_layernorm", "ln_1", "pre_attention_layernorm")
K_ATTRS = ("num_experts_per_tok", "top_k", "k", "n_active")


@dataclass(frozen=True)
class ExportSpec:
    model: str
    out_dir: Path
    prompt_file: Path | None = None
    prompts: tuple[str, ...] = ()
    layers: tuple[int, ...] | None = None  # None = every MoE layer found
    max_samples: int = 1000
    max_new_tokens: int = 8
    keep_raw_logits: bool = False

    def __post_init__(self):
        if self.max_samples < 1:
            raise ValueError("max_samples must be >= 1")


@dataclass
class LayerHandle:
    index: int
    norm: nn.Module
    gate: nn.Module
    n_experts: int
    k: int


def _find_gate(layer: nn.Module) -> nn.Module | None:
    for container_name in MOE_CONTAINER_ATTRS:
        container = getattr(layer, container_name, None)
        if container is None:
            continue
        for gate_name in GATE_ATTRS:
            gate = getattr(container, gate_name, None)
            if isinstance(gate, nn.Linear):
                return gate
            # some routers wrap the projection one level down
            if gate is not None:
                inner = getattr(gate, "weight", None)
                if isinstance(gate, nn.Module) and inner is not None:
                    return gate
    return None


def _find_k(model: nn.Module, layer: nn.Module) -> int | None:
    for owner in (layer, getattr(layer, "mlp", None), model,
                  getattr(model, "config", None)):
        if owner is None:
            continue
        for attr in K_ATTRS:
            value = getattr(owner, attr, None)
            if isinstance(value, int) and value >= 1:
                return value
    return None


def discover_layers(model: nn.Module) -> list[LayerHandle]:
    """Walk the module tree and pair pre-attention norms with routers."""
    handles = []
    candidates = getattr(model, "layers", None)
    if candidates is None:
        inner = getattr(model, "model", None)
        candidates = getattr(inner, "layers", None)
    if candidates is None:
        raise ValueError("model exposes no .layers list to instrument")
    for index, layer in enumerate(candidates):
        norm = None
        for attr in NORM_ATTRS:
            norm = getattr(layer, attr, None)
            if isinstance(norm, nn.Module):
                break
        gate = _find_gate(layer)
        if norm is None or gate is None:
            continue  # dense layer, nothing to predict
        weight = getattr(gate, "weight", None)
        n_experts = weight.shape[0] if weight is not None else None
        k = _find_k(model, layer)
        if n_experts is None or k is None:
            continue
        handles.append(LayerHandle(index, norm, gate, int(n_experts), int(k)))
    if not handles:
        raise ValueError("no MoE layers with norm + router found")
    return handles


class _Capture:
    """Holds the most recent forward's tensors for one layer."""

    def __init__(self):
        self.activation = None
        self.gate_logits = None

    def hook_norm(self, module, args, output):
        self.activation = output.detach()

    def hook_gate(self, module, args, output):
        logits = output[0] if isinstance(output, tuple) else output
        self.gate_logits = logits.detach()


def _load_prompts(spec: ExportSpec) -> list[str]:
    prompts = list(spec.prompts)
    if spec.prompt_file is not None:
        text = Path(spec.prompt_file).read_text()
        prompts += [line for line in text.splitlines() if line.strip()]
    if not prompts:
        raise ValueError("no prompts given (use a prompt file or --prompt)")
    return prompts


def export(spec: ExportSpec) -> list[Path]:
    """Run the model over the prompts and write one trace per layer.

    Prefill records every prompt position; greedy decode steps record the
    newly generated position only. Scores are the softmax of the router
    logits over routed experts; the stored top-k is recomputed from the
    float32 scores so files always satisfy the reader's invariants.
    """
    model, encode = resolve_model(spec.model)
    handles = discover_layers(model)
    if spec.layers is not None:
        wanted = set(spec.layers)
        handles = [h for h in handles if h.index in wanted]
        missing = wanted - {h.index for h in handles}
        if missing:
            raise ValueError(f"layer indices {sorted(missing)} not instrumentable")

    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    captures = {h.index: _Capture() for h in handles}
    writers = {}
    hooks = []
    for h in handles:
        cap = captures[h.index]
        hooks.append(h.norm.register_forward_hook(cap.hook_norm))
        hooks.append(h.gate.register_forward_hook(cap.hook_gate))

    def flush(handle: LayerHandle, phase: str, last_only: bool):
        cap = captures[handle.index]
        writer = writers[handle.index]
        acts = cap.activation.reshape(-1, cap.activation.shape[-1])
        logits = cap.gate_logits.reshape(-1, cap.gate_logits.shape[-1])
        if acts.shape[0] != logits.shape[0]:
            raise RuntimeError(
                f"layer {handle.index}: {acts.shape[0]} activations vs "
                f"{logits.shape[0]} router outputs in one forward"
            )
        scores = torch.softmax(logits.to(torch.float64), dim=-1)
        rows = range(acts.shape[0] - 1, acts.shape[0]) if last_only else range(
            acts.shape[0]
        )
        for row in rows:
            if writer.count >= spec.max_samples:
                return
            writer.add(
                acts[row].cpu().numpy(),
                scores[row].cpu().numpy(),
                phase,
                raw_logits=logits[row].cpu().numpy(),
            )

    paths = []
    try:
        with torch.no_grad():
            probe = encode("probe")
            model(torch.tensor([probe]))
            for h in handles:
                d = captures[h.index].activation.shape[-1]
                path = out_dir / f"layer{h.index:02d}.moepa"
                writers[h.index] = TraceWriter(
                    path, d, h.n_experts, h.k, keep_raw_logits=spec.keep_raw_logits
                )
                paths.append(path)

            for prompt in _load_prompts(spec):
                ids = encode(prompt)
                seq = torch.tensor([ids])
                logits = model(seq)
                for h in handles:
                    flush(h, "prefill", last_only=False)
                for _ in range(spec.max_new_tokens):
                    if all(w.count >= spec.max_samples for w in writers.values()):
                        break
                    next_id = int(logits[0, -1].argmax())
                    seq = torch.cat([seq, torch.tensor([[next_id]])], dim=1)
                    logits = model(seq)
                    for h in handles:
                        flush(h, "decode", last_only=True)
                if all(w.count >= spec.max_samples for w in writers.values()):
                    break
    finally:
        for hook in hooks:
            hook.remove()
        for writer in writers.values():
            writer.close()
    return paths
