"""Model resolution: a built-in tiny MoE for offline use, python-path
factories, and (when the transformers package is installed) Hugging Face
checkpoints."""

from __future__ import annotations

import hashlib
import importlib

import torch
import torch.nn as nn


def _hash_token(word: str, vocab: int) -> int:
    digest = hashlib.md5(word.encode()).digest()
    return int.from_bytes(digest[:4], "little") % vocab


def whitespace_encode(text: str, vocab: int) -> list[int]:
    """Deterministic stand-in tokenizer for models without one."""
    words = text.split()
    return [_hash_token(w, vocab) for w in words] or [0]


class TinyAttention(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.qkv = nn.Linear(d, 3 * d, bias=False)
        self.out = nn.Linear(d, d, bias=False)
        self.d = d

    def forward(self, x):
        b, t, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        att = (q @ k.transpose(-2, -1)) / d**0.5
        mask = torch.triu(torch.ones(t, t, dtype=torch.bool), diagonal=1)
        att = att.masked_fill(mask, float("-inf")).softmax(dim=-1)
        return self.out(att @ v)


class TinyMoEBlock(nn.Module):
    """Routed experts behind a linear gate; no shared experts."""

    def __init__(self, d: int, n_experts: int, k: int):
        super().__init__()
        self.gate = nn.Linear(d, n_experts, bias=False)
        self.experts = nn.ModuleList(
            nn.Sequential(nn.Linear(d, 2 * d), nn.SiLU(), nn.Linear(2 * d, d))
            for _ in range(n_experts)
        )
        self.k = k

    def forward(self, x):
        logits = self.gate(x)
        probs = logits.softmax(dim=-1)
        weights, idx = torch.topk(probs, self.k, dim=-1)
        weights = weights / weights.sum(dim=-1, keepdim=True)
        out = torch.zeros_like(x)
        flat_x = x.reshape(-1, x.shape[-1])
        flat_idx = idx.reshape(-1, self.k)
        flat_w = weights.reshape(-1, self.k)
        flat_out = out.reshape(-1, x.shape[-1])
        for e, expert in enumerate(self.experts):
            rows, slot = torch.where(flat_idx == e)
            if rows.numel():
                flat_out[rows] += flat_w[rows, slot, None] * expert(flat_x[rows])
        return out


class TinyMoELayer(nn.Module):
    def __init__(self, d: int, n_experts: int, k: int):
        super().__init__()
        self.input_layernorm = nn.LayerNorm(d)
        self.self_attn = TinyAttention(d)
        self.post_attention_layernorm = nn.LayerNorm(d)
        self.mlp = TinyMoEBlock(d, n_experts, k)

    def forward(self, h):
        h = h + self.self_attn(self.input_layernorm(h))
        h = h + self.mlp(self.post_attention_layernorm(h))
        return h


class TinyMoEModel(nn.Module):
    """Minimal decoder-only MoE, structured like the usual HF layout."""

    def __init__(self, d=32, n_experts=8, k=2, n_layers=2, vocab=101, seed=0):
        super().__init__()
        torch.manual_seed(seed)
        self.embed = nn.Embedding(vocab, d)
        self.layers = nn.ModuleList(
            TinyMoELayer(d, n_experts, k) for _ in range(n_layers)
        )
        self.lm_head = nn.Linear(d, vocab, bias=False)
        self.vocab = vocab
        self.num_experts = n_experts
        self.num_experts_per_tok = k

    def forward(self, ids):
        h = self.embed(ids)
        for layer in self.layers:
            h = layer(h)
        return self.lm_head(h)


def _parse_demo_args(spec: str) -> dict:
    # demo:tiny?d=32,experts=8,k=2,layers=2,seed=0
    if "?" not in spec:
        return {}
    mapping = {"d": "d", "experts": "n_experts", "k": "k", "layers": "n_layers",
               "seed": "seed", "vocab": "vocab"}
    out = {}
    for pair in spec.split("?", 1)[1].split(","):
        key, value = pair.split("=")
        out[mapping[key.strip()]] = int(value)
    return out


def resolve_model(identifier: str):
    """Return (model, encode_fn) for a model identifier.

    Supported forms: ``demo:tiny[?d=..,experts=..,k=..,layers=..]``,
    ``package.module:factory`` (a zero-argument callable returning a
    torch module), or a Hugging Face model id when transformers is
    installed.
    """
    if identifier.startswith("demo:tiny"):
        model = TinyMoEModel(**_parse_demo_args(identifier))
        model.eval()
        return model, lambda text: whitespace_encode(text, model.vocab)
    if ":" in identifier:
        module_name, factory_name = identifier.split(":", 1)
        factory = getattr(importlib.import_module(module_name), factory_name)
        model = factory()
        model.eval()
        vocab = getattr(model, "vocab", 50257)
        return model, lambda text: whitespace_encode(text, vocab)
    try:
        from transformers import AutoModelForCausalLM, AutoTokenizer
    except ImportError as err:
        raise RuntimeError(
            f"model {identifier!r} looks like a Hugging Face id but the "
            "transformers package is not installed; pip install "
            "moe-trace-exporter[hf]"
        ) from err
    tokenizer = AutoTokenizer.from_pretrained(identifier)
    model = AutoModelForCausalLM.from_pretrained(identifier)
    model.eval()
    return model, lambda text: tokenizer(text)["input_ids"]
