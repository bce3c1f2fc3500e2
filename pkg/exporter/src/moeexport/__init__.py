"""moeexport: dump per-layer MoE routing traces from torch checkpoints."""

__version__ = "0.1.0"

from .hooks import ExportSpec, LayerHandle, discover_layers, export
from .models import TinyMoEModel, resolve_model
from .writer import TraceWriter, topk_lowest_index

__all__ = [
    "ExportSpec",
    "LayerHandle",
    "TinyMoEModel",
    "TraceWriter",
    "discover_layers",
    "export",
    "resolve_model",
    "topk_lowest_index",
]
