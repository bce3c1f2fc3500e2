"""Standalone writer for the MOEPA1 trace format.

The format is the external contract shared with the analysis side, so it
is implemented here against the documented layout rather than imported:

    magic   6 bytes  b"MOEPA1"
    header  5 x u32 little-endian: version (1), d, E, k, n
    record  d x f32 activation, E x f32 scores, k x u32 sorted top-k

The writer appends records and patches the header count on close, so a
crash mid-export leaves an obviously short file rather than a lying
header. Alongside each trace it writes a JSON side file with per-record
phase tags (prefill/decode) and optional raw gate logits, which do not
belong in the fixed-width v1 container.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MOEPA1"
VERSION = 1
_HEADER = struct.Struct("<5I")
_COUNT_OFFSET = len(MAGIC) + 16  # version, d, E, k precede the count


def topk_lowest_index(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores, ties to the lower index, sorted."""
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


class TraceWriter:
    """Append-only per-layer trace writer with a deferred record count."""

    def __init__(self, path, d: int, n_experts: int, k: int, keep_raw_logits=False):
        if not 1 <= k <= n_experts:
            raise ValueError(f"k={k} out of range for {n_experts} experts")
        self.path = Path(path)
        self.d = d
        self.n_experts = n_experts
        self.k = k
        self.count = 0
        self.phases: list[str] = []
        self.keep_raw_logits = keep_raw_logits
        self.raw_logits: list[np.ndarray] = []
        self._file = open(self.path, "wb")
        self._file.write(MAGIC)
        self._file.write(_HEADER.pack(VERSION, d, n_experts, k, 0))

    def add(self, activation: np.ndarray, scores: np.ndarray, phase: str,
            raw_logits: np.ndarray | None = None) -> None:
        """Record one token: activation, routed-expert scores, phase tag.

        The stored top-k is recomputed from the float32-cast scores so it
        always matches what a reader recovers from the file.
        """
        act = np.ascontiguousarray(activation, dtype=np.float32)
        sc = np.ascontiguousarray(scores, dtype=np.float32)
        if act.shape != (self.d,):
            raise ValueError(f"activation shape {act.shape} != ({self.d},)")
        if sc.shape != (self.n_experts,):
            raise ValueError(f"scores shape {sc.shape} != ({self.n_experts},)")
        topk = topk_lowest_index(sc, self.k).astype(np.uint32)
        self._file.write(act.tobytes())
        self._file.write(sc.tobytes())
        self._file.write(topk.astype("<u4").tobytes())
        self.phases.append(phase)
        if self.keep_raw_logits and raw_logits is not None:
            self.raw_logits.append(np.asarray(raw_logits, dtype=np.float32))
        self.count += 1

    def close(self) -> None:
        self._file.seek(_COUNT_OFFSET)
        self._file.write(struct.pack("<I", self.count))
        self._file.close()
        meta = {
            "records": self.count,
            "d": self.d,
            "n_experts": self.n_experts,
            "k": self.k,
            "phases": self.phases,
        }
        if self.keep_raw_logits and self.raw_logits:
            raw_path = self.path.with_suffix(self.path.suffix + ".logits.npy")
            np.save(raw_path, np.stack(self.raw_logits))
            meta["raw_logits_file"] = raw_path.name
        side = self.path.with_suffix(self.path.suffix + ".meta.json")
        with open(side, "w") as f:
            json.dump(meta, f, indent=2)
            f.write("\n")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
