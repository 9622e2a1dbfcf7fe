"""Binary checkpoint format.

Layout (all integers little-endian u32)::

    b"PBAT" | version | count | count x (name_len, name utf-8, rank, dims...) | float32 data

Tensor data follows the manifest in manifest order, each as raw
little-endian float32. Hyperparameters that do not show up in tensor shapes
(heads, blocks) are recovered from tensor names; ``flags.behavior_blind`` is a
one-element tensor carrying the ablation switch.
"""

from __future__ import annotations

import re
import struct
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig
from .model import ModelParams, param_shapes

MAGIC = b"PBAT"
VERSION = 1
_FLAG = "flags.behavior_blind"


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: ModelParams, path) -> None:
    tensors = dict(params.tensors)
    tensors[_FLAG] = torch.tensor([1.0 if params.config.behavior_blind else 0.0])
    header = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    blobs = []
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        header.append(struct.pack("<I", len(raw)) + raw)
        header.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        blobs.append(t.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(header + blobs))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def _infer_config(shapes: dict[str, tuple], blind: bool) -> ModelConfig:
    try:
        V2, D = shapes["item_mean"]
        U = shapes["user_mean"][0]
        K = shapes["relation_mean"][0]
        L = shapes["position_mean"][0]
        D_ff = shapes["blocks.0.ffl_mu_w1"][2]
    except KeyError as exc:
        raise CheckpointError(f"missing tensor {exc.args[0]!r}") from None
    blocks = {int(m.group(1)) for k in shapes if (m := re.match(r"blocks\.(\d+)\.", k))}
    heads = {int(m.group(1)) for k in shapes if (m := re.match(r"blocks\.0\.head(\d+)\.", k))}
    return ModelConfig(num_users=U, num_items=V2 - 2, num_behaviors=K, D=D, L=L,
                       heads=len(heads), N_blocks=len(blocks), D_ff=D_ff, behavior_blind=blind)


def load_checkpoint(path, config: ModelConfig | None = None) -> ModelParams:
    """Read a checkpoint. With ``config``, every tensor shape must match it exactly."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic: not a PBAT checkpoint")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    count = r.u32("tensor count")
    manifest = []
    for i in range(count):
        n = r.u32(f"name length of tensor {i}")
        name = r.take(n, f"name of tensor {i}").decode("utf-8")
        rank = r.u32(f"rank of {name}")
        dims = tuple(r.u32(f"dims of {name}") for _ in range(rank))
        manifest.append((name, dims))
    tensors = {}
    for name, dims in manifest:
        size = int(np.prod(dims, dtype=np.int64)) if dims else 1
        arr = np.frombuffer(r.take(4 * size, f"data of {name}"), dtype="<f4").reshape(dims)
        tensors[name] = torch.from_numpy(arr.astype(np.float32))
    if r.pos != len(r.buf):
        raise CheckpointError(f"{len(r.buf) - r.pos} trailing bytes after tensor data")

    blind = bool(tensors.pop(_FLAG, torch.zeros(1))[0] > 0)
    shapes = {k: tuple(v.shape) for k, v in tensors.items()}
    inferred = _infer_config(shapes, blind)
    if config is None:
        cfg = inferred
    else:
        cfg = replace(config, behavior_blind=blind, dtype="float32")
    expected = param_shapes(cfg)
    for name, shape in expected.items():
        if name not in shapes:
            raise CheckpointError(f"missing tensor {name!r}")
        if shapes[name] != shape:
            raise CheckpointError(f"shape mismatch for {name!r}: checkpoint {shapes[name]}, config {shape}")
    extra = set(shapes) - set(expected)
    if extra:
        raise CheckpointError(f"unexpected tensors: {sorted(extra)[:5]}")
    return ModelParams(cfg, {k: tensors[k] for k in expected})
