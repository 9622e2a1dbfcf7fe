"""Parameter container: embedding tables, pattern alignment and per-block weights."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .config import ModelConfig
from .embedding import init_tables, table_shapes

QKV = ("q", "k", "v")
HEAD_PROJ = tuple(f"{a}_{src}_{part}" for a in QKV for src in ("item", "beh") for part in ("mu", "sig"))
FFL_PARTS = ("w1", "b1", "w2", "b2")
WEIGHT_STD = 0.02


def head_prefix(block: int, head: int) -> str:
    return f"blocks.{block}.head{head}."


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    D, dh, K, F = cfg.D, cfg.d_head, cfg.num_behaviors, cfg.D_ff
    shapes = table_shapes(cfg.num_users, cfg.num_items, cfg.num_behaviors, cfg.L, D)
    shapes["pattern_align"] = (D, D)
    for n in range(cfg.N_blocks):
        for h in range(cfg.heads):
            p = head_prefix(n, h)
            for name in HEAD_PROJ:
                shapes[p + name] = (D, dh)
            shapes[p + "ip_align"] = (dh, dh)
            shapes[p + "pos_align"] = (dh, dh)
            shapes[p + "pat_mu"] = (D, dh)
            shapes[p + "pat_sig"] = (D, dh)
        b = f"blocks.{n}."
        for stream in ("mu", "sig"):
            # one MLP per behavior id, padding included
            shapes[b + f"ffl_{stream}_w1"] = (K + 1, D, F)
            shapes[b + f"ffl_{stream}_b1"] = (K + 1, F)
            shapes[b + f"ffl_{stream}_w2"] = (K + 1, F, D)
            shapes[b + f"ffl_{stream}_b2"] = (K + 1, D)
            for ln in ("ln1", "ln2"):
                shapes[b + f"{ln}_{stream}_g"] = (D,)
                shapes[b + f"{ln}_{stream}_b"] = (D,)
    return shapes


def _init_weight(name: str, shape: tuple, gen: torch.Generator) -> torch.Tensor:
    leaf = name.rsplit(".", 1)[-1]
    if leaf in ("pattern_align", "ip_align", "pos_align"):
        return torch.eye(shape[0], dtype=torch.float64)
    if leaf.endswith("_g"):
        return torch.ones(shape, dtype=torch.float64)
    if leaf.endswith("_b") or leaf.endswith("_b1") or leaf.endswith("_b2"):
        return torch.zeros(shape, dtype=torch.float64)
    std = WEIGHT_STD
    if leaf in ("pat_mu", "pat_sig"):
        # Glorot scale: the projected patterns must be separable at init, otherwise
        # every impact factor is ~0 and the fused attention starts out uniform
        std = (2.0 / (shape[0] + shape[1])) ** 0.5
    return torch.randn(shape, generator=gen, dtype=torch.float64) * std


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, torch.Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def clone(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.detach().clone() for k, v in self.tensors.items()})

    def to(self, dtype: torch.dtype) -> "ModelParams":
        return ModelParams(self.config, {k: v.detach().to(dtype) for k, v in self.tensors.items()})

    def requires_grad_(self, flag: bool = True) -> "ModelParams":
        for v in self.tensors.values():
            v.requires_grad_(flag)
        return self

    def num_parameters(self) -> int:
        return sum(v.numel() for v in self.tensors.values())


def init_params(cfg: ModelConfig, seed: int | None = None) -> ModelParams:
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    shapes = param_shapes(cfg)
    tables = init_tables({k: v for k, v in shapes.items() if k.endswith(("_mean", "_rawcov"))}, seed)
    gen = torch.Generator().manual_seed(seed + 1)
    tensors = {}
    for name, shape in shapes.items():
        t = tables[name] if name in tables else _init_weight(name, shape, gen)
        tensors[name] = t.to(cfg.torch_dtype)
    return ModelParams(cfg, tensors)


def effective_behaviors(cfg: ModelConfig, behaviors: torch.Tensor) -> torch.Tensor:
    """Behavior ids the model actually sees (the blind ablation maps every real id to 0)."""
    if not cfg.behavior_blind:
        return behaviors
    return torch.where(behaviors >= cfg.num_behaviors, behaviors, torch.zeros_like(behaviors))
