"""Model / training hyperparameters and the flat ``key = value`` config format."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

import torch


@dataclass
class ModelConfig:
    num_users: int = 0
    num_items: int = 0
    num_behaviors: int = 0
    D: int = 16
    L: int = 50
    heads: int = 2
    N_blocks: int = 2
    D_ff: int = 64
    rho: float = 0.2
    dropout: float = 0.1
    lr: float = 0.001
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    # ablation: every real behavior id collapses onto id 0
    behavior_blind: bool = False
    dtype: str = "float32"

    @property
    def d_head(self) -> int:
        return self.D // self.heads

    @property
    def torch_dtype(self) -> torch.dtype:
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]

    def validate(self) -> None:
        if self.D < 1 or self.heads < 1 or self.D % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide D ({self.D})")
        if self.L < 2:
            raise ValueError("L must be >= 2")
        if self.N_blocks < 1 or self.D_ff < 1:
            raise ValueError("N_blocks and D_ff must be positive")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if min(self.num_users, self.num_items, self.num_behaviors) < 1:
            raise ValueError("vocabulary sizes must be set (num_users, num_items, num_behaviors)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def with_vocab(self, num_users: int, num_items: int, num_behaviors: int) -> "ModelConfig":
        return replace(self, num_users=num_users, num_items=num_items, num_behaviors=num_behaviors)


def _coerce(raw: str, typ):
    if typ is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return typ(raw)


_TYPES = {f.name: {"int": int, "float": float, "bool": bool, "str": str}[f.type] for f in fields(ModelConfig)}


def parse_config(text: str, base: ModelConfig | None = None) -> ModelConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(raw, _TYPES[key])
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: bad value for {key}: {exc}") from None
    return replace(base or ModelConfig(), **values)


def load_config(path) -> ModelConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def dump_config(cfg: ModelConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(cfg))
