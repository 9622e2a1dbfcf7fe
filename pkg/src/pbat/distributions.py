"""Diagonal-Gaussian arithmetic.

Every function here comes in two flavours: a tensor kernel that works on
``(mean, var)`` tensors with arbitrary leading batch dimensions (used by the
model, autograd-friendly), and a thin ``DiagonalGaussian`` wrapper that
validates its inputs (used by callers that want the checked contract).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn.functional as F

VAR_FLOOR = 1e-8


def _as_tensor(x, dtype=torch.float64) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=dtype)


@dataclass(frozen=True)
class DiagonalGaussian:
    """Axis-aligned Gaussian: mean vector plus per-dimension variance."""

    mean: torch.Tensor
    var: torch.Tensor

    def __post_init__(self):
        mean = _as_tensor(self.mean)
        var = _as_tensor(self.var, dtype=mean.dtype)
        if mean.ndim != 1 or mean.shape[0] < 1:
            raise ValueError(f"mean must be a non-empty vector, got shape {tuple(mean.shape)}")
        if var.shape != mean.shape:
            raise ValueError(f"mean/var shape mismatch: {tuple(mean.shape)} vs {tuple(var.shape)}")
        if not torch.isfinite(mean).all():
            raise ValueError("mean has non-finite components")
        if not torch.isfinite(var).all() or not (var > 0).all():
            raise ValueError("var must be strictly positive and finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _check_same_dim(*gs: DiagonalGaussian) -> None:
    dims = {g.dim for g in gs}
    if len(dims) != 1:
        raise ValueError(f"dimension mismatch: {sorted(dims)}")


# ---------------------------------------------------------------------------
# tensor kernels
# ---------------------------------------------------------------------------

def elu_plus_one(x: torch.Tensor) -> torch.Tensor:
    """ELU(x) + 1: x + 1 for x >= 0, exp(x) otherwise. Strictly positive."""
    return F.elu(x) + 1.0


def wasserstein_sq_t(mu1, var1, mu2, var2) -> torch.Tensor:
    """Squared 2-Wasserstein distance between diagonal Gaussians, summed over the last dim."""
    mean_term = ((mu1 - mu2) ** 2).sum(-1)
    std_term = ((torch.sqrt(var1) - torch.sqrt(var2)) ** 2).sum(-1)
    return mean_term + std_term


def sagp_t(mu_u, var_u, mu_v, var_v, align: Optional[torch.Tensor] = None):
    var_u = var_u.clamp_min(VAR_FLOOR)
    var_v = var_v.clamp_min(VAR_FLOOR)
    total = var_u + var_v
    mu_v_aligned = mu_v if align is None else mu_v @ align
    # each side is weighted by the *other* side's variance
    mean = (var_v / total) * mu_u + (var_u / total) * mu_v_aligned
    var = 2.0 * var_u * var_v / total
    return mean, var


def tri_sagp_t(mu_base, var_base, mu_ip, var_ip, mu_pos, var_pos,
               align_ip: Optional[torch.Tensor] = None,
               align_pos: Optional[torch.Tensor] = None):
    prec_base = 1.0 / var_base.clamp_min(VAR_FLOOR)
    prec_ip = 1.0 / var_ip.clamp_min(VAR_FLOOR)
    prec_pos = 1.0 / var_pos.clamp_min(VAR_FLOOR)
    var = 1.0 / (prec_base + prec_ip + prec_pos)
    ip = mu_ip if align_ip is None else mu_ip @ align_ip
    pos = mu_pos if align_pos is None else mu_pos @ align_pos
    mean = var * (mu_base * prec_base + ip * prec_ip + pos * prec_pos)
    return mean, var


def aggregate_t(weights, means, vars_):
    """Linear combination over the second-to-last axis of ``means``/``vars_``.

    ``weights[..., j]`` multiplies ``means[..., j, :]``; variances pick up the
    squared weights.
    """
    mean = (weights.unsqueeze(-1) * means).sum(-2)
    var = ((weights ** 2).unsqueeze(-1) * vars_).sum(-2)
    return mean, var


# ---------------------------------------------------------------------------
# checked wrappers
# ---------------------------------------------------------------------------

def elu_plus_one_checked(x) -> torch.Tensor:
    x = _as_tensor(x)
    if not torch.isfinite(x).all():
        raise ValueError("elu_plus_one: non-finite input")
    return elu_plus_one(x)


def wasserstein_sq(a: DiagonalGaussian, b: DiagonalGaussian) -> float:
    _check_same_dim(a, b)
    return float(wasserstein_sq_t(a.mean, a.var, b.mean, b.var))


def sagp(u: DiagonalGaussian, v: DiagonalGaussian, align=None) -> DiagonalGaussian:
    """Self-adaptive Gaussian production of ``u`` and ``v``.

    The output variance is twice the harmonic combination of the inputs, so it
    stays between them; ``align`` (D x D) acts on ``v``'s mean only.
    """
    _check_same_dim(u, v)
    if align is not None:
        align = _as_tensor(align, dtype=u.mean.dtype)
        if align.shape != (u.dim, u.dim):
            raise ValueError(f"align must be {u.dim}x{u.dim}, got {tuple(align.shape)}")
    mean, var = sagp_t(u.mean, u.var, v.mean, v.var, align)
    return DiagonalGaussian(mean, var)


def tri_sagp(base: DiagonalGaussian, ip: DiagonalGaussian, pos: DiagonalGaussian,
             align_ip=None, align_pos=None) -> DiagonalGaussian:
    """Precision-additive fusion of three Gaussians."""
    _check_same_dim(base, ip, pos)
    for g in (base, ip, pos):
        if (g.var < VAR_FLOOR).any():
            raise ValueError(f"tri_sagp: variance below floor {VAR_FLOOR}")
    d = base.dim
    aligns = []
    for w in (align_ip, align_pos):
        if w is not None:
            w = _as_tensor(w, dtype=base.mean.dtype)
            if w.shape != (d, d):
                raise ValueError(f"alignment weight must be {d}x{d}, got {tuple(w.shape)}")
        aligns.append(w)
    mean, var = tri_sagp_t(base.mean, base.var, ip.mean, ip.var, pos.mean, pos.var, *aligns)
    return DiagonalGaussian(mean, var)


def gaussian_aggregate(values: Sequence[DiagonalGaussian], weights) -> DiagonalGaussian:
    if len(values) == 0:
        raise ValueError("gaussian_aggregate: empty value list")
    _check_same_dim(*values)
    w = _as_tensor(weights, dtype=values[0].mean.dtype)
    if w.shape != (len(values),):
        raise ValueError(f"expected {len(values)} weights, got shape {tuple(w.shape)}")
    if not torch.isfinite(w).all():
        raise ValueError("gaussian_aggregate: non-finite weight")
    means = torch.stack([v.mean for v in values])
    vars_ = torch.stack([v.var for v in values])
    mean, var = aggregate_t(w, means, vars_)
    return DiagonalGaussian(mean, var)
