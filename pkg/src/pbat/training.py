"""Cloze loss, gradients, Adam and the finite-difference gradient check."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F

from .data import MaskedBatch, SplitDataset, make_masked_batch
from .distributions import sagp_t, wasserstein_sq_t
from .embedding import entity_t, pattern_t
from .encoder import EncoderState, encode
from .model import ModelParams, effective_behaviors

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
REL_ERR_FLOOR = 1e-8


def set_strict_mode(threads: int = 1) -> None:
    """Single-threaded, deterministic kernels: bit-reproducible runs."""
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

def refine_state(params: ModelParams, state_mu, state_var, users, target_behaviors):
    """SAGP of the encoder state with the user's pattern for the target behavior."""
    T = params.tensors
    z = effective_behaviors(params.config, torch.as_tensor(target_behaviors))
    pt_mu, pt_var = pattern_t(T, T["pattern_align"], torch.as_tensor(users), z)
    return sagp_t(state_mu, state_var, pt_mu, pt_var)


def item_scores(params: ModelParams, hat_mu, hat_var, item_ids):
    """-W2^2 between refined states [N, D] and items; ``item_ids`` is [N] or [N, C]."""
    i_mu, i_var = entity_t(params.tensors, "item", torch.as_tensor(item_ids))
    if i_mu.ndim == 3:
        hat_mu, hat_var = hat_mu[:, None], hat_var[:, None]
    return -wasserstein_sq_t(hat_mu, hat_var, i_mu, i_var)


def score_item(params: ModelParams, state: EncoderState, row: int, t: int, user: int,
               target_behavior: int, item_id: int) -> float:
    hat = refine_state(params, state.mean[row, t], state.var[row, t], user, target_behavior)
    return float(item_scores(params, hat[0][None], hat[1][None], torch.tensor([item_id]))[0])


# ---------------------------------------------------------------------------
# loss and gradients
# ---------------------------------------------------------------------------

def _batch_tensors(batch: MaskedBatch):
    return (torch.from_numpy(batch.items), torch.from_numpy(batch.behaviors),
            torch.from_numpy(batch.users), torch.from_numpy(batch.valid_len))


def cloze_loss(params: ModelParams, batch: MaskedBatch, *, training: bool = False) -> torch.Tensor:
    """Summed BCE over masked slots: -log s(y_pos) - log(1 - s(y_neg))."""
    pad = params.config.num_items
    sel = batch.mask & (batch.targets != pad)
    dtype = params.config.torch_dtype
    if not sel.any():
        return torch.zeros((), dtype=dtype)
    items, behaviors, users, valid_len = _batch_tensors(batch)
    state = encode(params, items, behaviors, users, valid_len, training=training)
    rows, cols = (torch.from_numpy(a) for a in np.nonzero(sel))
    hat_mu, hat_var = refine_state(params, state.mean[rows, cols], state.var[rows, cols],
                                   users[rows], behaviors[rows, cols])
    pos = item_scores(params, hat_mu, hat_var, torch.from_numpy(batch.targets)[rows, cols])
    neg = item_scores(params, hat_mu, hat_var, torch.from_numpy(batch.negatives)[rows, cols])
    if not (torch.isfinite(pos).all() and torch.isfinite(neg).all()):
        bad = (~torch.isfinite(pos) | ~torch.isfinite(neg)).nonzero().flatten().tolist()
        raise FloatingPointError(f"non-finite scores at masked slots {bad[:10]}")
    # -log sigmoid(y) = softplus(-y); -log(1 - sigmoid(y)) = softplus(y)
    return F.softplus(-pos).sum() + F.softplus(neg).sum()


def backward(params: ModelParams, batch: MaskedBatch, *, training: bool = False):
    """Loss and exact gradients for every tensor in ``params`` (zeros where unused)."""
    leaves = {k: v.detach().requires_grad_(True) for k, v in params.tensors.items()}
    p = ModelParams(params.config, leaves)
    loss = cloze_loss(p, batch, training=training)
    if not loss.requires_grad:
        return loss.detach(), {k: torch.zeros_like(v) for k, v in leaves.items()}
    names = list(leaves)
    raw = torch.autograd.grad(loss, [leaves[k] for k in names], allow_unused=True)
    grads = {}
    for k, g in zip(names, raw):
        g = torch.zeros_like(leaves[k]) if g is None else g
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in parameter group {k!r}")
        grads[k] = g
    return loss.detach(), grads


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ModelParams, grads: dict, state: AdamState) -> None:
    """In-place bias-corrected Adam update."""
    state.step += 1
    c1 = 1.0 - ADAM_BETA1 ** state.step
    c2 = 1.0 - ADAM_BETA2 ** state.step
    for name, p in params.tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {tuple(g.shape)} != {tuple(p.shape)}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = torch.zeros_like(p)
            state.v[name] = torch.zeros_like(p)
        v = state.v[name]
        m.mul_(ADAM_BETA1).add_(g, alpha=1.0 - ADAM_BETA1)
        v.mul_(ADAM_BETA2).addcmul_(g, g, value=1.0 - ADAM_BETA2)
        with torch.no_grad():
            p.sub_(state.lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS))


# ---------------------------------------------------------------------------
# epoch loop
# ---------------------------------------------------------------------------

@dataclass
class LossReport:
    epoch: int
    loss: float          # mean per masked slot
    masked: int
    secs: float
    total: float = 0.0   # summed loss over the epoch

    def to_json(self) -> str:
        return json.dumps({"epoch": self.epoch, "loss": self.loss, "masked": self.masked,
                           "secs": round(self.secs, 4)})


def train_epoch(split: SplitDataset, params: ModelParams, state: AdamState, epoch: int,
                *, batch_size: int, rho: float, seed: int, training: bool = True) -> LossReport:
    """One shuffled pass: mask, sample negatives, loss, gradients, Adam."""
    if not split.train:
        raise ValueError("empty training set")
    start = time.perf_counter()
    order = np.random.default_rng([seed, epoch, 7]).permutation(len(split.train))
    total, masked = 0.0, 0
    for i in range(0, len(order), batch_size):
        rows = [split.train[j] for j in order[i:i + batch_size]]
        batch = make_masked_batch(rows, split.vocab, rho, seed, epoch)
        loss, grads = backward(params, batch, training=training)
        adam_step(params, grads, state)
        total += float(loss)
        masked += batch.num_masked
    return LossReport(epoch, total / max(masked, 1), masked, time.perf_counter() - start, total)


def fit(split: SplitDataset, params: ModelParams, epochs: int, *, batch_size: int, rho: float,
        lr: float, seed: int, log=None, state: AdamState | None = None) -> list[LossReport]:
    torch.manual_seed(seed)  # dropout masks
    state = state or AdamState(lr=lr)
    reports = []
    for epoch in range(epochs):
        rep = train_epoch(split, params, state, epoch, batch_size=batch_size, rho=rho, seed=seed)
        reports.append(rep)
        if log is not None:
            print(rep.to_json(), file=log, flush=True)
    return reports


# ---------------------------------------------------------------------------
# finite-difference check
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: dict[str, float]
    worst_coord: dict[str, tuple]
    tolerance: float
    floor: float = REL_ERR_FLOOR

    @property
    def failures(self) -> list[str]:
        return [k for k, e in self.max_rel_err.items() if not e < self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        lines = [f"# relative error floor {self.floor:.1e}"]
        for k, e in self.max_rel_err.items():
            tail = f"  FAIL at {self.worst_coord[k]}" if not e < self.tolerance else ""
            lines.append(f"{k:40s} {e:.3e}{tail}")
        return "\n".join(lines)


# Rounding noise of a central difference is about c * |loss| * eps / step; c was
# measured at ~2 on the tiny config, 16 leaves headroom.
FD_NOISE_FACTOR = 16.0


def fd_noise_floor(loss: float, step: float, tolerance: float) -> float:
    """Gradient magnitude below which central differences cannot reach ``tolerance``."""
    noise = FD_NOISE_FACTOR * abs(loss) * float(np.finfo(np.float64).eps) / step
    return max(REL_ERR_FLOOR, noise / tolerance)


def grad_check(params: ModelParams, batch: MaskedBatch, tolerance: float = 1e-4, *,
               coords_per_group: int = 6, step: float = 1e-5, seed: int = 0,
               grads: dict | None = None, floor: float | None = None) -> GradCheckReport:
    """Central differences vs analytic gradients on sampled coordinates of every group.

    Half the coordinates of each group are its largest analytic gradients, the
    rest are uniform draws. Relative error is |a - f| / max(|a|, |f|, floor);
    ``floor`` defaults to the rounding-noise level of the loss (never below 1e-8).
    Runs in float64 with dropout off. ``grads`` may be supplied to check an
    externally computed gradient (used to test the harness).
    """
    p64 = params.to(torch.float64)
    p64.config = _as_float64(params.config)
    loss, own = backward(p64, batch, training=False)
    grads = own if grads is None else grads
    if floor is None:
        floor = fd_noise_floor(float(loss), step, tolerance)
    rng = np.random.default_rng(seed)
    errs, worst = {}, {}
    with torch.no_grad():
        for name, t in p64.tensors.items():
            n = t.numel()
            g = grads[name].reshape(-1)
            top = torch.argsort(g.abs(), descending=True)[: coords_per_group // 2].tolist()
            rest = rng.permutation(n).tolist()
            picks = list(dict.fromkeys(top + rest))[: min(coords_per_group, n)]
            flat = t.view(-1)
            errs[name], worst[name] = 0.0, ()
            for c in picks:
                orig = flat[c].item()
                flat[c] = orig + step
                up = float(cloze_loss(p64, batch))
                flat[c] = orig - step
                down = float(cloze_loss(p64, batch))
                flat[c] = orig
                fd = (up - down) / (2 * step)
                a = float(g[c])
                rel = abs(a - fd) / max(abs(a), abs(fd), floor)
                if rel > errs[name] or math.isnan(rel):
                    errs[name] = rel
                    worst[name] = tuple(int(i) for i in np.unravel_index(c, t.shape))
    return GradCheckReport(errs, worst, tolerance, floor)


def _as_float64(cfg):
    return replace(cfg, dtype="float64", dropout=0.0)
