"""Behavior-aware collaboration extractor and the stacked self-attention blocks.

Shapes: B = batch rows, L = slots, D = model width, dh = D / heads. Pairwise
tensors are laid out ``[B, s, t, ...]`` with ``s`` the source (key/value) slot
and ``t`` the target (query) slot; attention normalises over ``s``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .distributions import VAR_FLOOR, elu_plus_one, tri_sagp_t, wasserstein_sq_t
from .embedding import entity_t, pattern_t
from .model import ModelParams, effective_behaviors, head_prefix

LN_EPS = 1e-5


@dataclass
class EncoderState:
    mean: torch.Tensor   # [B, L, D]
    var: torch.Tensor    # [B, L, D], strictly positive
    # attention weights per block and head, [B, s, t]; filled when requested
    attention: list | None = None


def project_qkv(item_mu, item_var, beh_mu, beh_var, W: dict, which: str):
    """One of Q/K/V: linear in item and behavior means, ELU+1 on the covariance mix."""
    mu = item_mu @ W[f"{which}_item_mu"] + beh_mu @ W[f"{which}_beh_mu"]
    var = elu_plus_one(item_var @ W[f"{which}_item_sig"] + beh_var @ W[f"{which}_beh_sig"])
    return mu, var


def project_pattern(mu, var, W: dict):
    return mu @ W["pat_mu"], elu_plus_one(var @ W["pat_sig"])


def impact_factors(pt_mu, pt_var, rel_mu, rel_var, W: dict):
    """Wasserstein-scaled relation Gaussians for every (s, t) pair.

    ``pt_*``: [B, L, D] personalized pattern per slot; ``rel_*``: [B, L, L, dh]
    relation(b_s, b_t) restricted to this head. Returns the scale ``m``
    [B, L, L] and the impact-factor Gaussian [B, L, L, dh].
    """
    pm, pv = project_pattern(pt_mu, pt_var, W)
    m = wasserstein_sq_t(pm[:, :, None], pv[:, :, None], pm[:, None, :], pv[:, None, :])
    ip_mu = m[..., None] * rel_mu
    ip_var = (m[..., None] * rel_var).clamp_min(VAR_FLOOR)
    return m, ip_mu, ip_var


def pb_fuse(K, Q, ip, pos, W: dict):
    """Fuse keys (at s) and queries (at t) with the pair's impact factor and their positions."""
    (k_mu, k_var), (q_mu, q_var), (ip_mu, ip_var), (p_mu, p_var) = K, Q, ip, pos
    kf = tri_sagp_t(k_mu[:, :, None], k_var[:, :, None], ip_mu, ip_var,
                    p_mu[None, :, None], p_var[None, :, None], W["ip_align"], W["pos_align"])
    qf = tri_sagp_t(q_mu[:, None, :], q_var[:, None, :], ip_mu, ip_var,
                    p_mu[None, None, :], p_var[None, None, :], W["ip_align"], W["pos_align"])
    return kf, qf


def attention_matrix(kf, qf, valid):
    """Softmax over sources of the negative squared Wasserstein score.

    ``valid``: [B, L] bool, padded sources get zero weight. Columns sum to 1.
    """
    score = -wasserstein_sq_t(kf[0], kf[1], qf[0], qf[1])
    score = score.masked_fill(~valid[:, :, None], float("-inf"))
    return torch.softmax(score, dim=1)


def head_forward(params: ModelParams, block: int, head: int, x, beh, patterns, rel, pos, valid,
                 counter: Counter | None = None):
    W = {k[len(head_prefix(block, head)):]: v for k, v in params.tensors.items()
         if k.startswith(head_prefix(block, head))}
    dh = params.config.d_head
    sl = slice(head * dh, (head + 1) * dh)
    Q = project_qkv(*x, *beh, W, "q")
    K = project_qkv(*x, *beh, W, "k")
    V = project_qkv(*x, *beh, W, "v")
    m, ip_mu, ip_var = impact_factors(*patterns, rel[0][..., sl], rel[1][..., sl], W)
    pos_g = project_pattern(*pos, W)
    kf, qf = pb_fuse(K, Q, (ip_mu, ip_var), pos_g, W)
    weights = attention_matrix(kf, qf, valid)
    if counter is not None:
        B, L = valid.shape
        counter["pair_elements"] += B * L * L * dh
        counter["pairs"] += B * L * L
    out_mu = torch.einsum("bst,bsd->btd", weights, V[0])
    out_var = torch.einsum("bst,bsd->btd", weights ** 2, V[1])
    return out_mu, out_var, weights


def behavior_ffl(x, behaviors, T: dict, prefix: str):
    """Per-behavior two-layer MLP: ELU(x W1 + b1) W2 + b2, weights chosen by each slot's behavior."""
    w1, b1 = T[prefix + "w1"][behaviors], T[prefix + "b1"][behaviors]
    w2, b2 = T[prefix + "w2"][behaviors], T[prefix + "b2"][behaviors]
    h = F.elu(torch.einsum("bld,bldf->blf", x, w1) + b1)
    return torch.einsum("blf,blfd->bld", h, w2) + b2


def _ln(x, T, name):
    return F.layer_norm(x, x.shape[-1:], T[name + "_g"], T[name + "_b"], LN_EPS)


def block_forward(params: ModelParams, n: int, x, beh, patterns, rel, pos, behaviors, valid,
                  training: bool, counter=None, keep_attention=None):
    cfg = params.config
    T = params.tensors
    b = f"blocks.{n}."
    heads = [head_forward(params, n, h, x, beh, patterns, rel, pos, valid, counter)
             for h in range(cfg.heads)]
    a_mu = torch.cat([h[0] for h in heads], dim=-1)
    a_var = torch.cat([h[1] for h in heads], dim=-1)
    if keep_attention is not None:
        keep_attention.append([h[2] for h in heads])
    p = cfg.dropout if training else 0.0

    x_mu, x_var = x
    h_mu = _ln(x_mu + F.dropout(a_mu, p, training), T, b + "ln1_mu")
    h_var = elu_plus_one(_ln(x_var + a_var, T, b + "ln1_sig"))
    f_mu = behavior_ffl(h_mu, behaviors, T, b + "ffl_mu_")
    f_var = elu_plus_one(behavior_ffl(h_var, behaviors, T, b + "ffl_sig_"))
    o_mu = _ln(h_mu + F.dropout(f_mu, p, training), T, b + "ln2_mu")
    o_var = elu_plus_one(_ln(h_var + f_var, T, b + "ln2_sig"))
    if not bool((o_var > 0).all()):
        raise FloatingPointError(f"block {n}: non-positive variance in encoder output")
    return o_mu, o_var


def encode(params: ModelParams, items, behaviors, users, valid_len, *, training: bool = False,
           counter: Counter | None = None, keep_attention: bool = False) -> EncoderState:
    """Run all blocks over a batch of rows.

    ``items``/``behaviors``: [B, L] long; ``users``/``valid_len``: [B] long.
    """
    cfg = params.config
    T = params.tensors
    items = torch.as_tensor(items)
    behaviors = effective_behaviors(cfg, torch.as_tensor(behaviors))
    users = torch.as_tensor(users)
    valid_len = torch.as_tensor(valid_len)
    B, L = items.shape
    if L > cfg.L:
        raise ValueError(f"row length {L} exceeds configured L={cfg.L}")
    valid = torch.arange(L)[None, :] < valid_len[:, None]

    x = entity_t(T, "item", items)
    beh = entity_t(T, "behavior", behaviors)
    patterns = pattern_t(T, T["pattern_align"], users[:, None], behaviors)
    # padding slots never act as sources; clamp so their relation lookup stays in range
    b_rel = behaviors.clamp_max(cfg.num_behaviors - 1)
    rel_mu = T["relation_mean"][b_rel[:, :, None], b_rel[:, None, :]]
    rel_var = elu_plus_one(T["relation_rawcov"][b_rel[:, :, None], b_rel[:, None, :]])
    pos = (T["position_mean"][:L], elu_plus_one(T["position_rawcov"][:L]))

    attn = [] if keep_attention else None
    for n in range(cfg.N_blocks):
        x = block_forward(params, n, x, beh, patterns, (rel_mu, rel_var), pos, behaviors, valid,
                          training, counter, attn)
    return EncoderState(x[0], x[1], attn)
