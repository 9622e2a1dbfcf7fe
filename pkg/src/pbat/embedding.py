"""Distribution tables for items, users, behaviors, positions and behavior relations.

Each table is a pair of arrays: a mean and a *raw* covariance. Variances are
obtained at lookup time as ``elu_plus_one(raw)``, so the stored values are
unconstrained and any row is a valid Gaussian.
"""

from __future__ import annotations

import torch

from .distributions import DiagonalGaussian, elu_plus_one, sagp_t

INIT_STD = 0.02
ENTITY_KINDS = ("item", "user", "behavior", "position")
TABLE_NAMES = tuple(f"{k}_{part}" for k in ENTITY_KINDS + ("relation",) for part in ("mean", "rawcov"))


def table_shapes(num_users: int, num_items: int, num_behaviors: int, L: int, D: int) -> dict[str, tuple]:
    rows = {
        "item": (num_items + 2, D),          # + padding, [mask]
        "user": (num_users, D),
        "behavior": (num_behaviors + 1, D),  # + padding
        "position": (L, D),
        "relation": (num_behaviors, num_behaviors, D),
    }
    return {f"{k}_{part}": shape for k, shape in rows.items() for part in ("mean", "rawcov")}


def init_tables(shapes: dict[str, tuple], seed: int, dtype=torch.float64) -> dict[str, torch.Tensor]:
    """Every entry i.i.d. N(0, 0.02^2), drawn in a fixed table order."""
    for name, shape in shapes.items():
        if any(s < 1 for s in shape):
            raise ValueError(f"{name}: non-positive shape {shape}")
    gen = torch.Generator().manual_seed(seed)
    return {
        name: torch.randn(shapes[name], generator=gen, dtype=torch.float64).mul_(INIT_STD).to(dtype)
        for name in TABLE_NAMES if name in shapes
    }


# ---------------------------------------------------------------------------
# tensor-level lookups (batched, differentiable)
# ---------------------------------------------------------------------------

def entity_t(tables, kind: str, ids):
    return tables[f"{kind}_mean"][ids], elu_plus_one(tables[f"{kind}_rawcov"][ids])


def relation_t(tables, b_from, b_to):
    return tables["relation_mean"][b_from, b_to], elu_plus_one(tables["relation_rawcov"][b_from, b_to])


def pattern_t(tables, align, users, behaviors):
    """Personalized pattern: SAGP(user Gaussian, behavior Gaussian) with ``align`` on the behavior mean."""
    u_mu, u_var = entity_t(tables, "user", users)
    b_mu, b_var = entity_t(tables, "behavior", behaviors)
    return sagp_t(u_mu, u_var, b_mu, b_var, align)


# ---------------------------------------------------------------------------
# checked single-row lookups
# ---------------------------------------------------------------------------

def _check_id(tables, name: str, idx: int) -> None:
    n = tables[name].shape[0]
    if not 0 <= idx < n:
        raise IndexError(f"{name}: id {idx} out of range [0, {n})")


def lookup_entity(tables, kind: str, idx: int) -> DiagonalGaussian:
    if kind not in ENTITY_KINDS:
        raise ValueError(f"unknown entity kind {kind!r}")
    _check_id(tables, f"{kind}_mean", idx)
    mean, var = entity_t(tables, kind, idx)
    return DiagonalGaussian(mean.detach(), var.detach())


def lookup_relation(tables, b_from: int, b_to: int) -> DiagonalGaussian:
    """Directed: (i, j) and (j, i) are separate rows."""
    _check_id(tables, "relation_mean", b_from)
    _check_id(tables, "relation_mean", b_to)
    mean, var = relation_t(tables, b_from, b_to)
    return DiagonalGaussian(mean.detach(), var.detach())


def personalized_pattern(tables, user: int, behavior: int, align) -> DiagonalGaussian:
    _check_id(tables, "user_mean", user)
    _check_id(tables, "behavior_mean", behavior)
    mean, var = pattern_t(tables, align, user, behavior)
    return DiagonalGaussian(mean.detach(), var.detach())
