"""Next-item ranking, HR/NDCG, leave-one-out evaluation and dependency-matrix export."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .data import MultiBehaviorSequence, SplitDataset, Vocab, fixed_mask_batch, pad_sequence
from .distributions import wasserstein_sq_t
from .embedding import pattern_t
from .encoder import encode, project_pattern
from .model import ModelParams, effective_behaviors, head_prefix
from .training import item_scores, refine_state


@dataclass
class RankResult:
    user: int
    target: int
    rank: int
    top_k: list[int]


@dataclass
class MetricsReport:
    hr5: float
    hr10: float
    ndcg5: float
    ndcg10: float
    users: int

    def as_dict(self) -> dict:
        return {"hr5": self.hr5, "hr10": self.hr10, "ndcg5": self.ndcg5,
                "ndcg10": self.ndcg10, "users": self.users}


def hr_at_k(ranks, k: int) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("hr_at_k: no ranks")
    if (ranks < 1).any():
        raise ValueError("ranks are 1-based")
    return float((ranks <= k).mean())


def ndcg_at_k(ranks, k: int) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("ndcg_at_k: no ranks")
    if (ranks < 1).any():
        raise ValueError("ranks are 1-based")
    gains = np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(gains.mean())


def rank_candidates(scores: np.ndarray, candidates: np.ndarray, target: int, k: int = 10):
    """1-based rank of ``target`` and the top-k list; ties go to the smaller item id."""
    order = np.lexsort((candidates, -scores))
    ranked = candidates[order]
    rank = int(np.flatnonzero(ranked == target)[0]) + 1
    return rank, ranked[:k].tolist()


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

def inference_rows(prefixes: list[list[tuple[int, int]]], users: list[int], target_behaviors: list[int],
                   vocab: Vocab, L: int) -> list[MultiBehaviorSequence]:
    """Most recent L-1 pairs of each prefix plus a [mask] slot carrying the target behavior."""
    rows = []
    for u, pairs, z in zip(users, prefixes, target_behaviors):
        rows.append(pad_sequence(u, list(pairs[-(L - 1):]) + [(vocab.mask_item, z)], L, vocab))
    return rows


@torch.no_grad()
def score_masked_slots(params: ModelParams, rows: list[MultiBehaviorSequence], masks: np.ndarray,
                       candidates: torch.Tensor | None = None) -> torch.Tensor:
    """Scores of every real item (or ``candidates`` [N, C]) at each masked slot, row-major order."""
    vocab = Vocab(params.config.num_users, params.config.num_items, params.config.num_behaviors)
    batch = fixed_mask_batch(rows, masks, vocab)
    # rows built by inference_rows already hold the [mask] id, fixed_mask_batch keeps it
    items = torch.from_numpy(batch.items)
    behaviors = torch.from_numpy(batch.behaviors)
    users = torch.from_numpy(batch.users)
    state = encode(params, items, behaviors, users, torch.from_numpy(batch.valid_len))
    r, c = (torch.from_numpy(a) for a in np.nonzero(masks))
    hat_mu, hat_var = refine_state(params, state.mean[r, c], state.var[r, c], users[r], behaviors[r, c])
    if candidates is None:
        candidates = torch.arange(params.config.num_items).expand(len(r), -1)
    return item_scores(params, hat_mu, hat_var, candidates)


def predict_next(params: ModelParams, prefix: list[tuple[int, int]], user: int, target_behavior: int,
                 candidates, target: int | None = None, k: int = 10) -> RankResult:
    cfg = params.config
    vocab = Vocab(cfg.num_users, cfg.num_items, cfg.num_behaviors)
    candidates = np.asarray(sorted(set(int(c) for c in candidates)))
    if candidates.size == 0:
        raise ValueError("empty candidate set")
    row = inference_rows([prefix], [user], [target_behavior], vocab, cfg.L)[0]
    mask = np.zeros((1, cfg.L), dtype=bool)
    mask[0, row.valid_len - 1] = True
    scores = score_masked_slots(params, [row], mask, torch.from_numpy(candidates)[None])[0].numpy()
    target = int(candidates[0]) if target is None else target
    rank, top = rank_candidates(scores, candidates, target, k)
    return RankResult(user, target, rank, top)


def candidate_sets(split: SplitDataset, users: list[int], targets: list[int], prefixes, mode: str,
                   seed: int = 0) -> list[np.ndarray]:
    """``all``: items outside the user's history plus the target; ``catalog``: every item;
    ``sampled:N``: N uniform unseen negatives plus the target."""
    V = split.vocab.num_items
    out = []
    for u, tgt, prefix in zip(users, targets, prefixes):
        if mode == "catalog":
            out.append(np.arange(V))
            continue
        seen = {v for v, _ in prefix}
        if mode == "all":
            c = [v for v in range(V) if v not in seen or v == tgt]
        elif mode.startswith("sampled:"):
            n = int(mode.split(":", 1)[1])
            rng = np.random.default_rng([seed, u])
            pool = np.array([v for v in range(V) if v not in seen and v != tgt])
            pick = rng.choice(pool, size=min(n, pool.size), replace=False) if pool.size else []
            c = list(pick) + [tgt]
        else:
            raise ValueError(f"unknown candidate mode {mode!r}")
        out.append(np.asarray(sorted(set(int(x) for x in c))))
    return out


def evaluate(split: SplitDataset, params: ModelParams, candidate_mode: str = "all", *,
             target: str = "test", seed: int = 0, chunk: int = 256, return_ranks: bool = False):
    """Leave-one-out HR/NDCG at 5 and 10, ranking each user's held-out item."""
    cfg = params.config
    users = [u for u in split.users if u in split.test]
    cut = 1 if target == "test" else 2
    prefixes = [split.history[u][:-cut] for u in users]
    tgt_pairs = [split.history[u][-cut] for u in users]
    cands = candidate_sets(split, users, [t[0] for t in tgt_pairs], prefixes, candidate_mode, seed)
    ranks = []
    for i in range(0, len(users), chunk):
        sl = slice(i, i + chunk)
        rows = inference_rows(prefixes[sl], users[sl], [t[1] for t in tgt_pairs[sl]], split.vocab, cfg.L)
        masks = np.zeros((len(rows), cfg.L), dtype=bool)
        for r, row in enumerate(rows):
            masks[r, row.valid_len - 1] = True
        scores = score_masked_slots(params, rows, masks).numpy()
        for r, (c, (tv, _)) in enumerate(zip(cands[sl], tgt_pairs[sl])):
            ranks.append(rank_candidates(scores[r, c], c, tv)[0])
    ranks = np.array(ranks)
    rep = MetricsReport(hr_at_k(ranks, 5), hr_at_k(ranks, 10), ndcg_at_k(ranks, 5),
                        ndcg_at_k(ranks, 10), len(users))
    return (rep, ranks) if return_ranks else rep


@torch.no_grad()
def cloze_reconstruction_hr(split: SplitDataset, params: ModelParams, rho: float, seed: int = 0,
                            k: int = 1) -> float:
    """HR@k of masked items on the training rows against the full catalogue."""
    cfg = params.config
    rows = split.train
    rng = np.random.default_rng(seed)
    masks = np.zeros((len(rows), cfg.L), dtype=bool)
    for r, s in enumerate(rows):
        masks[r, : s.valid_len] = rng.random(s.valid_len) < rho
        if not masks[r].any():
            masks[r, rng.integers(s.valid_len)] = True
    scores = score_masked_slots(params, rows, masks).numpy()
    items = np.stack([s.items for s in rows])[masks]
    cat = np.arange(cfg.num_items)
    ranks = [rank_candidates(scores[i], cat, int(items[i]))[0] for i in range(len(items))]
    return hr_at_k(ranks, k)


# ---------------------------------------------------------------------------
# behavior dependency matrix
# ---------------------------------------------------------------------------

@torch.no_grad()
def export_behavior_matrix(params: ModelParams, user: int | None = None, block: int = 0) -> np.ndarray:
    """[|B|, |B|] dependency magnitudes.

    Without a user: ||relation_mean(i, j)||. With a user: the Wasserstein factor
    between the user's projected patterns for behaviors i and j (averaged over
    the heads of ``block``) times that norm.
    """
    cfg = params.config
    T = params.tensors
    K = cfg.num_behaviors
    rel_norm = T["relation_mean"].double().norm(dim=-1)
    if user is None:
        return rel_norm.numpy()
    if not 0 <= user < cfg.num_users:
        raise ValueError(f"unknown user {user}")
    b = effective_behaviors(cfg, torch.arange(K))
    pt_mu, pt_var = pattern_t(T, T["pattern_align"], torch.full((K,), user), b)
    m = torch.zeros(K, K, dtype=torch.float64)
    for h in range(cfg.heads):
        p = head_prefix(block, h)
        W = {"pat_mu": T[p + "pat_mu"], "pat_sig": T[p + "pat_sig"]}
        pm, pv = project_pattern(pt_mu, pt_var, W)
        m += wasserstein_sq_t(pm[:, None], pv[:, None], pm[None, :], pv[None, :]).double()
    return (m / cfg.heads * rel_norm).numpy()
