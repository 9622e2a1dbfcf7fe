"""Desk-scale experiments: memorization, behavior-blind ablation, case-study export."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .config import ModelConfig
from .data import SplitDataset, Vocab, split_interactions
from .evaluation import MetricsReport, cloze_reconstruction_hr, evaluate, export_behavior_matrix
from .model import ModelParams, init_params
from .synth import TYPE_A, SynthConfig, behavior_roles, synth_generate, user_types
from .training import AdamState, LossReport, train_epoch


def make_split(synth: SynthConfig) -> SplitDataset:
    vocab = Vocab(synth.num_users, synth.num_items, synth.num_behaviors)
    return split_interactions(synth_generate(synth), synth.L, vocab)


def model_config_for(synth: SynthConfig, **overrides) -> ModelConfig:
    base = ModelConfig(num_users=synth.num_users, num_items=synth.num_items,
                       num_behaviors=synth.num_behaviors, L=synth.L, seed=synth.seed)
    return replace(base, **overrides)


def train(split: SplitDataset, cfg: ModelConfig, epochs: int | None = None, *, callback=None,
          every: int = 0) -> tuple[ModelParams, list[LossReport]]:
    """Train from scratch. ``callback(epoch, params)`` runs every ``every`` epochs; returning True stops."""
    epochs = cfg.epochs if epochs is None else epochs
    params = init_params(cfg)
    state = AdamState(lr=cfg.lr)
    torch.manual_seed(cfg.seed)
    reports = []
    for e in range(epochs):
        reports.append(train_epoch(split, params, state, e, batch_size=cfg.batch_size,
                                   rho=cfg.rho, seed=cfg.seed))
        if callback is not None and every and (e + 1) % every == 0 and callback(e + 1, params):
            break
    return params, reports


# ---------------------------------------------------------------------------
# memorization
# ---------------------------------------------------------------------------

# Each user owns two items with fixed behaviors; episodes of two events end in
# a purchase of the key item, so every training row is learnable by heart.
MEMO_SYNTH = SynthConfig(num_users=50, num_items=100, num_behaviors=3, L=16, seed=0,
                         pool_size=2, episode_len=2, sticky=True)
MEMO_MODEL = dict(D=16, heads=2, N_blocks=2, D_ff=64, lr=0.001, batch_size=16, rho=0.2, dropout=0.0)


@dataclass
class MemorizationResult:
    hr1: float
    epochs: int
    losses: list[float]
    secs: float
    history: list[tuple[int, float]] = field(default_factory=list)

    @property
    def monotone_first5(self) -> bool:
        head = self.losses[:5]
        return len(head) == 5 and all(b < a for a, b in zip(head, head[1:]))


def memorization(synth: SynthConfig = MEMO_SYNTH, max_epochs: int = 200, target: float = 0.9,
                 every: int = 25, **model_kw) -> MemorizationResult:
    split = make_split(synth)
    cfg = model_config_for(synth, **{**MEMO_MODEL, **model_kw})
    history = []

    def probe(epoch, params):
        history.append((epoch, cloze_reconstruction_hr(split, params, cfg.rho, seed=synth.seed)))
        return history[-1][1] >= target

    start = time.perf_counter()
    params, reports = train(split, cfg, max_epochs, callback=probe, every=every)
    if not history or history[-1][0] != len(reports):
        probe(len(reports), params)
    return MemorizationResult(history[-1][1], len(reports), [r.loss for r in reports],
                              time.perf_counter() - start, history)


# ---------------------------------------------------------------------------
# behavior-blind ablation
# ---------------------------------------------------------------------------

# Key-behavior items come from a per-user wishlist; the other events browse a
# separate per-user pool three times as often. Only a model that sees the
# target behavior can tell which of the user's items get purchased.
ABLATION_SYNTH = SynthConfig(num_users=100, num_items=100, num_behaviors=3, L=16,
                             pool_size=8, wishlist_size=8, episode_len=4)
ABLATION_MODEL = dict(D=16, heads=2, N_blocks=2, D_ff=64, lr=0.005, batch_size=16, rho=0.2, dropout=0.1)


@dataclass
class AblationRun:
    seed: int
    full: MetricsReport
    blind: MetricsReport
    full_params: ModelParams | None = None


@dataclass
class AblationResult:
    runs: list[AblationRun]
    secs: float

    @property
    def full_hr10(self) -> float:
        return float(np.mean([r.full.hr10 for r in self.runs]))

    @property
    def blind_hr10(self) -> float:
        return float(np.mean([r.blind.hr10 for r in self.runs]))

    @property
    def relative_gain(self) -> float:
        return self.full_hr10 / self.blind_hr10 - 1.0 if self.blind_hr10 > 0 else float("inf")


def ablation(seeds=(0, 1, 2), epochs: int = 150, synth: SynthConfig = ABLATION_SYNTH,
             candidates: str = "catalog", keep_params: bool = False, **model_kw) -> AblationResult:
    """Full model vs behavior-blind model on the same planted data, per seed.

    Ranking is against the whole catalogue: the purchased item always sits in the
    user's history, so excluding history would leave nothing to rank it against.
    """
    start = time.perf_counter()
    runs = []
    for seed in seeds:
        syn = replace(synth, seed=seed)
        split = make_split(syn)
        reports = {}
        params = None
        for blind in (False, True):
            cfg = model_config_for(syn, **{**ABLATION_MODEL, **model_kw}, behavior_blind=blind)
            p, _ = train(split, cfg, epochs)
            reports[blind] = evaluate(split, p, candidates)
            if not blind:
                params = p
        runs.append(AblationRun(seed, reports[False], reports[True], params if keep_params else None))
    return AblationResult(runs, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# case study
# ---------------------------------------------------------------------------

@dataclass
class CaseStudy:
    type_a: np.ndarray          # mean export matrix over type-A users
    type_b: np.ndarray
    peak_a: int                 # source behavior with the largest entry into purchase
    peak_b: int
    roles: dict

    @property
    def differ(self) -> bool:
        return self.peak_a != self.peak_b

    @property
    def matches_planted(self) -> bool:
        return self.peak_a == self.roles["cart"] and self.peak_b == self.roles["favorite"]


def type_matrices(params: ModelParams, synth: SynthConfig, matrices: dict[int, np.ndarray] | None = None) -> CaseStudy:
    """Average per-user export matrices by planted type and locate the peak into the target behavior.

    ``matrices`` may carry precomputed per-user matrices (e.g. read back from CLI CSVs).
    """
    types = user_types(synth)
    roles = behavior_roles(synth.num_behaviors)
    if matrices is None:
        matrices = {u: export_behavior_matrix(params, u) for u in range(synth.num_users)}
    a = np.mean([m for u, m in matrices.items() if types[u] == TYPE_A], axis=0)
    b = np.mean([m for u, m in matrices.items() if types[u] != TYPE_A], axis=0)
    sources = [i for i in range(synth.num_behaviors) if i != roles["purchase"]]

    def peak(m):
        col = m[:, roles["purchase"]]
        return sources[int(np.argmax(col[sources]))]
    return CaseStudy(a, b, peak(a), peak(b), roles)
