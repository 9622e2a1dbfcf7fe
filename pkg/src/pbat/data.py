"""Interaction logs, padded multi-behavior sequences, splits and Cloze batches."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int
    behavior: int
    timestamp: int


@dataclass
class Vocab:
    num_users: int
    num_items: int
    num_behaviors: int

    # reserved ids sit just past the real vocabulary
    @property
    def pad_item(self) -> int:
        return self.num_items

    @property
    def mask_item(self) -> int:
        return self.num_items + 1

    @property
    def pad_behavior(self) -> int:
        return self.num_behaviors

    @classmethod
    def from_interactions(cls, interactions: Iterable[Interaction]) -> "Vocab":
        inter = list(interactions)
        return cls(
            num_users=max(x.user for x in inter) + 1,
            num_items=max(x.item for x in inter) + 1,
            num_behaviors=max(x.behavior for x in inter) + 1,
        )


@dataclass
class MultiBehaviorSequence:
    user: int
    items: np.ndarray
    behaviors: np.ndarray
    valid_len: int

    def pairs(self) -> list[tuple[int, int]]:
        n = self.valid_len
        return list(zip(self.items[:n].tolist(), self.behaviors[:n].tolist()))


@dataclass
class SplitDataset:
    vocab: Vocab
    L: int
    train: list[MultiBehaviorSequence]
    valid: dict[int, tuple[int, int]] = field(default_factory=dict)
    test: dict[int, tuple[int, int]] = field(default_factory=dict)
    # full chronological (item, behavior) history per user, before truncation
    history: dict[int, list[tuple[int, int]]] = field(default_factory=dict)

    @property
    def users(self) -> list[int]:
        return [s.user for s in self.train]


@dataclass
class MaskedBatch:
    items: np.ndarray          # [B, L] with mask/pad ids substituted
    behaviors: np.ndarray      # [B, L] original behavior ids
    positions: np.ndarray      # [B, L]
    users: np.ndarray          # [B]
    valid_len: np.ndarray      # [B]
    mask: np.ndarray           # [B, L] bool, True at masked slots
    targets: np.ndarray        # [B, L] original item at masked slots, pad elsewhere
    negatives: np.ndarray      # [B, L] one negative per masked slot, pad elsewhere

    @property
    def num_masked(self) -> int:
        return int(self.mask.sum())


# ---------------------------------------------------------------------------
# TSV io
# ---------------------------------------------------------------------------

def ingest_tsv(path) -> list[Interaction]:
    """Parse ``user\\titem\\tbehavior\\ttimestamp`` lines. Order is preserved."""
    path = Path(path)
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
            try:
                u, v, b, t = (int(f) for f in fields)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-integer field in {line!r}") from None
            if u < 0 or v < 0 or b < 0:
                raise ValueError(f"{path}:{lineno}: negative id")
            out.append(Interaction(u, v, b, t))
    if not out:
        raise ValueError(f"{path}: no interactions")
    return out


def write_tsv(interactions: Iterable[Interaction], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for x in interactions:
            fh.write(f"{x.user}\t{x.item}\t{x.behavior}\t{x.timestamp}\n")


# ---------------------------------------------------------------------------
# sequences and splits
# ---------------------------------------------------------------------------

def user_histories(interactions: Iterable[Interaction]) -> dict[int, list[tuple[int, int]]]:
    by_user: dict[int, list[Interaction]] = defaultdict(list)
    for x in interactions:
        by_user[x.user].append(x)
    # sorted() is stable, so equal timestamps keep input order
    return {
        u: [(x.item, x.behavior) for x in sorted(xs, key=lambda x: x.timestamp)]
        for u, xs in sorted(by_user.items())
    }


def pad_sequence(user: int, pairs: list[tuple[int, int]], L: int, vocab: Vocab) -> MultiBehaviorSequence:
    pairs = pairs[-L:]
    items = np.full(L, vocab.pad_item, dtype=np.int64)
    behaviors = np.full(L, vocab.pad_behavior, dtype=np.int64)
    for i, (v, b) in enumerate(pairs):
        items[i] = v
        behaviors[i] = b
    return MultiBehaviorSequence(user, items, behaviors, len(pairs))


def build_sequences(interactions, L: int, vocab: Vocab | None = None) -> list[MultiBehaviorSequence]:
    """Chronological, left-aligned, right-padded sequences of the most recent L pairs.

    Users with fewer than three interactions are dropped.
    """
    if L < 2:
        raise ValueError("L must be >= 2")
    interactions = list(interactions)
    vocab = vocab or Vocab.from_interactions(interactions)
    out = []
    for u, pairs in user_histories(interactions).items():
        if len(pairs) < 3:
            continue
        out.append(pad_sequence(u, pairs, L, vocab))
    return out


def leave_one_out_split(sequences: list[MultiBehaviorSequence], vocab: Vocab,
                        L: int | None = None) -> SplitDataset:
    """Last pair is the test target, the one before it validation, the rest train.

    Train rows are re-padded to ``L`` (default: the input row length).
    """
    if not sequences:
        raise ValueError("no sequences to split")
    L = L or len(sequences[0].items)
    train, valid, test, history = [], {}, {}, {}
    for s in sequences:
        if s.valid_len < 3:
            raise ValueError(f"user {s.user}: valid_len {s.valid_len} < 3")
        pairs = s.pairs()
        test[s.user] = pairs[-1]
        valid[s.user] = pairs[-2]
        train.append(pad_sequence(s.user, pairs[:-2], L, vocab))
        history[s.user] = pairs
    return SplitDataset(vocab=vocab, L=L, train=train, valid=valid, test=test, history=history)


def split_interactions(interactions, L: int, vocab: Vocab | None = None) -> SplitDataset:
    """Split on the untruncated history so train rows keep up to L pairs."""
    interactions = list(interactions)
    vocab = vocab or Vocab.from_interactions(interactions)
    seqs = []
    for u, pairs in user_histories(interactions).items():
        if len(pairs) >= 3:
            seqs.append(pad_sequence(u, pairs, len(pairs), vocab))
    if not seqs:
        raise ValueError("no user has >= 3 interactions")
    return leave_one_out_split(seqs, vocab, L=L)


# ---------------------------------------------------------------------------
# Cloze masking and negatives
# ---------------------------------------------------------------------------

def cloze_mask(seq: MultiBehaviorSequence, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask over the L slots. Bernoulli(rho) per valid slot, at least one."""
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    L = len(seq.items)
    mask = np.zeros(L, dtype=bool)
    mask[: seq.valid_len] = rng.random(seq.valid_len) < rho
    if not mask.any():
        mask[seq.valid_len - 1] = True
    return mask


def sample_negative(seen, num_items: int, rng: np.random.Generator) -> int:
    """Uniform draw from real items not in ``seen`` (rejection sampling)."""
    seen = {int(x) for x in seen if 0 <= int(x) < num_items}
    if len(seen) >= num_items:
        raise ValueError("no negative candidate: sequence covers the whole vocabulary")
    while True:
        v = int(rng.integers(num_items))
        if v not in seen:
            return v


def row_rng(seed: int, epoch: int, user: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, user])


def make_masked_batch(seqs: list[MultiBehaviorSequence], vocab: Vocab, rho: float,
                      seed: int, epoch: int = 0) -> MaskedBatch:
    """Mask each row with its own RNG seeded by (seed, epoch, user)."""
    B, L = len(seqs), len(seqs[0].items)
    items = np.empty((B, L), dtype=np.int64)
    behaviors = np.empty((B, L), dtype=np.int64)
    mask = np.zeros((B, L), dtype=bool)
    targets = np.full((B, L), vocab.pad_item, dtype=np.int64)
    negatives = np.full((B, L), vocab.pad_item, dtype=np.int64)
    for r, s in enumerate(seqs):
        rng = row_rng(seed, epoch, s.user)
        m = cloze_mask(s, rho, rng)
        seen = s.items[: s.valid_len]
        items[r] = s.items
        behaviors[r] = s.behaviors
        mask[r] = m
        targets[r, m] = s.items[m]
        items[r, m] = vocab.mask_item
        for t in np.flatnonzero(m):
            negatives[r, t] = sample_negative(seen, vocab.num_items, rng)
    return MaskedBatch(
        items=items, behaviors=behaviors,
        positions=np.broadcast_to(np.arange(L), (B, L)).copy(),
        users=np.array([s.user for s in seqs], dtype=np.int64),
        valid_len=np.array([s.valid_len for s in seqs], dtype=np.int64),
        mask=mask, targets=targets, negatives=negatives,
    )


def fixed_mask_batch(seqs: list[MultiBehaviorSequence], masks: np.ndarray, vocab: Vocab,
                     negatives: np.ndarray | None = None) -> MaskedBatch:
    """Batch with caller-chosen masks (used by reconstruction metrics and tests)."""
    B, L = len(seqs), len(seqs[0].items)
    items = np.stack([s.items for s in seqs]).copy()
    behaviors = np.stack([s.behaviors for s in seqs]).copy()
    targets = np.full((B, L), vocab.pad_item, dtype=np.int64)
    targets[masks] = items[masks]
    items[masks] = vocab.mask_item
    if negatives is None:
        negatives = np.full((B, L), vocab.pad_item, dtype=np.int64)
    return MaskedBatch(
        items=items, behaviors=behaviors,
        positions=np.broadcast_to(np.arange(L), (B, L)).copy(),
        users=np.array([s.user for s in seqs], dtype=np.int64),
        valid_len=np.array([s.valid_len for s in seqs], dtype=np.int64),
        mask=masks.copy(), targets=targets, negatives=negatives,
    )
