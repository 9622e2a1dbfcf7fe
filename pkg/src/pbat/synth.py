"""Seeded synthetic multi-behavior logs.

The ``planted`` rule splits users into two latent types. Behaviour ids are laid
out as ``[view..., favorite, cart, purchase]`` (purchase = last id, the target
behavior). A type-A user's purchase always repeats the most recent *cart*
item; a type-B user's purchase repeats the most recent *favorite* item. All
other interactions are auxiliary behaviors on items drawn from a per-user
popularity distribution.

The ``uniform`` rule draws every (item, behavior) pair independently, which
gives a data set with no learnable structure (null-model checks).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Interaction

TYPE_A, TYPE_B = 0, 1


@dataclass
class SynthConfig:
    num_users: int = 50
    num_items: int = 100
    num_behaviors: int = 3
    L: int = 16
    seed: int = 0
    rule: str = "planted"
    # auxiliary interactions between consecutive purchases
    episode_len: int = 4
    # size of each user's personal item pool (0 = whole catalogue)
    pool_size: int = 0
    # Dirichlet concentration of the per-user popularity over the pool
    concentration: float = 1.0
    # each pool item keeps one fixed auxiliary behavior for its user
    sticky: bool = False
    # >0: key-behavior items come from a separate per-user wishlist of this size,
    # and the other episode events use only non-key auxiliary behaviors
    wishlist_size: int = 0

    def validate(self) -> None:
        for name in ("num_users", "num_items", "num_behaviors", "L"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be >= 2")
        if self.rule not in ("planted", "uniform"):
            raise ValueError(f"unknown rule {self.rule!r}")
        if self.rule == "planted":
            if self.num_behaviors < 3:
                raise ValueError("planted rule needs >= 3 behaviors (favorite, cart, purchase)")
            if self.episode_len < 2:
                raise ValueError("episode_len must be >= 2")
        if self.pool_size < 0 or self.pool_size > self.num_items:
            raise ValueError("pool_size out of range")
        if self.concentration <= 0:
            raise ValueError("concentration must be positive")
        if self.wishlist_size < 0 or self.wishlist_size + (self.pool_size or 1) > self.num_items:
            raise ValueError("wishlist_size out of range (wishlist and pool must fit in the catalogue)")
        if self.wishlist_size and self.sticky:
            raise ValueError("wishlist_size and sticky are mutually exclusive")


def behavior_roles(num_behaviors: int) -> dict[str, int]:
    return {
        "purchase": num_behaviors - 1,
        "cart": num_behaviors - 2,
        "favorite": num_behaviors - 3,
    }


def user_types(cfg: SynthConfig) -> np.ndarray:
    """Balanced A/B assignment, shuffled by the seed."""
    rng = np.random.default_rng([cfg.seed, 1])
    types = np.arange(cfg.num_users) % 2
    rng.shuffle(types)
    return types


def _popularity(cfg: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    pool_size = cfg.pool_size or cfg.num_items
    pool = rng.choice(cfg.num_items, size=pool_size, replace=False)
    weights = rng.dirichlet(np.full(pool_size, cfg.concentration)) + 1e-6
    weights /= weights.sum()
    return pool, weights


def _wishlist_user(cfg: SynthConfig, rng: np.random.Generator, key: int, aux: list[int],
                   purchase: int, n: int) -> list[tuple[int, int]]:
    wishlist = rng.choice(cfg.num_items, size=cfg.wishlist_size, replace=False)
    rest = np.setdiff1d(np.arange(cfg.num_items), wishlist)
    pool_size = cfg.pool_size or rest.size
    pool = rng.choice(rest, size=pool_size, replace=False)
    weights = rng.dirichlet(np.full(pool_size, cfg.concentration)) + 1e-6
    weights /= weights.sum()
    browse = [b for b in aux if b != key]
    pairs: list[tuple[int, int]] = []
    while len(pairs) < n:
        k = cfg.episode_len - 1
        items = rng.choice(pool, size=min(k, pool_size), replace=False, p=weights).tolist()
        episode = [(v, int(rng.choice(browse))) for v in items]
        target = int(rng.choice(wishlist))
        episode.insert(int(rng.integers(len(episode) + 1)), (target, key))
        pairs.extend(episode)
        pairs.append((target, purchase))
    return pairs[-n:]


def _planted_user(cfg: SynthConfig, user: int, utype: int, n: int) -> list[tuple[int, int]]:
    rng = np.random.default_rng([cfg.seed, 2, user])
    roles = behavior_roles(cfg.num_behaviors)
    key = roles["cart"] if utype == TYPE_A else roles["favorite"]
    aux = [b for b in range(cfg.num_behaviors) if b != roles["purchase"]]
    if cfg.wishlist_size:
        return _wishlist_user(cfg, rng, key, aux, roles["purchase"], n)
    pool, weights = _popularity(cfg, rng)
    if cfg.sticky:
        role = dict(zip(pool.tolist(), rng.choice(aux, size=len(pool)).tolist()))
        role[int(pool[0])] = key
        other = [b for b in aux if b != key]
        if len(pool) > 1:
            role[int(pool[1])] = int(rng.choice(other))

    pairs: list[tuple[int, int]] = []
    while len(pairs) < n:
        k = min(cfg.episode_len, len(pool))
        items = rng.choice(pool, size=k, replace=False, p=weights)
        if cfg.sticky:
            if not any(role[v] == key for v in items.tolist()):
                items[rng.integers(k)] = pool[0]
                items = np.array(list(dict.fromkeys(items.tolist())))
            behaviors = np.array([role[v] for v in items.tolist()])
        else:
            behaviors = rng.choice(aux, size=k)
        if not (behaviors == key).any():
            behaviors[rng.integers(k)] = key
        episode = list(zip(items.tolist(), behaviors.tolist()))
        last_key = next(v for v, b in reversed(episode) if b == key)
        pairs.extend(episode)
        pairs.append((last_key, roles["purchase"]))
    # the loop always ends on a purchase, so the test target is one
    return pairs[-n:]


def _uniform_user(cfg: SynthConfig, user: int, n: int) -> list[tuple[int, int]]:
    rng = np.random.default_rng([cfg.seed, 3, user])
    items = rng.integers(cfg.num_items, size=n)
    behaviors = rng.integers(cfg.num_behaviors, size=n)
    return list(zip(items.tolist(), behaviors.tolist()))


def synth_generate(cfg: SynthConfig) -> list[Interaction]:
    """Deterministic interaction log for ``cfg``.

    Each user gets ``L + 2`` interactions so the leave-one-out train prefix
    fills a full row.
    """
    cfg.validate()
    n = cfg.L + 2
    types = user_types(cfg)
    out = []
    for u in range(cfg.num_users):
        if cfg.rule == "planted":
            pairs = _planted_user(cfg, u, int(types[u]), n)
        else:
            pairs = _uniform_user(cfg, u, n)
        out.extend(Interaction(u, v, b, t) for t, (v, b) in enumerate(pairs))
    return out
