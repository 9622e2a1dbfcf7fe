"""Command-line entry point: ``pbat {synth,train,eval,gradcheck,export-patterns}``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, load_config
from .data import Vocab, ingest_tsv, make_masked_batch, split_interactions, write_tsv
from .evaluation import evaluate, export_behavior_matrix
from .model import init_params
from .synth import SynthConfig, synth_generate
from .training import fit, grad_check, set_strict_mode


def _vocab_for(cfg: ModelConfig, interactions) -> ModelConfig:
    seen = Vocab.from_interactions(interactions)
    for name in ("num_users", "num_items", "num_behaviors"):
        have, need = getattr(cfg, name), getattr(seen, name)
        if have and have < need:
            raise SystemExit(f"config {name}={have} is smaller than the data requires ({need})")
    return cfg.with_vocab(cfg.num_users or seen.num_users, cfg.num_items or seen.num_items,
                          cfg.num_behaviors or seen.num_behaviors)


def cmd_synth(args) -> int:
    cfg = SynthConfig(num_users=args.users, num_items=args.items, num_behaviors=args.behaviors,
                      L=args.length, seed=args.seed, rule=args.rule, episode_len=args.episode_len,
                      pool_size=args.pool_size, sticky=args.sticky, wishlist_size=args.wishlist_size)
    inter = synth_generate(cfg)
    write_tsv(inter, args.out)
    print(f"wrote {len(inter)} interactions for {cfg.num_users} users to {args.out}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    if args.strict:
        set_strict_mode()
    cfg = load_config(args.config) if args.config else ModelConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    inter = ingest_tsv(args.data)
    cfg = _vocab_for(cfg, inter)
    split = split_interactions(inter, cfg.L, Vocab(cfg.num_users, cfg.num_items, cfg.num_behaviors))
    params = init_params(cfg)
    fit(split, params, cfg.epochs, batch_size=cfg.batch_size, rho=cfg.rho, lr=cfg.lr,
        seed=cfg.seed, log=sys.stdout)
    save_checkpoint(params, args.out)
    return 0


def cmd_eval(args) -> int:
    params = load_checkpoint(args.ckpt)
    cfg = params.config
    inter = ingest_tsv(args.data)
    split = split_interactions(inter, cfg.L, Vocab(cfg.num_users, cfg.num_items, cfg.num_behaviors))
    rep = evaluate(split, params, args.candidates, target=args.split, seed=args.seed)
    if args.json:
        print(json.dumps(rep.as_dict()))
    else:
        for k, v in rep.as_dict().items():
            print(f"{k:8s} {v}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config) if args.config else ModelConfig(D=8, L=8, heads=2, N_blocks=2, D_ff=16)
    cfg = replace(cfg, dtype="float64", dropout=0.0,
                  num_users=cfg.num_users or 8, num_items=cfg.num_items or 20,
                  num_behaviors=cfg.num_behaviors or 3)
    inter = synth_generate(SynthConfig(num_users=cfg.num_users, num_items=cfg.num_items,
                                       num_behaviors=cfg.num_behaviors, L=cfg.L, seed=cfg.seed,
                                       rule="planted" if cfg.num_behaviors >= 3 else "uniform"))
    vocab = Vocab(cfg.num_users, cfg.num_items, cfg.num_behaviors)
    split = split_interactions(inter, cfg.L, vocab)
    params = init_params(cfg)
    batch = make_masked_batch(split.train[: args.rows], vocab, 0.3, cfg.seed)
    rep = grad_check(params, batch, args.tol, coords_per_group=args.coords, seed=cfg.seed)
    print(rep.summary())
    worst = max(rep.max_rel_err.values())
    print(f"groups={len(rep.max_rel_err)} worst={worst:.3e} tol={args.tol:g} -> {'PASS' if rep.ok else 'FAIL'}")
    return 0 if rep.ok else 1


def cmd_export(args) -> int:
    params = load_checkpoint(args.ckpt)
    mat = export_behavior_matrix(params, args.user)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in mat:
            w.writerow([repr(float(x)) for x in row])
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pbat", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("synth", help="write a synthetic interaction log")
    s.add_argument("--out", required=True)
    s.add_argument("--users", type=int, default=50)
    s.add_argument("--items", type=int, default=100)
    s.add_argument("--behaviors", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rule", choices=("planted", "uniform"), default="planted")
    s.add_argument("--length", type=int, default=16, help="train-row length L (users get L+2 events)")
    s.add_argument("--episode-len", type=int, default=4)
    s.add_argument("--pool-size", type=int, default=0)
    s.add_argument("--sticky", action="store_true")
    s.add_argument("--wishlist-size", type=int, default=0, help="per-user key-behavior wishlist (0 = off)")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--strict", action="store_true", help="single-threaded deterministic kernels")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="leave-one-out HR/NDCG")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--candidates", default="all", help="all | catalog | sampled:N")
    e.add_argument("--split", choices=("test", "valid"), default="test")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient check")
    g.add_argument("--config")
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--rows", type=int, default=4)
    g.add_argument("--coords", type=int, default=6)
    g.set_defaults(func=cmd_gradcheck)

    x = sub.add_parser("export-patterns", help="behavior dependency matrix as CSV")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--user", type=int)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"pbat: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
