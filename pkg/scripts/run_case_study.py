"""Train one full model on planted data and compare export matrices of the two user types."""

import argparse
import json
from dataclasses import replace

import numpy as np

from pbat.checkpoint import save_checkpoint
from pbat.experiments import ABLATION_MODEL, ABLATION_SYNTH, make_split, model_config_for, train, type_matrices
from pbat.training import set_strict_mode


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=150)
    ap.add_argument("--ckpt", help="also write the trained checkpoint here")
    args = ap.parse_args()
    set_strict_mode()
    synth = replace(ABLATION_SYNTH, seed=args.seed)
    params, _ = train(make_split(synth), model_config_for(synth, **ABLATION_MODEL), args.epochs)
    if args.ckpt:
        save_checkpoint(params, args.ckpt)
    cs = type_matrices(params, synth)
    np.set_printoptions(precision=4, suppress=True)
    print("type A mean matrix\n", cs.type_a)
    print("type B mean matrix\n", cs.type_b)
    print(json.dumps({"roles": cs.roles, "peak_a": cs.peak_a, "peak_b": cs.peak_b,
                      "differ": cs.differ, "matches_planted": cs.matches_planted}))


if __name__ == "__main__":
    main()
