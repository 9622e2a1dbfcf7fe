"""Full model vs behavior-blind ablation on planted data, HR@10 averaged over seeds."""

import argparse
import json

from pbat.experiments import ablation
from pbat.training import set_strict_mode


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=150)
    ap.add_argument("--candidates", default="catalog")
    args = ap.parse_args()
    set_strict_mode()
    res = ablation(tuple(args.seeds), args.epochs, candidates=args.candidates)
    for r in res.runs:
        print(json.dumps({"seed": r.seed, "full": r.full.as_dict(), "blind": r.blind.as_dict()}))
    print(json.dumps({"full_hr10": res.full_hr10, "blind_hr10": res.blind_hr10,
                      "relative_gain": res.relative_gain, "secs": round(res.secs, 1)}))


if __name__ == "__main__":
    main()
