"""Train on the memorizable planted set and report Cloze-reconstruction HR@1."""

import argparse
import json

from pbat.experiments import memorization
from pbat.training import set_strict_mode


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--every", type=int, default=25, help="probe interval; stops once HR@1 >= 0.9")
    ap.add_argument("--dropout", type=float, default=0.0)
    args = ap.parse_args()
    set_strict_mode()
    res = memorization(max_epochs=args.epochs, every=args.every, dropout=args.dropout)
    print(json.dumps({"hr1": res.hr1, "epochs": res.epochs, "monotone_first5": res.monotone_first5,
                      "first_losses": [round(x, 4) for x in res.losses[:5]],
                      "probes": res.history, "secs": round(res.secs, 1)}, indent=2))


if __name__ == "__main__":
    main()
