"""Validation loss and control error of nets trained on datasets of growing
time-optimality.

    python scripts/loss_vs_epsilon.py [--epsilons 1.0 0.5 0.0] [--n 300] [--epochs 10]

Writes runs/loss_vs_epsilon.csv (epsilon, val_loss, control_error_pct, n_records).
"""
import argparse
import csv
import logging
from pathlib import Path

from quadgcnet.experiments import loss_versus_epsilon
from quadgcnet.gcnet import TrainConfig, control_error_pct


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epsilons", type=float, nargs="+", default=[1.0, 0.5, 0.0])
    ap.add_argument("--n", type=int, default=300, help="trajectories per dataset")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("runs"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    res = loss_versus_epsilon(args.epsilons, args.n, args.seed, TrainConfig(epochs=args.epochs, seed=args.seed))
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "loss_vs_epsilon.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon", "val_loss", "control_error_pct", "n_records"])
        for eps, row in sorted(res.items(), reverse=True):
            pct = control_error_pct(row["val_loss"])
            w.writerow([eps, f"{row['val_loss']:.6e}", f"{pct:.3f}", row["n_records"]])
            print(f"eps={eps:.2f}  val loss={row['val_loss']:.3e}  control error={pct:.2f} %")
    l_fast, l_smooth = res[min(res)]["val_loss"], res[max(res)]["val_loss"]
    print(f"L(eps={min(res)})/L(eps={max(res)}) = {l_fast / l_smooth:.1f}")


if __name__ == "__main__":
    main()
