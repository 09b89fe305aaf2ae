"""One lap of the 4 x 3 m rectangle with a single-waypoint net and with a
consecutive-waypoint net (both trained on epsilon = 1 data).

    python scripts/lap_energy.py [--epochs 20]
"""
import argparse
import logging

from quadgcnet.dataset import Variant
from quadgcnet.experiments import cached_dataset, lap_comparison, train_on
from quadgcnet.gcnet import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = TrainConfig(epochs=args.epochs, seed=args.seed)
    single, _ = train_on(cached_dataset(1.0, 300, Variant.BASE), cfg, args.seed)
    consecutive, _ = train_on(cached_dataset(1.0, 300, Variant.WP_REL, wp_arity=1), cfg, args.seed)
    for name, row in lap_comparison(single, consecutive).items():
        if "energy" in row:
            print(f"{name:12s} lap {row['lap_time']:.2f} s  energy {row['energy']:.3f}  "
                  f"saturation {row['saturation']:.3f}")
        else:
            print(f"{name:12s} no complete lap: {row['status']} ({row['message']})")


if __name__ == "__main__":
    main()
