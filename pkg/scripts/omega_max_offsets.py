"""Tracking error of the ceiling-aware net when it is told the wrong ceiling.

    python scripts/omega_max_offsets.py [--epochs 20] [--offsets -400 -200 0 200 400]

Trains on the cached OMEGA_MAX dataset (epsilon 0.4, 500 trajectories, ceiling
in [10500, 11500] RPM) and flies 20 refined references at 11100 RPM.
"""
import argparse
import dataclasses
import logging

from quadgcnet.dataset import SamplingBounds, Variant
from quadgcnet.experiments import cached_dataset, default_jobs, omega_max_offset_study, reference_set, train_on
from quadgcnet.gcnet import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--offsets", type=float, nargs="+", default=[-400.0, -200.0, 0.0, 200.0, 400.0])
    ap.add_argument("--jobs", type=int, default=default_jobs())
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    bounds = dataclasses.replace(SamplingBounds(), omega_max_range=(10500.0, 11500.0))
    ds = cached_dataset(0.4, 500, Variant.OMEGA_MAX, bounds=bounds, jobs=args.jobs)
    net, hist = train_on(ds, TrainConfig(epochs=args.epochs, seed=0))
    print(f"validation loss {hist[-1]['val_loss']:.3e}")
    refs = reference_set(20, 0.4, 11100.0, jobs=args.jobs)
    for off, res in omega_max_offset_study(net, refs, 11100.0, args.offsets, jobs=args.jobs).items():
        print(f"offset {off:+6.0f} RPM  median {res['median']:.3f} m  q25 {res['q25']:.3f}  "
              f"q75 {res['q75']:.3f}  diverged {res['n_diverged']}")


if __name__ == "__main__":
    main()
