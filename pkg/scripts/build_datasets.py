"""Build (or reuse from cache) every dataset the acceptance suite trains on.

    python scripts/build_datasets.py [--jobs N]

Datasets land in $QUADGCNET_CACHE (default ~/.cache/quadgcnet/datasets).
"""
import argparse
import dataclasses
import logging
import time

from quadgcnet.dataset import SamplingBounds, Variant
from quadgcnet.experiments import cached_dataset, default_jobs, reference_set

RECIPES = [
    dict(epsilon=1.0, n_trajectories=300, variant=Variant.BASE),
    dict(epsilon=0.5, n_trajectories=300, variant=Variant.BASE),
    dict(epsilon=0.0, n_trajectories=300, variant=Variant.BASE),
    dict(epsilon=1.0, n_trajectories=300, variant=Variant.WP_REL, wp_arity=1),
    dict(epsilon=0.4, n_trajectories=500, variant=Variant.OMEGA_MAX,
         bounds=dataclasses.replace(SamplingBounds(), omega_max_range=(10500.0, 11500.0))),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--jobs", type=int, default=default_jobs())
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    for recipe in RECIPES:
        t0 = time.time()
        ds = cached_dataset(seed=0, jobs=args.jobs, **recipe)
        print(f"{recipe['variant'].value:9s} eps={recipe['epsilon']:.1f} records={len(ds)} "
              f"failed={ds.provenance['n_failed']} ({time.time() - t0:.0f} s)", flush=True)
    t0 = time.time()
    refs = reference_set(20, 0.4, 11100.0, jobs=args.jobs)
    print(f"references: {len(refs)} refined to 240 segments ({time.time() - t0:.0f} s)", flush=True)


if __name__ == "__main__":
    main()
