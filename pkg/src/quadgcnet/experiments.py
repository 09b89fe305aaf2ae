"""Desk-scale experiment pipelines shared by ``scripts/`` and the acceptance
suite: cached dataset generation, loss-versus-epsilon training, final-time
comparisons, the adaptive-net tracking study and the lap-energy comparison.
"""
from __future__ import annotations

import dataclasses
import logging
import os
from pathlib import Path
from typing import Optional

import numpy as np

from quadgcnet import dynamics as dyn
from quadgcnet.dataset import (SAMPLES_PER_TRAJECTORY, Dataset, SamplingBounds, Variant, generate_dataset,
                              sample_ocp, split_train_val)
from quadgcnet.gcnet import PolicyNet, TrainConfig, init_policy, train
from quadgcnet.io import sha256_of

log = logging.getLogger(__name__)


def cache_dir() -> Path:
    path = Path(os.environ.get("QUADGCNET_CACHE", Path.home() / ".cache" / "quadgcnet" / "datasets"))
    path.mkdir(parents=True, exist_ok=True)
    return path


def default_jobs() -> int:
    return int(os.environ.get("QUADGCNET_JOBS", os.cpu_count() or 1))


def cached_dataset(epsilon: float, n_trajectories: int, variant: Variant | str = Variant.BASE, *,
                   seed: int = 0, bounds: Optional[SamplingBounds] = None, wp_arity: int = 1,
                   n_segments: int = 60, samples_per_traj: Optional[int] = None,
                   params: Optional[dyn.ModelParams] = None, jobs: Optional[int] = None) -> Dataset:
    """Generate a dataset, or load it if one with the same recipe was built before.

    The cache key covers everything that determines the content (not the
    number of workers, which does not change the result).
    """
    bounds = bounds or SamplingBounds()
    params = params or dyn.default_params()
    variant = Variant(variant)
    samples = int(samples_per_traj or SAMPLES_PER_TRAJECTORY[variant])
    recipe = {"epsilon": float(epsilon), "n": int(n_trajectories), "variant": variant.value,
              "seed": int(seed), "bounds": bounds.to_dict(), "params": params.to_dict(),
              "wp_arity": int(wp_arity) if variant is Variant.WP_REL else 0,
              "n_segments": int(n_segments), "samples": samples, "format": 1}
    path = cache_dir() / f"{variant.value.lower()}_eps{epsilon:.2f}_n{n_trajectories}_{sha256_of(recipe)[:12]}.bin"
    if path.exists():
        return Dataset.load(path)
    log.info("generating %s", path.name)
    ds = generate_dataset(bounds, epsilon, n_trajectories, samples, variant, seed=seed, params=params,
                          n_segments=n_segments, wp_arity=wp_arity, jobs=jobs or default_jobs())
    tmp = path.with_suffix(".tmp")
    ds.save(tmp)
    tmp.replace(path)
    return ds


def train_on(ds: Dataset, config: Optional[TrainConfig] = None, seed: int = 0, fraction: float = 0.8):
    """Trajectory-level split, seeded init, training.  Returns (net, history)."""
    config = config or TrainConfig(seed=seed)
    tr, va = split_train_val(ds, fraction, seed)
    params = dyn.ModelParams.from_dict(ds.provenance["params"]) if "params" in ds.provenance else dyn.default_params()
    net = init_policy(ds.variant, ds.wp_arity, seed, omega_min=params.omega_min, omega_max=params.omega_max)
    return train(net, tr, va, config)


def loss_versus_epsilon(epsilons=(1.0, 0.5, 0.0), n_trajectories: int = 300, seed: int = 0,
                        config: Optional[TrainConfig] = None, jobs: Optional[int] = None) -> dict:
    """Final validation loss per epsilon with identical seeds and training config."""
    out = {}
    for eps in epsilons:
        ds = cached_dataset(eps, n_trajectories, Variant.BASE, seed=seed, jobs=jobs)
        _, hist = train_on(ds, config, seed)
        out[float(eps)] = {"val_loss": hist[-1]["val_loss"], "history": hist,
                           "n_records": len(ds), "n_failed": ds.provenance.get("n_failed", 0)}
    return out


def _final_time_pair(args):
    seed, n_segments = args
    from quadgcnet.trajopt import solve_ocp

    spec = sample_ocp(SamplingBounds(), 0.0, seed, variant=Variant.BASE, n_segments=n_segments)
    t_fast = solve_ocp(spec).T
    t_smooth = solve_ocp(dataclasses.replace(spec, epsilon=1.0)).T
    return seed, t_fast, t_smooth


def final_time_ratios(seeds=range(5), n_segments: int = 60, jobs: int = 1) -> list:
    """(seed, T at epsilon=0, T at epsilon=1) for random boundary conditions."""
    tasks = [(int(s), n_segments) for s in seeds]
    if jobs > 1:
        import multiprocessing as mp
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(min(jobs, len(tasks)), mp_context=mp.get_context("spawn")) as pool:
            return list(pool.map(_final_time_pair, tasks))
    return [_final_time_pair(t) for t in tasks]


def _reference(args):
    spec_doc, refine_to = args
    from quadgcnet.trajopt import NonConvergenceError, OcpSpec, refine_node_doubling, solve_ocp

    try:
        traj = solve_ocp(OcpSpec.from_dict(spec_doc))
        return refine_node_doubling(traj, refine_to) if refine_to else traj
    except NonConvergenceError as err:
        log.warning("reference failed: %s", err)
        return None


def reference_set(count: int, epsilon: float, omega_max: float, seed: int = 1000, refine_to: int = 240,
                  n_segments: int = 60, jobs: Optional[int] = None) -> list:
    """Refined optimal trajectories at a fixed rotor ceiling (cached on disk)."""
    from quadgcnet.trajopt.io import load_trajectory, save_trajectory

    params = dyn.default_params().replace(omega_max=float(omega_max))
    recipe = {"count": count, "epsilon": epsilon, "omega_max": omega_max, "seed": seed,
              "refine_to": refine_to, "n_segments": n_segments, "params": params.to_dict(), "format": 1}
    folder = cache_dir() / f"refs_{sha256_of(recipe)[:12]}"
    if folder.exists() and (folder / "done").exists():
        return [load_trajectory(p) for p in sorted(folder.glob("ref*.bin"))]
    children = np.random.SeedSequence(seed).spawn(count)
    specs = [sample_ocp(SamplingBounds(), epsilon, c, variant=Variant.BASE, params=params,
                        n_segments=n_segments).to_dict() for c in children]
    tasks = [(s, refine_to) for s in specs]
    jobs = jobs or default_jobs()
    if jobs > 1:
        import multiprocessing as mp
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(min(jobs, len(tasks)), mp_context=mp.get_context("spawn")) as pool:
            refs = list(pool.map(_reference, tasks))
    else:
        refs = [_reference(t) for t in tasks]
    folder.mkdir(exist_ok=True)
    kept = []
    for i, tr in enumerate(refs):
        if tr is not None:
            save_trajectory(tr, folder / f"ref{i:04d}.bin")
            kept.append(tr)
    (folder / "done").write_text("ok\n")
    return kept


def omega_max_offset_study(net: PolicyNet, references: list, omega_max: float,
                           offsets=(-400.0, 0.0, 400.0), jobs: int = 1) -> dict:
    """Median mean-position error when the adaptive net is told omega_max + offset."""
    from quadgcnet.simulator import evaluate_tracking

    return {float(off): evaluate_tracking(net, references, omega_max + off, jobs=jobs) for off in offsets}


def lap_comparison(single_net: PolicyNet, consecutive_net: PolicyNet, length: float = 4.0,
                   width: float = 3.0, max_time: float = 20.0) -> dict:
    """One lap of the rectangle with each net: energy and saturation time fraction."""
    from quadgcnet.simulator import (SimConfig, Track, energy_cost_of_flight, saturation_time_fraction,
                                     simulate_closed_loop)

    params = dyn.default_params()
    out = {}
    for name, net, rule in (("single", single_net, "single"), ("consecutive", consecutive_net, "consecutive")):
        track = Track.rectangle(length, width, rule=rule)
        flight = simulate_closed_loop(track.start_state(params), net, track,
                                      SimConfig(max_time=max_time, laps=1), params)
        row = {"status": flight.status, "message": flight.message, "lap_times": flight.lap_times}
        if len(flight.lap_times) >= 2:
            lap = flight.lap(0)
            row.update(energy=energy_cost_of_flight(lap), saturation=saturation_time_fraction(lap),
                       lap_time=float(lap.t[-1] - lap.t[0]))
        out[name] = row
    return out
