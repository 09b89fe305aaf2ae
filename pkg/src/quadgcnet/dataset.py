"""Sampling of OCP instances, batch solving, and (feature, label) datasets.

All problems live in a canonical waypoint frame: the upcoming waypoint sits
at the origin and the approach leg runs along +x, so the initial positions
are drawn behind it (x < 0) and the terminal heading of 45 deg is halfway
through a right turn.  For the consecutive-waypoint variant the waypoint
after next lies on the right-turn leg at (0, d, 0) and the problem ends
there with heading 135 deg, halfway through the following right turn.

Three network input variants are produced:

* ``BASE``       19 features: position relative to the target, then the
                 remaining 16 state entries verbatim
* ``OMEGA_MAX``  BASE plus the rotor-speed ceiling used for that trajectory
* ``WP_REL``     BASE (relative to the intermediate waypoint) plus 1, 2 or 3
                 numbers locating the waypoint after next
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from quadgcnet import __version__
from quadgcnet import dynamics as dyn
from quadgcnet.io import read_container, write_container

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.2


class Variant(str, Enum):
    BASE = "BASE"
    OMEGA_MAX = "OMEGA_MAX"
    WP_REL = "WP_REL"


# (state, control) pairs taken from each trajectory by default: single-waypoint
# problems are sampled at 199 points, the longer consecutive-waypoint ones at 319
SAMPLES_PER_TRAJECTORY = {Variant.BASE: 199, Variant.OMEGA_MAX: 199, Variant.WP_REL: 319}


class DatasetGenerationError(RuntimeError):
    """Too many OCP solves failed."""


def feature_arity(variant: Variant | str, wp_arity: int = 0) -> int:
    variant = Variant(variant)
    if variant is Variant.BASE:
        return 19
    if variant is Variant.OMEGA_MAX:
        return 20
    if wp_arity not in (1, 2, 3):
        raise ValueError("WP_REL arity must be 1, 2 or 3")
    return 19 + wp_arity


@dataclass
class SamplingBounds:
    """Uniform ranges of the initial state (angles in degrees) and disturbances.

    ``omega`` of ``None`` means [omega_min, omega_max] of the model (with the
    sampled ceiling when ``omega_max_range`` is set).
    """

    x: tuple = (-5.0, -2.0)
    y: tuple = (-1.0, 1.0)
    z: tuple = (-0.5, 0.5)
    vx: tuple = (-0.5, 5.0)
    vy: tuple = (-3.0, 3.0)
    vz: tuple = (-1.0, 1.0)
    phi_deg: tuple = (-40.0, 40.0)
    theta_deg: tuple = (-40.0, 40.0)
    psi_deg: tuple = (-60.0, 60.0)
    p: tuple = (-1.0, 1.0)
    q: tuple = (-1.0, 1.0)
    r: tuple = (-1.0, 1.0)
    omega: Optional[tuple] = None
    mx: tuple = (-0.04, 0.04)
    my: tuple = (-0.04, 0.04)
    mz: tuple = (-0.01, 0.01)
    final_psi_deg: float = 45.0
    # rotor-speed ceiling per trajectory (OMEGA_MAX variant)
    omega_max_range: Optional[tuple] = None
    # consecutive-waypoint geometry (WP_REL variant)
    wp_distances: tuple = (3.0, 4.0)
    wp_square_center: tuple = (0.0, 3.5)
    wp_square_side: float = 1.0
    wp_dz: tuple = (-0.5, 0.5)
    wp_psi_deg: float = 45.0
    wp_threshold: float = 0.04
    wp_final_psi_deg: float = 135.0

    STATE_FIELDS = ("x", "y", "z", "vx", "vy", "vz", "phi_deg", "theta_deg", "psi_deg", "p", "q", "r")

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in self.STATE_FIELDS + ("mx", "my", "mz"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"bound {name}: lower {lo} above upper {hi}")
        if not (-90.0 < self.theta_deg[0] and self.theta_deg[1] < 90.0):
            raise ValueError("pitch bounds must lie inside (-90, 90) degrees")
        for name in ("omega", "omega_max_range", "wp_dz"):
            v = getattr(self, name)
            if v is not None and not v[0] <= v[1]:
                raise ValueError(f"bound {name}: lower above upper")
        if not self.wp_threshold > 0:
            raise ValueError("wp_threshold must be positive")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "SamplingBounds":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown bound(s): {sorted(unknown)}")
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in doc.items()})


def _uniform(rng, bounds):
    lo, hi = bounds
    return float(rng.uniform(lo, hi))


def sample_ocp(bounds: SamplingBounds, epsilon: float, rng_seed, *, variant: Variant | str = Variant.BASE,
               params: Optional[dyn.ModelParams] = None, n_segments: int = 60, wp_arity: int = 1):
    """Draw one OCP in the canonical waypoint frame.

    ``rng_seed`` may be an int or a ``numpy.random.SeedSequence``.
    """
    from quadgcnet.trajopt import FinalConditions, IntermediateWaypoint, OcpSpec

    variant = Variant(variant)
    params = params or dyn.default_params()
    rng = np.random.default_rng(rng_seed)
    b = bounds
    x0 = np.zeros(dyn.N_STATE)
    for i, name in enumerate(("x", "y", "z", "vx", "vy", "vz")):
        x0[i] = _uniform(rng, getattr(b, name))
    for i, name in enumerate(("phi_deg", "theta_deg", "psi_deg")):
        x0[6 + i] = np.deg2rad(_uniform(rng, getattr(b, name)))
    for i, name in enumerate(("p", "q", "r")):
        x0[9 + i] = _uniform(rng, getattr(b, name))
    if variant is Variant.OMEGA_MAX:
        if b.omega_max_range is None:
            raise ValueError("OMEGA_MAX variant needs omega_max_range")
        params = params.replace(omega_max=_uniform(rng, b.omega_max_range))
    omega_bounds = b.omega if b.omega is not None else (params.omega_min, params.omega_max)
    x0[dyn.ROTORS] = rng.uniform(omega_bounds[0], omega_bounds[1], size=4)
    m_ext = np.array([_uniform(rng, b.mx), _uniform(rng, b.my), _uniform(rng, b.mz)])

    intermediate = None
    psi_f = np.deg2rad(b.final_psi_deg)
    p_f = np.zeros(3)
    if variant is Variant.WP_REL:
        rel = wp_rel_sample(b, rng, wp_arity)
        intermediate = IntermediateWaypoint(np.zeros(3), np.deg2rad(b.wp_psi_deg), b.wp_threshold)
        p_f = rel
        psi_f = np.deg2rad(b.wp_final_psi_deg)
    final = FinalConditions(p_f=p_f, psi_f=psi_f, constrain_velocity_direction=True,
                            Omega_f_zero=True, Omega_dot_f_zero=True)
    return OcpSpec(epsilon, x0, final, params, M_ext=m_ext, intermediate=intermediate,
                   n_segments=n_segments)


def wp_rel_sample(b: SamplingBounds, rng, arity: int) -> np.ndarray:
    """Position of the waypoint after next relative to the upcoming one."""
    if arity == 1:
        return np.array([0.0, float(rng.choice(np.asarray(b.wp_distances))), 0.0])
    half = 0.5 * b.wp_square_side
    cx, cy = b.wp_square_center
    rel = np.array([rng.uniform(cx - half, cx + half), rng.uniform(cy - half, cy + half), 0.0])
    if arity == 3:
        rel[2] = rng.uniform(*b.wp_dz)
    elif arity != 2:
        raise ValueError("WP_REL arity must be 1, 2 or 3")
    return rel


def wp_rel_features(rel: np.ndarray, arity: int) -> np.ndarray:
    """Network inputs describing the waypoint after next."""
    rel = np.asarray(rel, float)
    if arity == 1:
        return np.array([np.hypot(rel[0], rel[1])])
    return rel[:arity].copy()


# --- features ----------------------------------------------------------------

def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def to_waypoint_frame(states: np.ndarray, origin, yaw: float) -> np.ndarray:
    """Express world-frame states in a frame centred on ``origin`` and rotated
    by ``yaw`` about the (downward) z axis.  Body-frame quantities, attitude
    angles other than heading, rotor speeds and disturbances are unchanged."""
    s = np.array(states, dtype=float, copy=True)
    c, sn = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, sn, 0.0], [-sn, c, 0.0], [0.0, 0.0, 1.0]])  # world -> frame
    s[..., 0:3] = (s[..., 0:3] - np.asarray(origin, float)) @ rot.T
    s[..., 3:6] = s[..., 3:6] @ rot.T
    s[..., 8] = wrap_angle(s[..., 8] - yaw)
    return s


def make_features(states: np.ndarray, variant: Variant | str, reference=None, omega_max=None,
                  wp_rel=None) -> np.ndarray:
    """Feature rows for states already expressed in the canonical frame.

    ``reference`` is the point the position is taken relative to (target
    waypoint for BASE/OMEGA_MAX, upcoming waypoint for WP_REL).
    """
    variant = Variant(variant)
    states = np.atleast_2d(np.asarray(states, float))
    ref = np.zeros(3) if reference is None else np.asarray(reference, float)
    base = np.concatenate([states[:, 0:3] - ref, states[:, 3:19]], axis=1)
    if variant is Variant.BASE:
        return base
    if variant is Variant.OMEGA_MAX:
        if omega_max is None:
            raise ValueError("OMEGA_MAX features need omega_max")
        return np.concatenate([base, np.full((len(base), 1), float(omega_max))], axis=1)
    if wp_rel is None:
        raise ValueError("WP_REL features need wp_rel")
    extra = np.broadcast_to(np.asarray(wp_rel, float), (len(base), len(np.atleast_1d(wp_rel))))
    return np.concatenate([base, extra], axis=1)


def trajectory_features(traj, variant: Variant | str, wp_arity: int = 0,
                        samples: Optional[int] = None):
    """(features, labels) of one solved trajectory, at its nodes or resampled."""
    from quadgcnet.trajopt import resample

    variant = Variant(variant)
    spec = traj.spec
    if samples is None or samples == traj.n_segments + 1:
        states, controls = traj.states, traj.controls
    else:
        states, controls, _ = resample(traj, samples - 1)
    if variant is Variant.WP_REL:
        ref = spec.intermediate.position
        rel = wp_rel_features(spec.final.p_f - ref, wp_arity)
        feats = make_features(states, variant, reference=ref, wp_rel=rel)
    elif variant is Variant.OMEGA_MAX:
        feats = make_features(states, variant, reference=spec.final.p_f, omega_max=spec.params.omega_max)
    else:
        feats = make_features(states, variant, reference=spec.final.p_f)
    return feats, np.clip(controls, 0.0, 1.0)


# --- dataset container ---------------------------------------------------------

@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    traj_id: np.ndarray
    variant: Variant
    wp_arity: int = 0
    provenance: dict = field(default_factory=dict)
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.features = np.asarray(self.features, float)
        self.labels = np.asarray(self.labels, float)
        self.traj_id = np.asarray(self.traj_id, np.int64)
        arity = feature_arity(self.variant, self.wp_arity)
        if self.features.ndim != 2 or self.features.shape[1] != arity:
            raise ValueError(f"{self.variant.value} features need {arity} columns, got {self.features.shape}")
        if len(self.labels) != len(self.features) or len(self.traj_id) != len(self.features):
            raise ValueError("features, labels and traj_id lengths differ")
        if self.labels.size and (self.labels.min() < 0.0 or self.labels.max() > 1.0):
            raise ValueError("labels must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def arity(self) -> int:
        return self.features.shape[1]

    def trajectory_ids(self) -> np.ndarray:
        return np.unique(self.traj_id)

    def subset(self, ids: Sequence[int]) -> "Dataset":
        mask = np.isin(self.traj_id, np.asarray(ids))
        return Dataset(self.features[mask], self.labels[mask], self.traj_id[mask], self.variant,
                       self.wp_arity, dict(self.provenance), self.mean, self.std)

    def save(self, path) -> None:
        arrays = {"features": self.features, "labels": self.labels, "traj_id": self.traj_id}
        if self.mean is not None:
            arrays["mean"], arrays["std"] = self.mean, self.std
        write_container(path, "dataset", arrays,
                        {"variant": self.variant.value, "wp_arity": self.wp_arity,
                         "provenance": self.provenance})

    @classmethod
    def load(cls, path) -> "Dataset":
        arrays, meta = read_container(path, "dataset")
        return cls(arrays["features"], arrays["labels"], arrays["traj_id"], meta["variant"],
                   meta["wp_arity"], meta["provenance"], arrays.get("mean"), arrays.get("std"))

    def to_csv(self, path) -> None:
        n_f = self.arity
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["traj_id"] + [f"f{i}" for i in range(n_f)] + list(dyn.CONTROL_NAMES))
            for t, f, lab in zip(self.traj_id, self.features, self.labels):
                w.writerow([int(t)] + [repr(float(v)) for v in f] + [repr(float(v)) for v in lab])


def normalization_stats(ds: Dataset, min_std: float = 1e-8):
    """Per-feature mean and standard deviation (constant features get std 1)."""
    mean = ds.features.mean(axis=0)
    std = ds.features.std(axis=0)
    std = np.where(std < min_std, 1.0, std)
    return mean, std


def bounds_normalization(bounds: SamplingBounds, variant: Variant | str = Variant.BASE,
                         params: Optional[dyn.ModelParams] = None, wp_arity: int = 0):
    """Mean and std of a uniform distribution over the sampling box (the
    position box is stretched to include the target at the origin).

    Useful when the training data are too few to give meaningful statistics,
    e.g. a single trajectory.
    """
    variant = Variant(variant)
    p = params or dyn.default_params()
    b = bounds
    deg = np.deg2rad
    boxes = [(min(b.x[0], 0.0), max(b.x[1], 0.0)), (min(b.y[0], 0.0), max(b.y[1], 0.0)),
             (min(b.z[0], 0.0), max(b.z[1], 0.0)), b.vx, b.vy, b.vz,
             tuple(deg(b.phi_deg)), tuple(deg(b.theta_deg)), tuple(deg(b.psi_deg)), b.p, b.q, b.r]
    boxes += [b.omega if b.omega is not None else (p.omega_min, p.omega_max)] * 4
    boxes += [b.mx, b.my, b.mz]
    if variant is Variant.OMEGA_MAX:
        boxes.append(b.omega_max_range or (p.omega_max, p.omega_max))
    elif variant is Variant.WP_REL:
        half = 0.5 * b.wp_square_side
        cx, cy = b.wp_square_center
        extra = {1: [tuple(b.wp_distances)],
                 2: [(cx - half, cx + half), (cy - half, cy + half)],
                 3: [(cx - half, cx + half), (cy - half, cy + half), tuple(b.wp_dz)]}
        boxes += extra[wp_arity]
    lo, hi = np.array(boxes, float).T
    std = (hi - lo) / np.sqrt(12.0)
    return 0.5 * (lo + hi), np.where(std > 0, std, 1.0)


def split_train_val(ds: Dataset, fraction: float = 0.8, seed: int = 0):
    """Trajectory-level split; normalization statistics come from the training part."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    ids = ds.trajectory_ids()
    rng = np.random.default_rng(seed)
    shuffled = rng.permutation(ids)
    n_train = int(round(fraction * len(ids)))
    n_train = min(max(n_train, 1), len(ids))
    train_ids = np.sort(shuffled[:n_train])
    val_ids = np.sort(shuffled[n_train:])
    train, val = ds.subset(train_ids), ds.subset(val_ids)
    mean, std = normalization_stats(train)
    for part in (train, val):
        part.mean, part.std = mean, std
    return train, val


# --- generation ------------------------------------------------------------------

def _solve_one(args):
    """Worker: sample and solve one problem; returns (index, features, labels, info)."""
    (index, seed_state, bounds_doc, epsilon, variant, params_doc, n_segments, wp_arity,
     samples_per_traj) = args
    from quadgcnet.trajopt import NonConvergenceError, solve_ocp

    bounds = SamplingBounds.from_dict(bounds_doc)
    params = dyn.ModelParams.from_dict(params_doc)
    seed = np.random.SeedSequence(**seed_state)
    spec = sample_ocp(bounds, epsilon, seed, variant=variant, params=params,
                      n_segments=n_segments, wp_arity=wp_arity)
    try:
        traj = solve_ocp(spec)
    except NonConvergenceError as err:
        return index, None, None, {"error": str(err)}
    feats, labels = trajectory_features(traj, variant, wp_arity, samples_per_traj)
    return index, feats, labels, {"T": traj.T, "iterations": traj.info["iterations"]}


def generate_dataset(bounds: SamplingBounds, epsilon: float, n_trajectories: int,
                     samples_per_traj: Optional[int] = None, variant: Variant | str = Variant.BASE, *,
                     seed: int = 0, params: Optional[dyn.ModelParams] = None, n_segments: int = 60,
                     wp_arity: int = 1, jobs: int = 1, progress=None) -> Dataset:
    """Solve ``n_trajectories`` sampled problems and collect their node pairs.

    Records are ordered by trajectory index, then node, whatever the
    completion order of the workers.  Raises :class:`DatasetGenerationError`
    as soon as more than 20% of the solves have failed.
    """
    if n_trajectories < 1:
        raise ValueError("n_trajectories must be at least 1")
    variant = Variant(variant)
    params = params or dyn.default_params()
    if variant is not Variant.WP_REL:
        wp_arity = 0
    samples = samples_per_traj or n_segments + 1
    children = np.random.SeedSequence(seed).spawn(n_trajectories)
    tasks = [(i, {"entropy": c.entropy, "spawn_key": c.spawn_key}, bounds.to_dict(), float(epsilon),
              variant.value, params.to_dict(), int(n_segments), int(wp_arity), int(samples))
             for i, c in enumerate(children)]
    max_fail = int(np.floor(MAX_FAILURE_RATE * n_trajectories))
    results = {}
    failures = []

    def collect(res):
        index, feats, labels, info = res
        if feats is None:
            failures.append({"index": index, **info})
            log.warning("trajectory %d failed: %s", index, info["error"])
        results[index] = (feats, labels, info)
        if progress is not None:
            progress(len(results), n_trajectories)
        if len(failures) > max_fail:
            raise DatasetGenerationError(
                f"{len(failures)} of {n_trajectories} solves failed (limit {MAX_FAILURE_RATE:.0%})")

    if jobs <= 1:
        for t in tasks:
            collect(_solve_one(t))
    else:
        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            for res in pool.map(_solve_one, tasks, chunksize=max(1, n_trajectories // (4 * jobs))):
                collect(res)

    feats, labels, ids, times, iters = [], [], [], [], []
    for i in range(n_trajectories):
        f, lab, info = results[i]
        if f is None:
            continue
        feats.append(f)
        labels.append(lab)
        ids.append(np.full(len(f), i))
        times.append(info["T"])
        iters.append(info["iterations"])
    arity = feature_arity(variant, wp_arity)
    provenance = {
        "seed": int(seed),
        "epsilon": float(epsilon),
        "n_trajectories": int(n_trajectories),
        "n_failed": len(failures),
        "failed_indices": [f["index"] for f in failures],
        "samples_per_traj": int(samples),
        "n_segments": int(n_segments),
        "bounds": bounds.to_dict(),
        "params": params.to_dict(),
        "variant": variant.value,
        "wp_arity": int(wp_arity),
        "solver": {"defect_tol": 1e-6, "boundary_tol": 1e-6, "stationarity_tol": 1e-5, "max_iter": 500},
        "final_times": [float(t) for t in times],
        "iterations": [int(k) for k in iters],
        "version": __version__,
    }
    if not feats:
        raise DatasetGenerationError("every solve failed")
    return Dataset(np.concatenate(feats), np.concatenate(labels), np.concatenate(ids), variant,
                   wp_arity, provenance)
