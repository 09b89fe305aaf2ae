"""Trajectory files: binary container and per-node CSV."""
from __future__ import annotations

import csv

import numpy as np

from quadgcnet import dynamics as dyn
from quadgcnet.io import read_container, write_container
from quadgcnet.trajopt.problem import OcpSpec, Trajectory

CSV_COLUMNS = ("t",) + dyn.STATE_NAMES + dyn.CONTROL_NAMES


def _plain(info: dict) -> dict:
    return {k: v for k, v in info.items() if isinstance(v, (int, float, str, bool, type(None)))}


def save_trajectory(traj: Trajectory, path) -> None:
    write_container(
        path, "trajectory",
        {"times": traj.times, "states": traj.states, "controls": traj.controls,
         "mid_controls": traj.mid_controls},
        {"T": traj.T, "cost": traj.cost, "spec": traj.spec.to_dict(), "info": _plain(traj.info)},
    )


def load_trajectory(path) -> Trajectory:
    arrays, meta = read_container(path, "trajectory")
    spec = OcpSpec.from_dict(meta["spec"])
    return Trajectory(arrays["times"], arrays["states"], arrays["controls"], arrays["mid_controls"],
                      float(meta["T"]), float(meta["cost"]), spec, dict(meta["info"]))


def write_trajectory_csv(traj: Trajectory, path) -> None:
    rows = np.column_stack([traj.times, traj.states, traj.controls])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def read_trajectory_csv(path) -> dict:
    """Columns of a trajectory CSV as float arrays keyed by header name."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    return {name: data[:, i] for i, name in enumerate(header)}
