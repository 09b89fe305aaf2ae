"""Switching structure of the optimal vertical landing.

    python scripts/landing_structure.py [--height 5] [--epsilons 0 0.5 1]

For each epsilon: final time, saturation fraction and switch events; then the
braking onset of the time-optimal landing for several rotor-speed ceilings.
Trajectories are written to runs/landing/*.csv.
"""
import argparse
from pathlib import Path

import numpy as np

from quadgcnet import dynamics as dyn
from quadgcnet.trajopt import (braking_onset_time, landing_spec, saturation_fraction, solve_ocp,
                               switching_events)
from quadgcnet.trajopt.io import write_trajectory_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--height", type=float, default=5.0)
    ap.add_argument("--epsilons", type=float, nargs="+", default=[0.0, 0.5, 1.0])
    ap.add_argument("--ceilings", type=float, nargs="+", default=[10000.0, 11000.0, 12000.0])
    ap.add_argument("--out", type=Path, default=Path("runs/landing"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    for eps in args.epsilons:
        traj = solve_ocp(landing_spec(args.height, eps))
        spread = np.max(np.abs(traj.controls - traj.controls[:, :1]))
        events = ", ".join(f"{kind} at {t:.3f} s" for t, kind in switching_events(traj.controls, traj.times))
        print(f"eps={eps:.2f}  T={traj.T:.3f} s  saturation={saturation_fraction(traj.controls):.3f}  "
              f"rotor spread={spread:.1e}  switches: {events or 'none'}")
        write_trajectory_csv(traj, args.out / f"landing_eps{eps:.2f}.csv")

    print("time-optimal braking onset versus rotor ceiling:")
    for w in args.ceilings:
        traj = solve_ocp(landing_spec(args.height, 0.0, dyn.default_params().replace(omega_max=w)))
        print(f"  omega_max={w:.0f} RPM  T={traj.T:.3f} s  onset={braking_onset_time(traj):.3f} s")


if __name__ == "__main__":
    main()
