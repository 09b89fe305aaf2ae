"""Scripted actuator scenarios for the rotor-ceiling tracker.

    python scripts/tracker_scenarios.py

Step: all rotors commanded to 12000 RPM with the true ceiling at 11300.
Drift: the ceiling falls 1 RPM/s for 60 s with periodic full-throttle bursts.
Telemetry of the step run goes to runs/tracker_step.csv, the drift trace to
runs/tracker_drift.csv.
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from quadgcnet.peaktracker import drift_scenario, saturation_step_scenario, write_telemetry_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ceiling", type=float, default=11300.0)
    ap.add_argument("--drift-rate", type=float, default=1.0)
    ap.add_argument("--out", type=Path, default=Path("runs"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    tracker, t_sat = saturation_step_scenario(ceiling=args.ceiling)
    first = tracker.triggers[0]
    print(f"step: first saturation {t_sat:.3f} s, correction at {first['t']:.3f} s "
          f"(latency {first['t'] - t_sat:.3f} s), estimate {first['estimate']:.1f} RPM")
    write_telemetry_csv(tracker, args.out / "tracker_step.csv")

    rows, tracker = drift_scenario(rate=args.drift_rate, start_ceiling=args.ceiling)
    t, ceiling, est, saturated = rows.T
    err = np.abs(est - ceiling)
    print(f"drift: {len(tracker.triggers)} corrections, max |estimate - ceiling| = {err.max():.1f} RPM, "
          f"mean {err.mean():.1f} RPM")
    with open(args.out / "tracker_drift.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "ceiling", "estimate", "saturated"])
        w.writerows(rows.tolist())


if __name__ == "__main__":
    main()
