"""Online estimate of the reachable rotor-speed ceiling.

The tracker runs the commanded speeds through the same first-order lag as
the rotors to get the speed each rotor *should* have (omega_exp).  When a
rotor is pinned at a ceiling below the command, omega_exp - omega_obs stays
positive; once its integral over the trailing window exceeds ``p_thresh`` the
ceiling estimate is set to the highest speed that rotor actually reached in
the window.  The window is then cleared, so the next correction needs a fresh
deficit to build up.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from quadgcnet.dynamics import ModelParams, default_params

WINDOW = 0.13
P_THRESH = 30.0


@dataclass
class TrackerState:
    """Mutable tracker state; one instance per simulation run."""

    estimate: float
    window: float = WINDOW
    p_thresh: float = P_THRESH
    tau: float = 0.03
    omega_min: float = 3000.0
    omega_ceiling: float = 12000.0
    omega_exp: np.ndarray = field(default_factory=lambda: np.full(4, np.nan))
    t: float = 0.0
    # trailing window: sample times, deficits, and the trapezoid area between
    # each sample and its successor (so dropping the oldest sample is O(1))
    times: deque = field(default_factory=deque)
    deficits: deque = field(default_factory=deque)
    areas: deque = field(default_factory=deque)
    integral: np.ndarray = field(default_factory=lambda: np.zeros(4))
    # per-rotor monotonically decreasing deques of (time, omega_obs)
    peaks: list = field(default_factory=lambda: [deque() for _ in range(4)])
    triggers: list = field(default_factory=list)
    telemetry: Optional[list] = None

    def __post_init__(self):
        if not self.window > 0:
            raise ValueError("window must be positive")
        if not self.p_thresh > 0:
            raise ValueError("p_thresh must be positive")
        self.estimate = float(np.clip(self.estimate, self.omega_min, self.omega_ceiling))
        self.omega_exp = np.asarray(self.omega_exp, float)

    @classmethod
    def for_params(cls, params: Optional[ModelParams] = None, estimate: Optional[float] = None,
                   record: bool = False, **kw) -> "TrackerState":
        p = params or default_params()
        return cls(estimate=p.omega_max if estimate is None else estimate, tau=p.tau,
                   omega_min=p.omega_min, omega_ceiling=p.omega_max,
                   telemetry=[] if record else None, **kw)

    def reset_window(self) -> None:
        self.times.clear()
        self.deficits.clear()
        self.areas.clear()
        self.integral[:] = 0.0
        for d in self.peaks:
            d.clear()

    def window_integral(self) -> np.ndarray:
        return self.integral.copy()

    def window_peak(self) -> np.ndarray:
        return np.array([d[0][1] if d else np.nan for d in self.peaks])


def expected_omega(tracker: TrackerState, omega_cmd, dt: float) -> np.ndarray:
    """Advance omega_exp by ``dt`` under a constant command (exact solution
    of the first-order lag over the interval)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    cmd = np.asarray(omega_cmd, float)
    if np.any(np.isnan(tracker.omega_exp)):
        tracker.omega_exp = cmd.copy()
        return tracker.omega_exp.copy()
    tracker.omega_exp = cmd + (tracker.omega_exp - cmd) * np.exp(-dt / tracker.tau)
    return tracker.omega_exp.copy()


def update(tracker: TrackerState, omega_cmd, omega_obs, dt: float) -> float:
    """Feed one sample; returns the (possibly corrected) ceiling estimate.

    ``omega_cmd`` is the command held over the past ``dt`` and ``omega_obs``
    the speeds measured at the end of it.
    """
    obs = np.asarray(omega_obs, float)
    if not np.all(np.isfinite(obs)):
        raise ValueError("observed rotor speeds must be finite")
    first = np.any(np.isnan(tracker.omega_exp))
    if first:
        # no history yet: assume the rotors were where they are observed
        tracker.omega_exp = obs.copy()
    expected_omega(tracker, omega_cmd, dt)
    tracker.t += dt
    t = tracker.t
    deficit = tracker.omega_exp - obs

    if tracker.times:
        area = 0.5 * (tracker.deficits[-1] + deficit) * (t - tracker.times[-1])
        tracker.areas.append(area)
        tracker.integral += area
    tracker.times.append(t)
    tracker.deficits.append(deficit)
    for i, d in enumerate(tracker.peaks):
        while d and d[-1][1] <= obs[i]:
            d.pop()
        d.append((t, obs[i]))

    # keep exactly the samples inside [t - window, t]
    horizon = t - tracker.window - 1e-12
    while tracker.times and tracker.times[0] < horizon:
        tracker.times.popleft()
        tracker.deficits.popleft()
        if tracker.areas:
            tracker.integral -= tracker.areas.popleft()
    for d in tracker.peaks:
        while d and d[0][0] < horizon:
            d.popleft()

    hit = tracker.integral > tracker.p_thresh
    if np.any(hit):
        peak = tracker.window_peak()
        new = float(np.min(peak[hit]))
        tracker.estimate = float(np.clip(new, tracker.omega_min, tracker.omega_ceiling))
        tracker.triggers.append({"t": t, "rotors": np.flatnonzero(hit).tolist(),
                                 "estimate": tracker.estimate})
        tracker.reset_window()

    if tracker.telemetry is not None:
        tracker.telemetry.append((t, *np.asarray(omega_cmd, float), *tracker.omega_exp, *obs,
                                  tracker.estimate))
    return tracker.estimate


TELEMETRY_COLUMNS = (("t",) + tuple(f"w_cmd{i}" for i in range(1, 5))
                     + tuple(f"w_exp{i}" for i in range(1, 5))
                     + tuple(f"w_obs{i}" for i in range(1, 5)) + ("estimate",))


def write_telemetry_csv(tracker: TrackerState, path) -> None:
    if tracker.telemetry is None:
        raise ValueError("tracker was created without telemetry recording")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TELEMETRY_COLUMNS)
        for row in tracker.telemetry:
            w.writerow([repr(float(v)) for v in row])


# -- scripted actuator scenarios ---------------------------------------------

def clamped_rotor_step(omega, cmd, ceiling, tau, dt):
    """Rotor speeds after ``dt``: first-order lag towards the command, with
    the realized speed hard-clamped at ``ceiling``."""
    cmd = np.asarray(cmd, float)
    free = cmd + (np.asarray(omega, float) - cmd) * np.exp(-dt / tau)
    return np.minimum(free, ceiling)


def saturation_step_scenario(ceiling: float = 11300.0, command: float = 12000.0,
                             rate_hz: float = 500.0, duration: float = 0.5,
                             initial: Optional[float] = None, params: Optional[ModelParams] = None,
                             **tracker_kw):
    """Command ``command`` on all rotors from hover while the true ceiling is
    ``ceiling``.  Returns (tracker, times, first saturation time)."""
    p = params or default_params()
    dt = 1.0 / rate_hz
    tracker = TrackerState.for_params(p, estimate=initial, record=True, **tracker_kw)
    omega = np.full(4, p.hover_omega)
    cmd = np.full(4, command)
    t_sat = None
    n = int(round(duration * rate_hz))
    for k in range(1, n + 1):
        omega = clamped_rotor_step(omega, cmd, ceiling, p.tau, dt)
        if t_sat is None and np.any(omega >= ceiling):
            t_sat = k * dt
        update(tracker, cmd, omega, dt)
    return tracker, t_sat


def drift_scenario(rate: float = 1.0, duration: float = 60.0, start_ceiling: float = 11300.0,
                   burst_every: float = 2.0, burst_length: float = 0.4, rate_hz: float = 500.0,
                   params: Optional[ModelParams] = None, **tracker_kw):
    """Ceiling falling at ``rate`` RPM/s; every ``burst_every`` s the command
    jumps to the physical maximum for ``burst_length`` s, otherwise hover.

    Returns per-sample arrays (t, ceiling, estimate, saturated) and the tracker.
    """
    p = params or default_params()
    dt = 1.0 / rate_hz
    tracker = TrackerState.for_params(p, estimate=start_ceiling, **tracker_kw)
    omega = np.full(4, p.hover_omega)
    n = int(round(duration * rate_hz))
    out = np.zeros((n, 4))
    for k in range(1, n + 1):
        t = k * dt
        ceiling = start_ceiling - rate * t
        in_burst = (t % burst_every) < burst_length
        cmd = np.full(4, p.omega_max if in_burst else p.hover_omega)
        omega = clamped_rotor_step(omega, cmd, ceiling, p.tau, dt)
        est = update(tracker, cmd, omega, dt)
        out[k - 1] = (t, ceiling, est, float(np.any(omega >= ceiling - 1e-9)))
    return out, tracker
