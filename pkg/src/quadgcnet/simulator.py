"""Closed-loop flight: x' = f(x, net(x)) integrated with an adaptive
Dormand-Prince 5(4) pair, waypoint tracks, an actuator ceiling that can sag
over the flight, and the peak tracker in the loop.

Time is organised in ticks (``SimConfig.tick``, 2 ms by default).  At every
tick the state is read off the integrator's dense output, logged, checked for
divergence and waypoint switches, and fed to the peak tracker.  The network
itself is evaluated inside every derivative call (no zero-order hold) unless
``zoh_period`` is set.  The integrator is restarted only when the right-hand
side changes: a waypoint switch, a new ceiling estimate, or a new held
command.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import RK45

from quadgcnet import dynamics as dyn
from quadgcnet.dataset import Variant, make_features, to_waypoint_frame, wp_rel_features
from quadgcnet.gcnet import PolicyNet, forward
from quadgcnet.peaktracker import TrackerState, update as tracker_update

log = logging.getLogger(__name__)

FINAL_HEADING_IN_FRAME = np.deg2rad(45.0)
SINGLE_SWITCH_DISTANCE = 1.2
SATURATION_MARGIN = 0.01


# --- tracks --------------------------------------------------------------------

@dataclass
class Track:
    """Ordered waypoints with the heading to hold when passing each one.

    ``rule`` is ``"single"`` (advance inside ``threshold`` metres),
    ``"consecutive"`` (advance on entering the sphere of ``sphere_radius`` or
    on crossing the plane through the waypoint normal to its heading) or
    ``"none"`` (never advance).
    """

    positions: np.ndarray
    headings: np.ndarray
    rule: str = "single"
    cyclic: bool = True
    threshold: float = SINGLE_SWITCH_DISTANCE
    sphere_radius: float = 0.3
    geometry: str = "custom"

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, float))
        self.headings = np.atleast_1d(np.asarray(self.headings, float))
        if len(self.positions) < 1 or self.positions.shape[1] != 3:
            raise ValueError("a track needs at least one 3-D waypoint")
        if len(self.headings) != len(self.positions):
            raise ValueError("one heading per waypoint")
        if self.rule not in ("single", "consecutive", "none"):
            raise ValueError(f"unknown switching rule {self.rule!r}")

    def __len__(self) -> int:
        return len(self.positions)

    def frame(self, i: int):
        """Origin and yaw of the feature frame of waypoint ``i``: the waypoint
        at the origin, passed with heading 45 deg in that frame."""
        return self.positions[i], float(self.headings[i] - FINAL_HEADING_IN_FRAME)

    def next_index(self, i: int) -> Optional[int]:
        if i + 1 < len(self):
            return i + 1
        return 0 if self.cyclic else None

    def relative_next(self, i: int) -> np.ndarray:
        """Waypoint after ``i`` expressed in the frame of waypoint ``i``."""
        j = self.next_index(i)
        origin, yaw = self.frame(i)
        if j is None:
            # past the end: pretend the right-turn pattern continues
            prev = self.positions[i - 1] if i > 0 else origin - np.array([3.0, 0.0, 0.0])
            return np.array([0.0, float(np.linalg.norm(origin - prev)), 0.0])
        c, s = np.cos(yaw), np.sin(yaw)
        d = self.positions[j] - origin
        return np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]])

    @staticmethod
    def _bisector_headings(pos: np.ndarray, cyclic: bool) -> np.ndarray:
        n = len(pos)
        out = np.zeros(n)
        for i in range(n):
            prev = pos[i - 1] if (i > 0 or cyclic) else pos[i] - (pos[i + 1] - pos[i])
            nxt = pos[(i + 1) % n] if (i + 1 < n or cyclic) else pos[i] + (pos[i] - pos[i - 1])
            a_in = np.arctan2(*(pos[i] - prev)[1::-1])
            a_out = np.arctan2(*(nxt - pos[i])[1::-1])
            turn = (a_out - a_in + np.pi) % (2 * np.pi) - np.pi
            out[i] = a_in + 0.5 * turn
        return out

    @classmethod
    def rectangle(cls, length: float = 4.0, width: float = 3.0, rule: str = "single", **kw) -> "Track":
        """Clockwise (right-turn) rectangle seen from above, z down."""
        pos = np.array([[length, 0.0, 0.0], [length, width, 0.0], [0.0, width, 0.0], [0.0, 0.0, 0.0]])
        return cls(pos, cls._bisector_headings(pos, True), rule=rule, cyclic=True,
                   geometry=f"rectangle {length}x{width}", **kw)

    @classmethod
    def randomized(cls, seed: int, base: Optional["Track"] = None, side: float = 1.0,
                   rule: str = "consecutive", **kw) -> "Track":
        """Every waypoint of ``base`` moved uniformly within a ``side`` x ``side``
        square centred on it (1 m^2 by default)."""
        base = base or cls.rectangle()
        rng = np.random.default_rng(seed)
        pos = base.positions.copy()
        pos[:, :2] += rng.uniform(-0.5 * side, 0.5 * side, size=(len(pos), 2))
        return cls(pos, cls._bisector_headings(pos, base.cyclic), rule=rule, cyclic=base.cyclic,
                   geometry=f"randomized ({side} m square, seed {seed})", **kw)

    @classmethod
    def single_target(cls, position=(0.0, 0.0, 0.0), heading: float = FINAL_HEADING_IN_FRAME) -> "Track":
        return cls(np.asarray(position, float)[None], [heading], rule="none", cyclic=False,
                   geometry="single target")

    def start_state(self, params: dyn.ModelParams, distance: float = 3.0, speed: float = 0.0) -> np.ndarray:
        """Hover-like state ``distance`` metres behind waypoint 0 on its approach axis."""
        origin, yaw = self.frame(0)
        d = np.array([np.cos(yaw), np.sin(yaw), 0.0])
        x = dyn.hover_state(params, origin - distance * d, psi=yaw)
        x[dyn.V] = speed * d
        return x


def waypoint_switching(state, track: Track, active: int, rule: Optional[str] = None):
    """Return (new active index, switched?) for the current state.

    The new index is ``None`` when the last waypoint of an open track has
    been passed.
    """
    rule = rule or track.rule
    if rule == "none" or active is None:
        return active, False
    p = np.asarray(state, float)[0:3]
    wp = track.positions[active]
    dist = float(np.linalg.norm(p - wp))
    if rule == "single":
        hit = dist < track.threshold
    elif rule == "consecutive":
        h = track.headings[active]
        passed = (p[0] - wp[0]) * np.cos(h) + (p[1] - wp[1]) * np.sin(h) > 0.0
        hit = dist < track.sphere_radius or passed
    else:
        raise ValueError(f"unknown switching rule {rule!r}")
    if not hit:
        return active, False
    return track.next_index(active), True


# --- configuration and log -----------------------------------------------------

@dataclass
class SimConfig:
    rtol: float = 1e-6
    atol: float = 1e-8
    max_time: float = 20.0
    max_step: float = 0.02
    tick: float = 0.002
    ceiling: Optional[float] = None          # true rotor ceiling at t=0 (default: model omega_max)
    drift_rate: float = 0.0                  # ceiling loss in RPM/s
    omega_max_input: Optional[float] = None  # omega_max fed to an adaptive net (default: true ceiling)
    use_tracker: bool = False
    tracker_initial: Optional[float] = None
    tracker_window: float = 0.13
    tracker_threshold: float = 30.0
    zoh_period: float = 0.0
    laps: Optional[int] = None               # cyclic tracks: stop after this many laps
    position_limit: float = 100.0
    rate_limit: float = 50.0

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("integrator tolerances must be positive")
        if not (self.tick > 0 and self.max_time > 0 and self.max_step > 0):
            raise ValueError("tick, max_time and max_step must be positive")
        if self.zoh_period < 0 or self.drift_rate < 0:
            raise ValueError("zoh_period and drift_rate must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SimConfig":
        return cls(**doc)


def battery_drift(config: SimConfig, t: float, params: Optional[dyn.ModelParams] = None) -> float:
    """True rotor-speed ceiling at time ``t``: linear sag, floored at omega_min + 500."""
    p = params or dyn.default_params()
    c0 = p.omega_max if config.ceiling is None else config.ceiling
    return float(max(c0 - config.drift_rate * t, p.omega_min + 500.0))


LOG_COLUMNS = (("t",) + dyn.STATE_NAMES + dyn.CONTROL_NAMES
               + tuple(f"w_cmd{i}" for i in range(1, 5)) + tuple(f"w_obs{i}" for i in range(1, 5))
               + ("wp_index", "tracker_estimate"))


@dataclass
class FlightLog:
    t: np.ndarray
    states: np.ndarray
    u: np.ndarray
    omega_cmd: np.ndarray
    wp_index: np.ndarray
    estimate: np.ndarray
    ceiling: np.ndarray
    events: list = field(default_factory=list)
    lap_times: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""

    @property
    def omega_obs(self) -> np.ndarray:
        return self.states[:, dyn.ROTORS]

    @property
    def diverged(self) -> bool:
        return self.status in ("diverged", "singular")

    def window(self, t0: float, t1: float) -> "FlightLog":
        m = (self.t >= t0 - 1e-12) & (self.t <= t1 + 1e-12)
        return dataclasses.replace(self, t=self.t[m], states=self.states[m], u=self.u[m],
                                   omega_cmd=self.omega_cmd[m], wp_index=self.wp_index[m],
                                   estimate=self.estimate[m], ceiling=self.ceiling[m],
                                   events=[e for e in self.events if t0 <= e["t"] <= t1])

    def lap(self, k: int = 0) -> "FlightLog":
        if len(self.lap_times) < k + 2:
            raise ValueError(f"flight completed {max(len(self.lap_times) - 1, 0)} laps")
        return self.window(self.lap_times[k], self.lap_times[k + 1])

    def to_csv(self, path) -> None:
        rows = np.column_stack([self.t, self.states, self.u, self.omega_cmd, self.omega_obs,
                                self.wp_index, self.estimate])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for r in rows:
                w.writerow([repr(float(v)) for v in r[:-2]] + [str(int(r[-2])), repr(float(r[-1]))])


def energy_cost_of_flight(log: FlightLog) -> float:
    """Trapezoidal integral of ||u||^2 over the log."""
    if len(log.t) == 0:
        raise ValueError("empty flight log")
    return float(np.trapezoid(np.sum(log.u**2, axis=1), log.t)) if len(log.t) > 1 else 0.0


def saturation_time_fraction(log: FlightLog, margin: float = SATURATION_MARGIN) -> float:
    """Share of flight time during which some command is within ``margin`` of 0 or 1."""
    if len(log.t) < 2:
        return 0.0
    sat = np.any((log.u <= margin) | (log.u >= 1.0 - margin), axis=1).astype(float)
    return float(np.trapezoid(sat, log.t) / (log.t[-1] - log.t[0]))


# --- controllers ---------------------------------------------------------------

class NetController:
    """Feeds a PolicyNet with features in the frame of the active waypoint."""

    def __init__(self, net: PolicyNet, track: Track):
        if net.variant is Variant.WP_REL and len(track) < 2:
            raise ValueError("a consecutive-waypoint net needs a track with at least two waypoints")
        self.net = net
        self.track = track
        self._frames = [track.frame(i) for i in range(len(track))]
        self._wp_rel = ([wp_rel_features(track.relative_next(i), net.wp_arity) for i in range(len(track))]
                        if net.variant is Variant.WP_REL else None)

    def features(self, x, active: int, omega_max_input: float) -> np.ndarray:
        origin, yaw = self._frames[active]
        s = to_waypoint_frame(x, origin, yaw)
        wp_rel = self._wp_rel[active] if self._wp_rel is not None else None
        return make_features(s, self.net.variant, omega_max=omega_max_input, wp_rel=wp_rel)[0]

    def throttle(self, t: float, x, active: int, omega_max_input: float) -> np.ndarray:
        return forward(self.net, self.features(x, active, omega_max_input))

    def rpm(self, u, omega_max_input: float) -> np.ndarray:
        top = omega_max_input if self.net.variant is Variant.OMEGA_MAX else self.net.omega_max
        return (top - self.net.omega_min) * u + self.net.omega_min


class ConstantController:
    """Fixed throttle (e.g. hover).  With ``adaptive`` the RPM mapping uses
    the omega_max input like an adaptive net; otherwise the model limits."""

    def __init__(self, u, params: dyn.ModelParams, adaptive: bool = False):
        self.u = np.broadcast_to(np.asarray(u, float), (4,)).copy()
        self.params = params
        self.adaptive = adaptive

    def throttle(self, t, x, active, omega_max_input):
        return self.u

    def rpm(self, u, omega_max_input):
        top = omega_max_input if self.adaptive else self.params.omega_max
        return (top - self.params.omega_min) * u + self.params.omega_min


class ReplayController:
    """Open-loop replay of a collocation solution: node/midpoint controls
    joined by the quadratic interpolant the transcription assumes."""

    def __init__(self, traj):
        self.traj = traj
        self.params = traj.spec.params

    def throttle(self, t, x, active, omega_max_input):
        tr = self.traj
        h = tr.T / tr.n_segments
        k = int(min(max(np.floor(t / h), 0), tr.n_segments - 1))
        s = min(max((t - k * h) / h, 0.0), 1.0)
        u0, uc, u1 = tr.controls[k], tr.mid_controls[k], tr.controls[k + 1]
        return (2 * (s - 0.5) * (s - 1) * u0 - 4 * s * (s - 1) * uc + 2 * s * (s - 0.5) * u1)

    def rpm(self, u, omega_max_input):
        p = self.params
        return (p.omega_max - p.omega_min) * u + p.omega_min


# --- the simulation loop -------------------------------------------------------

class _Divergence(Exception):
    pass


def simulate_closed_loop(x0, net, track: Track, config: Optional[SimConfig] = None,
                         params: Optional[dyn.ModelParams] = None) -> FlightLog:
    """Fly ``net`` (a PolicyNet or a controller object) along ``track`` from ``x0``.

    Always returns a log; divergence and attitude singularities end the run
    with ``status`` set instead of raising.
    """
    cfg = config or SimConfig()
    p = params or dyn.default_params()
    ctrl = NetController(net, track) if isinstance(net, PolicyNet) else net
    n_ticks = int(np.ceil(cfg.max_time / cfg.tick - 1e-9))
    zoh_ticks = int(round(cfg.zoh_period / cfg.tick)) if cfg.zoh_period > 0 else 0
    if zoh_ticks == 0 and cfg.zoh_period > 0:
        zoh_ticks = 1

    tracker = None
    if cfg.use_tracker:
        start = cfg.tracker_initial if cfg.tracker_initial is not None else p.omega_max
        tracker = TrackerState.for_params(p, estimate=start, window=cfg.tracker_window,
                                          p_thresh=cfg.tracker_threshold)

    run = {"active": 0, "held": None,
           "estimate": (tracker.estimate if tracker else
                        cfg.omega_max_input if cfg.omega_max_input is not None else battery_drift(cfg, 0.0, p))}
    tau = p.tau

    def command(t, x):
        if run["held"] is not None:
            return run["held"]
        u = ctrl.throttle(t, x, run["active"], run["estimate"])
        return u, ctrl.rpm(u, run["estimate"])

    def rhs(t, x):
        _, w_cmd = command(t, x)
        omega = x[dyn.ROTORS]
        ceil = battery_drift(cfg, t, p)
        wdot = (w_cmd - omega) / tau
        # hard ceiling on the realized speed: no further spin-up once there,
        # and relaxation back down if the ceiling falls below the rotor speed
        over = omega >= ceil
        if np.any(over):
            wdot = np.where(over, np.minimum(wdot, (ceil - omega) / tau), wdot)
        with np.errstate(all="ignore"):
            return dyn.state_derivative(x, np.zeros(4), p, omega_dot=wdot)

    def make_solver(t, x):
        return RK45(rhs, t, x, cfg.max_time + cfg.tick, rtol=cfg.rtol, atol=cfg.atol,
                    max_step=cfg.max_step)

    rows_t, rows_x, rows_u, rows_w, rows_wp, rows_est, rows_ceil = [], [], [], [], [], [], []
    events: list = []
    lap_times: list = []
    status, message = "timeout", ""

    def record(t, x):
        u, w = command(t, x)
        rows_t.append(t)
        rows_x.append(np.array(x, copy=True))
        rows_u.append(np.array(u, copy=True))
        rows_w.append(np.array(w, copy=True))
        rows_wp.append(-1 if run["active"] is None else run["active"])
        rows_est.append(run["estimate"])
        rows_ceil.append(battery_drift(cfg, t, p))
        return u, w

    def check(x):
        if not np.all(np.isfinite(x)):
            raise _Divergence("non-finite state")
        if np.linalg.norm(x[dyn.P]) > cfg.position_limit:
            raise _Divergence(f"position beyond {cfg.position_limit} m")
        if np.max(np.abs(x[dyn.RATES])) > cfg.rate_limit:
            raise _Divergence(f"body rate beyond {cfg.rate_limit} rad/s")
        if abs(np.cos(x[7])) < dyn.SINGULAR_COS_THETA:
            raise dyn.SingularAttitudeError("pitch at +-90 deg")

    x = np.asarray(x0, float).copy()
    t = 0.0
    if zoh_ticks:
        run["held"] = command(t, x)
    _, w_prev = record(t, x)
    solver = make_solver(t, x)
    k = 0
    try:
        check(x)
        while k < n_ticks:
            while solver.t < (k + 1) * cfg.tick - 1e-12:
                msg = solver.step()
                if solver.status == "failed":
                    raise _Divergence(f"integrator failure: {msg}")
            dense = solver.dense_output()
            restart = False
            while k < n_ticks and (k + 1) * cfg.tick <= solver.t + 1e-12:
                k += 1
                t = k * cfg.tick
                x = dense(t)
                check(x)
                if zoh_ticks and k % zoh_ticks == 0:
                    run["held"] = None
                    run["held"] = command(t, x)
                    restart = True
                if tracker is not None:
                    old = tracker.estimate
                    est = tracker_update(tracker, w_prev, x[dyn.ROTORS], cfg.tick)
                    if est != old:
                        run["estimate"] = est
                        events.append({"t": t, "kind": "tracker_trigger", "estimate": est})
                        restart = True
                prev = run["active"]
                new, switched = waypoint_switching(x, track, prev)
                if switched:
                    events.append({"t": t, "kind": "waypoint_switch", "from": prev,
                                   "to": -1 if new is None else new})
                    if prev == 0:
                        lap_times.append(t)
                    run["active"] = new
                    restart = True
                _, w_prev = record(t, x)
                if run["active"] is None:
                    status, message = "finished", "passed the last waypoint"
                    raise StopIteration
                if cfg.laps is not None and len(lap_times) > cfg.laps:
                    status, message = "finished", f"completed {cfg.laps} lap(s)"
                    raise StopIteration
                if restart:
                    break
            if restart:
                solver = make_solver(t, x)
        status = "ok" if track.rule == "none" else "timeout"
    except StopIteration:
        pass
    except _Divergence as err:
        status, message = "diverged", str(err)
    except dyn.SingularAttitudeError as err:
        status, message = "singular", str(err)
    if status in ("diverged", "singular"):
        events.append({"t": t, "kind": status, "message": message})
        log.info("flight ended early at t=%.3f: %s", t, message)

    return FlightLog(np.asarray(rows_t), np.asarray(rows_x), np.asarray(rows_u), np.asarray(rows_w),
                     np.asarray(rows_wp, dtype=int), np.asarray(rows_est, float), np.asarray(rows_ceil, float),
                     events, lap_times, status, message)


# --- tracking evaluation -------------------------------------------------------

def _reference_track(traj) -> Track:
    spec = traj.spec
    if spec.intermediate is None:
        return Track.single_target(spec.final.p_f, spec.final.psi_f)
    wp = spec.intermediate
    return Track(np.stack([wp.position, spec.final.p_f]), [wp.psi, spec.final.psi_f],
                 rule="consecutive", cyclic=False, geometry="reference pair")


def tracking_error(log: FlightLog, traj) -> float:
    """Mean distance between reference nodes and the simulated position at
    the same fraction of the reference final time."""
    t_ref = traj.times
    if len(log.t) < 2:
        return float("inf")
    if log.t[-1] < t_ref[-1] - 1e-9:
        return float("inf")
    sim = np.stack([np.interp(t_ref, log.t, log.states[:, i]) for i in range(3)], axis=1)
    return float(np.mean(np.linalg.norm(sim - traj.states[:, dyn.P], axis=1)))


def _eval_one(args):
    net, traj, omega_max_input, config = args
    cfg = dataclasses.replace(config, max_time=float(traj.T), omega_max_input=omega_max_input,
                              ceiling=float(traj.spec.params.omega_max), laps=None)
    track = _reference_track(traj)
    track = dataclasses.replace(track, rule="none")
    log_ = simulate_closed_loop(traj.spec.x0, net, track, cfg, params=traj.spec.params)
    return tracking_error(log_, traj), log_.status


def evaluate_tracking(net, references: Sequence, omega_max_input: Optional[float] = None,
                      config: Optional[SimConfig] = None, jobs: int = 1) -> dict:
    """Fly ``net`` from each reference's initial state and compare paths.

    ``omega_max_input`` overrides the ceiling fed to an adaptive net (the
    rotors still saturate at each reference's own ceiling).  Returns
    per-reference errors (inf for runs that diverged) plus summary stats.
    """
    cfg = config or SimConfig()
    args = [(net, tr, omega_max_input if omega_max_input is not None else float(tr.spec.params.omega_max), cfg)
            for tr in references]
    if jobs > 1:
        import multiprocessing as mp
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs, mp_context=mp.get_context("spawn")) as pool:
            results = list(pool.map(_eval_one, args))
    else:
        results = [_eval_one(a) for a in args]
    errors = np.array([r[0] for r in results])
    finite = errors[np.isfinite(errors)]
    return {
        "errors": errors,
        "status": [r[1] for r in results],
        "median": float(np.median(errors)) if len(errors) else float("nan"),
        "mean": float(np.mean(finite)) if len(finite) else float("inf"),
        # sample quantiles, so diverged runs (inf) do not turn them into NaN
        "q25": float(np.quantile(errors, 0.25, method="inverted_cdf")) if len(errors) else float("nan"),
        "q75": float(np.quantile(errors, 0.75, method="inverted_cdf")) if len(errors) else float("nan"),
        "n_diverged": int(np.sum(~np.isfinite(errors))),
        "alignment": "reference node times; simulated path linearly interpolated on the 2 ms log",
    }
