"""Problem and solution containers for the free-final-time quadcopter OCP."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from quadgcnet import dynamics as dyn
from quadgcnet.dynamics import ModelParams


class NonConvergenceError(RuntimeError):
    """The NLP solver stopped without meeting its tolerances."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InfeasibleSpecError(ValueError):
    """Boundary conditions contradict each other."""


@dataclass
class FinalConditions:
    """Terminal set S.

    ``v_f`` pins the terminal velocity; otherwise, with
    ``constrain_velocity_direction``, the velocity must point along the final
    heading with free non-negative magnitude.  ``level_f`` pins roll and pitch
    to zero.
    """

    p_f: np.ndarray = field(default_factory=lambda: np.zeros(3))
    psi_f: Optional[float] = np.deg2rad(45.0)
    constrain_velocity_direction: bool = True
    Omega_f_zero: bool = True
    Omega_dot_f_zero: bool = True
    v_f: Optional[np.ndarray] = None
    level_f: bool = False

    def __post_init__(self):
        self.p_f = np.asarray(self.p_f, dtype=float).reshape(3)
        if self.v_f is not None:
            self.v_f = np.asarray(self.v_f, dtype=float).reshape(3)
        if self.v_f is not None and self.constrain_velocity_direction:
            raise InfeasibleSpecError("give either a fixed terminal velocity or a direction constraint")
        if self.constrain_velocity_direction and self.psi_f is None:
            raise InfeasibleSpecError("velocity direction constraint needs psi_f")

    @property
    def direction(self) -> np.ndarray:
        return np.array([np.cos(self.psi_f), np.sin(self.psi_f), 0.0])

    def to_dict(self) -> dict:
        return {
            "p_f": self.p_f.tolist(),
            "psi_f": None if self.psi_f is None else float(self.psi_f),
            "constrain_velocity_direction": self.constrain_velocity_direction,
            "Omega_f_zero": self.Omega_f_zero,
            "Omega_dot_f_zero": self.Omega_dot_f_zero,
            "v_f": None if self.v_f is None else self.v_f.tolist(),
            "level_f": self.level_f,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FinalConditions":
        return cls(**doc)


@dataclass
class IntermediateWaypoint:
    """Pass-through constraint: squared position error plus squared heading
    error at one node must stay below ``threshold``."""

    position: np.ndarray
    psi: float = np.deg2rad(45.0)
    threshold: float = 0.04
    node: Optional[int] = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        if not self.threshold > 0:
            raise ValueError("intermediate threshold must be positive")

    def residual(self, state: np.ndarray) -> float:
        """Constraint value minus threshold; <= 0 when satisfied."""
        d = state[..., 0:3] - self.position
        return float(np.sum(d * d) + (state[..., 8] - self.psi) ** 2 - self.threshold)

    def to_dict(self) -> dict:
        return {"position": self.position.tolist(), "psi": float(self.psi),
                "threshold": float(self.threshold), "node": self.node}

    @classmethod
    def from_dict(cls, doc: dict) -> "IntermediateWaypoint":
        return cls(**doc)


@dataclass
class OcpSpec:
    epsilon: float
    x0: np.ndarray
    final: FinalConditions
    params: ModelParams
    M_ext: np.ndarray = field(default_factory=lambda: np.zeros(3))
    intermediate: Optional[IntermediateWaypoint] = None
    n_segments: int = 60
    T_bounds: tuple = (0.1, 20.0)

    def __post_init__(self):
        self.x0 = np.array(self.x0, dtype=float).reshape(dyn.N_STATE)
        self.M_ext = np.asarray(self.M_ext, dtype=float).reshape(3)
        self.x0[dyn.MEXT] = self.M_ext
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.n_segments < 10:
            raise ValueError("n_segments must be at least 10")
        if not abs(self.x0[7]) < np.pi / 2:
            raise dyn.SingularAttitudeError("initial pitch outside (-pi/2, pi/2)")
        if not np.all(np.isfinite(self.x0)):
            raise ValueError("x0 must be finite")
        lo, hi = self.T_bounds
        if not 0 < lo < hi:
            raise InfeasibleSpecError("T bounds must satisfy 0 < lo < hi")

    def to_dict(self) -> dict:
        return {
            "epsilon": float(self.epsilon),
            "x0": self.x0.tolist(),
            "final": self.final.to_dict(),
            "params": self.params.to_dict(),
            "M_ext": self.M_ext.tolist(),
            "intermediate": None if self.intermediate is None else self.intermediate.to_dict(),
            "n_segments": int(self.n_segments),
            "T_bounds": list(self.T_bounds),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "OcpSpec":
        doc = dict(doc)
        doc["final"] = FinalConditions.from_dict(doc["final"])
        doc["params"] = ModelParams.from_dict(doc["params"])
        if doc.get("intermediate") is not None:
            doc["intermediate"] = IntermediateWaypoint.from_dict(doc["intermediate"])
        doc["T_bounds"] = tuple(doc.get("T_bounds", (0.1, 20.0)))
        return cls(**doc)


@dataclass
class Trajectory:
    """Discretized solution on a uniform grid of ``n_segments + 1`` nodes.

    ``mid_controls`` holds the free control at each segment midpoint of the
    Hermite-Simpson scheme.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    mid_controls: np.ndarray
    T: float
    cost: float
    spec: OcpSpec
    info: dict = field(default_factory=dict)

    @property
    def n_segments(self) -> int:
        return len(self.times) - 1

    @classmethod
    def from_arrays(cls, spec: OcpSpec, states, controls, mid_controls, T, info=None):
        n = len(states) - 1
        times = np.linspace(0.0, T, n + 1)
        traj = cls(times, np.asarray(states, float), np.asarray(controls, float),
                   np.asarray(mid_controls, float), float(T), 0.0, spec, dict(info or {}))
        traj.cost = evaluate_cost(traj, spec.epsilon)
        return traj

    def midpoint_states(self, params: Optional[ModelParams] = None) -> np.ndarray:
        params = params or self.spec.params
        h = np.diff(self.times)[:, None]
        f = dyn.state_derivative(self.states, self.controls, params)
        return 0.5 * (self.states[:-1] + self.states[1:]) + h / 8.0 * (f[:-1] - f[1:])


def evaluate_cost(traj: Trajectory, epsilon: float) -> float:
    """(1 - eps) T + eps * Simpson quadrature of ||u||^2 with the midpoint controls."""
    h = np.diff(traj.times)
    un = np.sum(traj.controls**2, axis=1)
    uc = np.sum(traj.mid_controls**2, axis=1)
    energy = float(np.sum(h / 6.0 * (un[:-1] + 4.0 * uc + un[1:])))
    return (1.0 - epsilon) * traj.T + epsilon * energy


def hermite_simpson_defects(traj: Trajectory, params: Optional[ModelParams] = None,
                            derivative=None) -> np.ndarray:
    """Compressed Hermite-Simpson defects, one 19-vector per segment.

    ``derivative(x, u)`` replaces the quadcopter dynamics (used to test the
    quadrature on synthetic systems).
    """
    params = params or traj.spec.params
    if derivative is None:
        def derivative(x, u):
            return dyn.state_derivative(x, u, params)
    x = traj.states
    h = np.diff(traj.times)[:, None]
    f = derivative(x, traj.controls)
    xc = 0.5 * (x[:-1] + x[1:]) + h / 8.0 * (f[:-1] - f[1:])
    fc = derivative(xc, traj.mid_controls)
    return x[1:] - x[:-1] - h / 6.0 * (f[:-1] + 4.0 * fc + f[1:])


def terminal_residuals(traj: Trajectory) -> dict:
    """Signed residuals of every active terminal/initial condition."""
    spec = traj.spec
    fc = spec.final
    xf = traj.states[-1]
    out = {"x0": traj.states[0] - spec.x0, "p_f": xf[dyn.P] - fc.p_f}
    if fc.v_f is not None:
        out["v_f"] = xf[dyn.V] - fc.v_f
    elif fc.constrain_velocity_direction:
        d = fc.direction
        along = float(xf[dyn.V] @ d)
        out["v_dir"] = np.append(xf[dyn.V] - along * d, min(along, 0.0))
    if fc.psi_f is not None:
        out["psi_f"] = np.array([xf[8] - fc.psi_f])
    if fc.level_f:
        out["level_f"] = xf[6:8].copy()
    if fc.Omega_f_zero:
        out["Omega_f"] = xf[dyn.RATES].copy()
    if fc.Omega_dot_f_zero:
        wdot = dyn.rotor_dynamics(xf[dyn.ROTORS], traj.controls[-1], spec.params)
        out["Omega_dot_f"] = dyn.rate_dynamics(xf, wdot, spec.params)
    return out


def saturation_fraction(controls: np.ndarray, margin: float = 0.01) -> float:
    """Share of nodes where at least one control is within ``margin`` of 0 or 1."""
    u = np.asarray(controls)
    sat = np.any((u <= margin) | (u >= 1.0 - margin), axis=-1)
    return float(np.mean(sat))


def switching_events(controls: np.ndarray, times: np.ndarray, low: float = 0.05, high: float = 0.95):
    """Transitions of the rotor-averaged command between the lower band
    (<= ``low``) and the upper band (>= ``high``).

    Returns a list of (time, "min->max" | "max->min"); the time is where the
    average crosses 0.5, linearly interpolated between nodes.
    """
    u = np.mean(np.asarray(controls, float), axis=-1)
    t = np.asarray(times, float)
    events = []
    state = None
    last_idx = None
    for k, v in enumerate(u):
        band = "min" if v <= low else "max" if v >= high else None
        if band is None:
            continue
        if state is not None and band != state:
            i0 = last_idx
            # interpolate the 0.5 crossing between the last node of the old band and here
            seg = u[i0:k + 1] - 0.5
            j = int(np.flatnonzero(np.sign(seg[:-1]) != np.sign(seg[1:]))[0]) + i0
            frac = (0.5 - u[j]) / (u[j + 1] - u[j])
            events.append((float(t[j] + frac * (t[j + 1] - t[j])), f"{state}->{band}"))
        state = band
        last_idx = k
    return events


def braking_onset_time(traj: Trajectory) -> float:
    """Time of the first min->max switch of the command (NaN if none)."""
    for t, kind in switching_events(traj.controls, traj.times):
        if kind == "min->max":
            return t
    return float("nan")


def landing_spec(height: float = 5.0, epsilon: float = 0.0, params: Optional[ModelParams] = None,
                 n_segments: int = 60) -> "OcpSpec":
    """Vertical landing from hover ``height`` metres above the target to rest,
    level, with zero body rates.  Symmetric in all four rotors."""
    params = params or dyn.default_params()
    x0 = dyn.hover_state(params, position=(0.0, 0.0, -float(height)))
    final = FinalConditions(p_f=np.zeros(3), psi_f=0.0, constrain_velocity_direction=False,
                            Omega_f_zero=True, Omega_dot_f_zero=False, v_f=np.zeros(3), level_f=True)
    return OcpSpec(epsilon, x0, final, params, n_segments=n_segments)


def audit_solution(traj: Trajectory) -> dict:
    """Feasibility report of a (solved or hand-built) trajectory."""
    try:
        defects = hermite_simpson_defects(traj)
        max_defect = float(np.max(np.abs(defects)))
    except dyn.SingularAttitudeError:
        max_defect = float("inf")
    res = terminal_residuals(traj)
    boundary = {k: float(np.max(np.abs(v))) for k, v in res.items()}
    u = np.concatenate([traj.controls, traj.mid_controls])
    bound_violation = float(max(0.0, -u.min(), u.max() - 1.0))
    wp = traj.spec.intermediate
    inter = None
    if wp is not None and wp.node is not None:
        inter = max(0.0, wp.residual(traj.states[wp.node]))
    return {
        "max_defect": max_defect,
        "boundary_residuals": boundary,
        "max_boundary_residual": max(boundary.values()),
        "control_bound_violation": bound_violation,
        "intermediate_residual": inter,
        "saturation_fraction": saturation_fraction(traj.controls),
        "T": traj.T,
        "cost": traj.cost,
    }
