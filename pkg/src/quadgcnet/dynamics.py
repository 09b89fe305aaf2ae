"""Quadcopter equations of motion (19 states, 4 throttle inputs).

State layout (last axis)::

    0:3   p      position, world frame [m] (z points down)
    3:6   v      velocity, world frame [m/s]
    6:9   lam    Euler angles phi, theta, psi [rad]
    9:12  Omega  body rates p, q, r [rad/s]
    12:16 omega  rotor speeds [RPM]
    16:19 M_ext  external moment disturbance [N m]

Every function operates on the last axis and broadcasts over leading
axes.  The array namespace is a parameter (``xp=numpy`` by default) so that
the trajectory optimizer can trace the very same code with ``jax.numpy``.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

N_STATE = 19
N_CONTROL = 4
G = 9.81

P = slice(0, 3)
V = slice(3, 6)
LAM = slice(6, 9)
RATES = slice(9, 12)
ROTORS = slice(12, 16)
MEXT = slice(16, 19)

STATE_NAMES = ("x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi",
               "p", "q", "r", "w1", "w2", "w3", "w4", "mx", "my", "mz")
CONTROL_NAMES = ("u1", "u2", "u3", "u4")

SINGULAR_COS_THETA = 1e-9


class SingularAttitudeError(ValueError):
    """Raised when |cos(theta)| is too small for the Euler-rate map."""


@dataclass(frozen=True)
class ModelParams:
    k_x: float
    k_y: float
    k_omega: float
    k_z: float
    k_h: float
    I_x: float
    I_y: float
    I_z: float
    k_p: float
    k_pv: float
    k_q: float
    k_qv: float
    k_r1: float
    k_r2: float
    k_rr: float
    tau: float
    omega_min: float
    omega_max: float
    g: float = G

    def validate(self) -> "ModelParams":
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.omega_min < self.omega_max:
            raise ValueError("omega_min must be below omega_max")
        if min(self.I_x, self.I_y, self.I_z) <= 0:
            raise ValueError("moments of inertia must be positive")
        return self

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelParams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown model parameter(s): {sorted(unknown)}")
        missing = {f.name for f in dataclasses.fields(cls) if f.name != "g"} - set(doc)
        if missing:
            raise ValueError(f"missing model parameter(s): {sorted(missing)}")
        return cls(**{k: float(v) for k, v in doc.items()}).validate()

    @property
    def hover_omega(self) -> float:
        """Rotor speed at which four equal rotors balance gravity."""
        return float(np.sqrt(self.g / (4.0 * self.k_omega)))

    @property
    def hover_throttle(self) -> float:
        return (self.hover_omega - self.omega_min) / (self.omega_max - self.omega_min)


def load_params(path: str | Path | None = None) -> ModelParams:
    """Load model parameters from JSON; ``None`` gives the shipped Bebop 1 values."""
    if path is None:
        text = resources.files("quadgcnet.data").joinpath("bebop.json").read_text()
    else:
        text = Path(path).read_text()
    return ModelParams.from_dict(json.loads(text))


def default_params() -> ModelParams:
    return load_params(None)


def rotation_body_to_world(lam, xp=np):
    """ZYX Euler rotation matrix R(lambda), shape (..., 3, 3)."""
    phi, theta, psi = lam[..., 0], lam[..., 1], lam[..., 2]
    cf, sf = xp.cos(phi), xp.sin(phi)
    ct, st = xp.cos(theta), xp.sin(theta)
    cp, sp = xp.cos(psi), xp.sin(psi)
    rows = [
        [ct * cp, -cf * sp + sf * st * cp, sf * sp + cf * st * cp],
        [ct * sp, cf * cp + sf * st * sp, -sf * cp + cf * st * sp],
        [-st, sf * ct, cf * ct],
    ]
    return xp.stack([xp.stack(r, axis=-1) for r in rows], axis=-2)


def _check_attitude(theta):
    c = np.abs(np.cos(np.asarray(theta)))
    if np.any(c < SINGULAR_COS_THETA):
        raise SingularAttitudeError(f"gimbal lock: |cos(theta)| = {c.min():.3g}")


def euler_kinematics(lam, xp=np):
    """Q(lambda) mapping body rates to Euler angle rates, shape (..., 3, 3)."""
    phi, theta = lam[..., 0], lam[..., 1]
    if xp is np:
        _check_attitude(theta)
    cf, sf = xp.cos(phi), xp.sin(phi)
    ct, tt = xp.cos(theta), xp.tan(theta)
    one = xp.ones_like(phi)
    zero = xp.zeros_like(phi)
    rows = [
        [one, sf * tt, cf * tt],
        [zero, cf, -sf],
        [zero, sf / ct, cf / ct],
    ]
    return xp.stack([xp.stack(r, axis=-1) for r in rows], axis=-2)


def _matvec(m, v, xp):
    return xp.sum(m * v[..., None, :], axis=-1)


def body_velocity(x, xp=np):
    r = rotation_body_to_world(x[..., LAM], xp)
    return xp.sum(r * x[..., V][..., :, None], axis=-2)  # R^T v


def aero_forces(x, params: ModelParams, xp=np):
    """Specific force in the body frame [m/s^2]."""
    vb = body_velocity(x, xp)
    w = x[..., ROTORS]
    wsum = xp.sum(w, axis=-1)
    w2sum = xp.sum(w * w, axis=-1)
    fx = -params.k_x * vb[..., 0] * wsum
    fy = -params.k_y * vb[..., 1] * wsum
    fz = (-params.k_omega * w2sum - params.k_z * vb[..., 2] * wsum
          - params.k_h * (vb[..., 0] ** 2 + vb[..., 1] ** 2))
    return xp.stack([fx, fy, fz], axis=-1)


def aero_moments(x, omega_dot, params: ModelParams, xp=np):
    """Rotor and aerodynamic moments [N m]; yaw includes the rotor-acceleration term."""
    vb = body_velocity(x, xp)
    w = x[..., ROTORS]
    w1, w2, w3, w4 = w[..., 0], w[..., 1], w[..., 2], w[..., 3]
    d1, d2, d3, d4 = omega_dot[..., 0], omega_dot[..., 1], omega_dot[..., 2], omega_dot[..., 3]
    mx = params.k_p * (w1**2 - w2**2 - w3**2 + w4**2) + params.k_pv * vb[..., 1]
    my = params.k_q * (w1**2 + w2**2 - w3**2 - w4**2) + params.k_qv * vb[..., 0]
    mz = (params.k_r1 * (-w1 + w2 - w3 + w4) + params.k_r2 * (-d1 + d2 - d3 + d4)
          - params.k_rr * x[..., 11])
    return xp.stack([mx, my, mz], axis=-1)


def rotor_dynamics(omega, u, params: ModelParams):
    """First-order lag of the rotor speeds toward the commanded speed [RPM/s]."""
    target = (params.omega_max - params.omega_min) * u + params.omega_min
    return (target - omega) / params.tau


def _inertia(params, xp):
    return xp.asarray([params.I_x, params.I_y, params.I_z])


def rate_dynamics(x, omega_dot, params: ModelParams, xp=np):
    """Body angular acceleration I^-1 (-Omega x I Omega + M + M_ext)."""
    inertia = _inertia(params, xp)
    om = x[..., RATES]
    gyro = xp.cross(om, om * inertia)
    m = aero_moments(x, omega_dot, params, xp)
    return (-gyro + m + x[..., MEXT]) / inertia


def state_derivative(x, u, params: ModelParams, xp=np, omega_dot=None):
    """f(x, u) for the full 19-dimensional state.

    ``omega_dot`` overrides the rotor lag (used by the simulator's actuator
    ceiling); the yaw moment then sees the realized rotor acceleration.
    """
    x = xp.asarray(x)
    u = xp.asarray(u)
    if omega_dot is None:
        omega_dot = rotor_dynamics(x[..., ROTORS], u, params)
    lam = x[..., LAM]
    r = rotation_body_to_world(lam, xp)
    f = aero_forces(x, params, xp)
    v_dot = _matvec(r, f, xp) + xp.asarray([0.0, 0.0, params.g])
    lam_dot = _matvec(euler_kinematics(lam, xp), x[..., RATES], xp)
    rates_dot = rate_dynamics(x, omega_dot, params, xp)
    return xp.concatenate(
        [x[..., V], v_dot, lam_dot, rates_dot, omega_dot, xp.zeros_like(x[..., MEXT])], axis=-1)


def hover_state(params: ModelParams, position=(0.0, 0.0, 0.0), psi: float = 0.0,
                m_ext=(0.0, 0.0, 0.0)) -> np.ndarray:
    x = np.zeros(N_STATE)
    x[P] = position
    x[8] = psi
    x[ROTORS] = params.hover_omega
    x[MEXT] = m_ext
    return x


def state_jacobian(x, u, params: ModelParams):
    """Jacobians (df/dx, df/du) of :func:`state_derivative` by forward-mode AD."""
    from quadgcnet._jax import jnp, jax  # deferred: jax import is slow

    def fun(xx, uu):
        return state_derivative(xx, uu, params, xp=jnp)

    jx, ju = jax.jacfwd(fun, argnums=(0, 1))(jnp.asarray(x, float), jnp.asarray(u, float))
    return np.asarray(jx), np.asarray(ju)
