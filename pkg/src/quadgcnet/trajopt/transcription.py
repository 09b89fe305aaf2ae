"""Hermite-Simpson transcription of the OCP into a sparse NLP.

Decision vector (all blocks flattened row-major)::

    X   (N, 16)  dynamic states at nodes 1..N, rotor speeds in kRPM
    U   (N+1, 4) node controls
    UC  (N, 4)   midpoint controls
    T   (1,)     final time
    S   (ns,)    slacks: terminal speed along the final heading, and the
                 intermediate-waypoint margin

Node 0 is fixed to x0 and not a variable; M_ext is a constant parameter.
Constraint rows are the per-segment defects (in scaled state units)
followed by the terminal conditions and the optional waypoint constraint.
First and second derivatives come from jax (forward-over-reverse) on the
same dynamics code the simulator uses.
"""
from __future__ import annotations

import dataclasses
from functools import lru_cache

import numpy as np

from quadgcnet import dynamics as dyn
from quadgcnet._jax import jax, jnp
from quadgcnet.trajopt.problem import OcpSpec

NX = 16  # dynamic part of the state (M_ext excluded)
NU = 4
STATE_SCALE = np.array([1.0] * 12 + [1000.0] * 4)
PARAM_NAMES = tuple(f.name for f in dataclasses.fields(dyn.ModelParams))
PITCH_LIMIT = 1.5  # rad, keeps the Euler-rate map away from gimbal lock
OMEGA_DOT_SCALE = 0.01
T_STEP_LIMIT = 0.3  # largest relative change of the final time per iteration


def params_vector(params: dyn.ModelParams) -> np.ndarray:
    return np.array([getattr(params, k) for k in PARAM_NAMES], dtype=float)


def _params_from(pvec):
    return dyn.ModelParams(*[pvec[i] for i in range(len(PARAM_NAMES))])


def _full_state(xs, mext):
    """Scaled 16-vector -> physical 19-vector."""
    return jnp.concatenate([xs * STATE_SCALE, mext])


def _f_scaled(xs, u, pvec, mext):
    p = _params_from(pvec)
    f = dyn.state_derivative(_full_state(xs, mext), u, p, xp=jnp)
    return f[:NX] / STATE_SCALE


def _segment_defect(a, pvec, mext, n_seg):
    """Defect of one segment from its packed local variables (45,)."""
    xk, uk, uc = a[0:16], a[16:20], a[20:24]
    xk1, uk1, t_final = a[24:40], a[40:44], a[44]
    h = t_final / n_seg
    fk = _f_scaled(xk, uk, pvec, mext)
    fk1 = _f_scaled(xk1, uk1, pvec, mext)
    xc = 0.5 * (xk + xk1) + h / 8.0 * (fk - fk1)
    fc = _f_scaled(xc, uc, pvec, mext)
    return xk1 - xk - h / 6.0 * (fk + 4.0 * fc + fk1)


@dataclasses.dataclass(frozen=True)
class _TerminalLayout:
    fixed_velocity: bool
    velocity_direction: bool
    heading: bool
    level: bool
    rates: bool
    rate_derivative: bool

    @property
    def size(self) -> int:
        return (3 + (3 if self.fixed_velocity or self.velocity_direction else 0)
                + int(self.heading) + 2 * int(self.level) + 3 * int(self.rates)
                + 3 * int(self.rate_derivative))


def _terminal(b, data, pvec, mext, layout: _TerminalLayout):
    """Terminal residuals from b = [x_N (16), u_N (4), speed slack (1)].

    ``data`` = [p_f (3), v_f (3), psi_f, dir (3)].
    """
    xs, u, speed = b[0:16], b[16:20], b[20]
    x = _full_state(xs, mext)
    out = [x[0:3] - data[0:3]]
    if layout.fixed_velocity:
        out.append(x[3:6] - data[3:6])
    elif layout.velocity_direction:
        out.append(x[3:6] - speed * data[7:10])
    if layout.heading:
        out.append(x[8:9] - data[6])
    if layout.level:
        out.append(x[6:8])
    if layout.rates:
        out.append(x[9:12])
    if layout.rate_derivative:
        p = _params_from(pvec)
        wdot = dyn.rotor_dynamics(x[12:16], u, p)
        out.append(OMEGA_DOT_SCALE * dyn.rate_dynamics(x, wdot, p, xp=jnp))
    return jnp.concatenate(out)


def _waypoint(xs, margin, wp):
    """(x-wx)^2 + (y-wy)^2 + (z-wz)^2 + (psi-wpsi)^2 + margin - threshold."""
    d = xs[0:3] - wp[0:3]
    return jnp.sum(d * d) + (xs[8] - wp[3]) ** 2 + margin - wp[4]


@lru_cache(maxsize=None)
def _compiled(layout: _TerminalLayout, n_seg: int):
    """jit-compiled kernels for one constraint layout and grid size."""
    seg = lambda a, pvec, mext: _segment_defect(a, pvec, mext, n_seg)  # noqa: E731
    seg_val = jax.jit(jax.vmap(seg, in_axes=(0, None, None)))
    seg_jac = jax.jit(jax.vmap(jax.jacfwd(seg), in_axes=(0, None, None)))

    def seg_lag(a, lam, pvec, mext):
        return jnp.dot(lam, seg(a, pvec, mext))

    seg_hess = jax.jit(jax.vmap(jax.hessian(seg_lag), in_axes=(0, 0, None, None)))

    term = lambda b, data, pvec, mext: _terminal(b, data, pvec, mext, layout)  # noqa: E731
    term_val = jax.jit(term)
    term_jac = jax.jit(jax.jacfwd(term))
    term_hess = jax.jit(jax.hessian(lambda b, lam, data, pvec, mext: jnp.dot(lam, term(b, data, pvec, mext))))

    def wp_scalar(v, wp):
        return _waypoint(v[:16], v[16], wp)

    wp_val = jax.jit(wp_scalar)
    wp_grad = jax.jit(jax.grad(wp_scalar))
    return dict(seg_val=seg_val, seg_jac=seg_jac, seg_hess=seg_hess, term_val=term_val,
                term_jac=term_jac, term_hess=term_hess, wp_val=wp_val, wp_grad=wp_grad)


def _lower_pairs(index: np.ndarray):
    """Lower-triangle (row >= col) entries of a dense block addressed by ``index``.

    Returns global rows/cols and the flat positions within the local block.
    Local indices mapped to -1 (fixed quantities) are dropped.
    """
    k = len(index)
    li, lj = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    gi, gj = index[li], index[lj]
    keep = (gi >= 0) & (gj >= 0) & (gi >= gj)
    return gi[keep], gj[keep], (li * k + lj)[keep]


class Transcription:
    """NLP view of an :class:`OcpSpec` for :class:`~quadgcnet.trajopt.ipm.InteriorPoint`."""

    def __init__(self, spec: OcpSpec):
        self.spec = spec
        n_seg = spec.n_segments
        self.N = n_seg
        fc = spec.final
        self.layout = _TerminalLayout(
            fixed_velocity=fc.v_f is not None,
            velocity_direction=fc.v_f is None and fc.constrain_velocity_direction,
            heading=fc.psi_f is not None,
            level=fc.level_f,
            rates=fc.Omega_f_zero,
            rate_derivative=fc.Omega_dot_f_zero,
        )
        self.kern = _compiled(self.layout, n_seg)
        self.pvec = jnp.asarray(params_vector(spec.params))
        self.mext = jnp.asarray(spec.M_ext)
        self.x0s = spec.x0[:NX] / STATE_SCALE
        psi_f = 0.0 if fc.psi_f is None else fc.psi_f
        v_f = np.zeros(3) if fc.v_f is None else fc.v_f
        direction = np.array([np.cos(psi_f), np.sin(psi_f), 0.0])
        self.term_data = jnp.asarray(np.concatenate([fc.p_f, v_f, [psi_f], direction]))

        # variable layout
        self.iX = 0
        self.iU = self.iX + n_seg * NX
        self.iUC = self.iU + (n_seg + 1) * NU
        self.iT = self.iUC + n_seg * NU
        self.iS = self.iT + 1
        self.has_speed = self.layout.velocity_direction
        self.wp = spec.intermediate
        self.n_slack = int(self.has_speed) + int(self.wp is not None)
        self.i_speed = self.iS if self.has_speed else -1
        self.i_margin = self.iS + int(self.has_speed) if self.wp is not None else -1
        self.n = self.iS + self.n_slack
        if self.wp is not None:
            if self.wp.node is None or not 1 <= self.wp.node <= n_seg:
                raise ValueError("intermediate waypoint needs a node index in [1, N]")
            self.wp_data = jnp.asarray(np.concatenate(
                [self.wp.position, [self.wp.psi, self.wp.threshold]]))

        # constraint layout
        self.n_def = n_seg * NX
        self.n_term = self.layout.size
        self.m = self.n_def + self.n_term + int(self.wp is not None)

        self._build_bounds()
        self._build_structure()
        self.kkt_order = self._stage_order()
        self.relative_step_limit = {self.iT: T_STEP_LIMIT}

    # --- layout helpers -------------------------------------------------------
    def x_index(self, k: int) -> np.ndarray:
        """Variable indices of node k's dynamic state (-1 for the fixed node 0)."""
        if k == 0:
            return -np.ones(NX, dtype=np.int64)
        return self.iX + (k - 1) * NX + np.arange(NX)

    def u_index(self, k: int) -> np.ndarray:
        return self.iU + k * NU + np.arange(NU)

    def uc_index(self, k: int) -> np.ndarray:
        return self.iUC + k * NU + np.arange(NU)

    def _stage_order(self) -> np.ndarray:
        """Time-stage sort key of every variable and constraint (global ones last)."""
        N = self.N
        key = np.full(self.n + self.m, 4.0 * N + 10.0)
        for k in range(N + 1):
            if k > 0:
                key[self.x_index(k)] = 2 * k
            key[self.u_index(k)] = 2 * k
        for k in range(N):
            key[self.uc_index(k)] = 2 * k + 1
        key[self.n + np.arange(self.n_def)] = 2 * (np.arange(self.n_def) // NX) + 1.5
        key[self.n + self.n_def:self.n + self.n_def + self.n_term] = 2 * N + 0.5
        if self.wp is not None:
            key[self.n + self.m - 1] = 2 * self.wp.node + 0.25
        return key

    def _build_bounds(self):
        n = self.n
        xl = np.full(n, -np.inf)
        xu = np.full(n, np.inf)
        xl[self.iU:self.iT] = 0.0
        xu[self.iU:self.iT] = 1.0
        xl[self.iT], xu[self.iT] = self.spec.T_bounds
        pitch = self.iX + np.arange(self.N) * NX + 7
        xl[pitch], xu[pitch] = -PITCH_LIMIT, PITCH_LIMIT
        if self.has_speed:
            xl[self.i_speed] = 0.0
        if self.wp is not None:
            xl[self.i_margin] = 0.0
        self.xl, self.xu = xl, xu

    def _build_structure(self):
        N = self.N
        seg_idx = np.empty((N, 45), dtype=np.int64)
        for k in range(N):
            seg_idx[k] = np.concatenate([self.x_index(k), self.u_index(k), self.uc_index(k),
                                         self.x_index(k + 1), self.u_index(k + 1), [self.iT]])
        self.seg_idx = seg_idx
        # defect jacobian
        rows = (np.arange(N)[:, None, None] * NX + np.arange(NX)[None, :, None]) * np.ones((1, 1, 45), int)
        cols = np.broadcast_to(seg_idx[:, None, :], (N, NX, 45))
        keep = cols >= 0
        self.seg_jkeep = keep.reshape(-1)
        jr = [rows[keep]]
        jc = [cols[keep]]
        # terminal jacobian: dense over [x_N, u_N, speed]
        term_idx = np.concatenate([self.x_index(N), self.u_index(N), [self.i_speed]])
        self.term_idx = term_idx
        tr = self.n_def + np.repeat(np.arange(self.n_term), len(term_idx))
        tc = np.tile(term_idx, self.n_term)
        tkeep = tc >= 0
        self.term_jkeep = tkeep
        jr.append(tr[tkeep])
        jc.append(tc[tkeep])
        if self.wp is not None:
            wp_idx = np.concatenate([self.x_index(self.wp.node), [self.i_margin]])
            self.wp_idx = wp_idx
            jr.append(np.full(len(wp_idx), self.m - 1))
            jc.append(wp_idx)
        self.jac_structure = (np.concatenate(jr), np.concatenate(jc))

        # hessian (lower triangle); duplicates are summed by the KKT assembly
        hr, hc = [], []
        self.seg_hpos = []
        for k in range(N):
            gi, gj, pos = _lower_pairs(seg_idx[k])
            hr.append(gi)
            hc.append(gj)
            self.seg_hpos.append(pos + k * 45 * 45)
        self.seg_hpos = np.concatenate(self.seg_hpos)
        gi, gj, pos = _lower_pairs(term_idx)
        self.term_hpos = pos
        hr.append(gi)
        hc.append(gj)
        if self.wp is not None:
            # constant hessian: 2 on x, y, z, psi diagonals
            diag = self.x_index(self.wp.node)[[0, 1, 2, 8]]
            hr.append(diag)
            hc.append(diag)
        # objective: u_k^2 diagonal terms and u-T cross terms
        uvars = np.arange(self.iU, self.iT)
        hr += [uvars, np.full(len(uvars), self.iT)]
        hc += [uvars, uvars]
        # hc/hr for cross terms must satisfy row >= col: T index is the larger
        self.hess_structure = (np.concatenate(hr), np.concatenate(hc))
        # weights of each control in the Simpson energy sum
        w = np.full(N + 1, 2.0)
        w[0] = w[-1] = 1.0
        self.u_weight = np.concatenate([np.repeat(w, NU), np.full(N * NU, 4.0)])

    # --- unpacking ------------------------------------------------------------
    def unpack(self, z):
        N = self.N
        X = z[self.iX:self.iU].reshape(N, NX)
        U = z[self.iU:self.iUC].reshape(N + 1, NU)
        UC = z[self.iUC:self.iT].reshape(N, NU)
        return X, U, UC, z[self.iT]

    def pack(self, states, controls, mid_controls, T, speed=None, margin=None):
        z = np.zeros(self.n)
        z[self.iX:self.iU] = (states[1:, :NX] / STATE_SCALE).ravel()
        z[self.iU:self.iUC] = np.asarray(controls).ravel()
        z[self.iUC:self.iT] = np.asarray(mid_controls).ravel()
        z[self.iT] = T
        if self.has_speed:
            if speed is None:
                speed = max(0.0, float(states[-1, 3:6] @ np.asarray(self.term_data[7:10])))
            z[self.i_speed] = speed
        if self.wp is not None:
            if margin is None:
                margin = max(0.0, -self.wp.residual(states[self.wp.node]))
            z[self.i_margin] = margin
        return z

    def states(self, z) -> np.ndarray:
        X = z[self.iX:self.iU].reshape(self.N, NX) * STATE_SCALE
        out = np.empty((self.N + 1, dyn.N_STATE))
        out[0] = self.spec.x0
        out[1:, :NX] = X
        out[1:, NX:] = self.spec.M_ext
        return out

    def _segments(self, z):
        X, U, UC, T = self.unpack(z)
        Xf = np.vstack([self.x0s, X])
        a = np.concatenate([Xf[:-1], U[:-1], UC, Xf[1:], U[1:], np.full((self.N, 1), T)], axis=1)
        return a

    def _terminal_vars(self, z):
        X, U, _, _ = self.unpack(z)
        speed = z[self.i_speed] if self.has_speed else 0.0
        return np.concatenate([X[-1], U[-1], [speed]])

    def _wp_vars(self, z):
        return np.concatenate([z[self.x_index(self.wp.node)], [z[self.i_margin]]])

    # --- NLP callbacks ----------------------------------------------------------
    def objective(self, z) -> float:
        eps = self.spec.epsilon
        T = z[self.iT]
        u = z[self.iU:self.iT]
        energy = T / (6.0 * self.N) * float(np.sum(self.u_weight * u * u))
        return (1.0 - eps) * T + eps * energy

    def gradient(self, z) -> np.ndarray:
        eps = self.spec.epsilon
        T = z[self.iT]
        u = z[self.iU:self.iT]
        g = np.zeros(self.n)
        g[self.iU:self.iT] = eps * T / (6.0 * self.N) * 2.0 * self.u_weight * u
        g[self.iT] = (1.0 - eps) + eps / (6.0 * self.N) * float(np.sum(self.u_weight * u * u))
        return g

    def constraints(self, z) -> np.ndarray:
        a = self._segments(z)
        c = [np.asarray(self.kern["seg_val"](a, self.pvec, self.mext)).ravel()]
        c.append(np.asarray(self.kern["term_val"](self._terminal_vars(z), self.term_data,
                                                  self.pvec, self.mext)))
        if self.wp is not None:
            c.append([float(self.kern["wp_val"](self._wp_vars(z), self.wp_data))])
        return np.concatenate(c)

    def jacobian(self, z) -> np.ndarray:
        a = self._segments(z)
        js = np.asarray(self.kern["seg_jac"](a, self.pvec, self.mext)).reshape(-1)[self.seg_jkeep]
        jt = np.asarray(self.kern["term_jac"](self._terminal_vars(z), self.term_data,
                                              self.pvec, self.mext)).reshape(-1)[self.term_jkeep]
        parts = [js, jt]
        if self.wp is not None:
            parts.append(np.asarray(self.kern["wp_grad"](self._wp_vars(z), self.wp_data)))
        return np.concatenate(parts)

    def hessian(self, z, lam, obj_factor=1.0) -> np.ndarray:
        a = self._segments(z)
        lam_seg = lam[:self.n_def].reshape(self.N, NX)
        hs = np.asarray(self.kern["seg_hess"](a, lam_seg, self.pvec, self.mext)).reshape(-1)
        lam_t = lam[self.n_def:self.n_def + self.n_term]
        ht = np.asarray(self.kern["term_hess"](self._terminal_vars(z), lam_t, self.term_data,
                                               self.pvec, self.mext)).reshape(-1)
        parts = [hs[self.seg_hpos], ht[self.term_hpos]]
        if self.wp is not None:
            parts.append(np.full(4, 2.0 * lam[-1]))
        eps = self.spec.epsilon
        T = z[self.iT]
        u = z[self.iU:self.iT]
        c = eps / (6.0 * self.N) * 2.0 * self.u_weight
        parts += [obj_factor * c * T, obj_factor * c * u]
        return np.concatenate(parts)


def default_guess(spec: OcpSpec):
    """Straight-line guess: positions/velocities interpolated (through the
    intermediate waypoint if any), level attitude at the mean heading, hover
    rotors and throttle, T from a 3 m/s average speed."""
    N = spec.n_segments
    x0 = spec.x0
    fc = spec.final
    p_path = [x0[0:3]]
    if spec.intermediate is not None:
        p_path.append(spec.intermediate.position)
    p_path.append(fc.p_f)
    p_path = np.array(p_path)
    legs = np.linalg.norm(np.diff(p_path, axis=0), axis=1)
    dist = float(np.sum(legs))
    T = float(np.clip(dist / 3.0, 0.5, 5.0))
    s = np.linspace(0.0, 1.0, N + 1)
    cum = np.concatenate([[0.0], np.cumsum(legs)]) / max(dist, 1e-9)
    pos = np.stack([np.interp(s, cum, p_path[:, i]) for i in range(3)], axis=1)
    if fc.v_f is not None:
        v_end = fc.v_f
    elif fc.constrain_velocity_direction:
        v_end = (dist / T) * fc.direction
    else:
        v_end = (fc.p_f - p_path[-2]) / T
    vel = (1 - s)[:, None] * x0[3:6] + s[:, None] * v_end
    psi_end = fc.psi_f if fc.psi_f is not None else x0[8]
    states = np.zeros((N + 1, dyn.N_STATE))
    states[:, 0:3] = pos
    states[:, 3:6] = vel
    states[:, 8] = 0.5 * (x0[8] + psi_end)
    states[:, 12:16] = spec.params.hover_omega
    states[:, 16:19] = spec.M_ext
    states[0] = x0
    u = np.full((N + 1, NU), spec.params.hover_throttle)
    uc = np.full((N, NU), spec.params.hover_throttle)
    return states, u, uc, T


def nearest_node(states, point) -> int:
    """Index (>= 1) of the node closest to ``point``."""
    d = np.linalg.norm(states[1:, 0:3] - point, axis=1)
    return int(np.argmin(d)) + 1
