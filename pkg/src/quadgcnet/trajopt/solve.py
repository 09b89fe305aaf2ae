"""Solving the transcribed OCP and refining solutions by node doubling."""
from __future__ import annotations

import dataclasses
import logging
from typing import Optional

import numpy as np
from scipy.interpolate import make_interp_spline

from quadgcnet import dynamics as dyn
from quadgcnet.trajopt.ipm import InteriorPoint, IPOptions
from quadgcnet.trajopt.problem import (
    InfeasibleSpecError,
    NonConvergenceError,
    OcpSpec,
    Trajectory,
    audit_solution,
)
from quadgcnet.trajopt.transcription import Transcription, default_guess, nearest_node

log = logging.getLogger(__name__)

DEFECT_TOL = 1e-6
BOUNDARY_TOL = 1e-6
STATIONARITY_TOL = 1e-5
MAX_ITER = 500


def _check_consistency(spec: OcpSpec) -> None:
    fc = spec.final
    wp = spec.intermediate
    if wp is not None and wp.threshold <= 0:
        raise InfeasibleSpecError("intermediate threshold must be positive")
    if fc.level_f and fc.Omega_dot_f_zero and fc.v_f is not None and np.any(fc.v_f[:2] != 0):
        raise InfeasibleSpecError("level hover-free final state with horizontal terminal velocity")
    lo, hi = spec.T_bounds
    if fc.v_f is not None and fc.p_f is not None:
        # cannot reach the target in the largest admissible time at the top speed of the model
        if np.linalg.norm(fc.p_f - spec.x0[dyn.P]) > 60.0 * hi:
            raise InfeasibleSpecError("target unreachable within the final-time bound")


def resample(traj: Trajectory, n_segments: int):
    """Quadratic-spline interpolation of states and controls onto a uniform
    grid with ``n_segments`` segments.  Returns (states, controls, mid_controls)."""
    s_old = traj.times / traj.T
    s_mid_old = 0.5 * (s_old[:-1] + s_old[1:])
    s_new = np.linspace(0.0, 1.0, n_segments + 1)
    s_mid_new = 0.5 * (s_new[:-1] + s_new[1:])
    k = 2 if len(s_old) > 2 else 1
    states = make_interp_spline(s_old, traj.states, k=k)(s_new)
    # controls: node and midpoint samples merged into one sequence
    s_u = np.concatenate([s_old, s_mid_old])
    order = np.argsort(s_u)
    u_all = np.concatenate([traj.controls, traj.mid_controls])[order]
    u_spline = make_interp_spline(s_u[order], u_all, k=k)
    controls = np.clip(u_spline(s_new), 0.0, 1.0)
    mid = np.clip(u_spline(s_mid_new), 0.0, 1.0)
    states[0] = traj.spec.x0
    states[:, dyn.MEXT] = traj.spec.M_ext
    return states, controls, mid


def solve_ocp(spec: OcpSpec, initial_guess: Optional[Trajectory] = None,
              options: Optional[IPOptions] = None, raise_on_failure: bool = True,
              continuation: bool = True) -> Trajectory:
    """Solve the OCP by Hermite-Simpson collocation and the interior-point NLP solver.

    A guess on a different grid is resampled with quadratic splines.  When a
    guess is given the solver is warm started (smaller initial barrier
    parameter, bound multipliers on the central path).

    Without a guess, a failed cold start at epsilon < 1 is retried from the
    solution of the same problem at epsilon = 1 (the smooth energy-optimal
    problem converges far more reliably than the bang-bang one).
    """
    _check_consistency(spec)
    traj = _solve_once(spec, initial_guess, options)
    if traj.info.get("failed") and continuation and initial_guess is None and spec.epsilon < 1.0:
        first = traj
        smooth = _solve_once(dataclasses.replace(spec, epsilon=1.0), None, options)
        if not smooth.info.get("failed"):
            target = dataclasses.replace(spec, intermediate=smooth.spec.intermediate)
            traj = _solve_once(target, smooth, options)
            traj.info["strategy"] = "continuation"
            traj.info["iterations_total"] = (first.info["iterations"] + smooth.info["iterations"]
                                             + traj.info["iterations"])
    if traj.info.get("failed"):
        info = traj.info
        msg = (f"OCP solve failed: status={info['status']} iterations={info['iterations']} "
               f"primal={info['primal_inf']:.2e} stationarity={info['stationarity']:.2e} "
               f"max_defect={info['max_defect']:.2e}")
        if raise_on_failure:
            raise NonConvergenceError(msg, {**info, "trajectory": traj})
        log.warning(msg)
    return traj


def _solve_once(spec: OcpSpec, initial_guess: Optional[Trajectory],
                options: Optional[IPOptions]) -> Trajectory:
    warm = initial_guess is not None
    if warm:
        if initial_guess.n_segments == spec.n_segments:
            states, controls, mid = (initial_guess.states.copy(), initial_guess.controls.copy(),
                                     initial_guess.mid_controls.copy())
            states[0] = spec.x0
        else:
            states, controls, mid = resample(initial_guess, spec.n_segments)
        T = initial_guess.T
    else:
        states, controls, mid, T = default_guess(spec)

    if spec.intermediate is not None and spec.intermediate.node is None:
        wp = dataclasses.replace(spec.intermediate, node=nearest_node(states, spec.intermediate.position))
        spec = dataclasses.replace(spec, intermediate=wp)

    nlp = Transcription(spec)
    z0 = nlp.pack(states, controls, mid, T)
    if options is None:
        options = IPOptions(max_iter=MAX_ITER, mu_init=1e-3 if warm else 0.1, warm_start=warm)
    result = InteriorPoint(nlp, options).solve(z0)

    X, U, UC, T = nlp.unpack(result.x)
    info = {
        "iterations": result.iterations,
        "status": result.status,
        "converged": result.converged,
        "primal_inf": result.primal_inf,
        "stationarity": result.dual_inf,
        "complementarity": result.compl,
        "seconds": result.seconds,
        "defect_tol": DEFECT_TOL,
        "objective": result.f,
        "warm_start": warm,
        "strategy": "warm" if warm else "cold",
    }
    traj = Trajectory.from_arrays(spec, nlp.states(result.x), U.copy(), UC.copy(), float(T), info)
    audit = audit_solution(traj)
    info = traj.info
    info["max_defect"] = audit["max_defect"]
    info["max_boundary_residual"] = audit["max_boundary_residual"]
    ok = (result.converged and audit["max_defect"] < DEFECT_TOL
          and audit["max_boundary_residual"] < BOUNDARY_TOL
          and audit["control_bound_violation"] < 1e-9)
    info["failed"] = not ok
    return traj


def refine_node_doubling(traj: Trajectory, target_segments: int,
                         options: Optional[IPOptions] = None) -> Trajectory:
    """Double the node count until ``target_segments``, re-solving each time
    from the spline interpolant of the previous solution."""
    n = traj.n_segments
    ratio = target_segments / n
    k = int(round(np.log2(ratio))) if ratio > 0 else 0
    if k < 1 or n * 2**k != target_segments:
        raise ValueError(f"target_segments must be {n} * 2**k with k >= 1, got {target_segments}")
    current = traj
    for stage in range(1, k + 1):
        spec = dataclasses.replace(current.spec, n_segments=current.n_segments * 2)
        if spec.intermediate is not None and spec.intermediate.node is not None:
            spec = dataclasses.replace(
                spec, intermediate=dataclasses.replace(spec.intermediate,
                                                       node=2 * spec.intermediate.node))
        try:
            current = solve_ocp(spec, initial_guess=current, options=options)
        except NonConvergenceError as err:
            raise NonConvergenceError(
                f"node doubling failed at stage {stage} (N={spec.n_segments}): {err}",
                {**err.diagnostics, "stage": stage}) from err
    return current
