"""Primal-dual interior-point NLP solver.

Solves::

    min f(x)  s.t.  c(x) = 0,  xl <= x <= xu

with exact second derivatives.  The barrier subproblems are solved by
Newton steps on the primal-dual equations, with

* a sparse LU factorization of the symmetric KKT matrix,
* curvature-test regularization of the Hessian block (no inertia count is
  available from LU),
* a filter line search on (constraint violation, barrier function) with
  one second-order correction per iteration and a plain feasibility step
  as fallback when the step size collapses,
* the monotone barrier-parameter update and fraction-to-boundary rule.

The problem object supplies ``n``, ``m``, ``xl``, ``xu``, ``jac_structure``
and ``hess_structure`` (lower triangle, row >= col) and the callbacks
``objective``, ``gradient``, ``constraints``, ``jacobian`` and ``hessian``.
An optional ``kkt_order`` attribute (one sort key per primal variable and
per constraint) gives the elimination order of the KKT matrix; for
discretized trajectories sorting by time stage makes the matrix banded.
Entries sharing the largest key form a dense border (e.g. the free final
time) and are eliminated by a Schur complement after a banded LU.
An optional ``relative_step_limit`` mapping {variable index: fraction}
caps the per-iteration change of selected variables relative to their
magnitude (used for the final time, whose full Newton step can jump to
a useless short horizon).
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

log = logging.getLogger(__name__)


@dataclass
class IPOptions:
    max_iter: int = 500
    constr_tol: float = 1e-9
    dual_tol: float = 1e-5
    compl_tol: float = 1e-7
    mu_init: float = 0.1
    mu_min: float = 1e-10
    kappa_eps: float = 10.0
    kappa_mu: float = 0.2
    theta_mu: float = 1.5
    tau_min: float = 0.99
    bound_push: float = 1e-2
    bound_frac: float = 1e-2
    s_max: float = 100.0
    kappa_sigma: float = 1e10
    gamma_theta: float = 1e-5
    gamma_phi: float = 1e-8
    gamma_alpha: float = 0.05
    delta: float = 1.0
    s_theta: float = 1.1
    s_phi: float = 2.3
    eta_phi: float = 1e-8
    max_restoration: int = 25
    delta_w_init: float = 1e-4
    delta_w_max: float = 1e20
    delta_c: float = 1e-9
    curvature_tol: float = 1e-10
    warm_start: bool = False
    verbose: bool = False


@dataclass
class IPResult:
    x: np.ndarray
    lam: np.ndarray
    zl: np.ndarray
    zu: np.ndarray
    f: float
    iterations: int
    converged: bool
    status: str
    primal_inf: float
    dual_inf: float
    compl: float
    mu: float
    seconds: float
    history: list = field(default_factory=list)


class _KKT:
    """Fixed-sparsity assembly of [[W + D, J^T], [J, -dc I]] in CSC form."""

    def __init__(self, n, m, jrows, jcols, hrows, hcols):
        self.n, self.m = n, m
        self.nh = len(hrows)
        self.nj = len(jrows)
        off = hrows != hcols
        rows = np.concatenate([hrows, hcols[off], np.arange(n), n + jrows, jcols, n + np.arange(m)])
        cols = np.concatenate([hcols, hrows[off], np.arange(n), jcols, n + jrows, n + np.arange(m)])
        self.h_off = off
        dim = n + m
        keys = cols.astype(np.int64) * dim + rows
        ukeys, inverse = np.unique(keys, return_inverse=True)
        self.pos = inverse
        self.nnz = len(ukeys)
        # np.unique sorts by column then row, which is CSC order.
        self.indices = (ukeys % dim).astype(np.int32)
        colcount = np.bincount((ukeys // dim).astype(np.int64), minlength=dim)
        self.indptr = np.concatenate([[0], np.cumsum(colcount)]).astype(np.int32)
        self.dim = dim

    def permute(self, perm):
        """Reorder rows and columns so that matrix() returns K[perm][:, perm]."""
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        rows = inv[self.indices]
        cols = inv[np.repeat(np.arange(self.dim), np.diff(self.indptr))]
        keys = cols.astype(np.int64) * self.dim + rows
        order = np.argsort(keys)
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        self.pos = rank[self.pos]
        self.indices = rows[order].astype(np.int32)
        colcount = np.bincount(cols[order], minlength=self.dim)
        self.indptr = np.concatenate([[0], np.cumsum(colcount)]).astype(np.int32)

    def values(self, hvals, diag, jvals, dc):
        """Nonzero values in CSC order."""
        vals = np.concatenate([hvals, hvals[self.h_off], diag, jvals, jvals,
                               np.full(self.m, -dc)])
        return np.bincount(self.pos, weights=vals, minlength=self.nnz)

    def matrix(self, hvals, diag, jvals, dc):
        data = self.values(hvals, diag, jvals, dc)
        return sp.csc_matrix((data, self.indices, self.indptr), shape=(self.dim, self.dim))

    def coordinates(self):
        cols = np.repeat(np.arange(self.dim), np.diff(self.indptr))
        return self.indices.astype(np.int64), cols


class _BorderedBandLU:
    """LU of a permuted KKT matrix [[A, B], [E, C]] whose leading block A is
    banded and whose border (B, E, C) is a handful of dense rows/columns.

    A is factored by LAPACK's banded LU with partial pivoting; the border is
    eliminated through its (small, dense) Schur complement.
    """

    def __init__(self, dim, n_border, rows, cols):
        self.dim = dim
        nb = dim - n_border
        self.nb = nb
        band = (rows < nb) & (cols < nb)
        self.kl = int(np.max(rows[band] - cols[band], initial=0))
        self.ku = int(np.max(cols[band] - rows[band], initial=0))
        ld = 2 * self.kl + self.ku + 1
        self.shape = (ld, nb)
        self.band_sel = np.flatnonzero(band)
        self.band_flat = (self.kl + self.ku + rows[band] - cols[band]) * nb + cols[band]
        self.b_sel = np.flatnonzero((rows < nb) & (cols >= nb))
        self.b_idx = (rows[self.b_sel], cols[self.b_sel] - nb)
        self.e_sel = np.flatnonzero((rows >= nb) & (cols < nb))
        self.e_idx = (rows[self.e_sel] - nb, cols[self.e_sel])
        self.c_sel = np.flatnonzero((rows >= nb) & (cols >= nb))
        self.c_idx = (rows[self.c_sel] - nb, cols[self.c_sel] - nb)

    def factor(self, data):
        nb, g = self.nb, self.dim - self.nb
        ab = np.bincount(self.band_flat, weights=data[self.band_sel],
                         minlength=self.shape[0] * nb).reshape(self.shape)
        lub, piv, info = lapack.dgbtrf(ab, self.kl, self.ku)
        if info != 0:
            raise RuntimeError("singular banded block")
        self.lub, self.piv = lub, piv
        B = np.zeros((nb, g))
        np.add.at(B, self.b_idx, data[self.b_sel])
        E = np.zeros((g, nb))
        np.add.at(E, self.e_idx, data[self.e_sel])
        C = np.zeros((g, g))
        np.add.at(C, self.c_idx, data[self.c_sel])
        self.E = E
        if g:
            X, _ = lapack.dgbtrs(lub, self.kl, self.ku, B, piv)
            self.X = X
            S = C - E @ X
            try:
                self.S_lu = scipy.linalg.lu_factor(S, check_finite=True)
            except (ValueError, np.linalg.LinAlgError) as err:
                raise RuntimeError("singular border block") from err
            if np.any(np.abs(np.diag(self.S_lu[0])) < 1e-300):
                raise RuntimeError("singular border block")
        return self

    def solve(self, rhs):
        nb = self.nb
        y, _ = lapack.dgbtrs(self.lub, self.kl, self.ku, rhs[:nb], self.piv)
        if self.dim == nb:
            return y
        x2 = scipy.linalg.lu_solve(self.S_lu, rhs[nb:] - self.E @ y)
        return np.concatenate([y - self.X @ x2, x2])


def _sym_matvec(hl: sp.spmatrix, d: np.ndarray) -> np.ndarray:
    return hl @ d + hl.T @ d - hl.diagonal() * d


class InteriorPoint:
    def __init__(self, problem, options: IPOptions | None = None):
        self.p = problem
        self.o = options or IPOptions()
        n, m = problem.n, problem.m
        jr, jc = problem.jac_structure
        hr, hc = problem.hess_structure
        self.jr, self.jc, self.hr, self.hc = jr, jc, hr, hc
        self.kkt = _KKT(n, m, jr, jc, hr, hc)
        order = getattr(problem, "kkt_order", None)
        if order is None:
            self.perm = None
        else:
            order = np.asarray(order, dtype=float)
            self.perm = np.lexsort((np.arange(n + m), order))
            self.kkt.permute(self.perm)
            n_border = int(np.sum(order == order.max())) if order.size else 0
            rows, cols = self.kkt.coordinates()
            self.band = _BorderedBandLU(n + m, n_border, rows, cols)
        limit = getattr(problem, "relative_step_limit", None)
        if limit:
            self.step_idx = np.array(sorted(limit), dtype=np.int64)
            self.step_frac = np.array([limit[i] for i in sorted(limit)])
        else:
            self.step_idx = self.step_frac = None
        self.il = np.isfinite(problem.xl)
        self.iu = np.isfinite(problem.xu)

    # --- helpers -----------------------------------------------------------
    def _jac(self, vals):
        return sp.csr_matrix((vals, (self.jr, self.jc)), shape=(self.p.m, self.p.n))

    def _hess(self, vals):
        return sp.csr_matrix((vals, (self.hr, self.hc)), shape=(self.p.n, self.p.n))

    def _slacks(self, x):
        sl = np.where(self.il, x - np.where(self.il, self.p.xl, 0.0), np.inf)
        su = np.where(self.iu, np.where(self.iu, self.p.xu, 0.0) - x, np.inf)
        return sl, su

    def _barrier(self, f, sl, su, mu):
        return f - mu * (np.sum(np.log(sl[self.il])) + np.sum(np.log(su[self.iu])))

    def _push_inside(self, x):
        o, xl, xu = self.o, self.p.xl, self.p.xu
        x = x.copy()
        both = self.il & self.iu
        width = np.where(both, xu - xl, np.inf)
        pl = np.minimum(o.bound_push * np.maximum(1.0, np.abs(np.where(self.il, xl, 0.0))),
                        o.bound_frac * width)
        pu = np.minimum(o.bound_push * np.maximum(1.0, np.abs(np.where(self.iu, xu, 0.0))),
                        o.bound_frac * width)
        x = np.where(self.il, np.maximum(x, np.where(self.il, xl, 0.0) + pl), x)
        x = np.where(self.iu, np.minimum(x, np.where(self.iu, xu, 0.0) - pu), x)
        return x

    @staticmethod
    def _ftb(s, ds, tau):
        """Largest alpha in (0, 1] with s + alpha ds >= (1 - tau) s."""
        neg = ds < 0
        if not np.any(neg):
            return 1.0
        return float(min(1.0, np.min(-tau * s[neg] / ds[neg])))

    def _factor(self, hvals, sigma, jvals, dw, dc):
        if self.perm is None:
            k = self.kkt.matrix(hvals, sigma + dw, jvals, dc)
            return spla.splu(k, permc_spec="COLAMD")
        return self.band.factor(self.kkt.values(hvals, sigma + dw, jvals, dc))

    def _solve(self, lu, rhs):
        if self.perm is None:
            return lu.solve(rhs)
        out = np.empty_like(rhs)
        out[self.perm] = lu.solve(rhs[self.perm])
        return out

    def _feasibility_step(self, x, c, jvals, sigma, dw, tau, sl, su):
        """Backtracked Gauss-Newton step that only reduces ||c||_1."""
        n = self.p.n
        hz = np.zeros(self.kkt.nh)
        try:
            lu = self._factor(hz, sigma + max(dw, 1e-8) + 1.0, jvals, 0.0, 0.0)
        except RuntimeError:
            return None, None, None, 0.0
        dx = self._solve(lu, np.concatenate([np.zeros(n), -c]))[:n]
        alpha = min(self._ftb(sl[self.il], dx[self.il], 0.99), self._ftb(su[self.iu], -dx[self.iu], 0.99))
        theta = float(np.sum(np.abs(c)))
        while alpha > 1e-10:
            xt = x + alpha * dx
            ct = self.p.constraints(xt)
            if float(np.sum(np.abs(ct))) < (1.0 - 1e-4 * alpha) * theta:
                return xt, self.p.objective(xt), ct, alpha
            alpha *= 0.5
        return None, None, None, 0.0

    def _least_squares_multipliers(self, g, jvals, zl, zu):
        n, m = self.p.n, self.p.m
        if m == 0:
            return np.zeros(0)
        try:
            lu = self._factor(np.zeros(self.kkt.nh), np.ones(n), jvals, 0.0, 0.0)
        except RuntimeError:
            return np.zeros(m)
        rhs = np.concatenate([-(g - zl + zu), np.zeros(m)])
        lam = self._solve(lu, rhs)[n:]
        if not np.all(np.isfinite(lam)) or np.max(np.abs(lam)) > 1e3:
            return np.zeros(m)
        return lam

    # --- main loop ----------------------------------------------------------
    def solve(self, x0, lam0=None, zl0=None, zu0=None) -> IPResult:
        o, p = self.o, self.p
        t_start = time.perf_counter()
        n, m = p.n, p.m
        x = self._push_inside(np.asarray(x0, float))
        mu = o.mu_init
        sl, su = self._slacks(x)
        if o.warm_start:
            zl = np.where(self.il, mu / sl, 0.0) if zl0 is None else np.where(self.il, zl0, 0.0)
            zu = np.where(self.iu, mu / su, 0.0) if zu0 is None else np.where(self.iu, zu0, 0.0)
        else:
            zl = np.where(self.il, 1.0, 0.0)
            zu = np.where(self.iu, 1.0, 0.0)
        f = p.objective(x)
        g = p.gradient(x)
        c = p.constraints(x)
        jvals = p.jacobian(x)
        lam = (np.asarray(lam0, float).copy() if lam0 is not None
               else self._least_squares_multipliers(g, jvals, zl, zu))
        dw_last = 0.0
        filt: list = []
        theta_max = theta_min = None
        n_resto = 0
        history = []
        status = "max_iter"
        converged = False
        it = 0
        pinf = dinf = cinf = np.inf
        for it in range(o.max_iter + 1):
            jac = self._jac(jvals)
            sl, su = self._slacks(x)
            rd = g + jac.T @ lam - zl + zu
            s_d = max(o.s_max, (np.sum(np.abs(lam)) + np.sum(np.abs(zl)) + np.sum(np.abs(zu)))
                      / max(1, n + m)) / o.s_max
            s_c = max(o.s_max, (np.sum(np.abs(zl)) + np.sum(np.abs(zu))) / max(1, n)) / o.s_max
            pinf = float(np.max(np.abs(c))) if m else 0.0
            dinf = float(np.max(np.abs(rd))) / s_d
            compl0 = max(float(np.max(np.abs(sl[self.il] * zl[self.il]), initial=0.0)),
                         float(np.max(np.abs(su[self.iu] * zu[self.iu]), initial=0.0)))
            cinf = compl0 / s_c
            history.append((it, f, pinf, dinf, cinf, mu))
            if o.verbose:
                log.info("it %3d f=%.8g pinf=%.2e dinf=%.2e compl=%.2e mu=%.1e dw=%.1e",
                         it, f, pinf, dinf, cinf, mu, dw_last)
            if pinf <= o.constr_tol and dinf <= o.dual_tol and cinf <= o.compl_tol:
                status, converged = "converged", True
                break
            if it == o.max_iter:
                break
            # barrier parameter update
            while mu > o.mu_min:
                cmu = max(float(np.max(np.abs(sl[self.il] * zl[self.il] - mu), initial=0.0)),
                          float(np.max(np.abs(su[self.iu] * zu[self.iu] - mu), initial=0.0)))
                emu = max(dinf, pinf, cmu / s_c)
                if emu > o.kappa_eps * mu:
                    break
                mu = max(o.mu_min, min(o.kappa_mu * mu, mu ** o.theta_mu))
                filt = []
            tau = max(o.tau_min, 1.0 - mu)

            hvals = p.hessian(x, lam, 1.0)
            hl = self._hess(hvals)
            inv_sl = np.where(self.il, 1.0 / sl, 0.0)
            inv_su = np.where(self.iu, 1.0 / su, 0.0)
            sigma = zl * inv_sl + zu * inv_su
            grad_phi = g - mu * inv_sl + mu * inv_su
            rhs = np.concatenate([-(grad_phi + jac.T @ lam), -c])

            dw = 0.0
            dc = 0.0
            step = None
            for _attempt in range(60):
                try:
                    lu = self._factor(hvals, sigma, jvals, dw, dc)
                    sol = self._solve(lu, rhs)
                except RuntimeError:
                    sol = None
                if sol is None or not np.all(np.isfinite(sol)):
                    dc = max(dc, o.delta_c * max(mu, 1e-8) ** 0.25)
                    dw = o.delta_w_init if dw == 0.0 else 8.0 * dw
                    continue
                dx = sol[:n]
                curv = float(dx @ (_sym_matvec(hl, dx) + (sigma + dw) * dx))
                if curv >= o.curvature_tol * float(dx @ dx):
                    step = sol
                    break
                if dw == 0.0:
                    dw = o.delta_w_init if dw_last == 0.0 else max(1e-20, dw_last / 3.0)
                else:
                    dw = 8.0 * dw if dw_last == 0.0 else 8.0 * dw
                if dw > o.delta_w_max:
                    break
            if step is None:
                status = "regularization_failed"
                break
            dw_last = dw
            dx, dlam = step[:n], step[n:]
            dzl = np.where(self.il, mu * inv_sl - zl - zl * inv_sl * dx, 0.0)
            dzu = np.where(self.iu, mu * inv_su - zu + zu * inv_su * dx, 0.0)

            a_max = min(self._ftb(sl[self.il], dx[self.il], tau),
                        self._ftb(su[self.iu], -dx[self.iu], tau))
            if self.step_idx is not None:
                big = np.abs(dx[self.step_idx]) > self.step_frac * np.abs(x[self.step_idx])
                if np.any(big):
                    ratio = self.step_frac * np.abs(x[self.step_idx][big]) / np.abs(dx[self.step_idx][big])
                    a_max = min(a_max, float(np.min(ratio)))
            a_z = min(self._ftb(zl[self.il], dzl[self.il], tau),
                      self._ftb(zu[self.iu], dzu[self.iu], tau))

            # filter line search on (theta, phi)
            theta = float(np.sum(np.abs(c)))
            phi = self._barrier(f, sl, su, mu)
            gdx = float(grad_phi @ dx)
            if theta_max is None:
                theta_max = 1e4 * max(1.0, theta)
                theta_min = 1e-4 * max(1.0, theta)
            if gdx < 0:
                a_min = o.gamma_alpha * min(o.gamma_theta, o.gamma_phi * theta / -gdx,
                                            o.delta * theta ** o.s_theta / (-gdx) ** o.s_phi)
            else:
                a_min = o.gamma_alpha * o.gamma_theta
            alpha = a_max
            accepted = False
            soc_tried = False
            x_new = None
            c_trial = None
            while True:
                trials = [(alpha, x + alpha * dx)]
                if not soc_tried and alpha == a_max and m and theta > 0:
                    soc_tried = True
                    trials.append(None)
                for trial in trials:
                    if trial is None:
                        # second-order correction, tried once after the full step fails
                        ct_full = c_trial
                        if ct_full is None or float(np.sum(np.abs(ct_full))) < theta:
                            break
                        rhs_soc = np.concatenate([rhs[:n], -(alpha * c + ct_full)])
                        dsoc = self._solve(lu, rhs_soc)[:n]
                        a_soc = min(self._ftb(sl[self.il], dsoc[self.il], tau),
                                    self._ftb(su[self.iu], -dsoc[self.iu], tau))
                        trial = (alpha, x + a_soc * dsoc)
                    a_t, xt = trial
                    c_trial = None
                    slt, sut = self._slacks(xt)
                    if not (np.all(slt[self.il] > 0) and np.all(sut[self.iu] > 0)):
                        continue
                    ft = p.objective(xt)
                    ct = p.constraints(xt)
                    c_trial = ct
                    tt = float(np.sum(np.abs(ct)))
                    pt = self._barrier(ft, slt, sut, mu)
                    if not np.isfinite(pt) or tt > theta_max:
                        continue
                    if any(tt >= tf and pt >= pf for tf, pf in filt):
                        continue
                    switching = gdx < 0 and a_t * (-gdx) ** o.s_phi > o.delta * theta ** o.s_theta
                    if switching and theta <= theta_min:
                        ok = pt <= phi + o.eta_phi * a_t * gdx
                        ftype = True
                    else:
                        ok = tt <= (1 - o.gamma_theta) * theta or pt <= phi - o.gamma_phi * theta
                        ftype = False
                    if ok:
                        accepted, x_new, f_new, c_new = True, xt, ft, ct
                        if not ftype:
                            filt.append(((1 - o.gamma_theta) * theta, phi - o.gamma_phi * theta))
                        break
                if accepted:
                    break
                if np.max(np.abs(alpha * dx) / (1.0 + np.abs(x))) < 1e-15 and theta < o.constr_tol:
                    xt = x + alpha * dx
                    accepted, x_new = True, xt
                    f_new, c_new = p.objective(xt), p.constraints(xt)
                    break
                alpha *= 0.5
                if alpha < a_min:
                    break
            if not accepted:
                # feasibility fallback: Newton step on c alone from the current factorization
                if n_resto >= o.max_restoration:
                    status = "line_search_failed"
                    break
                n_resto += 1
                filt = []
                x_new, f_new, c_new, alpha = self._feasibility_step(x, c, jvals, sigma, dw, tau, sl, su)
                if x_new is None:
                    status = "line_search_failed"
                    break
                filt.append(((1 - o.gamma_theta) * theta, phi - o.gamma_phi * theta))
            x = x_new
            lam = lam + alpha * dlam
            zl = zl + a_z * dzl
            zu = zu + a_z * dzu
            # keep bound multipliers within kappa_sigma of the central path
            sl, su = self._slacks(x)
            zl = np.where(self.il, np.clip(zl, mu / (o.kappa_sigma * sl), o.kappa_sigma * mu / sl), 0.0)
            zu = np.where(self.iu, np.clip(zu, mu / (o.kappa_sigma * su), o.kappa_sigma * mu / su), 0.0)
            f, c = f_new, c_new
            g = p.gradient(x)
            jvals = p.jacobian(x)
        return IPResult(x=x, lam=lam, zl=zl, zu=zu, f=float(f), iterations=it,
                        converged=converged, status=status, primal_inf=pinf, dual_inf=dinf,
                        compl=cinf, mu=mu, seconds=time.perf_counter() - t_start,
                        history=history)
