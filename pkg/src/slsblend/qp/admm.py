"""Operator-splitting (ADMM) QP solver with equilibration and solution polishing.

The iteration is the standard splitting for ``l <= C z <= u``: every step
solves one quasi-definite KKT system

    [ H + sigma I    C'         ] [ x~ ]   [ sigma x - g    ]
    [ C             -diag(1/rho)] [ nu ] = [ s - y / rho    ]

then relaxes, projects onto the box and updates the multipliers.  The KKT
matrix is factored once and refactored only when the penalty changes.

After the iterates settle, a polishing step guesses the active set and
solves the reduced equality-constrained KKT system directly (with iterative
refinement); the polished point is kept only if it passes the tolerances.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .problem import INFEASIBLE, MAX_ITER, OPTIMAL, QpProblem, QpSolution

RHO_MIN, RHO_MAX = 1e-6, 1e6
RHO_EQ_FACTOR = 1e3
SCALE_MIN, SCALE_MAX = 1e-4, 1e4


@dataclass
class SolverOptions:
    eps_prim: float = 1e-8
    eps_dual: float = 1e-8
    eps_comp: float = 1e-8
    max_iter: int = 50000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha_relax: float = 1.6
    adaptive_rho_interval: int = 25
    check_interval: int = 5
    scaling_iters: int = 10
    polish: bool = True
    polish_delta: float = 1e-7
    polish_refine: int = 25
    polish_passes: int = 12
    polish_trigger: float = 1e-2
    polish_every: int = 5000
    eps_pinf: float = 1e-7
    dump_csv: str | None = None


def _limit(v):
    v = np.where(v < SCALE_MIN, 1.0, v)
    return np.minimum(v, SCALE_MAX)


def _col_inf(M: sp.csc_matrix) -> np.ndarray:
    if M.shape[0] == 0:
        return np.zeros(M.shape[1])
    return np.asarray(abs(M).max(axis=0).todense()).ravel()


def _row_inf(M: sp.csc_matrix) -> np.ndarray:
    if M.shape[1] == 0 or M.shape[0] == 0:
        return np.zeros(M.shape[0])
    return np.asarray(abs(M).max(axis=1).todense()).ravel()


class _Scaled:
    """Ruiz-equilibrated copy of the problem data."""

    def __init__(self, H, g, C, l, u, iters):
        d, p = H.shape[0], C.shape[0]
        D = np.ones(d)
        E = np.ones(p)
        c = 1.0
        H = H.copy()
        C = C.copy()
        g = g.copy()
        for _ in range(iters):
            dt = 1.0 / np.sqrt(_limit(np.maximum(_col_inf(H), _col_inf(C))))
            et = 1.0 / np.sqrt(_limit(_row_inf(C))) if p else np.ones(0)
            Dm = sp.diags(dt)
            H = (Dm @ H @ Dm).tocsc()
            C = (sp.diags(et) @ C @ Dm).tocsc()
            g = dt * g
            D *= dt
            E *= et
            mean_col = float(np.mean(_col_inf(H))) if d else 0.0
            g_norm = float(_limit(np.array([np.max(np.abs(g), initial=0.0)]))[0])
            ct = 1.0 / float(_limit(np.array([max(mean_col, g_norm)]))[0])
            H = H * ct
            g = g * ct
            c *= ct
        self.H, self.g, self.C = H.tocsc(), g, C.tocsc()
        self.D, self.E, self.c = D, E, c
        with np.errstate(invalid="ignore", over="ignore"):
            self.l = np.where(np.isfinite(l), E * l, l)
            self.u = np.where(np.isfinite(u), E * u, u)

    def unscale(self, x, s, y):
        return self.D * x, s / np.where(self.E > 0, self.E, 1.0), self.E * y / self.c


def _factor(K):
    K = sp.csc_matrix(K)
    # quasi-definite: any symmetric ordering factors without pivoting
    try:
        return spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                         options={"SymmetricMode": True})
    except RuntimeError:
        return spla.splu(K, permc_spec="COLAMD")


class AdmmSolver:
    """One solve of a :class:`QpProblem`; construct, then call :meth:`run`."""

    def __init__(self, prob: QpProblem, opts: SolverOptions | None = None):
        self.prob = prob
        self.opts = opts or SolverOptions()
        C, l, u = prob.stacked()
        self.l_raw, self.u_raw = l, u
        self.S = _Scaled(prob.H, prob.g, C, l, u, self.opts.scaling_iters)
        self.d = prob.d
        self.p = C.shape[0]
        self.eq = np.isclose(l, u) & np.isfinite(l)
        self.free = ~np.isfinite(l) & ~np.isfinite(u)
        self._rho = self.opts.rho
        self._factorization = None
        self.n_factor = 0

    # -- linear algebra ----------------------------------------------------
    def _rho_vec(self, rho):
        r = np.full(self.p, rho)
        r[self.eq] = RHO_EQ_FACTOR * rho
        r[self.free] = RHO_MIN
        return r

    def _refactor(self, rho):
        self._rho = rho
        self.rho_vec = self._rho_vec(rho)
        S = self.S
        K = sp.bmat([[S.H + self.opts.sigma * sp.eye(self.d), S.C.T],
                     [S.C, sp.diags(-1.0 / self.rho_vec)]], format="csc")
        self._factorization = _factor(K)
        self.n_factor += 1

    # -- residuals in original units -----------------------------------------
    def _residuals(self, x, s, y):
        S = self.S
        Cx = S.C @ x
        Einv = 1.0 / S.E
        prim = np.max(np.abs(Einv * (Cx - s)), initial=0.0)
        norm_p = max(np.max(np.abs(Einv * Cx), initial=0.0), np.max(np.abs(Einv * s), initial=0.0))
        Dinv = 1.0 / S.D
        Hx = S.H @ x
        Cty = S.C.T @ y
        dual = np.max(np.abs(Dinv * (Hx + S.g + Cty)), initial=0.0) / S.c
        norm_d = max(np.max(np.abs(Dinv * Hx), initial=0.0), np.max(np.abs(Dinv * Cty), initial=0.0),
                     np.max(np.abs(Dinv * S.g), initial=0.0)) / S.c
        return prim, dual, norm_p, norm_d

    def _primal_infeasible(self, dy):
        S = self.S
        dy = dy.copy()
        dy[(dy > 0) & ~np.isfinite(S.u)] = 0.0
        dy[(dy < 0) & ~np.isfinite(S.l)] = 0.0
        norm = np.max(np.abs(S.E * dy), initial=0.0)
        if norm < 1e-12:
            return False
        eps = self.opts.eps_pinf * norm
        if np.max(np.abs((S.C.T @ dy) / S.D), initial=0.0) > eps:
            return False
        up = np.where(dy > 0, S.u, 0.0)
        lo = np.where(dy < 0, S.l, 0.0)
        return float(up @ np.maximum(dy, 0) + lo @ np.minimum(dy, 0)) < -eps

    # -- polishing ---------------------------------------------------------
    def _reduced_solve(self, act, b, x0, y0):
        """Equality-constrained KKT solve for the rows ``act``.

        Iterative refinement against the unregularized matrix starts from
        the current iterate, so directions the active constraints leave
        undetermined stay where the ADMM iterate put them.
        """
        S = self.S
        Ca = S.C[act]
        d, k = self.d, act.size
        delta = self.opts.polish_delta
        if k:
            K0 = sp.bmat([[S.H, Ca.T], [Ca, None]], format="csc")
            Kd = sp.bmat([[S.H + delta * sp.eye(d), Ca.T], [Ca, -delta * sp.eye(k)]], format="csc")
        else:
            K0 = S.H.tocsc()
            Kd = (S.H + delta * sp.eye(d)).tocsc()
        try:
            lu = _factor(Kd)
        except RuntimeError:
            return None
        rhs = np.concatenate([-S.g, b])
        sol = np.concatenate([x0, y0[act]])
        for _ in range(self.opts.polish_refine):
            sol = sol + lu.solve(rhs - K0 @ sol)
        if not np.all(np.isfinite(sol)):
            return None
        yp = np.zeros(self.p)
        yp[act] = sol[d:]
        return sol[:d], yp

    def _polish(self, x, s, y, prox):
        """Active-set refinement started from the ADMM guess.

        Rows are guessed active from the multiplier signs and from lying
        within ``prox`` of a bound.  Each pass solves the reduced KKT system,
        then adds violated rows and drops rows whose multiplier has the
        wrong sign.
        """
        S = self.S
        fin_u = np.isfinite(S.u)
        fin_l = np.isfinite(S.l)
        with np.errstate(invalid="ignore"):
            upp = ((S.u - s < y) | (S.u - s <= prox)) & ~self.eq & fin_u
            low = ((s - S.l < -y) | (s - S.l <= prox)) & ~self.eq & fin_l & ~upp
        tol = 0.1 * min(self.opts.eps_prim, self.opts.eps_dual)
        out = None
        for _ in range(self.opts.polish_passes):
            act = np.flatnonzero(self.eq | low | upp)
            b = np.where(upp, S.u, S.l)[act]
            res = self._reduced_solve(act, b, x, y)
            if res is None:
                return out
            x, y = res
            Cx = S.C @ x
            out = (x, Cx, y)
            with np.errstate(invalid="ignore"):
                add_u = ~upp & ~self.eq & fin_u & (Cx - S.u > tol)
                add_l = ~low & ~self.eq & fin_l & (S.l - Cx > tol)
            drop_u = upp & (y < -tol)
            drop_l = low & (y > tol)
            if not (add_u.any() or add_l.any() or drop_u.any() or drop_l.any()):
                break
            upp = (upp & ~drop_u) | add_u
            low = ((low & ~drop_l) | add_l) & ~upp
        return out

    # -- main loop ---------------------------------------------------------
    def run(self, x0=None, y0=None) -> QpSolution:
        o = self.opts
        S = self.S
        x = np.zeros(self.d) if x0 is None else np.asarray(x0, float) / S.D
        s = np.clip(S.C @ x, S.l, S.u)
        y = np.zeros(self.p) if y0 is None else np.asarray(y0, float) * S.c / S.E
        self._refactor(o.rho)
        dump = None
        if o.dump_csv:
            fh = open(o.dump_csv, "w", newline="")
            dump = csv.writer(fh)
            dump.writerow(["iter", "prim", "dual", "rho"])
        status = MAX_ITER
        best = None
        last_polish, last_polish_it = np.inf, 0
        it = 0
        try:
            for it in range(1, o.max_iter + 1):
                rhs = np.concatenate([o.sigma * x - S.g, s - y / self.rho_vec])
                sol = self._factorization.solve(rhs)
                xt = sol[: self.d]
                st = s + (sol[self.d:] - y) / self.rho_vec
                x_new = o.alpha_relax * xt + (1 - o.alpha_relax) * x
                s_rel = o.alpha_relax * st + (1 - o.alpha_relax) * s
                s_new = np.clip(s_rel + y / self.rho_vec, S.l, S.u)
                y_new = y + self.rho_vec * (s_rel - s_new)
                dy = y_new - y
                x, s, y = x_new, s_new, y_new

                if it % o.check_interval and it != o.max_iter:
                    continue
                prim, dual, norm_p, norm_d = self._residuals(x, s, y)
                if dump:
                    dump.writerow([it, prim, dual, self._rho])
                if best is None or max(prim, dual) < best[0]:
                    best = (max(prim, dual), x.copy(), s.copy(), y.copy())
                if prim <= o.eps_prim and dual <= o.eps_dual:
                    cand = self._finish(x, s, y, it, polished=False)
                    if cand.status == OPTIMAL:
                        return cand
                if self.p and self._primal_infeasible(dy):
                    status = INFEASIBLE
                    break
                res = max(prim, dual)
                due = res < 0.1 * last_polish or it - last_polish_it >= o.polish_every
                if o.polish and res < o.polish_trigger and due:
                    last_polish, last_polish_it = min(res, last_polish), it
                    pol = self._polish(x, s, y, prox=max(100 * res, 1e-9))
                    if pol is not None:
                        sol_p = self._finish(*pol, it, polished=True)
                        if sol_p.status == OPTIMAL:
                            return sol_p
                if it % o.adaptive_rho_interval == 0:
                    ratio = (prim / max(norm_p, 1e-30)) / max(dual / max(norm_d, 1e-30), 1e-30)
                    new_rho = float(np.clip(self._rho * np.sqrt(ratio), RHO_MIN, RHO_MAX))
                    if new_rho > 5 * self._rho or new_rho < self._rho / 5:
                        self._refactor(new_rho)
        finally:
            if dump:
                fh.close()
        if status == MAX_ITER and best is not None:
            _, x, s, y = best
            if o.polish:
                pol = self._polish(x, s, y, prox=max(100 * best[0], 1e-9))
                if pol is not None:
                    sol_p = self._finish(*pol, it, polished=True)
                    if sol_p.status == OPTIMAL:
                        return sol_p
        sol = self._finish(x, s, y, it, polished=False)
        if sol.status != OPTIMAL:
            sol.status = status
        return sol

    def _finish(self, x, s, y, it, polished) -> QpSolution:
        z, _, yu = self.S.unscale(x, s, y)
        prim, dual, comp = self.prob.residuals(z, yu)
        o = self.opts
        ok = prim <= o.eps_prim and dual <= o.eps_dual and comp <= o.eps_comp
        return QpSolution(
            z=z, y=yu, status=OPTIMAL if ok else MAX_ITER,
            prim_res=prim, dual_res=dual, comp_res=comp,
            objective=self.prob.objective(z), iterations=it, polished=polished, rho=self._rho,
            info={"factorizations": self.n_factor},
        )


def solve(prob: QpProblem, opts: SolverOptions | None = None, x0=None, **kwargs) -> QpSolution:
    """Solve a convex QP by operator splitting.

    Keyword arguments override fields of :class:`SolverOptions`.
    """
    if opts is None:
        opts = SolverOptions(**kwargs)
    elif kwargs:
        opts = SolverOptions(**{**opts.__dict__, **kwargs})
    if prob.d == 0:
        return QpSolution(np.zeros(0), np.zeros(prob.n_eq + prob.n_in), OPTIMAL, 0.0, 0.0, 0.0, prob.const)
    return AdmmSolver(prob, opts).run(x0=x0)
