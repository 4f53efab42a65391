"""Exact reference solutions for tiny QPs by active-set enumeration.

Every inequality row is tried as inactive, tight at its lower bound or tight
at its upper bound.  For each pattern the equality-constrained KKT system is
solved and the candidate is kept when it is primal feasible and the
multipliers have the right signs.  Convexity makes any such KKT point
globally optimal; the smallest objective among them is returned.
"""
from __future__ import annotations

import itertools

import numpy as np

from .problem import QpProblem

MAX_DIM = 6
MAX_ROWS = 9


class OracleRefused(ValueError):
    pass


class OracleInfeasible(ArithmeticError):
    pass


def brute_force_oracle(prob: QpProblem, tol: float = 1e-9) -> np.ndarray:
    if prob.d > MAX_DIM:
        raise OracleRefused(f"oracle handles d <= {MAX_DIM}, got {prob.d}")
    if prob.n_in > MAX_ROWS:
        raise OracleRefused(f"oracle handles at most {MAX_ROWS} inequality rows, got {prob.n_in}")
    H = prob.H.toarray()
    g = prob.g
    Aeq, beq = prob.Aeq.toarray(), prob.beq
    Ain, lo, hi = prob.Ain.toarray(), prob.lo, prob.hi
    d = prob.d
    scale = 1.0 + np.abs(H).max(initial=0.0) + np.abs(g).max(initial=0.0)

    choices = []
    for lo_i, hi_i in zip(lo, hi):
        opts = [0]
        if np.isfinite(lo_i):
            opts.append(-1)
        if np.isfinite(hi_i) and hi_i != lo_i:
            opts.append(1)
        choices.append(opts)

    best, best_obj = None, np.inf
    for pattern in itertools.product(*choices):
        pattern = np.array(pattern, dtype=int)
        act = np.flatnonzero(pattern)
        Ca = np.vstack([Aeq, Ain[act]])
        b = np.concatenate([beq, np.where(pattern[act] > 0, hi[act], lo[act])])
        k = Ca.shape[0]
        K = np.block([[H, Ca.T], [Ca, np.zeros((k, k))]])
        rhs = np.concatenate([-g, b])
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        if np.max(np.abs(K @ sol - rhs), initial=0.0) > tol * scale * 10:
            continue
        z, lam = sol[:d], sol[d:]
        Az = Ain @ z
        if np.any(Az < lo - tol * (1 + np.abs(lo))) or np.any(Az > hi + tol * (1 + np.abs(hi))):
            continue
        lam_in = lam[Aeq.shape[0]:]
        # y > 0 pushes against an upper bound, y < 0 against a lower bound
        if np.any(lam_in * pattern[act] < -tol * scale):
            continue
        obj = prob.objective(z)
        if obj < best_obj - 1e-12:
            best, best_obj = z, obj
    if best is None:
        raise OracleInfeasible("no KKT point found (problem infeasible or unbounded)")
    return best
