"""Standard-form convex QP and solution containers.

    minimize    1/2 z' H z + g' z
    subject to  Aeq z = beq
                lo <= Ain z <= hi
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible-detected"
# dense eigenvalue check of H is skipped above this size
PSD_CHECK_MAX_DIM = 400


def _sparse(M, shape) -> sp.csc_matrix:
    if M is None:
        return sp.csc_matrix(shape)
    if sp.issparse(M):
        return sp.csc_matrix(M, dtype=float)
    return sp.csc_matrix(np.atleast_2d(np.asarray(M, dtype=float)))


@dataclass
class QpProblem:
    H: object
    g: np.ndarray
    Aeq: object = None
    beq: np.ndarray | None = None
    Ain: object = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    const: float = 0.0

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float).ravel()
        d = self.g.size
        self.H = _sparse(self.H, (d, d))
        if self.H.shape != (d, d):
            raise ValueError(f"H must be {d} x {d}, got {self.H.shape}")
        asym = abs(self.H - self.H.T)
        if asym.nnz and asym.max() > 1e-10 * max(1.0, abs(self.H).max()):
            raise ValueError("H must be symmetric")
        self.H = (0.5 * (self.H + self.H.T)).tocsc()
        if d <= PSD_CHECK_MAX_DIM and d:
            lam = np.linalg.eigvalsh(self.H.toarray())
            if lam[0] < -1e-10 * max(1.0, abs(lam).max()):
                raise ValueError(f"H must be positive semidefinite (smallest eigenvalue {lam[0]:.3g})")
        if self.Aeq is None:
            self.Aeq = sp.csc_matrix((0, d))
            self.beq = np.zeros(0)
        self.Aeq = _sparse(self.Aeq, (0, d))
        self.beq = np.asarray(self.beq, dtype=float).ravel()
        if self.Aeq.shape[1] != d or self.Aeq.shape[0] != self.beq.size:
            raise ValueError("equality system has inconsistent dimensions")
        if self.Ain is None:
            self.Ain = sp.csc_matrix((0, d))
            self.lo = np.zeros(0)
            self.hi = np.zeros(0)
        self.Ain = _sparse(self.Ain, (0, d))
        p = self.Ain.shape[0]
        self.lo = np.full(p, -np.inf) if self.lo is None else np.asarray(self.lo, dtype=float).ravel()
        self.hi = np.full(p, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).ravel()
        if self.Ain.shape[1] != d or self.lo.size != p or self.hi.size != p:
            raise ValueError("inequality system has inconsistent dimensions")
        if np.any(self.lo > self.hi):
            raise ValueError("inequality bounds must satisfy lo <= hi")

    @property
    def d(self) -> int:
        return self.g.size

    @property
    def n_eq(self) -> int:
        return self.Aeq.shape[0]

    @property
    def n_in(self) -> int:
        return self.Ain.shape[0]

    def stacked(self) -> tuple[sp.csc_matrix, np.ndarray, np.ndarray]:
        """All constraints as ``l <= C z <= u`` (equalities first)."""
        C = sp.vstack([self.Aeq, self.Ain], format="csc")
        l = np.concatenate([self.beq, self.lo])
        u = np.concatenate([self.beq, self.hi])
        return C, l, u

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ (self.H @ z) + self.g @ z + self.const)

    def residuals(self, z, y) -> tuple[float, float, float]:
        """Primal, dual and complementarity residuals (infinity norms).

        ``y`` holds the multipliers of the stacked constraints ``C z`` with
        the convention ``H z + g + C' y = 0``; ``y_i > 0`` pushes against an
        upper bound, ``y_i < 0`` against a lower bound.
        """
        C, l, u = self.stacked()
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float)
        Cz = C @ z
        prim = np.max(np.maximum(l - Cz, 0) + np.maximum(Cz - u, 0), initial=0.0)
        dual = np.max(np.abs(self.H @ z + self.g + C.T @ y), initial=0.0)
        yp = np.maximum(y, 0)
        ym = np.maximum(-y, 0)
        # a multiplier pushing on an infinite bound is a sign error of size |y|
        with np.errstate(invalid="ignore"):
            gap_u = np.where(np.isfinite(u), yp * np.abs(u - Cz), yp)
            gap_l = np.where(np.isfinite(l), ym * np.abs(Cz - l), ym)
        comp = np.max(np.concatenate([gap_u, gap_l]), initial=0.0)
        return float(prim), float(dual), float(comp)


@dataclass
class QpSolution:
    z: np.ndarray
    y: np.ndarray
    status: str
    prim_res: float
    dual_res: float
    comp_res: float
    objective: float
    iterations: int = 0
    polished: bool = False
    rho: float = float("nan")
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def summary(self) -> dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "prim_res": self.prim_res,
            "dual_res": self.dual_res,
            "comp_res": self.comp_res,
            "iterations": self.iterations,
            "polished": self.polished,
        }
