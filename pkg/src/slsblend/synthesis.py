"""Constrained-LQR synthesis of blended FIR closed-loop maps.

The program solved for ``N`` zones with widths ``d_i = eta_i - eta_{i-1}``:

    minimize    sum_k sum_{i,l} alpha_il [ tr(R^i_k' Q R^l_k) + tr(M^i_k' P M^l_k) ]
    subject to  R^i_1 = I,  R^i_{k+1} = A R^i_k + B M^i_k,  A R^i_T + B M^i_T = 0
                sum_i d_i |R^i| <= x_max,   sum_i d_i |M^i| <= u_max
                entries outside the locality mask are zero

where ``|X|`` is the induced infinity norm of the tap concatenation.  The
norms are linearized exactly with entrywise slacks ``-E <= X <= E`` and one
row-sum bound ``s_i`` per zone.  Only entries allowed by the mask become
decision variables; ``R_1 = I`` is a constant (it adds ``tr(Q) sum(alpha)``
to the cost and 1 to every state row sum).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

from .core import DEFAULT_TOL, BlendClm, FirClm, LinearSystem, StructureError, peak_gain, validate_fir_clm
from .diststats import AlphaMoments, DisturbanceModel, alpha_moments
from .projections import KINDS, check_radii
from .qp import INFEASIBLE, OPTIMAL, QpProblem, SolverOptions, solve

FAMILIES = ("state-safety", "input-safety", "fir-closure", "fir-recursion", "mask", "integral")


class SynthesisInfeasible(RuntimeError):
    def __init__(self, family: str, detail: str = ""):
        msg = f"{family} infeasible"
        super().__init__(f"{msg}: {detail}" if detail else msg)
        self.family = family


class SynthesisMaxIter(RuntimeError):
    pass


class SynthesisError(RuntimeError):
    """The solver claimed success but the result fails validation."""


@dataclass(frozen=True)
class SafetySpec:
    x_max: float
    u_max: float
    eta_max: float

    def __post_init__(self):
        for name in ("x_max", "u_max", "eta_max"):
            v = getattr(self, name)
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if not np.isfinite(self.eta_max):
            raise ValueError("eta_max must be finite")


@dataclass(frozen=True)
class LocalityMask:
    """Allowed supports per FIR tap: ``Sx`` (T, n, n) and ``Su`` (T, m, n)."""

    Sx: np.ndarray
    Su: np.ndarray
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        Sx = np.asarray(self.Sx).astype(bool)
        Su = np.asarray(self.Su).astype(bool)
        if Sx.ndim != 3 or Sx.shape[1] != Sx.shape[2]:
            raise StructureError(f"Sx must have shape (T, n, n), got {Sx.shape}")
        if Su.ndim != 3 or Su.shape[0] != Sx.shape[0] or Su.shape[2] != Sx.shape[1]:
            raise StructureError(f"Su must have shape (T, m, n), got {Su.shape}")
        if not np.all(np.diag(Sx[0])):
            raise StructureError("Sx_1 must contain the diagonal (R_1 = I)")
        Sx.setflags(write=False)
        Su.setflags(write=False)
        object.__setattr__(self, "Sx", Sx)
        object.__setattr__(self, "Su", Su)

    @property
    def T(self) -> int:
        return self.Sx.shape[0]

    @classmethod
    def full(cls, T: int, n: int, m: int) -> "LocalityMask":
        return cls(np.ones((T, n, n), bool), np.ones((T, m, n), bool))

    def violations(self, clm: FirClm, tol: float = 0.0) -> int:
        """Number of entries outside the support with magnitude above ``tol``."""
        return int(np.sum((np.abs(clm.R) > tol) & ~self.Sx) + np.sum((np.abs(clm.M) > tol) & ~self.Su))

    def to_dict(self) -> dict:
        doc = {"Sx": self.Sx.astype(int).tolist(), "Su": self.Su.astype(int).tolist()}
        if self.provenance:
            doc["provenance"] = self.provenance
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "LocalityMask":
        return cls(np.asarray(doc["Sx"], bool), np.asarray(doc["Su"], bool), doc.get("provenance", {}))


def hop_distances(adjacency) -> np.ndarray:
    adj = sp.csr_matrix(np.asarray(adjacency, dtype=float) if not sp.issparse(adjacency) else adjacency)
    if adj.shape[0] != adj.shape[1]:
        raise StructureError("adjacency must be square")
    return shortest_path(adj != 0, unweighted=True, directed=False)


def build_locality_mask(adjacency, locality_d: int, comm_delay: float, actuation: Sequence[int], T: int,
                        act_delay: int = 0) -> LocalityMask:
    """Supports from disturbance localization and communication/actuation delays.

    Entry ``(i, j)`` of tap ``k`` is allowed when node ``i`` lies within
    ``locality_d`` hops of node ``j`` and ``hops * comm_delay <= k - 1``, i.e.
    information about ``w_j`` has had time to arrive.  For inputs the
    actuator's node is used and ``act_delay`` extra steps are required.
    ``actuation[a]`` is the node driven by actuator ``a``.
    """
    if T < 1:
        raise ValueError("T must be positive")
    if comm_delay < 0 or act_delay < 0 or locality_d < 0:
        raise ValueError("delays and locality radius must be nonnegative")
    hops = hop_distances(adjacency)
    n = hops.shape[0]
    act = np.asarray(actuation, dtype=int)
    if act.ndim != 1 or act.size == 0 or act.min() < 0 or act.max() >= n:
        raise StructureError("actuation must list node indices in range")
    lag = np.arange(T)[:, None, None]
    local = hops <= locality_d
    with np.errstate(invalid="ignore"):
        Sx = local & (hops * comm_delay <= lag)
        Su = local[act] & (hops[act] * comm_delay + act_delay <= lag)
    prov = {
        "adjacency": (np.asarray(adjacency.todense() if sp.issparse(adjacency) else adjacency) != 0)
        .astype(int).tolist(),
        "locality_d": int(locality_d),
        "comm_delay": float(comm_delay),
        "actuation": act.tolist(),
        "act_delay": int(act_delay),
    }
    return LocalityMask(Sx, Su, prov)


@dataclass
class SynthesisResult:
    blend: BlendClm
    objective: float
    solver: dict
    active: dict
    alpha: np.ndarray
    mask: LocalityMask | None = None
    kkt: tuple = (np.nan, np.nan, np.nan)

    def diagnostics(self) -> dict:
        return {
            "objective": self.objective,
            "solver": self.solver,
            "active": self.active,
            "alpha": np.asarray(self.alpha).tolist(),
        }


# -- cost and peaks ------------------------------------------------------------

def blend_cost(blend: BlendClm, alpha, Q, P) -> float:
    """Exact blended LQR cost ``sum_k tr(Sigma^(1/2) X_k' W X_k Sigma^(1/2))``."""
    a = np.asarray(getattr(alpha, "alpha", alpha), dtype=float)
    Q = np.atleast_2d(np.asarray(Q, float))
    P = np.atleast_2d(np.asarray(P, float))
    if a.shape != (blend.N, blend.N):
        raise StructureError(f"alpha is {a.shape} but the blend has {blend.N} zones")
    R = np.stack([z.R for z in blend.zones])  # (N, T, n, n)
    M = np.stack([z.M for z in blend.zones])
    cR = np.einsum("il,ikrj,rs,lksj->", a, R, Q, R)
    cM = np.einsum("il,ikrj,rs,lksj->", a, M, P, M)
    return float(cR + cM)


def worst_case_peak(clm, radii=None) -> tuple[float, float]:
    """Certified bounds ``sum_i d_i |R^i|`` and ``sum_i d_i |M^i|``.

    Accepts a :class:`BlendClm` or a single :class:`FirClm` together with
    its radius (or radii list of length one).
    """
    if isinstance(clm, FirClm):
        if radii is None:
            raise ValueError("a single FIR CLM needs its radius")
        clm = BlendClm((clm,), tuple(np.atleast_1d(radii).astype(float)))
    widths = clm.widths()
    xb = sum(w * peak_gain(z.R_concat()) for w, z in zip(widths, clm.zones) if w > 0)
    ub = sum(w * peak_gain(z.M_concat()) for w, z in zip(widths, clm.zones) if w > 0)
    return float(xb), float(ub)


# -- QP assembly -----------------------------------------------------------------

class _Builder:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []
        self.rhs_lo, self.rhs_hi, self.family = [], [], []
        self.n_rows = 0

    def add(self, cols, vals, lo, hi, family):
        cols = np.asarray(cols, int)
        vals = np.asarray(vals, float)
        keep = vals != 0
        self.rows.append(np.full(keep.sum(), self.n_rows))
        self.cols.append(cols[keep])
        self.vals.append(vals[keep])
        self.rhs_lo.append(lo)
        self.rhs_hi.append(hi)
        self.family.append(family)
        self.n_rows += 1

    def matrix(self, d):
        if not self.n_rows:
            return sp.csc_matrix((0, d)), np.zeros(0), np.zeros(0)
        M = sp.csc_matrix((np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
                          shape=(self.n_rows, d))
        return M, np.asarray(self.rhs_lo, float), np.asarray(self.rhs_hi, float)


@dataclass
class BlendProgram:
    """Vectorized form of the blended synthesis problem."""

    qp: QpProblem
    idxR: np.ndarray
    idxM: np.ndarray
    eq_family: list
    in_family: list
    n_kernel: int


def _check_weight(W, dim, name):
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape != (dim, dim):
        raise StructureError(f"{name} must be {dim} x {dim}, got {W.shape}")
    if not np.allclose(W, W.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(W).min() <= 0:
        raise ValueError(f"{name} must be positive definite")
    return W


def build_blend_program(sys: LinearSystem, Q, P, T: int, radii, alpha, safety: SafetySpec,
                        mask: LocalityMask | None = None, closure: str = "general",
                        integral: dict | None = None) -> BlendProgram:
    """Assemble the QP; raises :class:`SynthesisInfeasible` on structural infeasibility.

    ``integral`` maps a zone index to the disturbance columns whose DC gain
    ``sum_k R^(i)_k[:, j]`` is forced to zero (step rejection).
    """
    n, m = sys.n, sys.m
    A, B = sys.A, sys.B
    r = check_radii(radii)
    N = r.size
    widths = np.diff(np.concatenate([[0.0], r]))
    a = np.asarray(getattr(alpha, "alpha", alpha), float)
    if a.shape != (N, N):
        raise StructureError(f"alpha must be {N} x {N}")
    Q = _check_weight(Q, n, "Q")
    P = _check_weight(P, m, "P")
    if T < 1:
        raise ValueError("T must be positive")
    if closure not in ("general", "strict"):
        raise ValueError(f"unknown closure variant {closure!r}")
    if mask is None:
        mask = LocalityMask.full(T, n, m)
    if mask.Sx.shape != (T, n, n) or mask.Su.shape != (T, m, n):
        raise StructureError("locality mask does not match (T, n, m)")
    if r[-1] > safety.x_max * (1 + 1e-12):
        # R_1 = I puts a unit in every state row sum of every zone
        raise SynthesisInfeasible("state-safety", f"eta_N = {r[-1]} exceeds x_max = {safety.x_max}")

    allowR = mask.Sx.copy()
    allowR[0] = False
    allowM = mask.Su.copy()
    if closure == "strict":
        allowR[-1] = False if T > 1 else allowR[-1]
        allowM[-1] = False
    idxR = -np.ones((N, T, n, n), dtype=int)
    idxM = -np.ones((N, T, m, n), dtype=int)
    nR, nM = int(allowR.sum()), int(allowM.sum())
    per = nR + nM
    for i in range(N):
        idxR[i][allowR] = i * per + np.arange(nR)
        idxM[i][allowM] = i * per + nR + np.arange(nM)
    n_kernel = N * per

    # equalities ---------------------------------------------------------------
    eq = _Builder()
    for i in range(N):
        for k in range(T):  # relation between tap k+1 (0-based k) and the next one
            last = k == T - 1
            for j in range(n):
                for row in range(n):
                    cols, vals = [], []
                    rhs = 0.0
                    if not last:
                        c = idxR[i, k + 1, row, j]
                        if c >= 0:
                            cols.append(c)
                            vals.append(1.0)
                    sgn = -1.0 if not last else 1.0
                    if k == 0:
                        rhs = -sgn * A[row, j]
                    else:
                        cr = idxR[i, k, :, j]
                        sel = cr >= 0
                        cols.extend(cr[sel])
                        vals.extend(sgn * A[row, sel])
                    cm = idxM[i, k, :, j]
                    sel = cm >= 0
                    cols.extend(cm[sel])
                    vals.extend(sgn * B[row, sel])
                    fam = "fir-closure" if last else "fir-recursion"
                    if not any(v != 0 for v in vals):
                        if abs(rhs) > 0:
                            raise SynthesisInfeasible("mask" if fam == "fir-recursion" else fam,
                                                      f"zone {i + 1}, tap {k + 1}, entry ({row}, {j}) has no free "
                                                      "variables but a nonzero requirement")
                        continue
                    eq.add(cols, vals, rhs, rhs, fam)
        if integral and i in integral:
            for j in integral[i]:
                for row in range(n):
                    cr = idxR[i, :, row, j]
                    sel = cr >= 0
                    rhs = -1.0 if row == j else 0.0
                    if not sel.any():
                        if rhs:
                            raise SynthesisInfeasible("integral", f"zone {i + 1}, column {j} has no free taps")
                        continue
                    eq.add(cr[sel], np.ones(sel.sum()), rhs, rhs, "integral")

    # inequalities ---------------------------------------------------------------
    free_vars = np.arange(n_kernel)
    zone_width_ok = widths > 0
    use_x = np.isfinite(safety.x_max)
    use_u = np.isfinite(safety.u_max)
    # slack per kernel variable, only for zones that enter a finite bound
    slack_of = -np.ones(n_kernel, dtype=int)
    d = n_kernel
    need = np.zeros(n_kernel, bool)
    for i in range(N):
        if not zone_width_ok[i]:
            continue
        if use_x:
            need[idxR[i][idxR[i] >= 0]] = True
        if use_u:
            need[idxM[i][idxM[i] >= 0]] = True
    slack_of[need] = d + np.arange(need.sum())
    d += int(need.sum())
    sx = -np.ones(N, int)
    su = -np.ones(N, int)
    for i in range(N):
        if zone_width_ok[i] and use_x:
            sx[i] = d
            d += 1
        if zone_width_ok[i] and use_u:
            su[i] = d
            d += 1

    is_state = np.zeros(n_kernel, bool)
    is_state[idxR[idxR >= 0]] = True
    ineq = _Builder()
    for v in free_vars[need]:
        fam = "state-safety" if is_state[v] else "input-safety"
        ineq.add([v, slack_of[v]], [1.0, -1.0], -np.inf, 0.0, fam)
        ineq.add([v, slack_of[v]], [1.0, 1.0], 0.0, np.inf, fam)
    for i in range(N):
        if sx[i] >= 0:
            for row in range(n):
                c = idxR[i, :, row, :]
                c = slack_of[c[c >= 0]]
                ineq.add(np.append(c, sx[i]), np.append(np.ones(c.size), -1.0), -np.inf, -1.0, "state-safety")
        if su[i] >= 0:
            for row in range(m):
                c = idxM[i, :, row, :]
                c = slack_of[c[c >= 0]]
                ineq.add(np.append(c, su[i]), np.append(np.ones(c.size), -1.0), -np.inf, 0.0, "input-safety")
    if use_x and (sx >= 0).any():
        sel = sx >= 0
        ineq.add(sx[sel], widths[sel], -np.inf, safety.x_max, "state-safety")
    if use_u and (su >= 0).any():
        sel = su >= 0
        ineq.add(su[sel], widths[sel], -np.inf, safety.u_max, "input-safety")

    # cost -------------------------------------------------------------------------
    hr, hc, hv = [], [], []
    for idx, W in ((idxR, Q), (idxM, P)):
        rows_dim = W.shape[0]
        for k in range(T):
            for j in range(n):
                blk = idx[:, k, :, j].ravel()  # zone-major, then row
                sel = blk >= 0
                if not sel.any():
                    continue
                K = np.kron(a, W).ravel().reshape(N * rows_dim, N * rows_dim)
                vi = blk[sel]
                Ks = K[np.ix_(sel, sel)]
                ii, jj = np.meshgrid(vi, vi, indexing="ij")
                nz = Ks != 0
                hr.append(ii[nz])
                hc.append(jj[nz])
                hv.append(2.0 * Ks[nz])
    if hr:
        H = sp.csc_matrix((np.concatenate(hv), (np.concatenate(hr), np.concatenate(hc))), shape=(d, d))
    else:
        H = sp.csc_matrix((d, d))
    const = float(np.trace(Q) * a.sum())

    Aeq, beq, _ = eq.matrix(d)
    Ain, lo, hi = ineq.matrix(d)
    qp = QpProblem(H=H, g=np.zeros(d), Aeq=Aeq, beq=beq, Ain=Ain, lo=lo, hi=hi, const=const)
    return BlendProgram(qp, idxR, idxM, eq.family, ineq.family, n_kernel)


def _unpack(prog: BlendProgram, z, sys, T) -> list[FirClm]:
    N = prog.idxR.shape[0]
    zones = []
    for i in range(N):
        R = np.zeros((T, sys.n, sys.n))
        M = np.zeros((T, sys.m, sys.n))
        R[0] = np.eye(sys.n)
        sel = prog.idxR[i] >= 0
        R[sel] = z[prog.idxR[i][sel]]
        sel = prog.idxM[i] >= 0
        M[sel] = z[prog.idxM[i][sel]]
        zones.append(FirClm(R, M))
    return zones


def _binding_family(prog: BlendProgram, z) -> str:
    C, l, u = prog.qp.stacked()
    Cz = C @ z
    viol = np.maximum(l - Cz, 0) + np.maximum(Cz - u, 0)
    fams = list(prog.eq_family) + list(prog.in_family)
    worst = {}
    for f, v in zip(fams, viol):
        worst[f] = max(worst.get(f, 0.0), float(v))
    return max(worst, key=worst.get) if worst else "fir-closure"


def synthesize_blend(sys: LinearSystem, Q, P, T: int, radii, dist: DisturbanceModel | None, safety: SafetySpec,
                     mask: LocalityMask | None = None, projection: str = "saturation", *,
                     alpha: AlphaMoments | np.ndarray | None = None, closure: str = "general",
                     integral: dict | None = None, tol: float = DEFAULT_TOL,
                     validate_tol: float = 1e-6, solver_opts: SolverOptions | None = None) -> SynthesisResult:
    """Solve the blended constrained-LQR program and return a validated blend.

    ``alpha`` may be supplied directly; otherwise it is computed from
    ``dist`` by quadrature.
    """
    if projection not in KINDS:
        raise ValueError(f"unknown projection {projection!r}")
    if T < 2:
        raise ValueError("synthesis needs T >= 2")
    r = check_radii(radii)
    if not np.isclose(r[-1], safety.eta_max, rtol=1e-12, atol=1e-12):
        raise ValueError(f"outer radius {r[-1]} must equal eta_max = {safety.eta_max}")
    if alpha is None:
        if dist is None:
            raise ValueError("either dist or alpha is required")
        alpha = alpha_moments(dist, r).alpha
    alpha = np.asarray(getattr(alpha, "alpha", alpha), float)

    prog = build_blend_program(sys, Q, P, T, r, alpha, safety, mask, closure, integral)
    opts = solver_opts or SolverOptions(eps_prim=tol, eps_dual=tol, eps_comp=tol)
    sol = solve(prog.qp, opts)
    if sol.status == INFEASIBLE:
        raise SynthesisInfeasible(_binding_family(prog, sol.z), "certified by the QP solver")
    if sol.status != OPTIMAL:
        raise SynthesisMaxIter(f"QP solver stopped with status {sol.status} "
                               f"(prim {sol.prim_res:.2e}, dual {sol.dual_res:.2e}, {sol.iterations} iterations)")

    zones = _unpack(prog, sol.z, sys, T)
    for i, zclm in enumerate(zones):
        rep = validate_fir_clm(zclm, sys, tol=validate_tol, closure=closure)
        if not rep:
            raise SynthesisError(f"zone {i + 1} fails FIR validation (residual {rep.max_residual:.3g})")
    blend = BlendClm(tuple(zones), tuple(float(x) for x in r), projection)
    xb, ub = worst_case_peak(blend)
    active = {
        "x_peak_bound": xb,
        "u_peak_bound": ub,
        "x_max": safety.x_max,
        "u_max": safety.u_max,
        "state_safety_active": bool(np.isfinite(safety.x_max) and xb >= safety.x_max - 1e-6),
        "input_safety_active": bool(np.isfinite(safety.u_max) and ub >= safety.u_max - 1e-6),
    }
    return SynthesisResult(
        blend=blend,
        objective=float(sol.objective),
        solver=sol.summary(),
        active=active,
        alpha=alpha,
        mask=mask,
        kkt=(sol.prim_res, sol.dual_res, sol.comp_res),
    )


def synthesize_linear(sys: LinearSystem, Q, P, T: int, dist: DisturbanceModel | None, safety: SafetySpec,
                      mask: LocalityMask | None = None, projection: str = "saturation", **kwargs) -> SynthesisResult:
    """Linear baseline: the single-zone program with radius ``eta_max``."""
    return synthesize_blend(sys, Q, P, T, (safety.eta_max,), dist, safety, mask, projection, **kwargs)
