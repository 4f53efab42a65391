"""State-machine realizations of blended CLMs.

:class:`SlController` runs a :class:`~slsblend.core.BlendClm` from state
measurements alone.  It keeps an estimate ``what`` of past disturbances and

    what_t = x_t - sum_i sum_{k>=2} R^(i)_k D_i(what_{t+1-k})
    u_t    =       sum_i sum_{k>=1} M^(i)_k D_i(what_{t+1-k})

where ``D_i = P_{eta_i} - P_{eta_{i-1}}``.  On the plant
``x_t = A x_{t-1} + B u_{t-1} + w_t`` with ``|w_t| <= eta_N`` the estimate
is exact and the closed loop reproduces ``blend_apply``.

:class:`AntiWindupController` additionally subtracts the open-loop response
to the part of ``what`` the blend ignores (``r = what - P_{eta_N}(what)``)
over a lookback of ``tau`` steps.  Its estimate then obeys

    what_t = A^{tau+1} r_{t-tau-1} + w_t,

which is a contraction whenever ``|A^{tau+1}|_inf < 1`` (see :func:`min_tau`).
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import BlendClm, StructureError, stack_zone_kernels
from .projections import project_kind, zone_decompose


def _inf_norm(M) -> float:
    return float(np.max(np.sum(np.abs(M), axis=1), initial=0.0))


@dataclass
class TauResult:
    tau: int | None
    norm: float

    @property
    def found(self) -> bool:
        return self.tau is not None


def min_tau(A, tau_max: int) -> TauResult:
    """Smallest ``tau`` in ``0..tau_max`` with ``|A^{tau+1}|_inf < 1``.

    ``tau`` is ``None`` when no lookback qualifies; ``norm`` is then the
    smallest norm seen.
    """
    if tau_max < 0:
        raise ValueError("tau_max must be nonnegative")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    P = A.copy()
    best = np.inf
    for tau in range(tau_max + 1):
        nrm = _inf_norm(P)
        if nrm < 1.0:
            return TauResult(tau, nrm)
        best = min(best, nrm)
        P = P @ A
    return TauResult(None, best)


def internal_dynamics_sim(A, tau: int, eta_N: float, projection_kind: str, w) -> np.ndarray:
    """Iterate ``what_t = A^{tau+1} (what - P(what))_{t-tau-1} + w_t``.

    Indices before 0 contribute nothing.  Returns an array shaped like ``w``.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w.reshape(-1, A.shape[0])
    Ap = np.linalg.matrix_power(A, tau + 1)
    what = np.zeros_like(w)
    for t in range(w.shape[0]):
        what[t] = w[t]
        s = t - tau - 1
        if s >= 0:
            r = what[s] - project_kind(projection_kind, eta_N, what[s])
            what[t] += Ap @ r
    return what


def _to_list(a):
    return np.asarray(a).tolist()


class SlController:
    """Measurement-driven realization of a blended CLM (one step per call)."""

    kind = "sl"

    def __init__(self, blend: BlendClm):
        self.blend = blend
        self._R, self._M = stack_zone_kernels(blend)
        self.reset()

    @property
    def n(self) -> int:
        return self.blend.n

    @property
    def m(self) -> int:
        return self.blend.m

    @property
    def T(self) -> int:
        return self.blend.T

    def reset(self) -> None:
        self.t = 0
        # pieces[k] holds the stacked zone pieces of what_{t-k}
        self._pieces = np.zeros((self.T, self.blend.N * self.n))
        self.what = np.zeros(self.n)

    def _decompose(self, what) -> np.ndarray:
        return zone_decompose(self.blend.radii, self.blend.projection, what).reshape(-1)

    def _correction(self, x) -> np.ndarray:
        return np.zeros(self.n)

    def _record(self, what) -> None:
        pass

    def step(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.n:
            raise StructureError(f"expected a state of size {self.n}, got {x.size}")
        # shift: slot k now holds what_{t-k} for k >= 1
        self._pieces = np.roll(self._pieces, 1, axis=0)
        self._pieces[0] = 0.0
        what = x - np.einsum("kij,kj->i", self._R[1:], self._pieces[1:]) - self._correction(x)
        self._pieces[0] = self._decompose(what)
        self._record(what)
        self.what = what
        self.t += 1
        return np.einsum("kij,kj->i", self._M, self._pieces)

    def snapshot(self) -> str:
        return json.dumps(self._state())

    def restore(self, doc: str) -> None:
        self._load(json.loads(doc))

    def _state(self) -> dict:
        return {"kind": self.kind, "t": self.t, "pieces": _to_list(self._pieces), "what": _to_list(self.what)}

    def _load(self, st: dict) -> None:
        if st.get("kind") != self.kind:
            raise StructureError(f"snapshot is for a {st.get('kind')!r} controller, not {self.kind!r}")
        pieces = np.asarray(st["pieces"], dtype=float)
        if pieces.shape != self._pieces.shape:
            raise StructureError("snapshot does not match this controller's dimensions")
        self.t = int(st["t"])
        self._pieces = pieces
        self.what = np.asarray(st["what"], dtype=float)


class AntiWindupController(SlController):
    """SL controller with the residual lookback correction of depth ``tau``.

    ``tau`` is typically :func:`min_tau` of the plant's ``A``.  For plants
    where no such ``tau`` exists (e.g. marginally stable ones) any ``tau``
    may be supplied, but the contraction guarantee then does not hold.
    """

    kind = "anti-windup"

    def __init__(self, blend: BlendClm, A, tau: int):
        if tau < 0:
            raise ValueError("tau must be nonnegative")
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape != (blend.n, blend.n):
            raise StructureError(f"A must be {blend.n} x {blend.n}")
        self.tau = int(tau)
        self.A = A
        # Apow[k] = A^k for k = 0..tau+1
        self.Apow = np.stack([np.linalg.matrix_power(A, k) for k in range(self.tau + 2)])
        super().__init__(blend)

    def reset(self) -> None:
        super().reset()
        self._resid = np.zeros((self.tau + 1, self.n))

    def _correction(self, x) -> np.ndarray:
        # resid slot k-1 holds r_{t+1-k}; shift before use so slot 0 is r_t
        self._resid = np.roll(self._resid, 1, axis=0)
        self._resid[0] = 0.0
        if self.tau == 0:
            return np.zeros(self.n)
        return np.einsum("kij,kj->i", self.Apow[1:self.tau + 1], self._resid[1:])

    def _record(self, what) -> None:
        self._resid[0] = what - project_kind(self.blend.projection, self.blend.eta_max, what)

    def _state(self) -> dict:
        st = super()._state()
        st["tau"] = self.tau
        st["resid"] = _to_list(self._resid)
        return st

    def _load(self, st: dict) -> None:
        if int(st.get("tau", -1)) != self.tau:
            raise StructureError("snapshot tau does not match this controller")
        super()._load(st)
        self._resid = np.asarray(st["resid"], dtype=float)


class IntegralController:
    """Decentralized PI loop on the actuated nodes.

    Actuator ``a`` at node ``p = actuation[a]`` applies
    ``u_a = -kp x_p - ki z_a`` and integrates ``z_a <- z_a + x_p``.
    ``stable`` reports whether the unsaturated loop has spectral radius
    below one; an unstable choice of gains only sets the flag.
    """

    kind = "integral"

    def __init__(self, A, B, actuation, kp: float = 0.6, ki: float = 0.15):
        if not (np.isfinite(kp) and np.isfinite(ki)):
            raise ValueError("gains must be finite")
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        act = np.asarray(actuation, dtype=int)
        n, m = B.shape
        if act.size != m:
            raise StructureError(f"{m} inputs but {act.size} actuated nodes")
        self.kp, self.ki = float(kp), float(ki)
        self.S = np.zeros((m, n))
        self.S[np.arange(m), act] = 1.0
        Acl = np.block([[A - self.kp * B @ self.S, -self.ki * B], [self.S, np.eye(m)]])
        self.spectral_radius = float(np.max(np.abs(np.linalg.eigvals(Acl))))
        self.stable = self.spectral_radius < 1.0
        self.n, self.m = n, m
        self.reset()

    def reset(self) -> None:
        self.t = 0
        self.z = np.zeros(self.m)
        self.what = np.zeros(self.n)

    def step(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.n:
            raise StructureError(f"expected a state of size {self.n}, got {x.size}")
        xs = self.S @ x
        u = -self.kp * xs - self.ki * self.z
        self.z = self.z + xs
        self.t += 1
        return u

    def snapshot(self) -> str:
        return json.dumps({"kind": self.kind, "t": self.t, "z": _to_list(self.z)})

    def restore(self, doc: str) -> None:
        st = json.loads(doc)
        if st.get("kind") != self.kind:
            raise StructureError(f"snapshot is for a {st.get('kind')!r} controller")
        self.t = int(st["t"])
        self.z = np.asarray(st["z"], dtype=float)
