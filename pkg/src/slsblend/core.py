"""Plants, FIR closed-loop maps and their evaluation.

A linear FIR closed-loop map (CLM) of horizon ``T`` for the plant
``x_t = A x_{t-1} + B u_{t-1} + w_t`` is the pair of kernels
``R_1..R_T`` (n x n) and ``M_1..M_T`` (m x n) with

    x_t = sum_{k=1}^{min(t+1, T)} R_k w_{t+1-k}
    u_t = sum_{k=1}^{min(t+1, T)} M_k w_{t+1-k}

It is realizable iff ``R_1 = I``, ``R_{k+1} = A R_k + B M_k`` and
``A R_T + B M_T = 0``.  A :class:`BlendClm` stacks ``N`` such maps, one per
disturbance zone.

Kernels are stored as dense arrays of shape ``(T, n, n)`` and ``(T, m, n)``;
index ``k - 1`` holds tap ``k``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .projections import KINDS, check_radii, zone_decompose

DEFAULT_TOL = 1e-8
CLM_SCHEMA = "slsblend.clm/1"


class StructureError(ValueError):
    """Dimension or structural mismatch between plant, CLM or mask."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise StructureError(f"A must be square and nonempty, got shape {A.shape}")
        if B.ndim != 2 or B.shape[0] != A.shape[0] or B.shape[1] < 1:
            raise StructureError(f"B must be {A.shape[0]} x m with m >= 1, got shape {B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("plant matrices must be finite")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def step(self, x, u, w) -> np.ndarray:
        return self.A @ x + self.B @ u + w

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist()}


@dataclass(frozen=True)
class FirClm:
    R: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        M = np.asarray(self.M, dtype=float)
        if R.ndim != 3 or R.shape[1] != R.shape[2] or R.shape[0] < 1:
            raise StructureError(f"R must have shape (T, n, n), got {R.shape}")
        if M.ndim != 3 or M.shape[0] != R.shape[0] or M.shape[2] != R.shape[1]:
            raise StructureError(f"M must have shape (T, m, n) = ({R.shape[0]}, m, {R.shape[1]}), got {M.shape}")
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "M", _frozen(M))

    @property
    def T(self) -> int:
        return self.R.shape[0]

    @property
    def n(self) -> int:
        return self.R.shape[1]

    @property
    def m(self) -> int:
        return self.M.shape[1]

    def R_concat(self) -> np.ndarray:
        """Row-wise concatenation ``[R_T, ..., R_1]``."""
        return np.hstack(self.R[::-1])

    def M_concat(self) -> np.ndarray:
        return np.hstack(self.M[::-1])


@dataclass(frozen=True)
class BlendClm:
    zones: tuple
    radii: tuple
    projection: str = "saturation"

    def __post_init__(self):
        zones = tuple(self.zones)
        if not zones:
            raise StructureError("a blend needs at least one zone")
        r = check_radii(self.radii)
        if r.size != len(zones):
            raise StructureError(f"{len(zones)} zones but {r.size} radii")
        if self.projection not in KINDS:
            raise ValueError(f"unknown projection {self.projection!r}")
        z0 = zones[0]
        for z in zones[1:]:
            if (z.T, z.n, z.m) != (z0.T, z0.n, z0.m):
                raise StructureError("all zone CLMs must share T, n and m")
        object.__setattr__(self, "zones", zones)
        object.__setattr__(self, "radii", tuple(float(x) for x in r))

    @property
    def N(self) -> int:
        return len(self.zones)

    @property
    def T(self) -> int:
        return self.zones[0].T

    @property
    def n(self) -> int:
        return self.zones[0].n

    @property
    def m(self) -> int:
        return self.zones[0].m

    @property
    def eta_max(self) -> float:
        return self.radii[-1]

    def widths(self) -> np.ndarray:
        """Zone widths ``eta_i - eta_{i-1}``."""
        return np.diff(np.concatenate([[0.0], self.radii]))

    def to_dict(self) -> dict:
        return {
            "schema": CLM_SCHEMA,
            "n": self.n,
            "m": self.m,
            "T": self.T,
            "projection": self.projection,
            "zones": [
                {"eta": eta, "R": z.R.tolist(), "M": z.M.tolist()}
                for eta, z in zip(self.radii, self.zones)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BlendClm":
        try:
            zones = [FirClm(np.asarray(z["R"], float), np.asarray(z["M"], float)) for z in doc["zones"]]
            radii = [float(z["eta"]) for z in doc["zones"]]
            blend = cls(tuple(zones), tuple(radii), doc.get("projection", "saturation"))
        except (KeyError, TypeError) as exc:
            raise StructureError(f"malformed CLM document: {exc}") from exc
        for key in ("n", "m", "T"):
            if key in doc and int(doc[key]) != getattr(blend, key):
                raise StructureError(f"CLM header {key}={doc[key]} disagrees with kernels ({getattr(blend, key)})")
        return blend


def single_zone(clm: FirClm, eta: float, projection: str = "saturation") -> BlendClm:
    return BlendClm((clm,), (float(eta),), projection)


def save_blend(blend: BlendClm, path, extra: dict | None = None) -> None:
    doc = blend.to_dict()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1))


def load_blend(path) -> tuple[BlendClm, dict]:
    """Load a CLM file; returns the blend and the full document."""
    doc = json.loads(Path(path).read_text())
    return BlendClm.from_dict(doc), doc


@dataclass
class ValidationReport:
    init_residual: float
    step_residuals: list = field(default_factory=list)
    closure_residual: float = 0.0
    tol: float = DEFAULT_TOL

    @property
    def max_residual(self) -> float:
        return max([self.init_residual, self.closure_residual, *self.step_residuals])

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol

    def __bool__(self) -> bool:
        return self.passed


def validate_fir_clm(clm: FirClm, sys: LinearSystem, tol: float = DEFAULT_TOL,
                     closure: str = "general") -> ValidationReport:
    """Check the realizability conditions of a FIR CLM.

    ``closure="general"`` requires ``A R_T + B M_T = 0``; ``"strict"``
    requires ``R_T = 0`` and ``M_T = 0`` instead.
    """
    if clm.n != sys.n or clm.m != sys.m:
        raise StructureError(f"CLM is ({clm.n}, {clm.m}) but plant is ({sys.n}, {sys.m})")
    A, B = sys.A, sys.B
    init = float(np.max(np.abs(clm.R[0] - np.eye(sys.n))))
    steps = [float(np.max(np.abs(clm.R[k + 1] - A @ clm.R[k] - B @ clm.M[k]))) for k in range(clm.T - 1)]
    if closure == "general":
        close = float(np.max(np.abs(A @ clm.R[-1] + B @ clm.M[-1])))
    elif closure == "strict":
        close = float(max(np.max(np.abs(clm.R[-1])), np.max(np.abs(clm.M[-1]))))
    else:
        raise ValueError(f"unknown closure variant {closure!r}")
    return ValidationReport(init, steps, close, tol)


def _as_sequence(w, n: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim == 1 and n == 1:
        w = w.reshape(-1, 1)
    if w.ndim != 2 or w.shape[1] != n:
        raise StructureError(f"disturbance sequence must have shape (H, {n}), got {w.shape}")
    return w


def _convolve(K: np.ndarray, w: np.ndarray) -> np.ndarray:
    H = w.shape[0]
    out = np.zeros((H, K.shape[1]))
    for k in range(min(K.shape[0], H)):
        out[k:] += w[: H - k] @ K[k].T
    return out


def clm_convolve(clm: FirClm, w) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate a linear FIR CLM on a finite disturbance sequence ``w`` (H x n)."""
    w = _as_sequence(w, clm.n)
    return _convolve(clm.R, w), _convolve(clm.M, w)


def blend_apply(blend: BlendClm, w) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate a blended CLM: zone-decompose each ``w_t`` then convolve per zone."""
    w = _as_sequence(w, blend.n)
    pieces = zone_decompose(blend.radii, blend.projection, w)
    x = np.zeros((w.shape[0], blend.n))
    u = np.zeros((w.shape[0], blend.m))
    for zone, d in zip(blend.zones, pieces):
        xi, ui = clm_convolve(zone, d)
        x += xi
        u += ui
    return x, u


def peak_gain(concat) -> float:
    """Induced infinity-norm: largest absolute row sum."""
    X = np.atleast_2d(np.asarray(concat, dtype=float))
    if X.size == 0:
        raise ValueError("peak_gain of an empty matrix")
    return float(np.max(np.sum(np.abs(X), axis=1)))


def stack_zone_kernels(blend: BlendClm) -> tuple[np.ndarray, np.ndarray]:
    """Kernels with zones side by side: shapes ``(T, n, N n)`` and ``(T, m, N n)``."""
    R = np.concatenate([z.R for z in blend.zones], axis=2)
    M = np.concatenate([z.M for z in blend.zones], axis=2)
    return R, M
