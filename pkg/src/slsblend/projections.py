"""Projection nonlinearities used to split a disturbance into zones.

Two projections onto the infinity-norm ball of radius ``eta`` are provided:

* ``saturation`` clamps every coordinate to ``[-eta, eta]``;
* ``radial`` rescales the whole vector onto the ball when it lies outside.

Both act as the identity inside the ball and coincide for scalar signals.

Note on the scalar clamp: ``sat(w, eta)`` is ``sign(w) * min(|w|, eta)``.
A ``max`` in place of ``min`` would not be a projection at all (it is not
the identity for small ``w``), so ``min`` is the only sensible reading.

All functions accept a single vector of shape ``(n,)`` or a batch of row
vectors of shape ``(H, n)``; for ``radial`` the norm is taken per row.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

KINDS = ("saturation", "radial")


def _check_kind(kind: str) -> None:
    if kind not in KINDS:
        raise ValueError(f"unknown projection kind {kind!r}; expected one of {KINDS}")


def saturate(w, eta: float) -> np.ndarray:
    if eta < 0:
        raise ValueError(f"projection radius must be nonnegative, got {eta}")
    return np.clip(np.asarray(w, dtype=float), -eta, eta)


def radial(w, eta: float) -> np.ndarray:
    if eta < 0:
        raise ValueError(f"projection radius must be nonnegative, got {eta}")
    w = np.asarray(w, dtype=float)
    norm = np.max(np.abs(w), axis=-1, keepdims=True) if w.size else np.zeros(w.shape[:-1] + (1,))
    # scale = eta / |w| outside the ball, 1 inside; w = 0 maps to 0
    outside = norm > eta
    scale = np.divide(eta, norm, out=np.ones_like(norm), where=outside)
    out = w * scale
    # the largest coordinates land exactly on the boundary (no rounding drift)
    on_edge = outside & (np.abs(w) == norm)
    out[on_edge] = np.copysign(eta, w[on_edge])
    return out


@dataclass(frozen=True)
class ProjectionSpec:
    kind: str
    eta: float

    def __post_init__(self):
        _check_kind(self.kind)
        if not self.eta >= 0:
            raise ValueError(f"projection radius must be nonnegative, got {self.eta}")

    def __call__(self, w) -> np.ndarray:
        return project(self, w)


def project(spec: ProjectionSpec, w) -> np.ndarray:
    if spec.kind == "saturation":
        return saturate(w, spec.eta)
    return radial(w, spec.eta)


def project_kind(kind: str, eta: float, w) -> np.ndarray:
    """Shorthand for ``project(ProjectionSpec(kind, eta), w)``."""
    return project(ProjectionSpec(kind, eta), w)


def check_radii(radii: Sequence[float]) -> np.ndarray:
    r = np.asarray(radii, dtype=float).ravel()
    if r.size == 0:
        raise ValueError("at least one zone radius is required")
    if not np.all(np.isfinite(r)):
        raise ValueError("zone radii must be finite")
    if r[0] < 0:
        raise ValueError("zone radii must be nonnegative")
    if np.any(np.diff(r) < 0):
        raise ValueError(f"zone radii must be nondecreasing, got {r.tolist()}")
    return r


def zone_decompose(radii: Sequence[float], kind: str, w) -> np.ndarray:
    """Split ``w`` into the annular pieces ``(P_i - P_{i-1})(w)``.

    Returns an array with a leading zone axis: shape ``(N,) + w.shape``.
    The pieces sum to ``P_{eta_N}(w)``.
    """
    _check_kind(kind)
    r = check_radii(radii)
    w = np.asarray(w, dtype=float)
    out = np.empty((r.size,) + w.shape)
    prev = np.zeros_like(w)
    for i, eta in enumerate(r):
        cur = project_kind(kind, float(eta), w)
        out[i] = cur - prev
        prev = cur
    return out
