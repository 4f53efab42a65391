"""Scalar disturbance models and projected second moments.

For zone radii ``eta_1 <= ... <= eta_N`` and a scalar, centered, symmetric
disturbance ``w`` the zone moment matrix is

    alpha[i, j] = E[ d_i(w) d_j(w) ],   d_i = P_{eta_i}(w) - P_{eta_{i-1}}(w)

and the blended LQR cost uses ``Sigma_w = alpha (x) I_n``.  Coordinates are
i.i.d., so scalar integrals suffice; for the radial projection this is the
scalar restriction (both projections agree for n = 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, special, stats

from .projections import check_radii

FAMILIES = ("uniform", "truncated-gaussian", "point-mass-augmented", "point-mass-list")
QUAD_TOL = 1e-10


class QuadratureError(ArithmeticError):
    def __init__(self, msg, estimate):
        super().__init__(f"{msg} (achieved error estimate {estimate:.3g})")
        self.estimate = estimate


@dataclass(frozen=True)
class DisturbanceModel:
    """Scalar i.i.d. disturbance law supported on ``[-eta_max, eta_max]``.

    Families
    --------
    uniform
        Uniform on ``[-eta_max, eta_max]``.
    truncated-gaussian
        ``N(0, sigma^2)`` conditioned on ``|w| <= eta_max`` (renormalized).
    point-mass-augmented
        ``N(0, sigma^2)`` with the tail mass clipped onto atoms at
        ``+-eta_max``; the gaussian is otherwise untouched.
    point-mass-list
        Finite law: ``values`` with ``probs``; must be symmetric.
    """

    family: str
    eta_max: float
    sigma: float | None = None
    values: tuple = ()
    probs: tuple = ()
    _atoms: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown disturbance family {self.family!r}; expected one of {FAMILIES}")
        if not (self.eta_max > 0 and math.isfinite(self.eta_max)):
            raise ValueError("eta_max must be positive and finite")
        if self.family in ("truncated-gaussian", "point-mass-augmented"):
            if self.sigma is None or not self.sigma > 0:
                raise ValueError(f"{self.family} needs a positive sigma")
        atoms = ()
        if self.family == "point-mass-list":
            v = np.asarray(self.values, float)
            p = np.asarray(self.probs, float)
            if v.shape != p.shape or v.size == 0:
                raise ValueError("values and probs must be nonempty and of equal length")
            if np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
                raise ValueError("probs must be nonnegative and sum to 1")
            if np.any(np.abs(v) > self.eta_max):
                raise ValueError("point masses must lie within eta_max")
            order = np.argsort(v)
            if not (np.allclose(v[order], -v[order][::-1]) and np.allclose(p[order], p[order][::-1])):
                raise ValueError("point-mass-list must be symmetric about 0")
            atoms = tuple(zip(v.tolist(), p.tolist()))
            object.__setattr__(self, "values", tuple(v.tolist()))
            object.__setattr__(self, "probs", tuple(p.tolist()))
        elif self.family == "point-mass-augmented":
            tail = float(special.ndtr(-self.eta_max / self.sigma))
            atoms = ((-self.eta_max, tail), (self.eta_max, tail))
        object.__setattr__(self, "_atoms", atoms)

    @classmethod
    def from_dict(cls, doc: dict) -> "DisturbanceModel":
        return cls(
            family=doc["family"],
            eta_max=float(doc["eta_max"]),
            sigma=None if doc.get("sigma") is None else float(doc["sigma"]),
            values=tuple(doc.get("values", ())),
            probs=tuple(doc.get("probs", ())),
        )

    def to_dict(self) -> dict:
        doc = {"family": self.family, "eta_max": self.eta_max}
        if self.sigma is not None:
            doc["sigma"] = self.sigma
        if self.family == "point-mass-list":
            doc["values"] = list(self.values)
            doc["probs"] = list(self.probs)
        return doc

    # -- density ---------------------------------------------------------
    @property
    def atoms(self) -> tuple:
        return self._atoms

    @property
    def has_density(self) -> bool:
        return self.family != "point-mass-list"

    def pdf(self, w) -> np.ndarray:
        """Density of the continuous part (zero outside the support)."""
        w = np.asarray(w, dtype=float)
        inside = np.abs(w) <= self.eta_max
        if self.family == "uniform":
            val = np.full_like(w, 0.5 / self.eta_max)
        elif self.family == "truncated-gaussian":
            z = special.erf(self.eta_max / (self.sigma * math.sqrt(2)))
            val = stats.norm.pdf(w, scale=self.sigma) / z
        elif self.family == "point-mass-augmented":
            val = stats.norm.pdf(w, scale=self.sigma)
        else:
            val = np.zeros_like(w)
        return np.where(inside, val, 0.0)

    def expect(self, g, breakpoints: Sequence[float] = (), even: bool = False) -> tuple[float, float]:
        """``E[g(w)]`` by panel-wise adaptive quadrature plus atoms.

        ``g`` must be vectorized.  Panels are split at ``+-breakpoints``;
        with ``even=True`` only ``[0, eta_max]`` is integrated and doubled.
        Returns ``(value, error_estimate)``.
        """
        total, err = 0.0, 0.0
        if self.has_density:
            b = {0.0, self.eta_max}
            for p in breakpoints:
                p = abs(float(p))
                if 0 < p < self.eta_max:
                    b.add(p)
            pos = sorted(b)
            edges = pos if even else sorted({-x for x in pos} | set(pos))
            for lo, hi in zip(edges[:-1], edges[1:]):
                if hi - lo <= 0:
                    continue
                val, e = integrate.quad(lambda s: float(g(np.array(s)) * self.pdf(np.array(s))), lo, hi,
                                        epsabs=QUAD_TOL / 10, epsrel=1e-12, limit=200)
                total += val
                err += e
            if even:
                total, err = 2 * total, 2 * err
        for v, p in self.atoms:
            total += p * float(g(np.array(v)))
        return total, err

    def total_mass(self) -> float:
        return self.expect(lambda w: np.ones_like(w), even=True)[0]

    def second_moment(self) -> float:
        return self.expect(lambda w: w * w, even=True)[0]

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.family == "uniform":
            return rng.uniform(-self.eta_max, self.eta_max, size=size)
        if self.family == "truncated-gaussian":
            c = self.eta_max / self.sigma
            return stats.truncnorm.rvs(-c, c, scale=self.sigma, size=size, random_state=rng)
        if self.family == "point-mass-augmented":
            return np.clip(rng.normal(0.0, self.sigma, size=size), -self.eta_max, self.eta_max)
        idx = rng.choice(len(self.values), size=size, p=np.asarray(self.probs))
        return np.asarray(self.values)[idx]


@dataclass(frozen=True)
class AlphaMoments:
    radii: tuple
    alpha: np.ndarray
    error: float = 0.0

    @property
    def N(self) -> int:
        return len(self.radii)


def _zone_piece(w, lo: float, hi: float):
    return np.clip(w, -hi, hi) - np.clip(w, -lo, lo)


def alpha_moments(dist: DisturbanceModel, radii: Sequence[float], tol: float = QUAD_TOL) -> AlphaMoments:
    """Zone second-moment matrix for scalar ``w ~ dist``."""
    r = check_radii(radii)
    if r[-1] > dist.eta_max * (1 + 1e-12):
        raise ValueError(f"outer radius {r[-1]} exceeds the disturbance bound {dist.eta_max}")
    edges = np.concatenate([[0.0], r])
    N = r.size
    alpha = np.zeros((N, N))
    worst = 0.0
    for i in range(N):
        for j in range(i, N):
            if edges[i + 1] == edges[i] or edges[j + 1] == edges[j]:
                continue

            def g(w, i=i, j=j):
                return _zone_piece(w, edges[i], edges[i + 1]) * _zone_piece(w, edges[j], edges[j + 1])

            val, err = dist.expect(g, breakpoints=r, even=True)
            worst = max(worst, err)
            alpha[i, j] = alpha[j, i] = val
    if worst > tol:
        raise QuadratureError("zone moment quadrature did not reach tolerance", worst)
    alpha.setflags(write=False)
    return AlphaMoments(tuple(float(x) for x in r), alpha, worst)


def build_sigma_w(alpha, n: int, neg_tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """``Sigma_w = alpha (x) I_n`` and its symmetric square root."""
    a = np.asarray(getattr(alpha, "alpha", alpha), dtype=float)
    a = 0.5 * (a + a.T)
    lam, V = np.linalg.eigh(a)
    if lam.min(initial=0.0) < -neg_tol:
        raise ValueError(f"alpha matrix is not PSD (smallest eigenvalue {lam.min():.3g})")
    root = (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T
    eye = np.eye(n)
    return np.kron(a, eye), np.kron(root, eye)


def sqrt_psd(S) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    S = 0.5 * (S + S.T)
    lam, V = np.linalg.eigh(S)
    if lam.min() < -1e-10 * max(1.0, abs(lam).max()):
        raise ValueError("matrix is not positive semidefinite")
    return (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T
