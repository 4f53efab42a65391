"""Closed-loop simulation, disturbance generators and trajectory metrics.

Loop order for one step (plant ``x_{t+1} = A x_t + B sat(u_t) + w_{t+1}``,
``x_0 = w_0``)::

    u_t     = ctrl.step(x_t + v_t)        # v perturbs the controller only
    u_raw_t = u_t + d_t
    u_sat_t = clip(u_raw_t, -u_max, u_max)  (if saturation is enabled)

A trajectory whose state leaves ``|x|_inf <= DIVERGENCE_THRESHOLD`` (or turns
non-finite) is cut at that step and flagged as diverged.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .controller import IntegralController
from .core import BlendClm, LinearSystem, StructureError, blend_apply
from .diststats import DisturbanceModel

DIVERGENCE_THRESHOLD = 1e6
GEN_KINDS = ("iid-truncated-gaussian", "worst-case-bang", "staggered-steps", "impulse", "custom-sequence")
MC_TRAJECTORIES = 200
MC_STEPS = 2000


@dataclass
class SimConfig:
    plant: LinearSystem
    horizon: int
    u_max: float | None = None
    d: np.ndarray | None = None
    v: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.u_max is not None and not self.u_max > 0:
            raise ValueError("u_max must be positive")
        n, m = self.plant.n, self.plant.m
        for name, width in (("d", m), ("v", n)):
            seq = getattr(self, name)
            if seq is not None:
                seq = np.asarray(seq, dtype=float).reshape(-1, width)
                if seq.shape[0] < self.horizon:
                    raise StructureError(f"perturbation {name} is shorter than the horizon")
                setattr(self, name, seq)

    @property
    def saturate_input(self) -> bool:
        return self.u_max is not None


@dataclass
class Trajectory:
    x: np.ndarray
    u_raw: np.ndarray
    u_sat: np.ndarray
    w: np.ndarray
    what: np.ndarray
    diverged: bool = False
    diverged_at: int | None = None

    @property
    def horizon(self) -> int:
        return self.x.shape[0]

    @property
    def u(self) -> np.ndarray:
        return self.u_sat

    def peaks(self) -> dict:
        return {
            "x_peak": float(np.max(np.abs(self.x), initial=0.0)),
            "u_peak": float(np.max(np.abs(self.u_sat), initial=0.0)),
        }

    def to_csv(self, path) -> None:
        n, m = self.x.shape[1], self.u_sat.shape[1]
        header = (["t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_raw_{i + 1}" for i in range(m)]
                  + [f"u_sat_{i + 1}" for i in range(m)] + [f"w_{i + 1}" for i in range(n)])
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for t in range(self.horizon):
                wr.writerow([t] + [repr(float(v)) for v in
                                   np.concatenate([self.x[t], self.u_raw[t], self.u_sat[t], self.w[t]])])


@dataclass
class DisturbanceGen:
    """Disturbance recipe.

    Parameters per kind (defaults in brackets):

    * ``iid-truncated-gaussian``: ``sigma``, ``eta_max`` [1]; i.i.d. in time and space.
    * ``worst-case-bang``: ``eta_max`` [1], ``period`` [24], ``nodes`` [all];
      synchronized square wave starting at ``+eta_max``.
    * ``staggered-steps``: ``nodes`` [8, 10, 12], ``times`` [2, 6, 10],
      ``amplitude`` [0.1]; persistent steps switched on at the given times.
    * ``impulse``: ``node`` [0], ``amplitude`` [1], ``time`` [0].
    * ``custom-sequence``: ``values`` (horizon x n, zero-padded if short).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in GEN_KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}; expected one of {GEN_KINDS}")
        p = self.params
        if self.kind == "iid-truncated-gaussian" and "sigma" not in p:
            raise ValueError("iid-truncated-gaussian needs sigma")
        if self.kind == "worst-case-bang" and int(p.get("period", 24)) < 1:
            raise ValueError("period must be positive")
        if self.kind == "staggered-steps" and len(p.get("nodes", (8, 10, 12))) != len(p.get("times", (2, 6, 10))):
            raise ValueError("staggered-steps needs one time per node")
        if self.kind == "custom-sequence" and "values" not in p:
            raise ValueError("custom-sequence needs values")

    @property
    def bound(self) -> float | None:
        """Declared sup-norm bound of every emitted vector, if any."""
        p = self.params
        if self.kind in ("iid-truncated-gaussian", "worst-case-bang"):
            return float(p.get("eta_max", 1.0))
        if self.kind == "staggered-steps":
            return abs(float(p.get("amplitude", 0.1))) * len(p.get("nodes", (8, 10, 12)))
        if self.kind == "impulse":
            return abs(float(p.get("amplitude", 1.0)))
        return None

    def to_dict(self) -> dict:
        params = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return {"kind": self.kind, "params": params}


def gen_disturbance(gen: DisturbanceGen, horizon: int, n: int, seed: int | np.random.SeedSequence = 0) -> np.ndarray:
    """Disturbance sequence of shape ``(horizon, n)``; reproducible under ``seed``."""
    p = gen.params
    w = np.zeros((horizon, n))
    if gen.kind == "iid-truncated-gaussian":
        dist = DisturbanceModel("truncated-gaussian", float(p.get("eta_max", 1.0)), float(p["sigma"]))
        return dist.sample(np.random.default_rng(seed), (horizon, n))
    if gen.kind == "worst-case-bang":
        eta = float(p.get("eta_max", 1.0))
        period = int(p.get("period", 24))
        nodes = list(p.get("nodes", range(n)))
        half = period / 2
        sign = np.where((np.arange(horizon) // half) % 2 == 0, 1.0, -1.0)
        w[:, nodes] = eta * sign[:, None]
        return w
    if gen.kind == "staggered-steps":
        amp = float(p.get("amplitude", 0.1))
        for node, t0 in zip(p.get("nodes", (8, 10, 12)), p.get("times", (2, 6, 10))):
            if not 0 <= node < n:
                raise StructureError(f"step node {node} outside 0..{n - 1}")
            w[int(t0):, node] += amp
        return w
    if gen.kind == "impulse":
        node, t0 = int(p.get("node", 0)), int(p.get("time", 0))
        if not 0 <= node < n:
            raise StructureError(f"impulse node {node} outside 0..{n - 1}")
        if t0 < horizon:
            w[t0, node] = float(p.get("amplitude", 1.0))
        return w
    vals = np.asarray(p["values"], dtype=float).reshape(-1, n)
    k = min(horizon, vals.shape[0])
    w[:k] = vals[:k]
    return w


def simulate(cfg: SimConfig, ctrl, gen) -> Trajectory:
    """Run ``ctrl`` in closed loop; ``gen`` is a :class:`DisturbanceGen` or an explicit ``(H, n)`` array."""
    plant = cfg.plant
    n, m, H = plant.n, plant.m, cfg.horizon
    if getattr(ctrl, "n", n) != n or getattr(ctrl, "m", m) != m:
        raise StructureError("controller and plant dimensions differ")
    if isinstance(gen, DisturbanceGen):
        w = gen_disturbance(gen, H, n, cfg.seed)
    else:
        w = np.asarray(gen, dtype=float).reshape(-1, n)
        if w.shape[0] < H:
            raise StructureError("disturbance sequence is shorter than the horizon")
        w = w[:H]
    ctrl.reset()
    X, UR, US, WH = np.zeros((H, n)), np.zeros((H, m)), np.zeros((H, m)), np.zeros((H, n))
    x = w[0].copy()
    diverged_at = None
    for t in range(H):
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_THRESHOLD:
            diverged_at = t
            break
        X[t] = x
        meas = x if cfg.v is None else x + cfg.v[t]
        u = np.asarray(ctrl.step(meas), dtype=float)
        if cfg.d is not None:
            u = u + cfg.d[t]
        us = np.clip(u, -cfg.u_max, cfg.u_max) if cfg.saturate_input else u
        UR[t], US[t], WH[t] = u, us, ctrl.what
        if t + 1 < H:
            x = plant.A @ x + plant.B @ us + w[t + 1]
    if diverged_at is not None:
        k = diverged_at
        return Trajectory(X[:k], UR[:k], US[:k], w[:k], WH[:k], True, k)
    return Trajectory(X, UR, US, w, WH)


def chain_adjacency(nodes: int) -> np.ndarray:
    idx = np.arange(nodes)
    return (np.abs(idx[:, None] - idx[None, :]) == 1).astype(int)


def make_chain_plant(nodes: int, coupling: float = 0.4, actuation: Sequence[int] | None = None) -> LinearSystem:
    """Diffusive chain ``x_i <- (1 - c|N(i)|) x_i + c sum_{j in N(i)} x_j``.

    Inputs enter at the nodes listed in ``actuation`` (every other node,
    starting at 0, by default), one unit input per listed node.
    """
    if nodes < 2:
        raise ValueError("a chain needs at least 2 nodes")
    adj = chain_adjacency(nodes)
    A = coupling * adj + np.diag(1.0 - coupling * adj.sum(axis=1))
    act = list(range(0, nodes, 2)) if actuation is None else [int(a) for a in actuation]
    B = np.zeros((nodes, len(act)))
    B[act, np.arange(len(act))] = 1.0
    return LinearSystem(A, B)


def actuated_nodes(plant: LinearSystem) -> list[int]:
    """Nodes driven by each input, for plants whose B columns are unit vectors."""
    B = plant.B
    out = []
    for a in range(plant.m):
        col = B[:, a]
        nz = np.flatnonzero(col)
        if nz.size != 1 or col[nz[0]] != 1.0:
            raise StructureError("B columns must be unit vectors to infer actuated nodes")
        out.append(int(nz[0]))
    return out


def make_integral_controller(plant: LinearSystem, kp: float = 0.6, ki: float = 0.15,
                             actuation: Sequence[int] | None = None) -> IntegralController:
    act = actuated_nodes(plant) if actuation is None else list(actuation)
    return IntegralController(plant.A, plant.B, act, kp, ki)


# -- metrics --------------------------------------------------------------

@dataclass
class CostEstimate:
    mean: float
    stderr: float
    n_used: int
    n_diverged: int

    @property
    def any_diverged(self) -> bool:
        return self.n_diverged > 0


def stage_costs(traj: Trajectory, Q, P) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    return np.einsum("ti,ij,tj->t", traj.x, Q, traj.x) + np.einsum("ti,ij,tj->t", traj.u_sat, P, traj.u_sat)


def lqr_cost_estimate(trajectories: Sequence[Trajectory], Q, P, burn_in: int = 0) -> CostEstimate:
    """Time-averaged stage cost after ``burn_in``: batch mean and its standard error.

    Diverged trajectories are counted but excluded from the mean.
    """
    if not trajectories:
        raise ValueError("empty trajectory batch")
    vals, bad = [], 0
    for tr in trajectories:
        if tr.diverged:
            bad += 1
            continue
        c = stage_costs(tr, Q, P)[burn_in:]
        if c.size == 0:
            raise ValueError("burn_in leaves no samples")
        vals.append(float(np.mean(c)))
    if not vals:
        return CostEstimate(math.nan, math.nan, 0, bad)
    v = np.asarray(vals)
    se = float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return CostEstimate(float(np.mean(v)), se, v.size, bad)


def monte_carlo(cfg: SimConfig, make_ctrl: Callable[[], object], gen: DisturbanceGen,
                n_traj: int = MC_TRAJECTORIES, jobs: int = 1) -> list[Trajectory]:
    """Independent runs; trajectory ``k`` uses the ``k``-th child of ``SeedSequence(cfg.seed)``."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(n_traj)

    def one(k):
        w = gen_disturbance(gen, cfg.horizon, cfg.plant.n, seeds[k])
        return simulate(cfg, make_ctrl(), w)

    if jobs <= 1:
        return [one(k) for k in range(n_traj)]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(one, range(n_traj)))


@dataclass
class ViolationReport:
    max_x: float
    max_u: float
    first_violation: int | None
    x_max: float
    u_max: float

    @property
    def ok(self) -> bool:
        return self.first_violation is None

    def to_dict(self) -> dict:
        return {"max_x": self.max_x, "max_u": self.max_u, "first_violation": self.first_violation,
                "x_max": self.x_max, "u_max": self.u_max, "ok": self.ok}


def constraint_check(traj: Trajectory, safety, tol: float = 1e-9) -> ViolationReport:
    """Peaks of ``x`` and of the applied ``u`` against ``safety.x_max`` and ``safety.u_max``."""
    ax = np.max(np.abs(traj.x), axis=1) if traj.horizon else np.zeros(0)
    au = np.max(np.abs(traj.u_sat), axis=1) if traj.horizon and traj.u_sat.shape[1] else np.zeros(traj.horizon)
    bad = np.flatnonzero((ax > safety.x_max + tol) | (au > safety.u_max + tol))
    return ViolationReport(float(np.max(ax, initial=0.0)), float(np.max(au, initial=0.0)),
                           int(bad[0]) if bad.size else None, float(safety.x_max), float(safety.u_max))


ENUM_MAX_SIGNS = 20


def bang_enumeration(blend: BlendClm, horizon: int) -> tuple[float, float]:
    """Exact peaks of ``|x|`` and ``|u|`` over all ``+-eta_max`` sign sequences.

    Every coordinate of every ``w_t`` (``t < horizon``) takes either sign, so
    ``2^(n * horizon)`` sequences are evaluated; refused above
    ``2^ENUM_MAX_SIGNS``.
    """
    k = blend.n * horizon
    if k > ENUM_MAX_SIGNS:
        raise ValueError(f"{k} sign choices exceed the enumeration limit {ENUM_MAX_SIGNS}")
    eta = blend.eta_max
    px = pu = 0.0
    for signs in itertools.product((-1.0, 1.0), repeat=k):
        w = eta * np.asarray(signs).reshape(horizon, blend.n)
        x, u = blend_apply(blend, w)
        px = max(px, float(np.max(np.abs(x))))
        pu = max(pu, float(np.max(np.abs(u))))
    return px, pu


def summary(traj: Trajectory, Q=None, P=None, safety=None, burn_in: int = 0) -> dict:
    doc = {"horizon": traj.horizon, "diverged": traj.diverged, "diverged_at": traj.diverged_at}
    doc.update(traj.peaks())
    if Q is not None and P is not None and traj.horizon > burn_in:
        doc["avg_cost"] = float(np.mean(stage_costs(traj, Q, P)[burn_in:]))
    if safety is not None:
        doc["violations"] = constraint_check(traj, safety).to_dict()
    return doc


def write_summary(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))
