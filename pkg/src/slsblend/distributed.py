"""Localized execution of a blended CLM as per-node message-passing agents.

Each node ``i`` owns the scalar ``what_t[i]`` and the rows ``i`` of every
zone's ``R_k``; each actuator owns its rows of ``M_k`` and sits at a node.
After computing ``what_t[i]`` a node broadcasts its zone pieces to every
node within the locality radius; a message crossing ``h`` hops is delivered
``ceil(h * comm_delay)`` steps later.  Agents only read their own inbox,
so a kernel entry that needs undelivered data raises instead of silently
peeking at global state.

Zone pieces of a coordinate must depend on that coordinate alone, which
holds for the saturation projection only.

With a lookback ``tau`` the agents run the anti-windup variant: every
message also carries the sender's residual ``what - P_{eta_N}(what)`` and
node ``i`` subtracts ``sum_{l=1..tau} (A^l)[i, :] r_{t-l}`` from its
estimate, which needs residuals from nodes up to ``tau`` hops away.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BlendClm, LinearSystem, StructureError
from .projections import zone_decompose
from .simulator import DIVERGENCE_THRESHOLD, SimConfig, Trajectory
from .synthesis import hop_distances


class CausalityError(RuntimeError):
    pass


@dataclass
class _Agent:
    node: int
    # list of (k, j, coeffs over zones) with nonzero kernel entries, k >= 1 (0-based tap index)
    terms: list
    inbox: dict

    def gather(self, t: int) -> float:
        acc = 0.0
        for k, j, coeffs in self.terms:
            s = t - k
            if s < 0:
                continue
            try:
                pieces = self.inbox[(j, s)]
            except KeyError:
                raise CausalityError(f"node {self.node} needs w_hat[{j}] from step {s} at step {t}, not delivered")
            acc += float(coeffs @ pieces[:coeffs.size])
        return acc

    def lookback(self, t: int, terms: list) -> float:
        acc = 0.0
        for lag, j, a in terms:
            s = t - lag
            if s < 0:
                continue
            try:
                acc += a * self.inbox[(j, s)][-1]
            except KeyError:
                raise CausalityError(f"node {self.node} needs the residual of node {j} from step {s} "
                                     f"at step {t}, not delivered")
        return acc


def _terms(K, row, skip_first: bool) -> list:
    # K: (T, N, n_out, n) zone kernels; returns sparse (tap, column, zone coeffs)
    out = []
    for k in range(1 if skip_first else 0, K.shape[0]):
        for j in np.flatnonzero(np.any(K[k, :, row, :] != 0, axis=0)):
            out.append((k, int(j), K[k, :, row, j].copy()))
    return out


@dataclass
class DistributedStats:
    messages: int
    max_inbox: int


def distributed_run(plant: LinearSystem, blend: BlendClm, mask, w, cfg: SimConfig | None = None,
                    tol: float = 0.0, tau: int | None = None) -> tuple[Trajectory, DistributedStats]:
    """Simulate the plant under per-node agents; returns the trajectory and traffic counts.

    ``mask`` is the :class:`~slsblend.synthesis.LocalityMask` the blend was
    synthesized under; its provenance supplies the graph, delays and
    actuator placement.  Kernel entries outside the mask (above ``tol``)
    are rejected up front.  ``tau`` selects the anti-windup lookback
    (``None`` runs the plain controller).
    """
    if blend.projection != "saturation":
        raise StructureError("localized execution requires the saturation projection")
    prov = mask.provenance
    for key in ("adjacency", "locality_d", "comm_delay", "actuation"):
        if key not in prov:
            raise StructureError(f"mask provenance lacks {key!r}")
    if mask.T != blend.T or mask.Sx.shape[1] != blend.n or mask.Su.shape[1] != blend.m:
        raise StructureError("mask and blend dimensions differ")
    for i, z in enumerate(blend.zones):
        bad = mask.violations(z, tol)
        if bad:
            raise StructureError(f"zone {i + 1} has {bad} kernel entries outside the locality mask")

    hops = hop_distances(np.asarray(prov["adjacency"]))
    d = int(prov["locality_d"])
    c = float(prov["comm_delay"])
    act = [int(a) for a in prov["actuation"]]
    n, m = blend.n, blend.m
    if cfg is None:
        w_arr = np.asarray(w, dtype=float).reshape(-1, n)
        cfg = SimConfig(plant, w_arr.shape[0])
    H = cfg.horizon
    w = np.asarray(w, dtype=float).reshape(-1, n)[:H]
    if w.shape[0] < H:
        raise StructureError("disturbance sequence is shorter than the horizon")

    R = np.stack([z.R for z in blend.zones], axis=1)  # (T, N, n, n)
    M = np.stack([z.M for z in blend.zones], axis=1)  # (T, N, m, n)
    inboxes = [dict() for _ in range(n)]
    nodes = [_Agent(i, _terms(R, i, skip_first=True), inboxes[i]) for i in range(n)]
    actuators = [_Agent(act[a], _terms(M, a, skip_first=False), inboxes[act[a]]) for a in range(m)]
    look = [[] for _ in range(n)]
    if tau is not None:
        if tau < 0:
            raise ValueError("tau must be nonnegative")
        Al = np.eye(n)
        for lag in range(1, tau + 1):
            Al = Al @ plant.A
            for i in range(n):
                look[i] += [(lag, int(j), float(Al[i, j])) for j in np.flatnonzero(Al[i])]
    eta_N = blend.eta_max
    delay = np.where(np.isfinite(hops), np.ceil(np.nan_to_num(hops, posinf=0) * c - 1e-12), np.inf)
    recipients = [[(i, int(delay[i, j])) for i in range(n) if hops[i, j] <= d] for j in range(n)]
    in_flight: dict[int, list] = {}

    X, UR, US, WH = np.zeros((H, n)), np.zeros((H, m)), np.zeros((H, m)), np.zeros((H, n))
    x = w[0].copy()
    messages = max_inbox = 0
    diverged_at = None
    # kernels reach back T - 1 steps, the lookback tau steps
    keep = max(blend.T, (tau or 0) + 1)
    for t in range(H):
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_THRESHOLD:
            diverged_at = t
            break
        X[t] = x
        meas = x if cfg.v is None else x + cfg.v[t]
        # deliver messages due now (sent at earlier steps)
        for dst, key, val in in_flight.pop(t, []):
            inboxes[dst][key] = val
        what = np.array([meas[i] - nodes[i].gather(t) - nodes[i].lookback(t, look[i]) for i in range(n)])
        for j in range(n):
            pieces = zone_decompose(blend.radii, "saturation", what[j:j + 1])[:, 0]
            pieces = np.append(pieces, what[j] - np.clip(what[j], -eta_N, eta_N))
            for dst, lag in recipients[j]:
                messages += dst != j
                if lag == 0:
                    inboxes[dst][(j, t)] = pieces
                else:
                    in_flight.setdefault(t + lag, []).append((dst, (j, t), pieces))
        u = np.array([a.gather(t) for a in actuators])
        # forget what no kernel can reach any more
        for box in inboxes:
            for key in [key for key in box if key[1] <= t - keep]:
                del box[key]
            max_inbox = max(max_inbox, len(box))
        if cfg.d is not None:
            u = u + cfg.d[t]
        us = np.clip(u, -cfg.u_max, cfg.u_max) if cfg.saturate_input else u
        UR[t], US[t], WH[t] = u, us, what
        if t + 1 < H:
            x = plant.A @ x + plant.B @ us + w[t + 1]
    stats = DistributedStats(messages, max_inbox)
    if diverged_at is not None:
        k = diverged_at
        return Trajectory(X[:k], UR[:k], US[:k], w[:k], WH[:k], True, k), stats
    return Trajectory(X, UR, US, w, WH), stats
