from pathlib import Path

import numpy as np
import pytest

from slsblend.core import FirClm, LinearSystem
from slsblend.diststats import DisturbanceModel
from slsblend.simulator import actuated_nodes, chain_adjacency, make_chain_plant
from slsblend.synthesis import SafetySpec, build_locality_mask, synthesize_blend

RECIPES = Path(__file__).resolve().parent.parent / "recipes"

THREE_STATE = LinearSystem([[1.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 1.0]], [[0.0], [0.0], [1.0]])
THREE_STATE_Q = np.eye(3)
THREE_STATE_P = np.array([[10.0]])
THREE_STATE_SAFETY = SafetySpec(15.0, 40.0, 1.0)
THREE_STATE_T = 10
THREE_STATE_RADII = (0.05, 0.1, 0.2, 1.0)

CHAIN_NODES = 20
CHAIN_T = 12
CHAIN_RADII = (0.2, 1.0)
CHAIN_SAFETY = SafetySpec(6.0, 3.5, 1.0)


def tg(sigma, eta=1.0):
    return DisturbanceModel("truncated-gaussian", eta, sigma)


def random_fir(sys: LinearSystem, T: int, rng, scale=0.5) -> FirClm:
    """Random realizable FIR CLM for a plant with square invertible B."""
    n, m = sys.n, sys.m
    Binv = np.linalg.inv(sys.B)
    R = np.zeros((T, n, n))
    M = np.zeros((T, m, n))
    R[0] = np.eye(n)
    for k in range(T - 1):
        M[k] = scale * rng.standard_normal((m, n))
        R[k + 1] = sys.A @ R[k] + sys.B @ M[k]
    M[T - 1] = -Binv @ sys.A @ R[T - 1]
    return FirClm(R, M)


def random_schur(n, rng, radius=0.95):
    A = rng.standard_normal((n, n))
    rho = max(abs(np.linalg.eigvals(A)))
    return A * (radius * rng.uniform(0.2, 1.0) / rho)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def chain_setup():
    plant = make_chain_plant(CHAIN_NODES)
    act = actuated_nodes(plant)
    mask = build_locality_mask(chain_adjacency(CHAIN_NODES), 5, 0.5, act, CHAIN_T, act_delay=1)
    return plant, act, mask


@pytest.fixture(scope="session")
def chain_blends(chain_setup):
    """Integral (step-rejecting) and plain safe blends on the 20-node chain."""
    plant, act, mask = chain_setup
    Q, P = np.eye(plant.n), np.eye(plant.m)
    common = dict(mask=mask)
    integ = synthesize_blend(plant, Q, P, CHAIN_T, CHAIN_RADII, tg(0.2), CHAIN_SAFETY, integral={0: act}, **common)
    plain = synthesize_blend(plant, Q, P, CHAIN_T, CHAIN_RADII, tg(0.2), CHAIN_SAFETY, **common)
    return {"integral": integ, "plain": plain}


def random_tiny_qp(rng, d_max=6):
    """Feasible strictly convex QP with a few equalities and two-sided rows."""
    from slsblend.qp import QpProblem

    d = int(rng.integers(1, d_max + 1))
    G = rng.standard_normal((d, d))
    H = G @ G.T + 0.1 * np.eye(d)
    g = rng.standard_normal(d) * 3
    z0 = rng.standard_normal(d)
    k = int(rng.integers(0, max(1, d - 1)))
    Aeq = rng.standard_normal((k, d))
    p = int(rng.integers(1, 5))
    Ain = rng.standard_normal((p, d))
    c = Ain @ z0
    lo = c - rng.uniform(0, 1, p)
    hi = c + rng.uniform(0, 1, p)
    lo[rng.uniform(size=p) < 0.25] = -np.inf
    return QpProblem(H, g, Aeq, Aeq @ z0, Ain, lo, hi)


@pytest.fixture(scope="session")
def three_state_pair():
    """Blend and linear solutions on the three-state plant at sigma = 0.02."""
    from slsblend.synthesis import synthesize_linear

    args = (THREE_STATE, THREE_STATE_Q, THREE_STATE_P, THREE_STATE_T)
    blend = synthesize_blend(*args, THREE_STATE_RADII, tg(0.02), THREE_STATE_SAFETY)
    linear = synthesize_linear(*args, tg(0.02), THREE_STATE_SAFETY)
    return blend, linear


# acceptance criteria report one line each at the end of the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
