import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slsblend.controller import AntiWindupController, IntegralController, SlController, internal_dynamics_sim, min_tau
from slsblend.core import BlendClm, LinearSystem, StructureError, blend_apply, single_zone
from slsblend.simulator import SimConfig, make_chain_plant, simulate

from conftest import random_fir, random_schur


def _random_blend(rng, n=3, T=4, radii=(0.3, 1.0), projection="saturation"):
    sys = LinearSystem(random_schur(n, rng), np.eye(n))
    zones = tuple(random_fir(sys, T, rng) for _ in radii)
    return sys, BlendClm(zones, radii, projection)


def test_zero_stream(rng):
    _, blend = _random_blend(rng)
    ctrl = SlController(blend)
    for _ in range(10):
        assert not ctrl.step(np.zeros(3)).any()
        assert not ctrl.what.any()


@pytest.mark.parametrize("projection", ["saturation", "radial"])
def test_closed_loop_realizes_blend(rng, projection):
    sys, blend = _random_blend(rng, projection=projection)
    w = rng.uniform(-1, 1, (30, 3))
    traj = simulate(SimConfig(sys, 30), SlController(blend), w)
    x, u = blend_apply(blend, w)
    np.testing.assert_allclose(traj.x, x, atol=1e-9)
    np.testing.assert_allclose(traj.u, u, atol=1e-9)
    # the internal state reconstructs the disturbance
    np.testing.assert_allclose(traj.what, w, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_reconstruction_property(n, T, seed):
    rng = np.random.default_rng(seed)
    sys, blend = _random_blend(rng, n, T, (0.2, 0.5, 1.0))
    w = rng.uniform(-1, 1, (3 * T, n))
    traj = simulate(SimConfig(sys, 3 * T), SlController(blend), w)
    np.testing.assert_allclose(traj.what, w, atol=1e-9 * (1 + np.abs(traj.x).max()))


def test_anti_windup_equals_sl_within_bound(rng):
    sys, blend = _random_blend(rng)
    w = rng.uniform(-1, 1, (25, 3))
    a = simulate(SimConfig(sys, 25), SlController(blend), w)
    b = simulate(SimConfig(sys, 25), AntiWindupController(blend, sys.A, 2), w)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.u, b.u)


def test_scalar_hand_step():
    sys = LinearSystem([[0.5]], [[1.0]])
    clm = random_fir(sys, 3, np.random.default_rng(0))
    eta = 1.0
    ctrl = AntiWindupController(single_zone(clm, eta), sys.A, 0)
    w = np.array([[2 * eta], [0.3], [0.0]])
    traj = simulate(SimConfig(sys, 3), ctrl, w)
    assert traj.what[0, 0] == pytest.approx(2 * eta)
    assert traj.what[1, 0] == pytest.approx(0.5 * (2 * eta - eta) + 0.3, abs=1e-12)
    assert traj.what[2, 0] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("tau", [0, 1, 3])
def test_closed_loop_follows_internal_dynamics(rng, tau):
    sys, blend = _random_blend(rng)
    w = rng.uniform(-2.5, 2.5, (40, 3))
    traj = simulate(SimConfig(sys, 40), AntiWindupController(blend, sys.A, tau), w)
    ref = internal_dynamics_sim(sys.A, tau, 1.0, "saturation", w)
    np.testing.assert_allclose(traj.what, ref, atol=1e-9 * (1 + np.abs(ref).max()))


def test_min_tau_examples():
    r = min_tau([[0.5]], 5)
    assert (r.tau, r.norm) == (0, 0.5)
    r = min_tau([[0.0, 1.0], [0.0, 0.0]], 5)
    assert (r.tau, r.norm) == (1, 0.0)
    r = min_tau(make_chain_plant(20).A, 30)
    assert not r.found
    assert r.norm == pytest.approx(1.0)
    with pytest.raises(ValueError):
        min_tau([[0.5]], -1)


def test_internal_dynamics_identity_within_bound(rng):
    w = rng.uniform(-1, 1, (20, 2))
    np.testing.assert_array_equal(internal_dynamics_sim(random_schur(2, rng), 1, 1.0, "saturation", w), w)


def test_internal_dynamics_decays_after_kick(rng):
    A = random_schur(3, rng, 0.9)
    res = min_tau(A, 50)
    w = np.zeros((200, 3))
    w[0] = [5.0, -4.0, 3.0]
    what = internal_dynamics_sim(A, res.tau, 1.0, "saturation", w)
    assert np.abs(what).max() <= 5.0 / (1 - res.norm) + 1e-9
    assert np.abs(what[-1]).max() < 1e-6


def test_marginal_scalar_stays_bounded(rng):
    w = rng.uniform(-1, 1, (500, 1))
    w[0] = 5.0
    what = internal_dynamics_sim([[1.0]], 0, 1.0, "saturation", w)
    assert np.abs(what).max() <= 6.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1), st.floats(0.2, 5.0))
def test_gain_bound(n, seed, amp):
    rng = np.random.default_rng(seed)
    A = random_schur(n, rng)
    res = min_tau(A, 200)
    assert res.found
    w = rng.uniform(-amp, amp, (300, n))
    what = internal_dynamics_sim(A, res.tau, 1.0, "saturation", w)
    assert np.abs(what).max() <= np.abs(w).max() / (1 - res.norm) + 1e-9


def test_snapshot_restore(rng):
    sys, blend = _random_blend(rng)
    ctrl = AntiWindupController(blend, sys.A, 1)
    xs = rng.uniform(-3, 3, (12, 3))
    for x in xs[:5]:
        ctrl.step(x)
    snap = ctrl.snapshot()
    tail = [ctrl.step(x) for x in xs[5:]]
    ctrl.restore(snap)
    np.testing.assert_array_equal(tail, [ctrl.step(x) for x in xs[5:]])
    with pytest.raises(StructureError):
        SlController(blend).restore(snap)


def test_dimension_checks(rng):
    sys, blend = _random_blend(rng)
    with pytest.raises(StructureError):
        SlController(blend).step(np.zeros(2))
    with pytest.raises(StructureError):
        AntiWindupController(blend, np.eye(2), 0)
    with pytest.raises(ValueError):
        AntiWindupController(blend, sys.A, -1)


def test_integral_controller_nominal_stability():
    plant = make_chain_plant(20)
    act = list(range(0, 20, 2))
    ctrl = IntegralController(plant.A, plant.B, act)
    assert ctrl.stable
    assert ctrl.spectral_radius == pytest.approx(0.892, abs=5e-4)
    assert not IntegralController(plant.A, plant.B, act, kp=0.0, ki=2.0).stable


def test_integral_controller_law_and_snapshot():
    plant = make_chain_plant(4, actuation=[0, 2])
    ctrl = IntegralController(plant.A, plant.B, [0, 2], kp=0.5, ki=0.25)
    x = np.array([1.0, 9.0, -2.0, 9.0])
    np.testing.assert_allclose(ctrl.step(x), [-0.5, 1.0])
    snap = ctrl.snapshot()
    np.testing.assert_allclose(ctrl.step(x), [-0.75, 1.5])
    ctrl.restore(snap)
    np.testing.assert_allclose(ctrl.step(x), [-0.75, 1.5])
    with pytest.raises(StructureError):
        IntegralController(plant.A, plant.B, [0])
