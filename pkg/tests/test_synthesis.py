import itertools

import numpy as np
import pytest

from slsblend.core import BlendClm, FirClm, LinearSystem, peak_gain, single_zone, validate_fir_clm
from slsblend.diststats import DisturbanceModel, alpha_moments
from slsblend.qp import OracleInfeasible, QpProblem, brute_force_oracle
from slsblend.simulator import bang_enumeration, chain_adjacency
from slsblend.synthesis import (LocalityMask, SafetySpec, SynthesisInfeasible, blend_cost, build_locality_mask,
                                synthesize_blend, synthesize_linear, worst_case_peak)

from conftest import THREE_STATE, THREE_STATE_RADII, THREE_STATE_SAFETY, random_fir, random_schur, tg

SMALL = LinearSystem([[1.1, 0.3], [0.0, 0.9]], [[0.0], [1.0]])
SMALL_SAFETY = SafetySpec(7.5, 3.5, 1.0)
SCALAR = LinearSystem([[0.5]], [[1.0]])
INF = SafetySpec(np.inf, np.inf, 1.0)


def _small(radii, dist=tg(0.3), safety=SMALL_SAFETY, **kw):
    return synthesize_blend(SMALL, np.eye(2), [[1.0]], 6, radii, dist, safety, **kw)


def test_three_state_linear_meets_bounds(three_state_pair):
    _, lin = three_state_pair
    assert validate_fir_clm(lin.blend.zones[0], THREE_STATE)
    xb, ub = worst_case_peak(lin.blend)
    assert xb <= 15 + 1e-6 and ub <= 40 + 1e-6


def test_three_state_blend_valid_and_dominant(three_state_pair):
    blend, lin = three_state_pair
    for z in blend.blend.zones:
        assert validate_fir_clm(z, THREE_STATE, tol=1e-6)
    assert blend.active["x_peak_bound"] <= 15 + 1e-6
    assert blend.active["u_peak_bound"] <= 40 + 1e-6
    assert blend.objective <= lin.objective + 1e-6
    assert max(blend.kkt) <= 1e-8


def test_objective_is_blend_cost(three_state_pair):
    blend, _ = three_state_pair
    assert blend_cost(blend.blend, blend.alpha, np.eye(3), [[10.0]]) == pytest.approx(blend.objective, rel=1e-7)


def test_equal_radii_reduce_to_single_zone():
    two = _small((1.0, 1.0))
    one = _small((1.0,))
    assert two.objective == pytest.approx(one.objective, abs=1e-6)


def test_refinement_never_hurts():
    coarse = _small((0.3, 1.0))
    fine = _small((0.1, 0.3, 1.0))
    assert fine.objective <= coarse.objective + 1e-6


def test_state_bound_below_disturbance_is_infeasible():
    with pytest.raises(SynthesisInfeasible) as e:
        synthesize_linear(THREE_STATE, np.eye(3), [[10.0]], 10, tg(0.1), SafetySpec(0.5, 40.0, 1.0))
    assert e.value.family == "state-safety"
    assert "state-safety infeasible" in str(e.value)


def test_tight_input_bound_is_infeasible():
    with pytest.raises(SynthesisInfeasible):
        synthesize_linear(SMALL, np.eye(2), [[1.0]], 4, tg(0.3), SafetySpec(50.0, 1e-3, 1.0))


def test_bad_arguments():
    with pytest.raises(ValueError):
        _small((0.5,))
    with pytest.raises(ValueError):
        synthesize_blend(SMALL, np.eye(2), [[1.0]], 1, (1.0,), tg(0.3), SMALL_SAFETY)
    with pytest.raises(ValueError):
        synthesize_blend(SMALL, -np.eye(2), [[1.0]], 4, (1.0,), tg(0.3), SMALL_SAFETY)
    with pytest.raises(ValueError):
        SafetySpec(1.0, 0.0, 1.0)


def _quadratic(f, d):
    """Hessian, gradient at 0 and value at 0 of a quadratic, from point evaluations."""
    c = f(np.zeros(d))
    E = np.eye(d)
    fe = np.array([f(E[i]) for i in range(d)])
    fm = np.array([f(-E[i]) for i in range(d)])
    g = (fe - fm) / 2
    H = np.diag(fe + fm - 2 * c)
    for i, j in itertools.combinations(range(d), 2):
        H[i, j] = H[j, i] = f(E[i] + E[j]) - fe[i] - fe[j] + c
    return H, g, c


def test_scalar_plant_matches_sign_enumeration_oracle():
    # two zones, T = 2, variables per zone (R_2, M_1, M_2)
    radii = (0.4, 1.0)
    widths = (0.4, 0.6)
    alpha = alpha_moments(DisturbanceModel("uniform", 1.0), radii).alpha
    safety = SafetySpec(1.3, 0.35, 1.0)

    def to_blend(v):
        zones = tuple(FirClm(np.array([[[1.0]], [[v[3 * i]]]]), np.array([[[v[3 * i + 1]]], [[v[3 * i + 2]]]]))
                      for i in range(2))
        return BlendClm(zones, radii)

    H, g, c = _quadratic(lambda v: blend_cost(to_blend(v), alpha, [[1.0]], [[1.0]]), 6)
    Aeq = np.zeros((4, 6))
    beq = np.zeros(4)
    for i in range(2):
        Aeq[2 * i, 3 * i:3 * i + 2] = [1.0, -1.0]      # R_2 = A + B M_1
        beq[2 * i] = 0.5
        Aeq[2 * i + 1, [3 * i, 3 * i + 2]] = [0.5, 1.0]  # A R_2 + B M_2 = 0
    best = None
    for signs in itertools.product((-1.0, 1.0), repeat=6):
        s = np.array(signs)
        rows = [np.diag(s)]
        xrow = np.zeros(6)
        urow = np.zeros(6)
        for i, w in enumerate(widths):
            xrow[3 * i] = w * s[3 * i]
            urow[3 * i + 1:3 * i + 3] = w * s[3 * i + 1:3 * i + 3]
        Ain = np.vstack(rows + [xrow, urow])
        lo = np.concatenate([np.zeros(6), [-np.inf, -np.inf]])
        hi = np.concatenate([np.full(6, np.inf), [safety.x_max - sum(widths), safety.u_max]])
        prob = QpProblem(H, g, Aeq, beq, Ain, lo, hi, const=c)
        try:
            z = brute_force_oracle(prob)
        except OracleInfeasible:
            continue
        if best is None or prob.objective(z) < best[0]:
            best = (prob.objective(z), z)
    res = synthesize_blend(SCALAR, [[1.0]], [[1.0]], 2, radii, None, safety, alpha=alpha)
    assert res.active["input_safety_active"]
    assert res.objective == pytest.approx(best[0], abs=1e-7)
    got = np.array([[z.R[1, 0, 0], z.M[0, 0, 0], z.M[1, 0, 0]] for z in res.blend.zones]).ravel()
    np.testing.assert_allclose(got, best[1], atol=1e-5)


def test_linear_argmin_independent_of_distribution():
    shapes = [DisturbanceModel("uniform", 1.0),
              DisturbanceModel("point-mass-list", 1.0, values=(-3**-0.5, 3**-0.5), probs=(0.5, 0.5)),
              tg(0.2)]
    sols = [synthesize_linear(SMALL, np.eye(2), [[1.0]], 6, d, SMALL_SAFETY).blend.zones[0] for d in shapes]
    for s in sols[1:]:
        np.testing.assert_allclose(s.R, sols[0].R, atol=1e-6)
        np.testing.assert_allclose(s.M, sols[0].M, atol=1e-6)


def test_blend_cost_examples():
    R = np.zeros((3, 2, 2))
    R[0] = np.eye(2)
    clm = FirClm(R, np.zeros((3, 1, 2)))
    Q = np.diag([2.0, 5.0])
    assert blend_cost(single_zone(clm, 1.0), [[1.0]], Q, [[1.0]]) == pytest.approx(7.0)


def test_blend_cost_linear_expansion(rng):
    clm = random_fir(LinearSystem(random_schur(2, rng), np.eye(2)), 4, rng)
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    P = np.diag([3.0, 1.0])
    s2 = 0.07
    ref = s2 * sum(np.trace(Rk.T @ Q @ Rk) + np.trace(Mk.T @ P @ Mk) for Rk, Mk in zip(clm.R, clm.M))
    assert blend_cost(single_zone(clm, 1.0), [[s2]], Q, P) == pytest.approx(ref, rel=1e-12)


def test_worst_case_peak_examples():
    R = np.zeros((2, 2, 2))
    R[0] = np.eye(2)
    clm = FirClm(R, np.zeros((2, 1, 2)))
    assert worst_case_peak(clm, 0.8) == (0.8, 0.0)
    with pytest.raises(ValueError):
        worst_case_peak(clm)


def test_worst_case_peak_bounds_sign_enumeration():
    res = synthesize_blend(SCALAR, [[1.0]], [[1.0]], 3, (0.3, 1.0), tg(0.4), SafetySpec(1.6, 0.5, 1.0))
    xb, ub = worst_case_peak(res.blend)
    xe, ue = bang_enumeration(res.blend, 8)
    assert xe <= xb + 1e-9 and ue <= ub + 1e-9


def test_linear_peak_attained_by_signs(rng):
    # for one zone the bound is exact once t >= T - 1
    clm = random_fir(LinearSystem(random_schur(2, rng), np.eye(2)), 3, rng)
    xe, ue = bang_enumeration(single_zone(clm, 1.0), 4)
    assert xe == pytest.approx(peak_gain(clm.R_concat()), rel=1e-12)
    assert ue == pytest.approx(peak_gain(clm.M_concat()), rel=1e-12)


def test_mask_complete_graph():
    m = build_locality_mask(np.ones((4, 4)) - np.eye(4), 4, 0.0, [0, 2], 3)
    assert m.Sx.all() and m.Su.all()


def test_mask_three_chain_tridiagonal():
    m = build_locality_mask(chain_adjacency(3), 1, 1.0, [0, 1, 2], 3)
    np.testing.assert_array_equal(m.Sx[0], np.eye(3, dtype=bool))
    np.testing.assert_array_equal(m.Sx[1], [[1, 1, 0], [1, 1, 1], [0, 1, 1]])
    np.testing.assert_array_equal(m.Sx[2], m.Sx[1])


def test_mask_actuation_delay():
    m = build_locality_mask(chain_adjacency(4), 3, 1.0, [1], 4, act_delay=1)
    np.testing.assert_array_equal(m.Su[0], [[0, 0, 0, 0]])
    np.testing.assert_array_equal(m.Su[1], [[0, 1, 0, 0]])
    np.testing.assert_array_equal(m.Su[2], [[1, 1, 1, 0]])


def test_mask_round_trip():
    m = build_locality_mask(chain_adjacency(5), 2, 0.5, [0, 2, 4], 4)
    back = LocalityMask.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.Sx, m.Sx)
    np.testing.assert_array_equal(back.Su, m.Su)
    assert back.provenance == m.provenance


def test_chain_blends_obey_mask(chain_setup, chain_blends):
    plant, _, mask = chain_setup
    for res in chain_blends.values():
        for z in res.blend.zones:
            assert mask.violations(z) == 0
            assert validate_fir_clm(z, plant, tol=1e-6)
        assert res.active["x_peak_bound"] <= 6 + 1e-6
        assert res.active["u_peak_bound"] <= 3.5 + 1e-6


def test_integral_constraint_zeroes_dc_gain(chain_setup, chain_blends):
    _, act, _ = chain_setup
    dc = chain_blends["integral"].blend.zones[0].R.sum(axis=0)[:, act]
    assert np.abs(dc).max() <= 1e-7
    assert np.abs(chain_blends["plain"].blend.zones[0].R.sum(axis=0)[:, act]).max() > 1e-3


def test_masked_small_plant_has_exact_zeros():
    adj = chain_adjacency(2)
    mask = build_locality_mask(adj, 1, 1.0, [1], 6)
    res = _small((0.3, 1.0), safety=INF, mask=mask)
    for z in res.blend.zones:
        assert not z.R[0][~mask.Sx[0]].any()
        assert mask.violations(z) == 0


def test_diagnostics_serializable(three_state_pair):
    import json

    json.dumps(three_state_pair[0].diagnostics())
    assert three_state_pair[0].blend.radii == THREE_STATE_RADII
    assert THREE_STATE_SAFETY.x_max == 15.0
