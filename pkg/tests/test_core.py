import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slsblend.core import (BlendClm, FirClm, LinearSystem, StructureError, blend_apply, clm_convolve, load_blend,
                           peak_gain, save_blend, single_zone, validate_fir_clm)
from slsblend.projections import project_kind

from conftest import random_fir, random_schur

SCALAR = LinearSystem([[0.5]], [[1.0]])
DEADBEAT = FirClm(np.array([[[1.0]], [[0.0]]]), np.array([[[-0.5]], [[0.0]]]))


def test_linear_system_shapes():
    s = LinearSystem(np.eye(2), [1.0, 0.0])
    assert (s.n, s.m) == (2, 1)
    with pytest.raises(StructureError):
        LinearSystem(np.ones((2, 3)), np.ones((2, 1)))
    with pytest.raises(StructureError):
        LinearSystem(np.eye(2), np.ones((3, 1)))
    with pytest.raises(ValueError):
        LinearSystem([[np.inf]], [[1.0]])


def test_deadbeat_validates():
    rep = validate_fir_clm(DEADBEAT, SCALAR)
    assert rep.passed
    assert rep.max_residual == 0.0


def test_broken_recursion_reported():
    bad = FirClm(np.array([[[1.0]], [[0.0]]]), np.array([[[0.0]], [[0.0]]]))
    rep = validate_fir_clm(bad, SCALAR)
    assert not rep
    assert rep.step_residuals[0] == pytest.approx(0.5)


def test_strict_closure_variant():
    # general closure holds but R_T = 0, M_T = 0 does not
    clm = FirClm(np.array([[[1.0]], [[0.5]]]), np.array([[[0.0]], [[-0.25]]]))
    assert validate_fir_clm(clm, SCALAR, closure="general")
    assert not validate_fir_clm(clm, SCALAR, closure="strict")
    with pytest.raises(ValueError):
        validate_fir_clm(clm, SCALAR, closure="loose")


def test_validate_dimension_mismatch():
    with pytest.raises(StructureError):
        validate_fir_clm(DEADBEAT, LinearSystem(np.eye(2), np.eye(2)))


def test_convolve_deadbeat_impulse():
    x, u = clm_convolve(DEADBEAT, np.array([1.0, 0, 0, 0]).reshape(-1, 1))
    np.testing.assert_array_equal(x.ravel(), [1, 0, 0, 0])
    np.testing.assert_array_equal(u.ravel(), [-0.5, 0, 0, 0])


def test_convolve_zero():
    x, u = clm_convolve(DEADBEAT, np.zeros((5, 1)))
    assert not x.any() and not u.any()


def test_impulse_reads_kernel(rng):
    sys = LinearSystem(random_schur(3, rng), np.eye(3))
    clm = random_fir(sys, 5, rng)
    w = np.zeros((8, 3))
    w[0, 0] = 1.0
    x, u = clm_convolve(clm, w)
    for t in range(8):
        if t < 5:
            np.testing.assert_array_equal(x[t], clm.R[t][:, 0])
            np.testing.assert_array_equal(u[t], clm.M[t][:, 0])
        else:
            assert not x[t].any() and not u[t].any()


def test_peak_gain_examples():
    assert peak_gain(np.eye(2)) == 1.0
    assert peak_gain([[1, -2], [0.5, 0.5]]) == 3.0
    with pytest.raises(ValueError):
        peak_gain(np.zeros((0, 0)))


@settings(max_examples=30)
@given(st.integers(1, 4), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_peak_gain_equals_sign_enumeration(rows, cols, seed):
    X = np.random.default_rng(seed).standard_normal((rows, cols))
    best = max(np.max(np.abs(X @ np.array(s))) for s in itertools.product((-1.0, 1.0), repeat=cols))
    assert peak_gain(X) == pytest.approx(best, rel=1e-12)


@settings(max_examples=30)
@given(st.integers(1, 4), st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_clm_is_dynamically_consistent(n, T, seed):
    rng = np.random.default_rng(seed)
    sys = LinearSystem(random_schur(n, rng), np.eye(n))
    clm = random_fir(sys, T, rng)
    H = 3 * T
    w = rng.standard_normal((H, n))
    w[H // 2:] = 0.0
    x, u = clm_convolve(clm, w)
    xp = w[0].copy()
    for t in range(1, H):
        xp = sys.A @ xp + sys.B @ u[t - 1] + w[t]
        np.testing.assert_allclose(xp, x[t], atol=1e-10 * (1 + np.abs(x).max()))
    # FIR death: nothing left T steps after the last nonzero disturbance
    assert np.abs(x[H // 2 - 1 + T:]).max(initial=0) <= 1e-10 * (1 + np.abs(x).max())


def test_single_zone_blend_is_projected_convolution(rng):
    sys = LinearSystem(random_schur(2, rng), np.eye(2))
    clm = random_fir(sys, 4, rng)
    w = rng.uniform(-2, 2, (10, 2))
    blend = single_zone(clm, 1.0)
    x, u = blend_apply(blend, w)
    xr, ur = clm_convolve(clm, project_kind("saturation", 1.0, w))
    np.testing.assert_allclose(x, xr, atol=1e-14)
    small = 0.5 * w / np.abs(w).max()
    np.testing.assert_allclose(blend_apply(blend, small)[0], clm_convolve(clm, small)[0], atol=1e-14)


def test_identical_zones_telescope(rng):
    sys = LinearSystem(random_schur(2, rng), np.eye(2))
    clm = random_fir(sys, 3, rng)
    w = rng.uniform(-3, 3, (9, 2))
    blend = BlendClm((clm, clm), (0.4, 1.5))
    x, u = blend_apply(blend, w)
    xr, ur = clm_convolve(clm, project_kind("saturation", 1.5, w))
    np.testing.assert_allclose(x, xr, atol=1e-12)
    np.testing.assert_allclose(u, ur, atol=1e-12)


def _straight_line_two_zone(blend, w):
    # direct double sum over taps and time with explicit projections
    (c1, c2), (e1, e2) = blend.zones, blend.radii
    H, T = w.shape[0], blend.T
    x = np.zeros((H, blend.n))
    u = np.zeros((H, blend.m))
    for t in range(H):
        for k in range(1, min(T, t + 1) + 1):
            wk = w[t + 1 - k]
            p1 = np.clip(wk, -e1, e1)
            p2 = np.clip(wk, -e2, e2)
            x[t] += c1.R[k - 1] @ p1 + c2.R[k - 1] @ (p2 - p1)
            u[t] += c1.M[k - 1] @ p1 + c2.M[k - 1] @ (p2 - p1)
    return x, u


def test_two_zone_matches_straight_line(rng):
    sys = LinearSystem(random_schur(3, rng), np.eye(3))
    blend = BlendClm((random_fir(sys, 4, rng), random_fir(sys, 4, rng)), (0.3, 1.0))
    w = rng.uniform(-1, 1, (12, 3))
    x, u = blend_apply(blend, w)
    xr, ur = _straight_line_two_zone(blend, w)
    np.testing.assert_allclose(x, xr, atol=1e-12)
    np.testing.assert_allclose(u, ur, atol=1e-12)


def test_equal_radii_silence_outer_zones(rng):
    sys = LinearSystem(random_schur(2, rng), np.eye(2))
    z = [random_fir(sys, 3, rng) for _ in range(3)]
    w = rng.uniform(-4, 4, (7, 2))
    full = blend_apply(BlendClm(tuple(z), (0.7, 0.7, 0.7)), w)
    only = blend_apply(BlendClm((z[0],), (0.7,)), w)
    np.testing.assert_array_equal(full[0], only[0])
    np.testing.assert_array_equal(full[1], only[1])


def test_blend_structure_errors(rng):
    sys = LinearSystem(random_schur(2, rng), np.eye(2))
    a = random_fir(sys, 3, rng)
    b = random_fir(sys, 4, rng)
    with pytest.raises(StructureError):
        BlendClm((a, b), (0.5, 1.0))
    with pytest.raises(StructureError):
        BlendClm((a,), (0.5, 1.0))
    with pytest.raises(ValueError):
        BlendClm((a, a), (1.0, 0.5))
    with pytest.raises(StructureError):
        blend_apply(BlendClm((a,), (1.0,)), np.zeros((4, 3)))


def test_json_round_trip(tmp_path, rng):
    sys = LinearSystem(random_schur(2, rng), np.eye(2))
    blend = BlendClm((random_fir(sys, 3, rng), random_fir(sys, 3, rng)), (0.25, 1.0), "radial")
    path = tmp_path / "clm.json"
    save_blend(blend, path, {"objective": 1.5})
    back, doc = load_blend(path)
    assert doc["objective"] == 1.5
    assert back.projection == "radial" and back.radii == blend.radii
    for z0, z1 in zip(blend.zones, back.zones):
        np.testing.assert_array_equal(z0.R, z1.R)
        np.testing.assert_array_equal(z0.M, z1.M)


def test_malformed_document_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"zones": [{"eta": 1.0}]}))
    with pytest.raises(StructureError):
        load_blend(p)
    doc = {"n": 2, "zones": [{"eta": 1.0, "R": [[[1.0]]], "M": [[[0.0]]]}]}
    with pytest.raises(StructureError):
        BlendClm.from_dict(doc)
