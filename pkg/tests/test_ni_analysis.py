import json
import math

import numpy as np
import pytest

from nihigs.ni_analysis import (
    CertificateError,
    check_stability_conditions,
    make_zoh_ni_fixture,
    ni_frequency_check,
    ni_matrix,
    synthesize_storage_matrix,
    verify_zoh_ni_certificate,
)
from nihigs.plant import ContinuousStateSpace, DiscreteStateSpace, dc_gain, frf_continuous, frf_discrete, mems_plant, zoh_discretize

GRID = np.linspace(0.01, 100.0, 500)


def test_first_order_lag_is_ni_everywhere():
    cs = ContinuousStateSpace([[-1.0]], [[1.0]], [[1.0]])
    rep = ni_frequency_check(cs, GRID)
    assert rep.ni_band_edge is None
    lam = np.array([s[1] for s in rep.samples])
    np.testing.assert_allclose(lam, 2 * GRID / (1 + GRID**2), rtol=1e-12)
    assert rep.to_dict()["ni_band_edge"] == "none-detected"


def test_non_ni_detected_at_first_sample():
    # strictly proper part of s/(s+1); same imaginary part, so the same NI verdict
    cs = ContinuousStateSpace([[-1.0]], [[1.0]], [[-1.0]])
    rep = ni_frequency_check(cs, GRID, phase_tol_deg=0.0)
    lam = np.array([s[1] for s in rep.samples])
    np.testing.assert_allclose(lam, -2 * GRID / (1 + GRID**2), rtol=1e-12)
    assert rep.ni_band_edge == pytest.approx(GRID[0])


def test_mems_band_edge():
    grid = 2 * math.pi * np.arange(1.0, 5000.5, 1.0)
    rep = ni_frequency_check(mems_plant(), grid)
    assert 950 <= rep.band_edge_hz <= 1060
    # below the edge every sample is within the 1 degree phase allowance
    tol = 2 * math.sin(math.radians(1.0))
    for w, lam in rep.samples:
        if w < rep.ni_band_edge - 2 * math.pi * 1.0:
            assert lam >= -tol * np.linalg.norm(frf_continuous(mems_plant(), w), 2)
    assert ni_frequency_check(mems_plant(), grid, phase_tol_deg=0.0).band_edge_hz < rep.band_edge_hz
    csv = rep.to_csv().splitlines()
    assert csv[0] == "omega_hz,lambda_min" and len(csv) == len(rep.samples) + 1


def test_singular_sample_flagged():
    cs = ContinuousStateSpace([[0.0, 1.0], [-1.0, 0.0]], [[0.0], [1.0]], [[1.0, 0.0]])
    rep = ni_frequency_check(cs, [0.5, 1.0, 2.0])
    assert 1.0 in rep.flagged
    assert all(w != 1.0 for w, _ in rep.samples)


def test_ni_matrix_hermitian(mems_ds):
    for f in np.linspace(10, 5000, 50):
        M = ni_matrix(frf_discrete(mems_ds, 2 * math.pi * f))
        assert np.max(np.abs(M - M.conj().T)) <= 1e-12 * np.linalg.norm(M)


def test_certificate_scalar_examples():
    ds = DiscreteStateSpace([[0.0]], [[1.0]], [[2.0]], 1.0)
    rep = verify_zoh_ni_certificate(ds, [[2.0]])
    assert rep.passed and rep.residual_equality == pytest.approx(0.0)
    bad = DiscreteStateSpace([[0.0]], [[1.0]], [[2.1]], 1.0)
    rep = verify_zoh_ni_certificate(bad, [[2.0]])
    assert not rep.passed and not rep.equality_ok
    assert rep.failures
    json.loads(rep.to_json())


def test_certificate_rejects_asymmetric_p():
    ds, P = make_zoh_ni_fixture(3, 2, 0)
    P = P.copy()
    P[0, 1] += 1e-6
    with pytest.raises(CertificateError):
        verify_zoh_ni_certificate(ds, P)


def test_synthesis_scalar_exact():
    ds = DiscreteStateSpace([[0.0]], [[1.0]], [[2.0]], 1.0)
    res = synthesize_storage_matrix(ds)
    assert res.found
    assert res.P[0, 0] == pytest.approx(2.0)


def test_synthesis_spring_mass():
    # collocated force input and position output, no damping
    cs = ContinuousStateSpace([[0.0, 1.0], [-4.0, 0.0]], [[0.0], [1.0]], [[1.0, 0.0]])
    ds = zoh_discretize(cs, 0.05)
    res = synthesize_storage_matrix(ds)
    assert res.found
    rep = verify_zoh_ni_certificate(ds, res.P)
    assert rep.passed and rep.residual_equality < 1e-8


def test_synthesis_refuses_non_ni():
    ds = zoh_discretize(ContinuousStateSpace([[-1.0]], [[1.0]], [[-1.0]]), 0.1)
    res = synthesize_storage_matrix(ds)
    assert not res.found
    assert res.P is None or not verify_zoh_ni_certificate(ds, res.P).passed
    assert "not found" in res.reason or res.reason


@pytest.mark.parametrize("seed", range(10))
def test_fixture_and_synthesis_soundness(seed):
    n = 2 + seed % 5
    ds, P = make_zoh_ni_fixture(n, 1 + seed % n, seed)
    rep = verify_zoh_ni_certificate(ds, P, 1e-9)
    assert rep.passed and rep.residual_equality < 1e-10
    res = synthesize_storage_matrix(ds, 1e-9)
    if res.found:
        assert verify_zoh_ni_certificate(ds, res.P, 1e-9).passed


def test_scalar_fixture_is_contraction():
    ds, _ = make_zoh_ni_fixture(1, 1, 0)
    assert abs(ds.A[0, 0]) <= 1


@pytest.mark.parametrize("seed", range(5))
def test_fixture_frequency_consistency(seed):
    # The sampled supply u^T (y[k+1] - y[k]) gives Re[(z - 1) G] >= 0 on the unit
    # circle, i.e. the NI matrix of G advanced by half a sample.
    ds, _ = make_zoh_ni_fixture(4, 2, seed)
    for w in np.linspace(1e-3, math.pi / ds.ts * (1 - 1e-3), 200):
        G = np.exp(0.5j * w * ds.ts) * frf_discrete(ds, w)
        assert np.min(np.linalg.eigvalsh(ni_matrix(G))) >= -1e-8


def test_fixture_preconditions():
    with pytest.raises(ValueError):
        make_zoh_ni_fixture(2, 3, 0)
    with pytest.raises(ValueError):
        make_zoh_ni_fixture(0, 1, 0)


def test_stability_conditions_reference_gains(mems_ds):
    K, Om = np.diag([2.81, 6.25]), np.diag([0.174, 0.532])
    rep = check_stability_conditions(mems_ds, K, Om)
    assert rep.ok
    # independent margin from the dc-gain oracle
    M = np.linalg.inv(K) - dc_gain(mems_ds)
    assert rep.lambda_min_margin == pytest.approx(np.min(np.linalg.eigvalsh(0.5 * (M + M.T))), rel=1e-9)
    assert not check_stability_conditions(mems_ds, K, np.diag([0.0, 0.532])).sector_ok
    assert not check_stability_conditions(mems_ds, K, np.diag([3.0, 0.532])).sector_ok
    assert not check_stability_conditions(mems_ds, 1e3 * K, Om).gain_ok
    with pytest.raises(ValueError):
        check_stability_conditions(mems_ds, [[1.0, 0.1], [0.0, 1.0]], Om)


def test_stability_conditions_continuous_plant_uses_static_gain(mems_ds):
    K, Om = [2.81, 6.25], [0.174, 0.532]
    a = check_stability_conditions(mems_plant(), K, Om)
    b = check_stability_conditions(mems_ds, K, Om)
    assert a.lambda_min_margin == pytest.approx(b.lambda_min_margin, rel=1e-9)
