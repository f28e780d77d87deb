import json
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from nihigs.plant import (
    ContinuousStateSpace,
    DiscreteStateSpace,
    DiscretizationError,
    PlantError,
    SingularResolventError,
    dc_gain,
    frf_continuous,
    frf_discrete,
    is_minimal,
    load_plant,
    mems_plant,
    plant_from_dict,
    zoh_discretize,
)


def _random_stable(rng, n, m, p):
    A = rng.standard_normal((n, n))
    A -= (np.max(np.linalg.eigvals(A).real) + 1.0) * np.eye(n)
    return ContinuousStateSpace(A, rng.standard_normal((n, m)), rng.standard_normal((p, n)))


def test_zoh_matches_ode_integration(rng):
    # Oracle: integrate dx/dt = A x + B u with u held constant over each period.
    cs = _random_stable(rng, 4, 2, 2)
    ts = 0.05
    ds = zoh_discretize(cs, ts)
    x = rng.standard_normal(4)
    xd = x.copy()
    for _ in range(20):
        u = rng.standard_normal(2)
        sol = solve_ivp(lambda t, z: cs.A @ z + cs.B @ u, (0, ts), x, rtol=1e-12, atol=1e-14, method="DOP853")
        x = sol.y[:, -1]
        xd = ds.A @ xd + ds.B @ u
        np.testing.assert_allclose(xd, x, atol=1e-9)


def test_zoh_scalar_closed_form():
    a, b, ts = -3.0, 2.0, 0.1
    ds = zoh_discretize(ContinuousStateSpace([[a]], [[b]], [[1.0]]), ts)
    assert ds.A[0, 0] == pytest.approx(math.exp(a * ts), rel=1e-14)
    assert ds.B[0, 0] == pytest.approx(b * (math.exp(a * ts) - 1) / a, rel=1e-13)


def test_zoh_overflow_raises():
    with pytest.raises(DiscretizationError):
        zoh_discretize(ContinuousStateSpace([[1e4]], [[1.0]], [[1.0]]), 1.0)


def test_zoh_rejects_bad_period():
    cs = ContinuousStateSpace([[-1.0]], [[1.0]], [[1.0]])
    for ts in (0.0, -1.0, float("nan")):
        with pytest.raises(PlantError):
            zoh_discretize(cs, ts)


def test_dc_gain_matches_long_step_simulation(mems_ds):
    # Oracle: unit step on each input, iterate the recursion to steady state.
    G1 = dc_gain(mems_ds)
    for j in range(2):
        u = np.zeros(2)
        u[j] = 1.0
        x = np.zeros(4)
        for _ in range(60_000):
            x = mems_ds.A @ x + mems_ds.B @ u
        np.testing.assert_allclose(mems_ds.C @ x, G1[:, j], rtol=1e-9, atol=1e-12)


def test_dc_gain_equals_continuous_static_gain(mems_ds):
    cs = mems_plant()
    np.testing.assert_allclose(dc_gain(mems_ds), -cs.C @ np.linalg.solve(cs.A, cs.B), rtol=1e-9)


def test_dc_gain_singular():
    ds = DiscreteStateSpace([[1.0]], [[1.0]], [[1.0]], 1.0)
    with pytest.raises(PlantError):
        dc_gain(ds)


def test_frf_discrete_at_zero_is_dc_gain(mems_ds):
    np.testing.assert_array_equal(frf_discrete(mems_ds, 0.0), dc_gain(mems_ds))


def test_frf_discrete_approaches_continuous_at_low_frequency(mems_ds):
    w = 2 * math.pi * 50.0
    np.testing.assert_allclose(frf_discrete(mems_ds, w), frf_continuous(mems_plant(), w), rtol=1e-2)


def test_frf_singular_on_pole():
    cs = ContinuousStateSpace([[0.0, 1.0], [-1.0, 0.0]], [[0.0], [1.0]], [[1.0, 0.0]])
    with pytest.raises(SingularResolventError) as info:
        frf_continuous(cs, 1.0)
    assert info.value.omega == 1.0


def test_mems_plant_structure():
    cs = mems_plant()
    assert (cs.n, cs.n_inputs, cs.n_outputs) == (4, 2, 2)
    assert cs.C[0, 0] == 18.69 and cs.C[1, 0] == 6.88
    assert is_minimal(cs)
    assert np.all(np.linalg.eigvals(cs.A).real < 0)
    freqs = sorted(set(np.round(np.abs(np.linalg.eigvals(cs.A).imag) / (2 * math.pi))))
    assert freqs[0] == pytest.approx(993, abs=5) and freqs[1] == pytest.approx(1326, abs=5)


def test_is_minimal_detects_uncontrollable():
    cs = ContinuousStateSpace(np.diag([-1.0, -2.0]), [[1.0], [0.0]], [[1.0, 1.0]])
    assert not is_minimal(cs)


def test_state_space_validation():
    with pytest.raises(PlantError):
        ContinuousStateSpace([[1.0, 2.0]], [[1.0]], [[1.0]])
    with pytest.raises(PlantError):
        ContinuousStateSpace([[-1.0]], [[1.0]], [[1.0]], D=[[1.0]])
    with pytest.raises(PlantError):
        ContinuousStateSpace([[np.nan]], [[1.0]], [[1.0]])
    with pytest.raises(PlantError):
        DiscreteStateSpace([[0.5]], [[1.0]], [[1.0]], 0.0)
    cs = mems_plant()
    with pytest.raises(ValueError):
        cs.A[0, 0] = 1.0


def test_plant_document_roundtrip(tmp_path):
    cs = mems_plant()
    doc = {"domain": "continuous", "A": cs.A.tolist(), "B": cs.B.tolist(), "C": cs.C.tolist(), "D": [[0, 0], [0, 0]]}
    path = tmp_path / "plant.json"
    path.write_text(json.dumps(doc))
    loaded = load_plant(path)
    np.testing.assert_array_equal(loaded.A, cs.A)
    ds = plant_from_dict({"domain": "discrete", "A": [[0.5]], "B": [[1]], "C": [[1]], "ts_seconds": 0.1})
    assert isinstance(ds, DiscreteStateSpace) and ds.ts == 0.1
    for bad in ({"domain": "hybrid", "A": [[0]], "B": [[0]], "C": [[0]]},
                {"domain": "discrete", "A": [[0.5]], "B": [[1]], "C": [[1]]},
                {"domain": "continuous", "A": [[0.5]], "B": [[1]]},
                {"domain": "discrete", "A": [[0.5]], "B": [[1]], "C": [[1]], "D": [[1]], "ts_seconds": 1}):
        with pytest.raises(PlantError):
            plant_from_dict(bad)
