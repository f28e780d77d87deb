import math
import warnings

import numpy as np
import pytest

from nihigs.describing_fn import DfParams, TuningWarning, df_table, df_table_csv, gamma, harmonic_balance, higs_df, tune_channels
from nihigs.experiments import mems_discrete
from nihigs.plant import dc_gain


def test_gamma():
    p = DfParams(2.0, 4.0)
    assert gamma(2.0, p) == pytest.approx(math.pi / 2)
    assert gamma(0.0, p) == 0.0
    assert math.pi - gamma(1e9, p) < 1e-8
    ws = np.logspace(-3, 3, 50)
    g = [gamma(w, p) for w in ws]
    assert np.all(np.diff(g) > 0) and max(g) < math.pi


def test_df_domain():
    with pytest.raises(ValueError):
        higs_df(0.0, DfParams(1.0, 1.0))
    with pytest.raises(ValueError):
        DfParams(0.0, 1.0)


def test_df_high_ratio_limit():
    # gamma -> pi: D -> (omega_h / omega) (4/pi - j), phase -atan(pi/4)
    p = DfParams(1.0, 1e-4)
    d = higs_df(1.0, p)
    assert math.degrees(np.angle(d)) == pytest.approx(-math.degrees(math.atan(math.pi / 4)), abs=0.1)
    assert abs(math.degrees(math.atan(math.pi / 4)) - 38.15) < 0.01
    np.testing.assert_allclose(d, p.omega_h * (4 / math.pi - 1j), rtol=1e-3)


def test_df_low_ratio_limit():
    assert abs(higs_df(1.0, DfParams(3.0, 3.0e4)) / 3.0 - 1) < 1e-3


def test_df_phase_bound():
    for r, d in df_table(np.logspace(-4, 4, 81)):
        ph = math.degrees(np.angle(d))
        assert -38.2 < ph <= 1e-12


@pytest.mark.parametrize("ratio", [0.05, 0.5, 1.0, 3.0, 20.0])
def test_df_matches_harmonic_balance(ratio):
    p = DfParams(1.5, 1.5 / ratio)
    d, h = higs_df(1.0, p), harmonic_balance(1.0, p)
    assert abs(abs(h) / abs(d) - 1) <= 0.03
    assert abs(math.degrees(np.angle(h / d))) <= 2.0


def test_df_table_csv_rows():
    table = df_table(np.logspace(-2, 2, 20))
    lines = df_table_csv(table).splitlines()
    assert lines[0] == "ratio,magnitude,phase_deg" and len(lines) == 21
    r, mag, ph = map(float, lines[5].split(","))
    d = higs_df(1.0, DfParams(1.0, 1.0 / r))
    assert mag == abs(d) and ph == pytest.approx(math.degrees(np.angle(d)), abs=1e-12)


def test_tune_channels_omega():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        K, Om = tune_channels([0.3, 0.15], [2 * math.pi * 993, 2 * math.pi * 1326], 20e-6, [0.75, 0.85], [1.4, 3.2])
    assert Om[0, 0] == pytest.approx(0.1747, abs=1e-4)
    assert Om[1, 1] == pytest.approx(0.5332, abs=1e-4)
    assert abs(Om[0, 0] / 0.174 - 1) <= 0.005 and abs(Om[1, 1] / 0.532 - 1) <= 0.005
    assert K[0, 0] == pytest.approx(2.5) and K[1, 1] == pytest.approx(0.85 / 0.15)


def test_tune_channels_kappa_from_mems_dc_gain():
    G1 = dc_gain(mems_discrete())
    K, _ = tune_channels(np.diag(G1), [1.0, 1.0], 1e-6, [0.75, 0.85], [1.0, 1.0])
    np.testing.assert_allclose(np.diag(K), [0.75 / G1[0, 0], 0.85 / G1[1, 1]], rtol=1e-15)


def test_tune_channels_warnings_and_errors():
    with pytest.warns(TuningWarning):
        tune_channels([1.0], [1e6], 1.0, [0.5], [1.0])
    with pytest.warns(TuningWarning):
        tune_channels([1e-3, 1e-3], [1.0, 1.0], 1e-3, [0.9, 0.9], [1.0, 1.0], plant=mems_discrete())
    with pytest.raises(ValueError):
        tune_channels([-1.0], [1.0], 1.0, [0.5], [1.0])
    with pytest.raises(ValueError):
        tune_channels([1.0], [1.0], 0.0, [0.5], [1.0])
