import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nihigs.higs import Flavor, HigsParams, HigsState, Mode, step
from nihigs.multi_higs import Channel, MultiHigs, controller_from_dict, load_controller, multi_storage, step_multi


def test_channels_match_scalar_steps(rng):
    chans = [Channel(HigsParams(1.0, 0.3), Flavor.BIMODAL), Channel(HigsParams(2.0, 0.5), Flavor.TRIMODAL),
             Channel(HigsParams(0.5, 0.5), Flavor.TRIMODAL)]
    mh = MultiHigs(chans, rng.standard_normal(3))
    for _ in range(200):
        E = rng.standard_normal(3)
        expected = [step(HigsState(x, c.flavor), e, c.params) for x, e, c in zip(mh.state, E, chans)]
        mh, Y, modes = step_multi(mh, E)
        np.testing.assert_array_equal(Y, [r[1] for r in expected])
        assert modes == [r[2] for r in expected]
        np.testing.assert_array_equal(mh.state, Y)


def test_homogeneous_and_properties():
    mh = MultiHigs.homogeneous([2.81, 6.25], [0.174, 0.532], "trimodal")
    assert mh.p == 2
    np.testing.assert_array_equal(mh.K, np.diag([2.81, 6.25]))
    np.testing.assert_array_equal(mh.Omega, np.diag([0.174, 0.532]))
    assert mh.trimodal == [True, True]
    assert mh.with_flavor("bimodal").trimodal == [False, False]
    np.testing.assert_array_equal(mh.state, [0.0, 0.0])
    with pytest.raises(ValueError):
        mh.state[0] = 1.0


def test_validation():
    with pytest.raises(ValueError):
        MultiHigs([])
    with pytest.raises(ValueError):
        MultiHigs.homogeneous([1.0, 2.0], [0.1])
    mh = MultiHigs.homogeneous([1.0, 2.0], [0.1, 0.1])
    with pytest.raises(ValueError):
        step_multi(mh, [1.0])
    with pytest.raises(ValueError):
        mh.with_state([1.0, 2.0, 3.0])


def test_multi_storage():
    assert multi_storage([2.0, 2.0], np.diag([1.0, 4.0])) == pytest.approx(2.5)
    assert multi_storage([2.0, 2.0], [1.0, 4.0]) == pytest.approx(2.5)
    with pytest.raises(ValueError):
        multi_storage([1.0], [0.0])
    with pytest.raises(ValueError):
        multi_storage([1.0, 1.0], [1.0])


vec = st.lists(st.floats(-10, 10), min_size=3, max_size=3)


@settings(max_examples=1000, deadline=None)
@given(X=vec, E=vec, k=st.lists(st.floats(1e-2, 10), min_size=3, max_size=3),
       frac=st.lists(st.floats(0, 1), min_size=3, max_size=3), tri=st.lists(st.booleans(), min_size=3, max_size=3))
def test_composite_sani(X, E, k, frac, tri):
    chans = [Channel(HigsParams(ki, f * ki), Flavor.TRIMODAL if t else Flavor.BIMODAL) for ki, f, t in zip(k, frac, tri)]
    mh = MultiHigs(chans, X)
    nxt, Y, modes = step_multi(mh, E)
    X, E = np.array(X), np.array(E)
    assert multi_storage(Y, k) - multi_storage(X, k) <= E @ (Y - X) + 1e-12
    for m, t in zip(modes, tri):
        assert t or m is not Mode.ZERO


def test_controller_document(tmp_path):
    doc = {"channels": [{"kappa": 2.81, "omega": 0.174}, {"kappa": 6.25, "omega": 0.532, "flavor": "trimodal"}]}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    mh = load_controller(path)
    assert mh.trimodal == [False, True]
    assert controller_from_dict(mh.to_dict()).to_dict() == mh.to_dict()
    for bad, where in (({"channels": [{"kappa": 1.0}]}, "channels[0]"),
                       ({"channels": [{"kappa": -1.0, "omega": 0.1}]}, "channels[0]"),
                       ({"channels": [{"kappa": 1.0, "omega": 0.1}, {"kappa": 1, "omega": 0, "flavor": "x"}]}, "channels[1]"),
                       ({}, "channels")):
        with pytest.raises(ValueError, match=r"channels"):
            controller_from_dict(bad)
        try:
            controller_from_dict(bad)
        except ValueError as exc:
            assert where in str(exc)
