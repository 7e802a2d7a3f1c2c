import pytest
from hypothesis import given
from hypothesis import strategies as st

from rclab.controller import (ControllerState, clip_bounds, determine_iqp, round_half_away,
                              run_lirc)
from rclab.features import FEATURE_NAMES, FeaturesUnavailable, FeatureVector
from rclab.ratecontrol import BandwidthLedger
from rclab.surrogate import generate_corpus
from rclab.svr import constant_model

FV = FeatureVector(0.1, 30.0, 1.0)


def models(v0, v1):
    return constant_model(v0, ["tbpp"]), constant_model(v1, list(FEATURE_NAMES))


def ledger(faster):
    led = BandwidthLedger(1000.0, 10)
    led.consume(50.0 if faster else 150.0)
    led.start_window()
    assert (led.abw_cur > led.abw_all) == faster
    return led


def test_round_half_away():
    assert [round_half_away(v) for v in (30.5, 31.5, -0.5, 29.4)] == [31, 32, -1, 29]


def test_clip_bounds_examples():
    assert clip_bounds((30 + 32) / 2, True) == (28, 31)
    assert clip_bounds(31, False) == (31, 34)
    assert clip_bounds(1, True) == (0, 1)
    assert clip_bounds(50, False) == (50, 51)
    assert clip_bounds(30.5, False) == (31, 34)


def test_period_zero_ignores_bandwidth():
    for faster in (True, False):
        st_ = ControllerState(*models(29.4, 0.0))
        assert determine_iqp(st_, ledger(faster), None, 100) == 29


def test_period_one_clips_up():
    st_ = ControllerState(*models(30.0, 40.0))
    determine_iqp(st_, ledger(False), None, 100)
    assert determine_iqp(st_, ledger(False), FV, 100) == 33


def test_period_three_clips_down():
    st_ = ControllerState(*models(0.0, 20.0), period_index=3, iqp_prev_1=32, iqp_prev_2=30)
    assert determine_iqp(st_, ledger(True), FV, 100) == 28
    rec = st_.decisions[-1]
    assert rec["anchor"] == 31 and rec["bounds"] == [28, 31] and rec["faster"] is True


def test_missing_features_is_an_error():
    st_ = ControllerState(*models(30.0, 30.0), period_index=1, iqp_prev_1=30)
    with pytest.raises(FeaturesUnavailable):
        determine_iqp(st_, ledger(True), None, 100)


def test_registers_shift():
    st_ = ControllerState(*models(30.0, 31.0))
    determine_iqp(st_, ledger(True), None, 100)
    determine_iqp(st_, ledger(False), FV, 100)
    assert (st_.iqp_prev_1, st_.iqp_prev_2, st_.period_index) == (31, 30, 2)


@given(st.integers(0, 51), st.integers(0, 51), st.floats(-10, 60), st.booleans())
def test_clipping_containment_and_direction(p1, p2, pred, faster):
    st_ = ControllerState(*models(0.0, pred), period_index=2, iqp_prev_1=p1, iqp_prev_2=p2)
    iqp = determine_iqp(st_, ledger(faster), FV, 100)
    a = round_half_away((p1 + p2) / 2)
    lo, hi = clip_bounds((p1 + p2) / 2, faster)
    assert lo <= iqp <= hi and abs(iqp - a) <= 3
    assert (iqp <= a) if faster else (iqp >= a)


def test_run_lirc_with_constant_models(params, rc):
    s = generate_corpus(3, 1, "steady", n_frames=48)[0]
    lg = run_lirc(s, rc, params, models(30.0, 30.0))
    assert [p.iqp for p in lg.periods] == [30] * 6
    assert len(lg.decisions) == 6 and lg.decisions[1]["bounds"] is not None


def test_run_lirc_bounds_and_determinism(params, rc):
    s = generate_corpus(4, 1, "steady", n_frames=64)[0]
    m = models(24.0, 45.0)
    a = run_lirc(s, rc, params, m)
    b = run_lirc(s, rc, params, m)
    assert a.to_csv() == b.to_csv() and a.decisions == b.decisions
    for d in a.decisions[1:]:
        anchor = round_half_away(d["anchor"])
        assert abs(d["iqp"] - anchor) <= 3
        assert (d["iqp"] <= anchor) if d["abw_cur"] > d["abw_all"] else (d["iqp"] >= anchor)
