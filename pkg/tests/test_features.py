import math

import pytest

from rclab.features import (FeaturesUnavailable, FeatureVector, equivalent_features,
                            feature_accuracy, qp_stats, tbpp)
from rclab.ratecontrol import BandwidthLedger, PeriodSummary, baseline_iqp, encode_sequence
from rclab.surrogate import generate_sequence


def _period(k, qps):
    avg, svar = qp_stats(qps)
    return PeriodSummary(k, 8 * k, len(qps), qps[0], avg, svar, 1000.0)


class _Log:
    def __init__(self, stats):
        self.periods = [PeriodSummary(k, 0, 8, 30, a, s, 1.0) for k, (a, s) in enumerate(stats)]


def test_tbpp_examples():
    assert tbpp(64000, 8, 8, 10) == 100.0
    assert tbpp(64000, 16, 8, 10) == 50.0
    assert tbpp(1, 1, 1, 1) == 1.0
    with pytest.raises(ValueError):
        tbpp(1, 1, 1, 0)


def test_qp_stats_examples():
    assert qp_stats([30, 30, 30, 30]) == (30, 0)
    assert qp_stats([28, 32]) == (30, 2)
    avg, svar = qp_stats([27, 29, 31, 33])
    assert avg == 30 and svar == pytest.approx(math.sqrt(5))
    with pytest.raises(ValueError):
        qp_stats([])


def test_equivalent_features_example():
    s = generate_sequence("px8", 1, "steady", 10)
    s = type(s)(**{**s.__dict__, "width": 8, "height": 8})
    ledger = BandwidthLedger(64000.0, 10)
    fv = equivalent_features((_period(0, [30, 30, 30, 30]),), ledger, s)
    assert fv == FeatureVector(100.0, 30, 0)
    # identical previous periods give identical vectors
    assert equivalent_features((_period(0, [30] * 4),), ledger, s) == fv


def test_equivalent_features_needs_history(seq):
    with pytest.raises(FeaturesUnavailable):
        equivalent_features((), BandwidthLedger(1000.0, 10), seq)


def test_feature_vector_validation():
    with pytest.raises(ValueError):
        FeatureVector(0.0, 30, 0)
    with pytest.raises(ValueError):
        FeatureVector(0.1, 60, 0)
    with pytest.raises(ValueError):
        FeatureVector(0.1, 30, -1)


def test_feature_accuracy_examples():
    acc = feature_accuracy(_Log([(30, 1.0)] * 4))
    assert acc.aerr_avgqp == 0 and acc.racc_avgqp == 100 and acc.racc_svarqp == 100
    acc = feature_accuracy(_Log([(30, 1.0), (32, 1.0)]))
    assert acc.aerr_avgqp == 2 and acc.racc_avgqp == pytest.approx(93.75)


def test_feature_accuracy_skips_zero_denominators():
    acc = feature_accuracy(_Log([(30, 1.0), (30, 0.0), (30, 2.0)]))
    assert acc.skipped_svarqp == 1 and acc.racc_svarqp == pytest.approx(0.0)  # 1 - 2/2
    with pytest.raises(ValueError):
        feature_accuracy(_Log([(30, 1.0)]))


def test_equivalent_features_match_previous_period_stats(seq, params, rc):
    seen = []

    def provider(ctx):
        if ctx.history:
            seen.append((equivalent_features(ctx.history, ctx.ledger, seq), ctx.history[-1]))
        return baseline_iqp(ctx)
    lg = encode_sequence(seq, rc, params, provider)
    assert len(seen) == len(lg.periods) - 1
    for fv, prev in seen:
        qps = [f.qp for f in lg.frames[prev.start_frame:prev.start_frame + prev.n_frames]]
        assert (fv.avgqp, fv.svarqp) == qp_stats(qps)


def test_tbpp_follows_ledger_direction(params, rc):
    from rclab.ratecontrol import constant_iqp
    s = generate_sequence("dir", 3, "steady", 48)
    for qp, sign in ((10, -1), (50, 1)):
        rates = []

        def provider(ctx):
            if ctx.history:
                rates.append(equivalent_features(ctx.history, ctx.ledger, s).tbpp)
            return qp
        encode_sequence(s, rc.with_rate(2e6), params, provider)
        diffs = [b - a for a, b in zip(rates, rates[1:])]
        assert all(sign * d >= -1e-12 for d in diffs)
