"""Controller inputs {TBPP, AvgQP, SvarQP} and their period-to-period accuracy."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

FEATURE_NAMES = ("tbpp", "avgqp", "svarqp")


class FeaturesUnavailable(LookupError):
    """No finished intra period to borrow QP statistics from."""


@dataclass(frozen=True)
class FeatureVector:
    tbpp: float
    avgqp: float
    svarqp: float

    def __post_init__(self):
        if not self.tbpp > 0 or self.svarqp < 0 or not 0 <= self.avgqp <= 51:
            raise ValueError(f"invalid feature vector {self}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.tbpp, self.avgqp, self.svarqp)


@dataclass(frozen=True)
class FeatureAccuracy:
    aerr_avgqp: float
    aerr_svarqp: float
    racc_avgqp: float
    racc_svarqp: float
    pairs: int
    skipped_avgqp: int = 0
    skipped_svarqp: int = 0


def tbpp(remaining_target_bits: float, width: int, height: int, remaining_frames: int) -> float:
    if remaining_frames <= 0:
        raise ValueError("no remaining frames")
    if width <= 0 or height <= 0:
        raise ValueError("frame dimensions must be positive")
    return remaining_target_bits / (width * height * remaining_frames)


def qp_stats(qps: Sequence[int]) -> tuple[float, float]:
    """Mean and population standard deviation of the QPs of one intra period."""
    n = len(qps)
    if n == 0:
        raise ValueError("no QPs to summarize")
    mean = math.fsum(qps) / n
    return mean, math.sqrt(math.fsum((q - mean) ** 2 for q in qps) / n)


def equivalent_features(history, ledger, seq) -> FeatureVector:
    """Features for the period about to start.

    TBPP comes from the budget still open at the period start; the QP
    statistics are borrowed from the period that just finished, since
    neighbouring periods code at similar QP levels.
    """
    if not history:
        raise FeaturesUnavailable("no completed intra period; use the first-period model")
    prev = history[-1]
    rate = tbpp(ledger.remaining_bits, seq.width, seq.height, ledger.remaining_frames)
    # an overdrawn budget floors at 1% of the overall per-frame budget, as in allocation
    floor = 0.01 * ledger.abw_all / (seq.width * seq.height)
    return FeatureVector(max(rate, floor), prev.avgqp, prev.svarqp)


def _adjacent_accuracy(stats: Sequence[float]) -> tuple[float, float, int]:
    pairs = list(zip(stats, stats[1:]))
    aerr = math.fsum(abs(a - b) for a, b in pairs) / len(pairs)
    accs = [(1.0 - abs((a - b) / b)) * 100.0 for a, b in pairs if b != 0]
    skipped = len(pairs) - len(accs)
    racc = math.fsum(accs) / len(accs) if accs else math.nan
    return aerr, racc, skipped


def feature_accuracy(log) -> FeatureAccuracy:
    """Mean absolute error and relative accuracy of using period i for period i+1.

    Pairs whose next-period statistic is zero cannot enter the relative
    accuracy and are only counted in the skip tallies.
    """
    periods = log.periods
    if len(periods) < 2:
        raise ValueError("need at least two intra periods")
    a_aerr, a_racc, a_skip = _adjacent_accuracy([p.avgqp for p in periods])
    s_aerr, s_racc, s_skip = _adjacent_accuracy([p.svarqp for p in periods])
    return FeatureAccuracy(a_aerr, s_aerr, a_racc, s_racc, len(periods) - 1, a_skip, s_skip)
