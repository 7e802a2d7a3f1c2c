"""Quality-consistency, bit-accuracy and R-D comparison metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Score of a perfectly flat quality trace. Kept as a float internally so it
# orders above every finite score; serializers must write it as "INF".
INFINITE = math.inf
INF_TOKEN = "INF"

BD_RATE = "bd_rate"
BD_QUALITY = "bd_quality"


class BdError(ValueError):
    """Raised when two R-D curves cannot be compared."""


@dataclass(frozen=True)
class RdPoint:
    rate: float
    quality: float


@dataclass(frozen=True)
class ConsistencyReport:
    stdvar_psnr: float
    stdvar_ssim: float
    sqc_psnr: float
    sqc_ssim: float
    bra: float


def stdvar(values: Sequence[float]) -> float:
    """Population standard deviation (divides by N)."""
    n = len(values)
    if n == 0:
        raise ValueError("stdvar of an empty list")
    if min(values) == max(values):
        return 0.0
    mean = math.fsum(values) / n
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / n)


def sqc(values: Sequence[float]) -> float:
    s = stdvar(values)
    return INFINITE if s == 0.0 else 1.0 / s


def is_infinite(score: float) -> bool:
    return score == INFINITE


def format_score(score: float) -> str:
    return INF_TOKEN if is_infinite(score) else repr(float(score))


def parse_score(text: str) -> float:
    return INFINITE if text == INF_TOKEN else float(text)


def bra(tbr: float, abr: float) -> float:
    """Bit-rate accuracy in percent, symmetric in over/undershoot."""
    if not tbr > 0:
        raise ValueError("target rate must be positive")
    return max(0.0, (1.0 - abs(tbr - abr) / tbr) * 100.0)


def consistency_report(psnr: Sequence[float], ssim: Sequence[float],
                       tbr: float, abr: float) -> ConsistencyReport:
    return ConsistencyReport(stdvar(psnr), stdvar(ssim), sqc(psnr), sqc(ssim), bra(tbr, abr))


def _curve_arrays(curve: Sequence[RdPoint], label: str) -> tuple[np.ndarray, np.ndarray]:
    if len(curve) < 4:
        raise BdError(f"curve {label} needs at least 4 points, got {len(curve)}")
    rate = np.array([p.rate for p in curve], dtype=float)
    quality = np.array([p.quality for p in curve], dtype=float)
    if np.any(rate <= 0):
        raise BdError(f"curve {label} has non-positive rates")
    order = np.argsort(rate)
    rate, quality = rate[order], quality[order]
    if np.any(np.diff(rate) <= 0):
        raise BdError(f"curve {label} rates are not strictly increasing")
    if not (np.all(np.diff(quality) > 0) or np.all(np.diff(quality) < 0)):
        raise BdError(f"curve {label} quality is not monotone in rate")
    return np.log10(rate), quality


def _avg_poly_gap(xa, ya, xb, yb) -> float:
    lo = max(xa.min(), xb.min())
    hi = min(xa.max(), xb.max())
    if not hi > lo:
        raise BdError("curves do not overlap")
    ia = np.polyint(np.polyfit(xa, ya, 3))
    ib = np.polyint(np.polyfit(xb, yb, 3))
    area_a = np.polyval(ia, hi) - np.polyval(ia, lo)
    area_b = np.polyval(ib, hi) - np.polyval(ib, lo)
    return float((area_b - area_a) / (hi - lo))


def bd_metric(curve_a: Sequence[RdPoint], curve_b: Sequence[RdPoint], mode: str) -> float:
    """Bjøntegaard delta of ``curve_b`` relative to ``curve_a``.

    ``bd_quality`` is the mean quality gain at equal rate (quality units);
    ``bd_rate`` is the mean rate change at equal quality, in percent.
    """
    la, qa = _curve_arrays(curve_a, "a")
    lb, qb = _curve_arrays(curve_b, "b")
    if mode == BD_QUALITY:
        return _avg_poly_gap(la, qa, lb, qb)
    if mode == BD_RATE:
        delta = _avg_poly_gap(qa, la, qb, lb)
        return (10.0 ** delta - 1.0) * 100.0
    raise ValueError(f"unknown BD mode {mode!r}")


def buffer_extremes(trace: Sequence[float]) -> tuple[float, float, float]:
    if not trace:
        raise ValueError("empty buffer trace")
    above = sum(1 for v in trace if v > 0)
    return min(trace), max(trace), above / len(trace)
