"""Ground-truth intra QPs from exhaustive sweeps.

For one sequence and target rate every candidate intra QP is encoded; each
candidate is scored by the reciprocal of its frame-quality spread, candidates
that miss the rate are zeroed out, scores are divided by the FixedQP score at
the same rate, and the best survivor becomes the label.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

from . import metrics
from .features import FeatureVector, equivalent_features
from .ratecontrol import (EncodeLog, RcConfig, constant_iqp, encode_fixed, encode_sequence,
                          fixedqp_search, scope_bits)
from .surrogate import SequenceSpec, SurrogateParams

log = logging.getLogger(__name__)

METRICS = ("psnr", "ssim")
DEFAULT_RANGE = (10, 50)
DEFAULT_THRESHOLD = 95.0  # keep only candidates above 95% bit-rate accuracy
TRAINING_QPS = tuple(range(15, 49, 3))
EVAL_QPS = (22, 27, 32, 37)
# LM_1 rows come from runs with the intra QP forced this far off the label
LM1_OFFSETS = (-8, -4, 0, 4, 8)
LM1_STRIDE = 8


class NoQualifiedCandidate(ValueError):
    pass


@dataclass(frozen=True)
class SweepPoint:
    iqp: int
    abr: float
    bra: float
    stdvar_psnr: float
    stdvar_ssim: float
    sqc_raw: dict
    sqc_screened: dict
    sqc_norm: dict
    error: str = ""
    psnr_frames: tuple = field(default=(), repr=False, compare=False)
    ssim_frames: tuple = field(default=(), repr=False, compare=False)


@dataclass(frozen=True)
class SweepTable:
    sequence: str
    target_bits: float
    target_bitrate: float
    fixedqp_qp: int
    baseline_sqc: dict
    points: tuple[SweepPoint, ...]
    threshold: float | None = None
    normalized: bool = False
    degenerate: dict = field(default_factory=dict)

    def point(self, iqp: int) -> SweepPoint:
        for p in self.points:
            if p.iqp == iqp:
                return p
        raise KeyError(iqp)


def first_period_rate(seq: SequenceSpec, qp: int, params: SurrogateParams) -> float:
    """Bit rate (bits/s) of FixedQP coding of the first intra period."""
    n = min(seq.intra_period, len(seq))
    return scope_bits(seq, qp, params, range(n)) / n * seq.framerate


def _point_from_log(iqp: int, lg: EncodeLog) -> SweepPoint:
    psnr, ssim = tuple(lg.psnr), tuple(lg.ssim)
    raw = {"psnr": metrics.sqc(psnr), "ssim": metrics.sqc(ssim)}
    return SweepPoint(iqp=iqp, abr=lg.actual_bits, bra=lg.bra,
                      stdvar_psnr=metrics.stdvar(psnr), stdvar_ssim=metrics.stdvar(ssim),
                      sqc_raw=raw, sqc_screened=dict(raw), sqc_norm={},
                      psnr_frames=psnr, ssim_frames=ssim)


def _failed_point(iqp: int, exc: Exception) -> SweepPoint:
    zero = {m: 0.0 for m in METRICS}
    return SweepPoint(iqp=iqp, abr=0.0, bra=0.0, stdvar_psnr=math.nan, stdvar_ssim=math.nan,
                      sqc_raw=dict(zero), sqc_screened=dict(zero), sqc_norm={},
                      error=f"{type(exc).__name__}: {exc}")


def sweep_iqp(seq: SequenceSpec, target_bitrate: float, config: RcConfig,
              params: SurrogateParams, iqp_range: tuple[int, int] = DEFAULT_RANGE) -> SweepTable:
    """Encode ``seq`` once per candidate intra QP (forced on every intra frame)."""
    lo, hi = iqp_range
    if not 0 <= lo <= hi <= 51:
        raise ValueError(f"IQP range {iqp_range} outside [0, 51]")
    cfg = config.with_rate(target_bitrate)
    points = []
    target_bits = target_bitrate / seq.framerate * len(seq)
    for iqp in range(lo, hi + 1):
        try:
            lg = encode_sequence(seq, cfg, params, constant_iqp(iqp))
            points.append(_point_from_log(iqp, lg))
        except Exception as exc:  # one bad candidate must not sink the table
            log.warning("%s: IQP %d failed: %s", seq.name, iqp, exc)
            points.append(_failed_point(iqp, exc))
    fq, _ = fixedqp_search(seq, target_bits, params)
    flog = encode_fixed(seq, fq, params, target_bits)
    baseline = {"psnr": metrics.sqc(flog.psnr), "ssim": metrics.sqc(flog.ssim)}
    return SweepTable(seq.name, target_bits, target_bitrate, fq, baseline, tuple(points))


def penalty(bra: float, threshold: float) -> int:
    return 0 if bra > threshold else 1


def screen(table: SweepTable, threshold: float = DEFAULT_THRESHOLD) -> SweepTable:
    """Zero the score of every candidate whose rate accuracy is not above ``threshold``."""
    if not 0 < threshold <= 100:
        raise ValueError("threshold must lie in (0, 100]")
    pts = []
    for p in table.points:
        keep = 1 - penalty(p.bra, threshold)
        pts.append(replace(p, sqc_screened={m: p.sqc_raw[m] * keep if keep else 0.0
                                            for m in METRICS}, sqc_norm={}))
    return replace(table, points=tuple(pts), threshold=threshold, normalized=False)


def normalize_sqc(table: SweepTable) -> SweepTable:
    """Divide screened scores by the FixedQP score at the same rate.

    An infinite FixedQP score leaves the ratio undefined; that metric is
    flagged degenerate and its normalized scores stay empty.
    """
    degenerate = dict(table.degenerate)
    usable = []
    for m in METRICS:
        base = table.baseline_sqc[m]
        if metrics.is_infinite(base) or not base > 0:
            degenerate[m] = "infinite FixedQP score"
        else:
            usable.append(m)
    pts = []
    for p in table.points:
        norm = {}
        for m in usable:
            s = p.sqc_screened[m]
            norm[m] = 0.0 if s == 0.0 else s / table.baseline_sqc[m]
        pts.append(replace(p, sqc_norm=norm))
    return replace(table, points=tuple(pts), normalized=True, degenerate=degenerate)


def select_oiqp(table: SweepTable, metric: str, use_normalized: bool | None = None) -> int:
    """Highest-scoring surviving candidate; ties prefer higher accuracy, then lower QP."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    if use_normalized is None:
        use_normalized = table.normalized
    if use_normalized and metric in table.degenerate:
        raise NoQualifiedCandidate(f"{table.sequence}: {metric} table is degenerate "
                                   f"({table.degenerate[metric]})")
    qualified = [p for p in table.points if p.sqc_screened[metric] > 0]
    if not qualified:
        raise NoQualifiedCandidate(f"{table.sequence}: no IQP candidate above the accuracy threshold")
    score = (lambda p: p.sqc_norm[metric]) if use_normalized else (lambda p: p.sqc_screened[metric])
    best = max(qualified, key=lambda p: (score(p), p.bra, -p.iqp))
    return best.iqp


def label_table(table: SweepTable, threshold: float = DEFAULT_THRESHOLD) -> tuple[SweepTable, dict]:
    """Screen, normalize and pick the label for each metric (None when unavailable)."""
    done = normalize_sqc(screen(table, threshold))
    oiqp = {}
    for m in METRICS:
        try:
            oiqp[m] = select_oiqp(done, m)
        except NoQualifiedCandidate as exc:
            oiqp[m] = None
            log.info("%s", exc)
    return done, oiqp


def label_features(lg: EncodeLog, seq: SequenceSpec) -> FeatureVector:
    """Features paired with a label: whole-budget TBPP and the QP statistics a
    controller would see, averaged over every period that has a successor."""
    tbpp = lg.target_bits / (seq.pixels * len(seq))
    prev = lg.periods[:-1] or lg.periods
    avg = math.fsum(p.avgqp for p in prev) / len(prev)
    svar = math.fsum(p.svarqp for p in prev) / len(prev)
    return FeatureVector(tbpp, avg, svar)


@dataclass(frozen=True)
class LabeledSample:
    sequence: str
    rate_index: int
    features: FeatureVector
    oiqp_psnr: int
    oiqp_ssim: int
    target_bits: float


DATASET_HEADER = ("sequence", "rate_index", "tbpp", "avgqp", "svarqp", "oiqp_psnr", "oiqp_ssim")


def sample_row(s: LabeledSample) -> list:
    f = s.features
    return [s.sequence, s.rate_index, f.tbpp, f.avgqp, f.svarqp, s.oiqp_psnr, s.oiqp_ssim]


def sample_from_row(row: dict) -> LabeledSample:
    return LabeledSample(row["sequence"], int(row["rate_index"]),
                         FeatureVector(float(row["tbpp"]), float(row["avgqp"]), float(row["svarqp"])),
                         int(row["oiqp_psnr"]), int(row["oiqp_ssim"]), 0.0)


def split_names(names: Sequence[str]) -> tuple[list[str], list[str]]:
    """Alternate sequences by name order: even positions train, odd positions test."""
    ordered = sorted(names)
    return ordered[0::2], ordered[1::2]


def samples_for_table(seq: SequenceSpec, rate_index: int, table: SweepTable, oiqp: dict,
                      config: RcConfig, params: SurrogateParams) -> dict:
    """One labeled sample per metric whose label exists; features come from the
    encode at that metric's label."""
    out = {}
    for m in METRICS:
        if oiqp.get(m) is None or m in table.degenerate:
            continue
        lg = encode_sequence(seq, config.with_rate(table.target_bitrate), params,
                             constant_iqp(oiqp[m]))
        out[m] = LabeledSample(seq.name, rate_index, label_features(lg, seq),
                               oiqp.get("psnr") if oiqp.get("psnr") is not None else -1,
                               oiqp.get("ssim") if oiqp.get("ssim") is not None else -1,
                               table.target_bits)
    return out


def build_dataset(corpus: Sequence[SequenceSpec], config: RcConfig, params: SurrogateParams,
                  rate_qps: Sequence[int] = TRAINING_QPS, iqp_range=DEFAULT_RANGE,
                  threshold: float = DEFAULT_THRESHOLD):
    """Sweep every (sequence, rate) and split the labeled samples into train/test.

    Returns ({metric: (train, test)}, tables, excluded) where ``excluded`` lists
    (sequence, rate_index, metric, reason) for samples that could not be labeled.
    """
    if len(corpus) % 2:
        raise ValueError("corpus size must be even to split it in halves")
    train_names, _ = split_names([s.name for s in corpus])
    train_set = set(train_names)
    data = {m: ([], []) for m in METRICS}
    tables = []
    excluded = []
    for seq in sorted(corpus, key=lambda s: s.name):
        for r, qp in enumerate(rate_qps):
            table = sweep_iqp(seq, first_period_rate(seq, qp, params), config, params, iqp_range)
            table, oiqp = label_table(table, threshold)
            tables.append(table)
            samples = samples_for_table(seq, r, table, oiqp, config, params)
            for m in METRICS:
                if m not in samples:
                    reason = table.degenerate.get(m, "no qualified candidate")
                    excluded.append((seq.name, r, m, reason))
                    log.info("excluded %s rate %d (%s): %s", seq.name, r, m, reason)
                    continue
                data[m][0 if seq.name in train_set else 1].append(samples[m])
    return data, tables, excluded


SWEEP_HEADER = ("iqp", "abr", "bra", "stdvar_psnr", "stdvar_ssim",
                "sqc_raw_psnr", "sqc_raw_ssim", "sqc_screened_psnr", "sqc_screened_ssim",
                "sqc_norm_psnr", "sqc_norm_ssim", "error")


def sweep_rows(table: SweepTable) -> list[list]:
    rows = []
    for p in table.points:
        norm = [metrics.format_score(p.sqc_norm[m]) if m in p.sqc_norm else "" for m in METRICS]
        rows.append([p.iqp, p.abr, p.bra, p.stdvar_psnr, p.stdvar_ssim,
                     *(metrics.format_score(p.sqc_raw[m]) for m in METRICS),
                     *(metrics.format_score(p.sqc_screened[m]) for m in METRICS),
                     *norm, p.error])
    return rows


def sweep_header_doc(table: SweepTable, oiqp: dict) -> dict:
    return {
        "sequence": table.sequence,
        "target_bits": table.target_bits,
        "target_bitrate": table.target_bitrate,
        "fixedqp_qp": table.fixedqp_qp,
        "baseline_sqc": {m: metrics.format_score(v) for m, v in table.baseline_sqc.items()},
        "threshold": table.threshold,
        "oiqp": oiqp,
        "degenerate": table.degenerate,
    }


CONTROLLER_ROW_HEADER = ("sequence", "rate_index", "iqp_offset", "period",
                         "tbpp", "avgqp", "svarqp", "label")


def sampled_periods(n_periods: int, stride: int = LM1_STRIDE) -> list[int]:
    """Periods >= 1 to record: the first two, every ``stride``-th one and the last two.

    The edges are where the remaining-budget TBPP moves the most.
    """
    keep = {k for k in range(1, n_periods) if k <= 2 or k % stride == 0 or k >= n_periods - 2}
    return sorted(keep)


def controller_rows(seq: SequenceSpec, target_bitrate: float, iqp: int, config: RcConfig,
                    params: SurrogateParams, stride: int = LM1_STRIDE) -> list[tuple[int, FeatureVector]]:
    """Features as the controller would acquire them at period starts of a run
    whose intra QP is forced to ``iqp``."""
    n_periods = -(-len(seq) // seq.intra_period)
    wanted = set(sampled_periods(n_periods, stride))
    rows = []

    def provider(ctx):
        if ctx.period in wanted:
            rows.append((ctx.period, equivalent_features(ctx.history, ctx.ledger, seq)))
        return iqp

    encode_sequence(seq, config.with_rate(target_bitrate), params, provider)
    return rows


def lm1_rows(seq: SequenceSpec, rate_index: int, target_bitrate: float, label: int,
             config: RcConfig, params: SurrogateParams, offsets=LM1_OFFSETS,
             iqp_range=DEFAULT_RANGE, stride: int = LM1_STRIDE) -> list[list]:
    """LM_1 training rows for one labeled (sequence, rate): every row carries the label.

    Runs that start off the label teach the model where to steer back to,
    which the single per-table sample cannot show.
    """
    lo, hi = iqp_range
    out = []
    for d in offsets:
        q = label + d
        if not lo <= q <= hi:
            continue
        for period, f in controller_rows(seq, target_bitrate, q, config, params, stride):
            out.append([seq.name, rate_index, d, period, f.tbpp, f.avgqp, f.svarqp, label])
    return out
