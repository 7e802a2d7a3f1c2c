"""Frame-level R-lambda rate control over the surrogate encoder.

The loop allocates a bit target per frame from the remaining budget, maps it
to a QP through the lambda model, codes the frame, then refits the model and
updates the bandwidth ledger and buffer. Intra QPs come from an external
provider so that different intra policies can be compared under the same
inter-frame control.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

from . import metrics
from .features import qp_stats
from .surrogate import (INTER, INTRA, QP_MAX, QP_MIN, FrameOutcome, SequenceSpec,
                        SurrogateParams, check_qp, encode_constant, evaluate_frame)

LAMBDA_QP_SLOPE = 4.2005
LAMBDA_QP_OFFSET = 13.7122

ALPHA_RANGE = (1e-4, 1e4)
BETA_RANGE = (-3.0, -0.1)
ALPHA_GAIN = 0.1
BETA_GAIN = 0.05

INTRA_POSITION = "intra"


class EncodeError(RuntimeError):
    pass


class RangeWarning(UserWarning):
    """A FixedQP target lies outside what QP 0..51 can reach."""


@dataclass(frozen=True)
class RcConfig:
    target_bitrate: float = 1e6
    intra_period: int = 8
    gop_size: int = 4
    # flat: every inter frame predicts from its predecessor, so no GOP position
    # is referenced more than another
    gop_weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    intra_weight: float = 4.0
    qp_min: int = QP_MIN
    qp_max: int = QP_MAX
    inter_qp_clip: int = 3
    smoothing_window: int = 16
    metric: str = "psnr"
    # starting points of the two lambda models, roughly matched to the surrogate
    intra_alpha: float = 1.0
    intra_beta: float = -1.7
    inter_alpha: float = 0.2
    inter_beta: float = -1.7

    def __post_init__(self):
        if self.intra_period % self.gop_size:
            raise ValueError("intra_period must be a multiple of gop_size")
        if len(self.gop_weights) != self.gop_size:
            raise ValueError("need one GOP weight per GOP position")
        if min(self.gop_weights) <= 0 or self.intra_weight <= 0:
            raise ValueError("weights must be positive")
        if not QP_MIN <= self.qp_min <= self.qp_max <= QP_MAX:
            raise ValueError("need 0 <= qp_min <= qp_max <= 51")
        if self.metric not in ("psnr", "ssim"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.smoothing_window < 1 or self.inter_qp_clip < 0:
            raise ValueError("smoothing_window >= 1 and inter_qp_clip >= 0 required")

    def with_rate(self, bitrate: float) -> "RcConfig":
        return replace(self, target_bitrate=float(bitrate))

    def weight(self, frame_index: int) -> float:
        pos = frame_index % self.intra_period
        if pos == 0:
            return self.intra_weight
        return self.gop_weights[(pos - 1) % self.gop_size]

    @classmethod
    def from_dict(cls, doc: dict) -> "RcConfig":
        doc = dict(doc)
        if "gop_weights" in doc:
            doc["gop_weights"] = tuple(float(w) for w in doc["gop_weights"])
        return cls(**doc)


@dataclass(frozen=True)
class RlModelState:
    alpha: float
    beta: float

    def clamped(self) -> "RlModelState":
        return RlModelState(min(max(self.alpha, ALPHA_RANGE[0]), ALPHA_RANGE[1]),
                            min(max(self.beta, BETA_RANGE[0]), BETA_RANGE[1]))

    def lam(self, bpp: float) -> float:
        return self.alpha * bpp ** self.beta


@dataclass
class BufferState:
    fill_per_frame: float
    occupancy: float = 0.0
    trace: list[float] = field(default_factory=list)

    def step(self, actual_bits: float) -> "BufferState":
        if actual_bits < 0:
            raise ValueError("negative frame size")
        self.occupancy += actual_bits - self.fill_per_frame
        self.trace.append(self.occupancy)
        return self


def buffer_step(buf: BufferState, actual_bits: float) -> BufferState:
    return buf.step(actual_bits)


@dataclass
class BandwidthLedger:
    total_bits: float
    total_frames: int
    remaining_bits: float = 0.0
    remaining_frames: int = 0
    abw_cur: float = 0.0

    def __post_init__(self):
        if self.total_frames < 1 or not self.total_bits > 0:
            raise ValueError("ledger needs a positive budget and at least one frame")
        if self.remaining_frames == 0:
            self.remaining_bits = self.total_bits
            self.remaining_frames = self.total_frames
            self.abw_cur = self.abw_all

    @property
    def abw_all(self) -> float:
        return self.total_bits / self.total_frames

    def start_window(self) -> None:
        self.abw_cur = self.remaining_bits / self.remaining_frames

    def consume(self, bits: float) -> None:
        self.remaining_bits -= bits
        self.remaining_frames -= 1


def allocate_frame_target(ledger: BandwidthLedger, config: RcConfig, frame_index: int) -> float:
    """Bit target for the frame at ``frame_index`` from the remaining budget.

    The per-frame average over the remaining frames is scaled by this frame's
    weight relative to the mean weight of the next ``smoothing_window`` frames.
    """
    if ledger.remaining_frames < 1:
        raise ValueError("no frames left to allocate")
    window = min(config.smoothing_window, ledger.remaining_frames)
    weights = [config.weight(frame_index + k) for k in range(window)]
    share = weights[0] * window / math.fsum(weights)
    target = ledger.remaining_bits / ledger.remaining_frames * share
    return max(target, 0.01 * ledger.abw_all)


def lambda_to_qp(lam: float) -> int:
    return int(math.floor(LAMBDA_QP_SLOPE * math.log(lam) + LAMBDA_QP_OFFSET + 0.5))


def qp_to_lambda(qp: int) -> float:
    return math.exp((qp - LAMBDA_QP_OFFSET) / LAMBDA_QP_SLOPE)


def qp_from_target(model: RlModelState, target_bits: float, pixels: int, config: RcConfig,
                   prev_qp: int | None = None) -> tuple[int, float]:
    """Map a bit target to (QP, lambda) through the model.

    When clipping moves the QP, the returned lambda is the one that matches
    the clipped QP, so model updates see what was actually coded.
    """
    if not target_bits > 0:
        raise ValueError("target bits must be positive")
    lam = model.lam(target_bits / pixels)
    raw = lambda_to_qp(lam)
    qp = raw
    if prev_qp is not None:
        qp = min(max(qp, prev_qp - config.inter_qp_clip), prev_qp + config.inter_qp_clip)
    qp = min(max(qp, config.qp_min), config.qp_max)
    if qp != raw:
        lam = qp_to_lambda(qp)
    return qp, lam


def model_error(model: RlModelState, actual_bpp: float, lambda_used: float) -> float:
    return math.log(lambda_used) - math.log(model.lam(actual_bpp))


def update_model(model: RlModelState, actual_bpp: float, lambda_used: float) -> RlModelState:
    if not actual_bpp > 0:
        raise ValueError("actual bpp must be positive")
    e = model_error(model, actual_bpp, lambda_used)
    if e == 0.0:
        return model
    return RlModelState(model.alpha * math.exp(ALPHA_GAIN * e),
                        model.beta + BETA_GAIN * e * math.log(actual_bpp)).clamped()


@dataclass(frozen=True)
class PeriodSummary:
    index: int
    start_frame: int
    n_frames: int
    iqp: int
    avgqp: float
    svarqp: float
    bits: float


@dataclass(frozen=True)
class PeriodContext:
    """What an intra-QP provider may look at when a period starts."""
    period: int
    frame_index: int
    target_bits: float
    pixels: int
    ledger: BandwidthLedger
    history: tuple[PeriodSummary, ...]
    intra_model: RlModelState
    config: RcConfig


IqpProvider = Callable[[PeriodContext], int]


@dataclass
class EncodeLog:
    sequence: str
    target_bits: float
    fill_per_frame: float
    frames: list[FrameOutcome]
    periods: list[PeriodSummary]
    buffer_trace: list[float]
    decisions: list[dict] = field(default_factory=list)
    method: str = ""

    @property
    def actual_bits(self) -> float:
        return math.fsum(f.bits for f in self.frames)

    @property
    def bra(self) -> float:
        return metrics.bra(self.target_bits, self.actual_bits)

    @property
    def psnr(self) -> list[float]:
        return [f.psnr_db for f in self.frames]

    @property
    def ssim(self) -> list[float]:
        return [f.ssim for f in self.frames]

    @property
    def stdvar_psnr(self) -> float:
        return metrics.stdvar(self.psnr)

    @property
    def stdvar_ssim(self) -> float:
        return metrics.stdvar(self.ssim)

    @property
    def mean_psnr(self) -> float:
        return math.fsum(self.psnr) / len(self.frames)

    @property
    def mean_ssim(self) -> float:
        return math.fsum(self.ssim) / len(self.frames)

    def totals(self) -> dict:
        return {
            "target_bits": self.target_bits,
            "actual_bits": self.actual_bits,
            "bra": self.bra,
            "stdvar_psnr": self.stdvar_psnr,
            "stdvar_ssim": self.stdvar_ssim,
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "final_occupancy": self.buffer_trace[-1],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "kind", "qp", "lambda", "target_bits", "actual_bits", "mse",
                    "psnr_db", "ssim", "buffer_occupancy"])
        for f, occ in zip(self.frames, self.buffer_trace):
            w.writerow([f.index, f.kind, f.qp, repr(f.lam), repr(f.target_bits), repr(f.bits),
                        repr(f.mse), repr(f.psnr_db), repr(f.ssim), repr(occ)])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "sequence": self.sequence,
            "method": self.method,
            "fill_per_frame": self.fill_per_frame,
            "totals": self.totals(),
            "periods": [asdict(p) for p in self.periods],
            "decisions": self.decisions,
        }

    def sidecar_json(self) -> str:
        return json.dumps(self.sidecar(), indent=1, sort_keys=True, allow_nan=False) + "\n"


def _summarize(index: int, frames: Sequence[FrameOutcome]) -> PeriodSummary:
    qps = [f.qp for f in frames]
    avg, svar = qp_stats(qps)
    return PeriodSummary(index, frames[0].index, len(frames), frames[0].qp, avg, svar,
                         math.fsum(f.bits for f in frames))


def encode_sequence(seq: SequenceSpec, config: RcConfig, params: SurrogateParams,
                    iqp_provider: IqpProvider, method: str = "") -> EncodeLog:
    """Run the rate-control loop over ``seq``; intra QPs come from ``iqp_provider``."""
    if config.intra_period != seq.intra_period:
        raise ValueError("sequence and rate-control intra periods differ")
    n = len(seq)
    pixels = seq.pixels
    fill = config.target_bitrate / seq.framerate
    ledger = BandwidthLedger(total_bits=fill * n, total_frames=n)
    buf = BufferState(fill_per_frame=fill)
    intra_model = RlModelState(config.intra_alpha, config.intra_beta)
    inter_model = RlModelState(config.inter_alpha, config.inter_beta)

    outcomes: list[FrameOutcome] = []
    periods: list[PeriodSummary] = []
    period_start = 0
    prev_inter_qp: int | None = None
    for frame in seq.frames:
        i = frame.index
        target = allocate_frame_target(ledger, config, i)
        if frame.kind == INTRA:
            if i > 0:
                periods.append(_summarize(len(periods), outcomes[period_start:]))
            period_start = i
            ledger.start_window()
            ctx = PeriodContext(len(periods), i, target, pixels, ledger, tuple(periods),
                                intra_model, config)
            try:
                qp = check_qp(iqp_provider(ctx))
            except Exception as exc:
                raise EncodeError(f"{seq.name}: intra QP provider failed at period "
                                  f"{len(periods)}: {exc}") from exc
            lam = qp_to_lambda(qp)
            mse_ref = 0.0
        else:
            qp, lam = qp_from_target(inter_model, target, pixels, config, prev_inter_qp)
            prev_inter_qp = qp
            mse_ref = outcomes[frame.ref_index].mse
        bits, mse, psnr, ssim = evaluate_frame(frame, qp, mse_ref, seq, params)
        if frame.kind == INTRA:
            intra_model = update_model(intra_model, bits / pixels, lam)
        else:
            inter_model = update_model(inter_model, bits / pixels, lam)
        outcomes.append(FrameOutcome(i, frame.kind, qp, lam, target, bits, mse, psnr, ssim))
        ledger.consume(bits)
        buf.step(bits)
    periods.append(_summarize(len(periods), outcomes[period_start:]))
    return EncodeLog(seq.name, ledger.total_bits, fill, outcomes, periods, buf.trace,
                     method=method)


def constant_iqp(qp: int) -> IqpProvider:
    qp = check_qp(qp)
    return lambda ctx: qp


def baseline_iqp(ctx: PeriodContext) -> int:
    """Default intra rule: the weighted intra allocation mapped through the intra model."""
    return qp_from_target(ctx.intra_model, ctx.target_bits, ctx.pixels, ctx.config)[0]


def encode_fixed(seq: SequenceSpec, qp: int, params: SurrogateParams, target_bits: float,
                 frames: Sequence[int] | None = None) -> EncodeLog:
    """Constant-QP encode without rate control, packaged as an EncodeLog."""
    idx = list(range(len(seq))) if frames is None else list(frames)
    fill = target_bits / len(idx)
    buf = BufferState(fill_per_frame=fill)
    outcomes = []
    lam = qp_to_lambda(qp)
    for i, (bits, mse, psnr, ssim) in zip(idx, encode_constant(seq, qp, params, idx)):
        outcomes.append(FrameOutcome(i, seq.frames[i].kind, qp, lam, fill, bits, mse, psnr, ssim))
        buf.step(bits)
    periods = []
    for k, start in enumerate(range(0, len(outcomes), seq.intra_period)):
        periods.append(_summarize(k, outcomes[start:start + seq.intra_period]))
    return EncodeLog(seq.name, target_bits, fill, outcomes, periods, buf.trace, method="fixedqp")


def scope_bits(seq: SequenceSpec, qp: int, params: SurrogateParams,
               frames: Sequence[int] | None = None) -> float:
    return math.fsum(r[0] for r in encode_constant(seq, qp, params, frames))


def fixedqp_search(seq: SequenceSpec, target_bits: float, params: SurrogateParams,
                   frames: Sequence[int] | None = None) -> tuple[int, float]:
    """Constant QP whose bits land closest to ``target_bits``; ties go to the lower QP.

    Bits fall strictly as QP rises, so a bisection finds the crossing and only
    its two neighbours need comparing.
    """
    if not target_bits > 0:
        raise ValueError("target bits must be positive")
    cache: dict[int, float] = {}

    def bits_at(qp: int) -> float:
        if qp not in cache:
            cache[qp] = scope_bits(seq, qp, params, frames)
        return cache[qp]

    if target_bits >= bits_at(QP_MIN):
        if target_bits > bits_at(QP_MIN):
            warnings.warn(f"{seq.name}: target {target_bits:.0f} exceeds bits at QP 0",
                          RangeWarning, stacklevel=2)
        return QP_MIN, bits_at(QP_MIN)
    if target_bits <= bits_at(QP_MAX):
        if target_bits < bits_at(QP_MAX):
            warnings.warn(f"{seq.name}: target {target_bits:.0f} below bits at QP 51",
                          RangeWarning, stacklevel=2)
        return QP_MAX, bits_at(QP_MAX)
    lo, hi = QP_MIN, QP_MAX  # bits(lo) > target > bits(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if bits_at(mid) >= target_bits:
            lo = mid
        else:
            hi = mid
    if abs(bits_at(lo) - target_bits) <= abs(bits_at(hi) - target_bits):
        return lo, bits_at(lo)
    return hi, bits_at(hi)
