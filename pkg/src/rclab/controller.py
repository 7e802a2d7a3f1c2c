"""Per-period intra QP decisions from the two learned models, with
bandwidth-directed clipping around the previous intra QPs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .features import FeatureVector, FeaturesUnavailable, equivalent_features
from .ratecontrol import EncodeLog, PeriodContext, RcConfig, encode_sequence
from .surrogate import QP_MAX, QP_MIN, SequenceSpec, SurrogateParams
from .svr import SvrModel, predict

DQP = 3


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def clamp_qp(qp: int) -> int:
    return min(max(qp, QP_MIN), QP_MAX)


def clip_bounds(anchor: float, faster_consumption: bool, dqp: int = DQP) -> tuple[int, int]:
    """Allowed IQP interval: below the anchor when the open budget per frame
    exceeds the overall one (spend faster), above it otherwise."""
    a = round_half_away(anchor)
    lo, hi = (a - dqp, a) if faster_consumption else (a, a + dqp)
    return clamp_qp(lo), clamp_qp(hi)


@dataclass
class ControllerState:
    lm0: SvrModel
    lm1: SvrModel
    metric: str = "psnr"
    dqp: int = DQP
    period_index: int = 0
    iqp_prev_1: int | None = None
    iqp_prev_2: int | None = None
    decisions: list[dict] = field(default_factory=list)


def determine_iqp(state: ControllerState, ledger, prev_features: FeatureVector | None,
                  pixels: int) -> int:
    """Pick the intra QP for the period at ``state.period_index`` and advance the state."""
    k = state.period_index
    abw_all, abw_cur = ledger.abw_all, ledger.abw_cur
    record = {"period": k, "abw_cur": abw_cur, "abw_all": abw_all}
    if k == 0:
        raw = predict(state.lm0, [abw_all / pixels])
        iqp = clamp_qp(round_half_away(raw))
        record.update(raw_prediction=raw, anchor=None, bounds=None, faster=None)
    else:
        if prev_features is None:
            raise FeaturesUnavailable(f"period {k} needs features from the previous period")
        raw = predict(state.lm1, list(prev_features.as_tuple()))
        if k == 1:
            anchor = float(state.iqp_prev_1)
        else:
            anchor = (state.iqp_prev_1 + state.iqp_prev_2) / 2.0
        faster = abw_cur > abw_all
        lo, hi = clip_bounds(anchor, faster, state.dqp)
        iqp = min(max(clamp_qp(round_half_away(raw)), lo), hi)
        record.update(raw_prediction=raw, anchor=anchor, bounds=[lo, hi], faster=faster)
    record["iqp"] = iqp
    state.decisions.append(record)
    state.iqp_prev_2 = state.iqp_prev_1
    state.iqp_prev_1 = iqp
    state.period_index = k + 1
    return iqp


def lirc_provider(state: ControllerState, seq: SequenceSpec):
    def provide(ctx: PeriodContext) -> int:
        if ctx.period != state.period_index:
            raise RuntimeError(f"controller expected period {state.period_index}, got {ctx.period}")
        feats = None
        if ctx.period > 0:
            feats = equivalent_features(ctx.history, ctx.ledger, seq)
        return determine_iqp(state, ctx.ledger, feats, ctx.pixels)
    return provide


def run_lirc(seq: SequenceSpec, config: RcConfig, params: SurrogateParams,
             models: tuple[SvrModel, SvrModel], metric: str | None = None) -> EncodeLog:
    lm0, lm1 = models
    state = ControllerState(lm0, lm1, metric or config.metric)
    lg = encode_sequence(seq, config, params, lirc_provider(state, seq), method="lirc")
    lg.decisions = state.decisions
    return lg
