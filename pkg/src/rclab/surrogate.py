"""Closed-form encoder stand-in.

Maps a synthetic sequence plus per-frame QP decisions to bits, MSE, PSNR and
SSIM. Inter frames inherit part of their reference's distortion and lose part
of their prediction benefit when the reference is poor, which is what makes
the intra QP choice matter for everything that follows it.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

INTRA = "intra"
INTER = "inter"

QP_MIN = 0
QP_MAX = 51
PEAK_SQ = 255.0 ** 2

PROFILES = ("steady", "drifting", "scene_change")

# (width, height) pairs in the spirit of the common test classes
RESOLUTIONS = ((416, 240), (832, 480), (1280, 720), (1920, 1080))
FRAMERATES = (24, 30, 50, 60)


@dataclass(frozen=True)
class FrameSpec:
    index: int
    kind: str
    complexity: float
    temporal_corr: float = 0.0
    ref_index: int | None = None

    def __post_init__(self):
        if self.complexity <= 0:
            raise ValueError(f"frame {self.index}: complexity must be > 0")
        if self.kind == INTRA:
            if self.temporal_corr != 0.0 or self.ref_index is not None:
                raise ValueError(f"intra frame {self.index} cannot reference another frame")
        elif self.kind == INTER:
            if self.ref_index is None or not 0 <= self.ref_index < self.index:
                raise ValueError(f"inter frame {self.index} must reference an earlier frame")
            if not 0.0 <= self.temporal_corr < 1.0:
                raise ValueError(f"frame {self.index}: temporal_corr outside [0, 1)")
        else:
            raise ValueError(f"unknown frame kind {self.kind!r}")


@dataclass(frozen=True)
class SequenceSpec:
    name: str
    width: int
    height: int
    framerate: float
    frames: tuple[FrameSpec, ...]
    seed: int = 0
    intra_period: int = 8

    def __post_init__(self):
        if self.width * self.height <= 0:
            raise ValueError("frame area must be positive")
        if not self.frames:
            raise ValueError("sequence has no frames")
        for i, f in enumerate(self.frames):
            if f.index != i:
                raise ValueError(f"frame list out of order at position {i}")
            expect_intra = i % self.intra_period == 0
            if expect_intra != (f.kind == INTRA):
                raise ValueError(
                    f"frame {i}: intra frames must sit exactly on multiples of {self.intra_period}"
                )

    @property
    def pixels(self) -> int:
        return self.width * self.height

    def __len__(self) -> int:
        return len(self.frames)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SequenceSpec":
        frames = tuple(FrameSpec(**f) for f in doc["frames"])
        return cls(**{**doc, "frames": frames})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SequenceSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class SurrogateParams:
    bit_scale: float = 0.07
    bit_exponent: float = 1.2
    complexity_exponent: float = 0.8
    dist_scale: float = 1.0 / 12.0
    prop_leak: float = 0.6
    prop_sigma: float = 50.0
    ssim_half: float = 2000.0

    def __post_init__(self):
        for name in ("bit_scale", "bit_exponent", "complexity_exponent",
                     "dist_scale", "prop_sigma", "ssim_half"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0.0 <= self.prop_leak < 1.0:
            raise ValueError("prop_leak must lie in [0, 1)")


@dataclass(frozen=True)
class FrameOutcome:
    index: int
    kind: str
    qp: int
    lam: float
    target_bits: float
    bits: float
    mse: float
    psnr_db: float
    ssim: float


def check_qp(qp) -> int:
    if isinstance(qp, bool) or int(qp) != qp:
        raise ValueError(f"QP must be an integer, got {qp!r}")
    qp = int(qp)
    if not QP_MIN <= qp <= QP_MAX:
        raise ValueError(f"QP {qp} outside [{QP_MIN}, {QP_MAX}]")
    return qp


def qstep(qp: int) -> float:
    """Quantizer step size; doubles every 6 QP and equals 1 at QP 4."""
    qp = check_qp(qp)
    return 2.0 ** ((qp - 4) / 6.0)


def residual_complexity(c: float, t: float, mse_ref: float, params: SurrogateParams) -> float:
    """Energy left after prediction from a reference with distortion ``mse_ref``.

    A clean reference removes the predictable fraction ``t``; the benefit fades
    exponentially as the reference degrades.
    """
    if c <= 0 or not 0.0 <= t < 1.0 or mse_ref < 0:
        raise ValueError("residual_complexity inputs out of domain")
    return c * (1.0 - t * math.exp(-mse_ref / params.prop_sigma))


def frame_bits(c_eff: float, qp: int, seq: SequenceSpec, params: SurrogateParams) -> float:
    return (seq.pixels * params.bit_scale * c_eff ** params.complexity_exponent
            * qstep(qp) ** -params.bit_exponent)


def frame_distortion(qp: int, t: float, mse_ref: float, params: SurrogateParams) -> float:
    return params.dist_scale * qstep(qp) ** 2 + params.prop_leak * t * mse_ref


def quality_maps(mse: float, params: SurrogateParams) -> tuple[float, float]:
    if not mse > 0:
        raise ValueError(f"MSE must be positive, got {mse!r}")
    return 10.0 * math.log10(PEAK_SQ / mse), 1.0 - mse / (mse + params.ssim_half)


def evaluate_frame(frame: FrameSpec, qp: int, mse_ref: float, seq: SequenceSpec,
                   params: SurrogateParams) -> tuple[float, float, float, float]:
    """Return (bits, mse, psnr, ssim) for one frame coded at ``qp``."""
    t = frame.temporal_corr
    if frame.kind == INTRA:
        mse_ref = 0.0
    c_eff = residual_complexity(frame.complexity, t, mse_ref, params)
    bits = frame_bits(c_eff, qp, seq, params)
    mse = frame_distortion(qp, t, mse_ref, params)
    psnr, ssim = quality_maps(mse, params)
    return bits, mse, psnr, ssim


def encode_constant(seq: SequenceSpec, qps: Sequence[int] | int, params: SurrogateParams,
                    frames: Iterable[int] | None = None) -> list[tuple[float, float, float, float]]:
    """Code a frame range with given QPs and no rate control.

    ``qps`` is either one QP for every frame or one per frame in the range.
    References outside the range are treated as intra restarts, so the range
    should begin on an intra frame.
    """
    idx = list(range(len(seq))) if frames is None else list(frames)
    if isinstance(qps, int):
        qps = [qps] * len(idx)
    if len(qps) != len(idx):
        raise ValueError("one QP per frame required")
    mse_of: dict[int, float] = {}
    out = []
    for i, qp in zip(idx, qps):
        f = seq.frames[i]
        mse_ref = mse_of.get(f.ref_index, 0.0) if f.kind == INTER else 0.0
        res = evaluate_frame(f, qp, mse_ref, seq, params)
        mse_of[i] = res[1]
        out.append(res)
    return out


@dataclass(frozen=True)
class CorpusProfile:
    """Knobs for one flavour of synthetic content."""
    frame_jitter: float
    drift: float
    corr_jitter: float


PROFILE_KNOBS = {
    "steady": CorpusProfile(frame_jitter=0.02, drift=0.0, corr_jitter=0.01),
    "drifting": CorpusProfile(frame_jitter=0.03, drift=0.03, corr_jitter=0.02),
    "scene_change": CorpusProfile(frame_jitter=0.02, drift=0.0, corr_jitter=0.01),
}

C_LO, C_HI = 20.0, 400.0
CORR_LO, CORR_HI = 0.5, 0.95


def _clamp(v, lo, hi):
    return lo if v < lo else hi if v > hi else v


def _scene_jump(rng: random.Random, c: float) -> float:
    # ratio >= 3 in whichever direction the [20, 400] range allows
    up_ok = 3.0 * c <= C_HI
    down_ok = c / 3.0 >= C_LO
    if up_ok and (not down_ok or rng.random() < 0.5):
        return rng.uniform(3.0 * c, C_HI)
    return rng.uniform(C_LO, c / 3.0)


def generate_sequence(name: str, seed: int, profile: str, n_frames: int = 64,
                      intra_period: int = 8) -> SequenceSpec:
    if profile not in PROFILE_KNOBS:
        raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    knobs = PROFILE_KNOBS[profile]
    rng = random.Random(seed)
    width, height = rng.choice(RESOLUTIONS)
    fps = rng.choice(FRAMERATES)
    level = math.exp(rng.uniform(math.log(C_LO), math.log(C_HI)))
    corr = rng.uniform(CORR_LO, CORR_HI)
    slope = rng.uniform(-knobs.drift, knobs.drift)

    n_periods = -(-n_frames // intra_period)
    cuts: set[int] = set()
    if profile == "scene_change" and n_periods > 1:
        boundaries = list(range(1, n_periods))
        k = rng.randint(1, max(1, len(boundaries) // 2))
        cuts = {b * intra_period for b in rng.sample(boundaries, k)}

    frames = []
    prev_c = None
    for i in range(n_frames):
        if i in cuts:
            level = _scene_jump(rng, prev_c)
            corr = rng.uniform(CORR_LO, CORR_HI)
            c = level
        else:
            if i > 0:
                level = _clamp(level * math.exp(slope), C_LO, C_HI)
                if level in (C_LO, C_HI):
                    slope = -slope
            c = _clamp(level * (1.0 + rng.uniform(-knobs.frame_jitter, knobs.frame_jitter)),
                       C_LO, C_HI)
        t = _clamp(corr + rng.uniform(-knobs.corr_jitter, knobs.corr_jitter), CORR_LO, CORR_HI)
        if i % intra_period == 0:
            frames.append(FrameSpec(i, INTRA, c))
        else:
            frames.append(FrameSpec(i, INTER, c, t, i - 1))
        prev_c = c
    return SequenceSpec(name=name, width=width, height=height, framerate=float(fps),
                        frames=tuple(frames), seed=seed, intra_period=intra_period)


def generate_corpus(seed: int, count: int, profile: str = "steady", n_frames: int = 64,
                    intra_period: int = 8) -> list[SequenceSpec]:
    """Deterministic list of synthetic sequences named ``<profile>_<nn>``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    master = random.Random(seed)
    seeds = [master.randrange(2 ** 31) for _ in range(count)]
    return [generate_sequence(f"{profile}_{k:02d}", s, profile, n_frames, intra_period)
            for k, s in enumerate(seeds)]
