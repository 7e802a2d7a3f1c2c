"""End-to-end experiment stages: corpus, sweeps and labels, model training,
controlled encodes and the evaluation report.

Every stage reads and writes under one output directory. Work units are
independent (sequence, rate) pairs, optionally spread over worker processes;
results are gathered in a fixed order and written atomically, so outputs do
not depend on the worker count.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from types import SimpleNamespace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import artifacts, metrics
from .controller import run_lirc
from .features import FEATURE_NAMES, feature_accuracy
from .labeling import (CONTROLLER_ROW_HEADER, DATASET_HEADER, DEFAULT_RANGE, DEFAULT_THRESHOLD,
                       EVAL_QPS, LM1_OFFSETS, LM1_STRIDE, METRICS, SWEEP_HEADER, TRAINING_QPS,
                       first_period_rate, label_table, lm1_rows, sample_from_row, sample_row,
                       samples_for_table, split_names, sweep_header_doc, sweep_iqp, sweep_rows)
from .ratecontrol import (EncodeLog, PeriodSummary, RangeWarning, RcConfig, baseline_iqp, constant_iqp,
                          encode_fixed, encode_sequence, fixedqp_search)
from .surrogate import PROFILES, SequenceSpec, SurrogateParams, generate_corpus
from .svr import DEFAULT_GRID, SvrHyper, grid_search, load_model, predict_many, rmse, save_model, train

log = logging.getLogger(__name__)

METHODS = ("baseline", "lirc", "fixedqp", "oracle")
# metric-specific methods get one log directory per metric
PER_METRIC = ("lirc", "oracle")
LM0_TRANSFORMS = ("log2",)
LM1_TRANSFORMS = ("log2", "identity", "identity")


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


class MissingArtifact(FileNotFoundError):
    """A stage ran before the stage that produces its inputs."""


class NumericalFailure(RuntimeError):
    """A model or encode produced unusable numbers."""


@dataclass(frozen=True)
class CorpusConfig:
    count: int = 18
    profile: str = "steady"
    n_frames: int = 256
    intra_period: int = 8


@dataclass(frozen=True)
class RunConfig:
    out: str = "runs/default"
    seed: int = 2024
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    corpus_path: str | None = None
    surrogate: SurrogateParams = field(default_factory=SurrogateParams)
    rc: RcConfig = field(default_factory=RcConfig)
    sweep_range: tuple[int, int] = DEFAULT_RANGE
    bra_threshold: float = DEFAULT_THRESHOLD
    training_qps: tuple[int, ...] = TRAINING_QPS
    eval_qps: tuple[int, ...] = EVAL_QPS
    svr_grid: dict = field(default_factory=lambda: {k: tuple(v) for k, v in DEFAULT_GRID.items()})
    folds: int = 5
    lm1_offsets: tuple[int, ...] = LM1_OFFSETS
    lm1_stride: int = LM1_STRIDE
    metric: str = "psnr"
    threads: int = 1

    def __post_init__(self):
        c = self.corpus
        if c.count < 2 or c.count % 2:
            raise ConfigError("corpus.count must be an even number >= 2")
        if c.profile not in PROFILES:
            raise ConfigError(f"corpus.profile must be one of {PROFILES}")
        if c.n_frames < 2 * c.intra_period:
            raise ConfigError("corpus.n_frames must cover at least two intra periods")
        if c.intra_period != self.rc.intra_period:
            raise ConfigError("corpus.intra_period and rc.intra_period differ")
        lo, hi = self.sweep_range
        if not 0 <= lo <= hi <= 51:
            raise ConfigError("sweep_range must lie within [0, 51]")
        if not 0 < self.bra_threshold <= 100:
            raise ConfigError("bra_threshold must lie in (0, 100]")
        if not self.training_qps or not self.eval_qps:
            raise ConfigError("training_qps and eval_qps must be non-empty")
        if set(self.svr_grid) != {"c", "epsilon", "gamma"} or not all(self.svr_grid.values()):
            raise ConfigError("svr_grid needs non-empty c, epsilon and gamma lists")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.lm1_stride < 1:
            raise ConfigError("lm1_stride must be >= 1")
        if self.corpus_path is not None and not Path(self.corpus_path).is_dir():
            raise ConfigError(f"corpus_path {self.corpus_path} does not exist")

    @property
    def root(self) -> Path:
        return Path(self.out)

    @property
    def corpus_dir(self) -> Path:
        return Path(self.corpus_path) if self.corpus_path else self.root / "corpus"

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["svr_grid"] = {k: list(v) for k, v in self.svr_grid.items()}
        return doc

    def recorded(self) -> dict:
        """Settings that shape the outputs (the output path and worker count do not)."""
        doc = self.to_dict()
        del doc["out"], doc["threads"]
        return doc


def _sub(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown {where} keys: {sorted(extra)}")
    return doc


def config_from_dict(doc: dict) -> RunConfig:
    doc = dict(_sub(RunConfig, doc, "config"))
    try:
        if "corpus" in doc:
            doc["corpus"] = CorpusConfig(**_sub(CorpusConfig, doc["corpus"], "corpus"))
        if "surrogate" in doc:
            doc["surrogate"] = SurrogateParams(**_sub(SurrogateParams, doc["surrogate"], "surrogate"))
        if "rc" in doc:
            doc["rc"] = RcConfig.from_dict(_sub(RcConfig, doc["rc"], "rc"))
        for key in ("sweep_range", "training_qps", "eval_qps", "lm1_offsets"):
            if key in doc:
                doc[key] = tuple(int(v) for v in doc[key])
        if "svr_grid" in doc:
            doc["svr_grid"] = {k: tuple(float(v) for v in vals) for k, vals in doc["svr_grid"].items()}
        return RunConfig(**doc)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def parallel_map(fn: Callable, items: Sequence, threads: int) -> list:
    """Order-preserving map over worker processes (inline when threads == 1)."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=1))


# ---------------------------------------------------------------- corpus

def cmd_gen(cfg: RunConfig) -> list[Path]:
    if cfg.corpus_path:
        raise ConfigError("gen writes its own corpus; drop corpus_path to generate one")
    c = cfg.corpus
    corpus = generate_corpus(cfg.seed, c.count, c.profile, c.n_frames, c.intra_period)
    out = cfg.corpus_dir
    paths = [artifacts.write_text(out / f"{s.name}.json", s.to_json()) for s in corpus]
    index = {"seed": cfg.seed, "profile": c.profile, "count": c.count,
             "sequences": {p.stem: artifacts.sha256_file(p) for p in paths}}
    paths.append(artifacts.write_json(out / "manifest.json", index))
    return paths


def load_corpus(cfg: RunConfig) -> list[SequenceSpec]:
    d = cfg.corpus_dir
    files = sorted(p for p in d.glob("*.json") if p.name != "manifest.json") if d.is_dir() else []
    if not files:
        raise MissingArtifact(f"no corpus under {d}; run gen first")
    out = []
    for p in files:
        try:
            out.append(SequenceSpec.from_json(p.read_text(encoding="utf-8")))
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{p}: not a sequence description ({exc})") from exc
    if len(out) % 2:
        raise ConfigError("corpus size must be even to split it in halves")
    for s in out:
        if s.intra_period != cfg.rc.intra_period:
            raise ConfigError(f"{s.name}: intra period {s.intra_period} differs from rc config")
    return out


def held_out_units(cfg: RunConfig, corpus: Sequence[SequenceSpec]) -> list[tuple[SequenceSpec, int, float]]:
    """(sequence, eval QP, target bitrate) for every held-out evaluation point."""
    _, test = split_names([s.name for s in corpus])
    by = {s.name: s for s in corpus}
    return [(by[n], qp, first_period_rate(by[n], qp, cfg.surrogate)) for n in test for qp in cfg.eval_qps]


# ---------------------------------------------------------------- sweeps

def _label_unit(args):
    cfg, seq, rate_index, bitrate, is_train = args
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RangeWarning)
        table = sweep_iqp(seq, bitrate, cfg.rc, cfg.surrogate, cfg.sweep_range)
        table, oiqp = label_table(table, cfg.bra_threshold)
        samples = samples_for_table(seq, rate_index, table, oiqp, cfg.rc, cfg.surrogate)
        rows = {}
        if is_train:
            for m, s in samples.items():
                label = s.oiqp_psnr if m == "psnr" else s.oiqp_ssim
                rows[m] = lm1_rows(seq, rate_index, bitrate, label, cfg.rc, cfg.surrogate,
                                   cfg.lm1_offsets, cfg.sweep_range, cfg.lm1_stride)
    return sweep_rows(table), sweep_header_doc(table, oiqp), samples, rows, dict(table.degenerate)


def _eval_sweep_unit(args):
    cfg, seq, qp, bitrate = args
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RangeWarning)
        table, oiqp = label_table(sweep_iqp(seq, bitrate, cfg.rc, cfg.surrogate, cfg.sweep_range),
                                  cfg.bra_threshold)
    return sweep_rows(table), sweep_header_doc(table, oiqp)


def _write_sweep(base: Path, rows, header) -> None:
    artifacts.write_csv(base.with_suffix(".csv"), SWEEP_HEADER, rows)
    artifacts.write_json(base.with_suffix(".json"), header)


def cmd_sweep(cfg: RunConfig) -> dict:
    corpus = sorted(load_corpus(cfg), key=lambda s: s.name)
    train_names = set(split_names([s.name for s in corpus])[0])
    units = [(cfg, s, r, first_period_rate(s, qp, cfg.surrogate), s.name in train_names)
             for s in corpus for r, qp in enumerate(cfg.training_qps)]
    results = parallel_map(_label_unit, units, cfg.threads)
    data = {m: ([], []) for m in METRICS}
    ctl_rows = {m: [] for m in METRICS}
    excluded = []
    for (_, seq, r, _, is_train), (rows, header, samples, lrows, degenerate) in zip(units, results):
        _write_sweep(cfg.root / "sweeps" / f"{seq.name}_r{r:02d}", rows, header)
        for m in METRICS:
            if m not in samples:
                reason = degenerate.get(m, "no qualified candidate")
                excluded.append([seq.name, r, m, reason])
                continue
            data[m][0 if is_train else 1].append(samples[m])
            ctl_rows[m].extend(lrows.get(m, []))
    for m in METRICS:
        for part, samples in zip(("train", "test"), data[m]):
            artifacts.write_csv(cfg.root / "datasets" / f"{m}_{part}.csv", DATASET_HEADER,
                                [sample_row(s) for s in samples])
        artifacts.write_csv(cfg.root / "datasets" / f"lm1_rows_{m}.csv", CONTROLLER_ROW_HEADER,
                            ctl_rows[m])
    artifacts.write_csv(cfg.root / "datasets" / "excluded.csv",
                        ("sequence", "rate_index", "metric", "reason"), excluded)
    # held-out evaluation rates get their own sweeps; the oracle method reads them
    eval_units = [(cfg, s, qp, rate) for s, qp, rate in held_out_units(cfg, corpus)]
    for (_, seq, qp, _), (rows, header) in zip(eval_units,
                                                parallel_map(_eval_sweep_unit, eval_units, cfg.threads)):
        _write_sweep(cfg.root / "sweeps" / "eval" / f"{seq.name}_q{qp:02d}", rows, header)
    return {"tables": len(units), "excluded": len(excluded), "eval_tables": len(eval_units)}


# ---------------------------------------------------------------- training

def read_dataset(cfg: RunConfig, metric: str, part: str):
    path = cfg.root / "datasets" / f"{metric}_{part}.csv"
    if not path.is_file():
        raise MissingArtifact(f"{path} missing; run sweep first")
    return [sample_from_row(r) for r in artifacts.read_csv(path)]


def read_controller_rows(cfg: RunConfig, metric: str) -> tuple[np.ndarray, np.ndarray]:
    path = cfg.root / "datasets" / f"lm1_rows_{metric}.csv"
    if not path.is_file():
        raise MissingArtifact(f"{path} missing; run sweep first")
    rows = artifacts.read_csv(path)
    x = np.array([[float(r[k]) for k in FEATURE_NAMES] for r in rows], dtype=float).reshape(-1, 3)
    y = np.array([float(r["label"]) for r in rows], dtype=float)
    return x, y


def labels(samples, metric: str) -> np.ndarray:
    return np.array([s.oiqp_psnr if metric == "psnr" else s.oiqp_ssim for s in samples], dtype=float)


def sample_matrix(samples) -> np.ndarray:
    return np.array([s.features.as_tuple() for s in samples], dtype=float).reshape(-1, 3)


CV_HEADER = ("metric", "model", "c", "epsilon", "gamma", "cv_rmse", "train_rmse", "converged", "selected")


def _check_model(model, name: str) -> None:
    numbers = np.concatenate([model.coefficients, [model.bias]])
    if not np.isfinite(numbers).all():
        raise NumericalFailure(f"{name}: non-finite model parameters")
    if not model.converged:
        log.warning("%s: SMO stopped at the iteration bound (gap %.3g)", name, model.kkt_gap)


def cmd_train(cfg: RunConfig) -> dict:
    """Fit LM_0 and LM_1 per metric.

    Hyperparameters are chosen by cross-validation on the per-table samples.
    LM_0 is then fitted on those samples; LM_1 on the controller-equivalent
    rows when the sweep stage produced any, else on the samples as well.
    """
    grid = {k: list(v) for k, v in cfg.svr_grid.items()}
    cv_rows = []
    summary = {}
    for m in METRICS:
        train_s = read_dataset(cfg, m, "train")
        test_s = read_dataset(cfg, m, "test")
        if len(train_s) < cfg.folds:
            raise MissingArtifact(f"{m} training set has {len(train_s)} samples; need >= {cfg.folds}")
        x, y = sample_matrix(train_s), labels(train_s, m)
        xr, yr = read_controller_rows(cfg, m)
        fitted = {}
        for name, cols, transforms in (("lm0", [0], LM0_TRANSFORMS), ("lm1", [0, 1, 2], LM1_TRANSFORMS)):
            names = [FEATURE_NAMES[c] for c in cols]
            hyper, cv, rows = grid_search(x[:, cols], y, cfg.folds, grid, SvrHyper(), names, transforms)
            for g in rows:
                cv_rows.append([m, name, g.c, g.epsilon, g.gamma, g.cv_rmse, g.train_rmse,
                                int(g.converged), int((g.c, g.epsilon, g.gamma) ==
                                                      (hyper.c, hyper.epsilon, hyper.gamma))])
            if name == "lm1" and len(yr):
                fx, fy = xr, yr
            else:
                fx, fy = x[:, cols], y
            model = train(fx, fy, hyper, names, transforms)
            _check_model(model, f"{name}_{m}")
            save_model(model, cfg.root / "models" / f"{name}_{m}.json")
            fitted[name] = model
            entry = {"c": hyper.c, "epsilon": hyper.epsilon, "gamma": hyper.gamma, "cv_rmse": cv,
                     "fit_rows": int(len(fy)), "svn": model.svn, "converged": model.converged,
                     "kkt_max": model.kkt_max}
            if test_s:
                xt = sample_matrix(test_s)[:, cols]
                entry["test_rmse"] = rmse(predict_many(model, xt), labels(test_s, m))
            summary[f"{name}_{m}"] = entry
    artifacts.write_csv(cfg.root / "models" / "cv_report.csv", CV_HEADER, cv_rows)
    artifacts.write_json(cfg.root / "models" / "summary.json", summary)
    return summary


def load_models(cfg: RunConfig, metric: str):
    paths = [cfg.root / "models" / f"{n}_{metric}.json" for n in ("lm0", "lm1")]
    for p in paths:
        if not p.is_file():
            raise MissingArtifact(f"{p} missing; run train first")
    return tuple(load_model(p) for p in paths)


# ---------------------------------------------------------------- encoding

def method_tag(method: str, metric: str) -> str:
    return f"{method}_{metric}" if method in PER_METRIC else method


def _oracle_iqp(cfg: RunConfig, seq: SequenceSpec, qp: int, metric: str) -> int:
    path = cfg.root / "sweeps" / "eval" / f"{seq.name}_q{qp:02d}.json"
    if not path.is_file():
        raise MissingArtifact(f"{path} missing; the oracle needs the evaluation sweeps")
    iqp = json.loads(path.read_text(encoding="utf-8"))["oiqp"].get(metric)
    if iqp is None:
        raise NumericalFailure(f"{path}: no {metric} label for this point")
    return int(iqp)


def encode_one(cfg: RunConfig, seq: SequenceSpec, bitrate: float, method: str, metric: str,
               models=None, oracle_iqp: int | None = None) -> EncodeLog:
    rc = replace(cfg.rc, metric=metric).with_rate(bitrate)
    if method == "baseline":
        return encode_sequence(seq, rc, cfg.surrogate, baseline_iqp, method="baseline")
    if method == "lirc":
        return run_lirc(seq, rc, cfg.surrogate, models, metric)
    if method == "fixedqp":
        target = bitrate / seq.framerate * len(seq)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RangeWarning)
            qp, _ = fixedqp_search(seq, target, cfg.surrogate)
        return encode_fixed(seq, qp, cfg.surrogate, target)
    if method == "oracle":
        return encode_sequence(seq, rc, cfg.surrogate, constant_iqp(oracle_iqp), method="oracle")
    raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")


def _encode_unit(args):
    cfg, seq, qp, bitrate, method, metric, models, oracle = args
    lg = encode_one(cfg, seq, bitrate, method, metric, models, oracle)
    lg.method = method_tag(method, metric)
    return lg.to_csv(), lg.sidecar_json()


def cmd_encode(cfg: RunConfig, method: str, metric: str | None = None) -> int:
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    metric = metric or cfg.metric
    corpus = load_corpus(cfg)
    models = load_models(cfg, metric) if method == "lirc" else None
    units = []
    for seq, qp, rate in held_out_units(cfg, corpus):
        oracle = _oracle_iqp(cfg, seq, qp, metric) if method == "oracle" else None
        units.append((cfg, seq, qp, rate, method, metric, models, oracle))
    out = cfg.root / "logs" / method_tag(method, metric)
    for (_, seq, qp, *_), (text, side) in zip(units, parallel_map(_encode_unit, units, cfg.threads)):
        artifacts.write_text(out / f"{seq.name}_q{qp:02d}.csv", text)
        artifacts.write_text(out / f"{seq.name}_q{qp:02d}.json", side)
    return len(units)


# ---------------------------------------------------------------- evaluation

REPORT_HEADER = ("sequence", "eval_qp", "method", "target_bitrate", "actual_bitrate", "bra",
                 "stdvar_psnr", "stdvar_ssim", "mean_psnr", "mean_ssim",
                 "buffer_min", "buffer_max", "buffer_final",
                 "aerr_avgqp", "aerr_svarqp", "racc_avgqp", "racc_svarqp")
NUMERIC = REPORT_HEADER[3:]
BD_HEADER = ("sequence", "method", "anchor", "bd_br", "bd_psnr", "bd_ssim")


@dataclass(frozen=True)
class LoggedRun:
    sequence: str
    eval_qp: int
    method: str
    framerate: float
    sidecar: dict
    frames: list

    @property
    def totals(self) -> dict:
        return self.sidecar["totals"]

    def bitrate(self, key: str) -> float:
        return self.totals[key] / len(self.frames) * self.framerate


def _read_runs(cfg: RunConfig, corpus: Sequence[SequenceSpec]) -> dict[str, list[LoggedRun]]:
    by = {s.name: s for s in corpus}
    runs = {}
    logs = cfg.root / "logs"
    dirs = sorted(p for p in logs.iterdir() if p.is_dir()) if logs.is_dir() else []
    for d in dirs:
        found = []
        for seq, qp, _ in held_out_units(cfg, corpus):
            stem = d / f"{seq.name}_q{qp:02d}"
            if not (stem.with_suffix(".csv").is_file() and stem.with_suffix(".json").is_file()):
                raise MissingArtifact(f"{stem}.csv/.json missing; rerun encode for {d.name}")
            side = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
            frames = artifacts.read_csv(stem.with_suffix(".csv"))
            found.append(LoggedRun(seq.name, qp, d.name, by[seq.name].framerate, side, frames))
        runs[d.name] = found
    if len(runs) < 2:
        raise MissingArtifact("eval needs encode logs of at least two methods")
    return runs


def _report_row(run: LoggedRun) -> list:
    t = run.totals
    trace = [float(f["buffer_occupancy"]) for f in run.frames]
    lo, hi, _ = metrics.buffer_extremes(trace)
    fa = feature_accuracy(SimpleNamespace(periods=[PeriodSummary(**p) for p in run.sidecar["periods"]]))
    return [run.sequence, run.eval_qp, run.method, run.bitrate("target_bits"),
            run.bitrate("actual_bits"), t["bra"], t["stdvar_psnr"], t["stdvar_ssim"],
            t["mean_psnr"], t["mean_ssim"], lo, hi, trace[-1],
            fa.aerr_avgqp, fa.aerr_svarqp, fa.racc_avgqp, fa.racc_svarqp]


def _cell(v):
    return "n/a" if isinstance(v, float) and math.isnan(v) else v


def _finite_or_none(doc):
    if isinstance(doc, dict):
        return {k: _finite_or_none(v) for k, v in doc.items()}
    if isinstance(doc, float) and not math.isfinite(doc):
        return None
    return doc


def _mean(values: Iterable[float]) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return math.fsum(vals) / len(vals) if vals else math.nan


def _bd_cell(anchor: list[LoggedRun], test: list[LoggedRun], quality: str, mode: str):
    def curve(runs):
        return [metrics.RdPoint(r.bitrate("actual_bits"), r.totals[quality]) for r in runs]
    try:
        return metrics.bd_metric(curve(anchor), curve(test), mode)
    except metrics.BdError as exc:
        log.info("BD cell unavailable: %s", exc)
        return "n/a"


def cmd_eval(cfg: RunConfig) -> dict:
    corpus = load_corpus(cfg)
    runs = _read_runs(cfg, corpus)
    rows = []
    for tag in runs:
        for run in runs[tag]:
            rows.append(_report_row(run))
            artifacts.write_csv(cfg.root / "eval" / "buffer" / tag / f"{run.sequence}_q{run.eval_qp:02d}.csv",
                                ("frame", "occupancy"),
                                [[int(f["frame"]), float(f["buffer_occupancy"])] for f in run.frames])
    aggregates = {}
    for tag in runs:
        mine = [r for r in rows if r[2] == tag]
        agg = {k: _mean(r[REPORT_HEADER.index(k)] for r in mine) for k in NUMERIC}
        aggregates[tag] = agg
        rows.append(["ALL", "mean", tag, *(agg[k] for k in NUMERIC)])
    artifacts.write_csv(cfg.root / "eval" / "report.csv", REPORT_HEADER,
                        [[_cell(v) for v in r] for r in rows])

    bd_rows = []
    if "baseline" in runs:
        anchor_runs = runs["baseline"]
        for tag in runs:
            if tag == "baseline":
                continue
            for name in sorted({r.sequence for r in anchor_runs}):
                a = [r for r in anchor_runs if r.sequence == name]
                b = [r for r in runs[tag] if r.sequence == name]
                bd_rows.append([name, tag, "baseline",
                                _bd_cell(a, b, "mean_psnr", metrics.BD_RATE),
                                _bd_cell(a, b, "mean_psnr", metrics.BD_QUALITY),
                                _bd_cell(a, b, "mean_ssim", metrics.BD_QUALITY)])
    artifacts.write_csv(cfg.root / "eval" / "bd.csv", BD_HEADER, bd_rows)

    summary = {"aggregates": aggregates, "points": len(held_out_units(cfg, corpus))}
    if "baseline" in aggregates:
        base = aggregates["baseline"]
        summary["stdvar_ratio_vs_baseline"] = {
            tag: {m: agg[f"stdvar_{m}"] / base[f"stdvar_{m}"] for m in METRICS}
            for tag, agg in aggregates.items()}
    artifacts.write_json(cfg.root / "eval" / "summary.json", _finite_or_none(summary))
    return summary


# ---------------------------------------------------------------- whole run

def cmd_run(cfg: RunConfig) -> dict:
    if not cfg.corpus_path:
        cmd_gen(cfg)
    cmd_sweep(cfg)
    cmd_train(cfg)
    cmd_encode(cfg, "baseline")
    cmd_encode(cfg, "fixedqp")
    for m in METRICS:
        cmd_encode(cfg, "lirc", m)
        cmd_encode(cfg, "oracle", m)
    return cmd_eval(cfg)


def finish(cfg: RunConfig) -> Path:
    """Re-index everything under the output directory."""
    artifacts.write_json(cfg.root / "config.json", cfg.recorded())
    return artifacts.write_manifest(cfg.root)
