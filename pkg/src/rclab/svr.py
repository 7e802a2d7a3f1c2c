"""Epsilon-insensitive support vector regression with an RBF kernel.

The dual is solved by sequential minimal optimization in the usual 2n-variable
form: one block for the upper-tube multipliers, one for the lower-tube ones,
tied together by a single equality constraint. Each step moves the maximal
KKT-violating pair.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np

MODEL_FORMAT = "rclab-svr"
MODEL_VERSION = 1

DEFAULT_GRID = {
    "c": (1.0, 10.0, 100.0),
    "epsilon": (0.1, 0.5, 1.0),
    "gamma": (0.1, 0.5, 2.0),
}


TRANSFORMS = ("identity", "log2")


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SvrHyper:
    c: float = 10.0
    epsilon: float = 0.5
    gamma: float = 0.5
    kkt_tol: float = 1e-3
    max_passes: int = 1_000_000

    def __post_init__(self):
        if not (self.c > 0 and self.gamma > 0 and self.kkt_tol > 0 and self.max_passes > 0):
            raise ValueError("c, gamma, kkt_tol and max_passes must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


@dataclass
class SvrModel:
    support_vectors: np.ndarray
    coefficients: np.ndarray
    bias: float
    gamma: float
    scaling: list[tuple[float, float]]
    feature_names: tuple[str, ...]
    c: float = 0.0
    epsilon: float = 0.0
    converged: bool = True
    iterations: int = 0
    kkt_gap: float = 0.0
    transforms: tuple[str, ...] = ()
    kkt_max: float = 0.0  # worst per-point KKT violation over the training set

    def __post_init__(self):
        if not self.transforms:
            self.transforms = ("identity",) * len(self.feature_names)

    @property
    def svn(self) -> int:
        return len(self.coefficients)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "feature_names": list(self.feature_names),
            "transforms": list(self.transforms),
            "scaling": [list(s) for s in self.scaling],
            "gamma": self.gamma,
            "bias": self.bias,
            "c": self.c,
            "epsilon": self.epsilon,
            "support_vectors": self.support_vectors.tolist(),
            "coefficients": self.coefficients.tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
            "kkt_gap": self.kkt_gap,
            "kkt_max": self.kkt_max,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SvrModel":
        if doc.get("format") != MODEL_FORMAT:
            raise ModelFormatError(f"not an SVR model document (format={doc.get('format')!r})")
        if doc.get("version") != MODEL_VERSION:
            raise ModelFormatError(
                f"model version {doc.get('version')!r} does not match supported version {MODEL_VERSION}")
        try:
            names = tuple(doc["feature_names"])
            sv = np.array(doc["support_vectors"], dtype=float).reshape(-1, len(names))
            return cls(
                support_vectors=sv,
                coefficients=np.array(doc["coefficients"], dtype=float),
                bias=float(doc["bias"]),
                gamma=float(doc["gamma"]),
                scaling=[(float(lo), float(hi)) for lo, hi in doc["scaling"]],
                feature_names=names,
                c=float(doc["c"]),
                epsilon=float(doc["epsilon"]),
                converged=bool(doc["converged"]),
                iterations=int(doc["iterations"]),
                kkt_gap=float(doc["kkt_gap"]),
                kkt_max=float(doc["kkt_max"]),
                transforms=_check_transforms(doc["transforms"], len(names)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed model document: {exc}") from exc


def _check_transforms(transforms, d: int) -> tuple[str, ...]:
    t = tuple(transforms)
    if len(t) != d or any(name not in TRANSFORMS for name in t):
        raise ValueError(f"need {d} transforms from {TRANSFORMS}, got {t}")
    return t


def apply_transforms(x, transforms: Sequence[str]) -> np.ndarray:
    """Per-column input transform applied before scaling (log2 needs positive values)."""
    out = np.array(x, dtype=float)
    for k, name in enumerate(transforms):
        if name == "log2":
            col = out[..., k]
            if (col <= 0).any():
                raise ValueError(f"log2 transform needs positive values in column {k}")
            out[..., k] = np.log2(col)
    return out


def fit_scaling(x: np.ndarray) -> list[tuple[float, float]]:
    return [(float(col.min()), float(col.max())) for col in np.asarray(x, dtype=float).T]


def scale_features(raw, scaling: Sequence[tuple[float, float]], clamp: bool = True) -> np.ndarray:
    """Min-max map onto [0, 1]; a constant training feature maps to 0.5."""
    v = np.asarray(raw, dtype=float)
    out = np.empty_like(v)
    for k, (lo, hi) in enumerate(scaling):
        if hi > lo:
            out[..., k] = (v[..., k] - lo) / (hi - lo)
        else:
            out[..., k] = 0.5
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    # accumulate per dimension: exact differences without an n*m*d temporary
    d2 = np.zeros((a.shape[0], b.shape[0]))
    for k in range(a.shape[1]):
        d2 += (a[:, k, None] - b[None, :, k]) ** 2
    return np.exp(-gamma * d2)


def dual_objective(theta_plus: np.ndarray, theta_minus: np.ndarray, k: np.ndarray,
                   y: np.ndarray, epsilon: float) -> float:
    """Dual objective (to be minimized) at multipliers (alpha, alpha*)."""
    theta = theta_plus - theta_minus
    return float(0.5 * theta @ k @ theta + epsilon * (theta_plus + theta_minus).sum() - y @ theta)


@dataclass
class DualSolution:
    alpha: np.ndarray
    alpha_star: np.ndarray
    bias: float
    iterations: int
    gap: float
    converged: bool

    @property
    def theta(self) -> np.ndarray:
        return self.alpha - self.alpha_star


def solve_dual(k: np.ndarray, y: np.ndarray, c: float, epsilon: float, tol: float = 1e-3,
               max_iter: int = 200_000) -> DualSolution:
    """SMO on the epsilon-SVR dual with precomputed kernel matrix ``k``."""
    n = len(y)
    z = np.concatenate([np.ones(n), -np.ones(n)])
    beta = np.zeros(2 * n)
    grad = np.concatenate([epsilon - y, epsilon + y])
    diag = np.diag(k)
    it = 0
    gap = math.inf
    while True:
        minus_zg = -z * grad
        up = ((z > 0) & (beta < c)) | ((z < 0) & (beta > 0))
        low = ((z > 0) & (beta > 0)) | ((z < 0) & (beta < c))
        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.argmax(np.where(up, minus_zg, -np.inf)))
        j = int(np.argmin(np.where(low, minus_zg, np.inf)))
        gap = float(minus_zg[i] - minus_zg[j])
        if gap < tol or it >= max_iter:
            break
        oi, oj = i % n, j % n
        curv = diag[oi] + diag[oj] - 2.0 * k[oi, oj]
        step = gap / max(curv, 1e-12)
        room_i = c - beta[i] if z[i] > 0 else beta[i]
        room_j = beta[j] if z[j] > 0 else c - beta[j]
        step = min(step, room_i, room_j)
        beta[i] += z[i] * step
        beta[j] -= z[j] * step
        # snap to the box so bound tests stay exact
        for t in (i, j):
            if beta[t] < 1e-14 * c:
                beta[t] = 0.0
            elif beta[t] > c * (1.0 - 1e-14):
                beta[t] = c
        col = k[:, oi] - k[:, oj]
        grad += step * z * np.concatenate([col, col])
        it += 1
    converged = gap < tol
    bias = -_rho(z, beta, grad, c)
    return DualSolution(beta[:n].copy(), beta[n:].copy(), bias, it, gap, converged)


def _rho(z, beta, grad, c) -> float:
    zg = z * grad
    free = (beta > 0) & (beta < c)
    if free.any():
        return float(zg[free].mean())
    at_upper = beta >= c
    # upper-bound / lower-bound limits of the feasible offset interval
    ub_mask = ((z > 0) & ~at_upper) | ((z < 0) & at_upper)
    lb_mask = ((z > 0) & at_upper) | ((z < 0) & ~at_upper)
    ub = zg[ub_mask].min() if ub_mask.any() else math.inf
    lb = zg[lb_mask].max() if lb_mask.any() else -math.inf
    return float((ub + lb) / 2.0)


def kkt_violations(theta_plus, theta_minus, k, y, bias, c, epsilon) -> np.ndarray:
    """Per-point worst KKT violation, measured in target units."""
    f = k @ (theta_plus - theta_minus) + bias
    r = y - f
    tiny = 1e-12 * max(c, 1.0)

    def side(a, resid):
        v = np.zeros_like(resid)
        lo = a <= tiny
        hi = a >= c - tiny
        free = ~lo & ~hi
        v[lo] = np.maximum(0.0, resid[lo] - epsilon)
        v[hi] = np.maximum(0.0, epsilon - resid[hi])
        v[free] = np.abs(resid[free] - epsilon)
        return v

    return np.maximum(side(theta_plus, r), side(theta_minus, -r))


def train(x, y, hyper: SvrHyper, feature_names: Sequence[str] | None = None,
          transforms: Sequence[str] | None = None) -> SvrModel:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) == 0 or len(x) != len(y):
        raise ValueError("need matching, non-empty inputs and targets")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("non-finite training values")
    names = tuple(feature_names) if feature_names else tuple(f"x{k}" for k in range(x.shape[1]))
    if len(names) != x.shape[1]:
        raise ValueError("one feature name per column required")
    transforms = _check_transforms(transforms or ("identity",) * x.shape[1], x.shape[1])
    xt = apply_transforms(x, transforms)
    scaling = fit_scaling(xt)
    xs = scale_features(xt, scaling, clamp=False)
    k = rbf_kernel(xs, xs, hyper.gamma)
    sol = solve_dual(k, y, hyper.c, hyper.epsilon, hyper.kkt_tol, hyper.max_passes)
    theta = sol.theta
    viol = kkt_violations(sol.alpha, sol.alpha_star, k, y, sol.bias, hyper.c, hyper.epsilon)
    keep = theta != 0.0
    return SvrModel(
        support_vectors=xs[keep],
        coefficients=theta[keep],
        bias=sol.bias,
        gamma=hyper.gamma,
        scaling=scaling,
        feature_names=names,
        c=hyper.c,
        epsilon=hyper.epsilon,
        converged=sol.converged,
        iterations=sol.iterations,
        kkt_gap=sol.gap,
        transforms=transforms,
        kkt_max=float(viol.max()),
    )


def constant_model(value: float, feature_names: Sequence[str]) -> SvrModel:
    """A model with no support vectors: predicts ``value`` everywhere."""
    d = len(feature_names)
    return SvrModel(np.zeros((0, d)), np.zeros(0), float(value), 1.0, [(0.0, 1.0)] * d,
                    tuple(feature_names))


def predict_many(model: SvrModel, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != len(model.feature_names):
        raise ValueError(f"expected {len(model.feature_names)} features, got {x.shape[1]}")
    if model.svn == 0:
        return np.full(len(x), model.bias)
    xs = scale_features(apply_transforms(x, model.transforms), model.scaling)
    return rbf_kernel(xs, model.support_vectors, model.gamma) @ model.coefficients + model.bias


def predict(model: SvrModel, x) -> float:
    """Kernel expansion sum_t theta_t * exp(-gamma |s_t - x|^2) + b for one input."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("predict takes a single feature vector")
    return float(predict_many(model, x[None, :])[0])


def rmse(pred, target) -> float:
    d = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    return float(np.sqrt(np.mean(d * d)))


@dataclass(frozen=True)
class GridRow:
    c: float
    epsilon: float
    gamma: float
    cv_rmse: float
    train_rmse: float
    converged: bool


def cross_val_rmse(x, y, hyper: SvrHyper, folds: int,
                   feature_names: Sequence[str] | None = None,
                   transforms: Sequence[str] | None = None) -> tuple[float, bool]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    fold_of = np.arange(len(y)) % folds
    errs = []
    ok = True
    for f in range(folds):
        held = fold_of == f
        m = train(x[~held], y[~held], hyper, feature_names, transforms)
        ok &= m.converged
        errs.append(rmse(predict_many(m, x[held]), y[held]))
    return float(np.mean(errs)), ok


def grid_search(x, y, folds: int = 5, grid: dict | None = None,
                base: SvrHyper | None = None,
                feature_names: Sequence[str] | None = None,
                transforms: Sequence[str] | None = None
                ) -> tuple[SvrHyper, float, list[GridRow]]:
    """Pick (C, epsilon, gamma) by mean held-out RMSE over index-mod-k folds.

    Ties prefer smaller C, then smaller gamma, then smaller epsilon.
    """
    grid = DEFAULT_GRID if grid is None else grid
    base = base or SvrHyper()
    n = len(y)
    if not 2 <= folds <= n:
        raise ValueError(f"need 2 <= folds <= {n}")
    points = sorted(set(product(grid["c"], grid["epsilon"], grid["gamma"])))
    if not points:
        raise ValueError("empty hyperparameter grid")
    rows = []
    best_key = None
    best = None
    for c, eps, gamma in points:
        hyper = SvrHyper(c, eps, gamma, base.kkt_tol, base.max_passes)
        cv, ok = cross_val_rmse(x, y, hyper, folds, feature_names, transforms)
        full = train(x, y, hyper, feature_names, transforms)
        rows.append(GridRow(c, eps, gamma, cv, rmse(predict_many(full, x), y),
                            ok and full.converged))
        key = (cv, c, gamma, eps)
        if best_key is None or key < best_key:
            best_key, best = key, hyper
    return best, best_key[0], rows


def save_model(model: SvrModel, path) -> None:
    from .artifacts import write_text
    write_text(path, json.dumps(model.to_dict(), indent=1, allow_nan=False) + "\n")


def load_model(path) -> SvrModel:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    return SvrModel.from_dict(doc)
