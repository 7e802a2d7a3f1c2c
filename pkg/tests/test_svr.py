import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pg_dual
from rclab.svr import (ModelFormatError, SvrHyper, SvrModel, apply_transforms, constant_model,
                       dual_objective, grid_search, kkt_violations, load_model, predict,
                       predict_many, rbf_kernel, save_model, scale_features, solve_dual, train)

NAMES3 = ("tbpp", "avgqp", "svarqp")


def toy(n=40, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.random((n, 3)) * [0.5, 20, 3] + [0.01, 20, 0]
    y = 50 - 20 * x[:, 0] + 0.3 * (x[:, 1] - 30) + rng.normal(0, 0.5, n)
    return x, y


def test_scale_examples():
    sc = [(1.0, 3.0)]
    assert scale_features([1.0], sc)[0] == 0.0
    assert scale_features([3.0], sc)[0] == 1.0
    assert scale_features([9.0], sc)[0] == 1.0
    assert scale_features([7.0], [(2.0, 2.0)])[0] == 0.5


def test_single_sample():
    m = train([[0.3]], [30.0], SvrHyper(c=10, epsilon=0.1, gamma=0.5))
    assert m.svn == 0
    assert abs(predict(m, [0.3]) - 30.0) <= 0.1 + 1e-12


def test_constant_targets():
    x, _ = toy(12)
    m = train(x, np.full(12, 25.0), SvrHyper(c=10, epsilon=0.0, gamma=0.5))
    assert np.allclose(predict_many(m, x), 25.0, atol=1e-3)


def test_predict_examples():
    assert predict(constant_model(30.0, ["a"]), [5.0]) == 30.0
    m = SvrModel(np.array([[0.5]]), np.array([2.0]), 30.0, 1.0, [(0.0, 1.0)], ("a",))
    assert predict(m, [0.5]) == pytest.approx(32.0)
    far = SvrModel(np.array([[0.0]]), np.array([2.0]), 30.0, 60.0, [(0.0, 1.0)], ("a",))
    # gamma * |1 - 0|^2 = 60 >= 50 at the far clamp edge
    assert abs(predict(far, [1.0]) - 30.0) <= 1e-6
    with pytest.raises(ValueError):
        predict(m, [0.5, 0.5])


def test_smo_matches_projected_gradient_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        n, d = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        x, y = rng.random((n, d)), rng.normal(30, 5, n)
        c = float(rng.choice([1.0, 10.0, 100.0]))
        eps = float(rng.choice([0.0, 0.1, 0.5, 1.0]))
        k = rbf_kernel(x, x, float(rng.choice([0.1, 0.5, 2.0])))
        sol = solve_dual(k, y, c, eps, tol=1e-6)
        a, s, gm = pg_dual(k, y, c, eps)
        assert gm < 1e-10
        diff = abs(dual_objective(sol.alpha, sol.alpha_star, k, y, eps)
                   - dual_objective(a, s, k, y, eps))
        worst = max(worst, diff)
    assert worst < 1e-6


def test_kkt_certificate_and_feasibility():
    x, y = toy(60)
    hyper = SvrHyper(c=10, epsilon=0.5, gamma=0.5)
    m = train(x, y, hyper, NAMES3)
    assert m.converged and m.kkt_max < hyper.kkt_tol
    assert np.all(np.abs(m.coefficients) <= hyper.c + 1e-12)
    assert abs(m.coefficients.sum()) <= hyper.kkt_tol * max(m.svn, 1)
    xs = scale_features(x, m.scaling, clamp=False)
    k = rbf_kernel(xs, xs, hyper.gamma)
    sol = solve_dual(k, y, hyper.c, hyper.epsilon, hyper.kkt_tol)
    v = kkt_violations(sol.alpha, sol.alpha_star, k, y, sol.bias, hyper.c, hyper.epsilon)
    assert v.max() < hyper.kkt_tol


def test_sample_inside_tube_leaves_objective_unchanged():
    rng = np.random.default_rng(5)
    for _ in range(10):
        x, y = rng.random((4, 2)), rng.normal(30, 3, 4)
        c, eps, gamma = 10.0, 0.5, 0.5
        k = rbf_kernel(x, x, gamma)
        a, s, _ = pg_dual(k, y, c, eps)
        bias = solve_dual(k, y, c, eps, tol=1e-9).bias
        xn = rng.random((1, 2))
        yn = float((rbf_kernel(xn, x, gamma) @ (a - s))[0] + bias)
        x2, y2 = np.vstack([x, xn]), np.append(y, yn)
        k2 = rbf_kernel(x2, x2, gamma)
        a2, s2, _ = pg_dual(k2, y2, c, eps)
        assert dual_objective(a2, s2, k2, y2, eps) == pytest.approx(
            dual_objective(a, s, k, y, eps), abs=1e-6)


def test_prediction_is_lipschitz():
    x, y = toy(40)
    m = train(x, y, SvrHyper(c=10, epsilon=0.5, gamma=2.0), NAMES3)
    bound = 2 * m.gamma * np.abs(m.coefficients).sum() * np.sqrt(3)
    rng = np.random.default_rng(1)
    for _ in range(50):
        p = x[rng.integers(len(x))]
        dp = rng.normal(0, 1e-3, 3) * [0.5, 20, 3]
        ds = np.linalg.norm(scale_features(p + dp, m.scaling, clamp=False)
                            - scale_features(p, m.scaling, clamp=False))
        assert abs(predict(m, p + dp) - predict(m, p)) <= bound * ds + 1e-9


def test_transforms():
    assert apply_transforms([[4.0, 2.0]], ("log2", "identity")).tolist() == [[2.0, 2.0]]
    with pytest.raises(ValueError):
        apply_transforms([[0.0]], ("log2",))
    x, y = toy(30)
    m = train(x, y, SvrHyper(), NAMES3, ("log2", "identity", "identity"))
    assert m.transforms == ("log2", "identity", "identity")


def test_round_trip(tmp_path):
    x, y = toy(40)
    m = train(x, y, SvrHyper(c=10, epsilon=0.1, gamma=0.5), NAMES3, ("log2", "identity", "identity"))
    path = tmp_path / "m.json"
    save_model(m, path)
    back = load_model(path)
    probe = np.random.default_rng(3).random((100, 3)) * [0.5, 20, 3] + [0.01, 20, 0]
    assert np.array_equal(predict_many(m, probe), predict_many(back, probe))


def test_truncated_and_wrong_version(tmp_path):
    x, y = toy(10)
    path = tmp_path / "m.json"
    save_model(train(x, y, SvrHyper()), path)
    text = path.read_text()
    (tmp_path / "cut.json").write_text(text[: len(text) // 2])
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "cut.json")
    doc = json.loads(text)
    doc["version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError, match="99.*1|1.*99"):
        load_model(tmp_path / "v.json")


def test_grid_search_examples():
    x, y = toy(30)
    one = {"c": [10.0], "epsilon": [0.5], "gamma": [0.5]}
    best, cv, rows = grid_search(x, y, 5, one)
    assert (best.c, best.epsilon, best.gamma) == (10.0, 0.5, 0.5) and len(rows) == 1
    dup = {"c": [10.0, 10.0, 1.0], "epsilon": [0.5], "gamma": [0.5, 0.5]}
    assert grid_search(x, y, 5, dup)[:2] == grid_search(x, y, 5, dup)[:2]
    with pytest.raises(ValueError):
        grid_search(x, y, 5, {"c": [], "epsilon": [0.5], "gamma": [0.5]})
    with pytest.raises(ValueError):
        grid_search(x, y, 1, one)


def test_training_is_deterministic():
    x, y = toy(40)
    a = train(x, y, SvrHyper(), NAMES3).to_dict()
    b = train(x, y, SvrHyper(), NAMES3).to_dict()
    assert a == b


def test_hyper_validation():
    with pytest.raises(ValueError):
        SvrHyper(c=0)
    with pytest.raises(ValueError):
        SvrHyper(epsilon=-1)
