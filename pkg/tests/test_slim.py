import numpy as np
import pytest

from mbtshap.data import DataError, Dataset
from mbtshap.scenarios import ScenarioConfig, generate_scenario
from mbtshap.slim import SlimConfig, SlimTree, evaluate_fidelity, fit_slim, predict_slim, tune_slim
from mbtshap.spline import SplineBasis, fit_wls_gam, predict_gam


@pytest.fixture(scope="module")
def sign_flip():
    r = np.random.default_rng(0)
    X = r.standard_normal((5000, 3))
    y = np.where(X[:, 1] < 0, X[:, 0], -X[:, 0])
    return Dataset(("x1", "x2", "x3"), X, y)


@pytest.fixture(scope="module")
def sign_tree(sign_flip):
    return fit_slim(sign_flip, SlimConfig(max_depth=3))


def test_root_split_found(sign_tree):
    root = sign_tree.nodes[0]
    assert root.feature == 1
    assert abs(root.threshold) <= 0.1


def test_no_gam_fits_without_split(sign_flip):
    flat = fit_slim(sign_flip, SlimConfig(max_depth=0))
    assert flat.train_r2 < 0.1


def test_depth_zero_is_global_gam(sign_flip):
    tree = fit_slim(sign_flip, SlimConfig(max_depth=0))
    assert tree.n_terminals == 1
    X = sign_flip.rows
    gam = fit_wls_gam(X, sign_flip.predictions, None, SplineBasis.from_data(X, 10))
    np.testing.assert_allclose(predict_slim(tree, X), predict_gam(gam, X), atol=1e-10)


def test_routing_partition(sign_tree, sign_flip):
    reg = sign_tree.terminal_of(sign_flip.rows)
    M = sign_tree.n_terminals
    assert set(np.unique(reg)) <= set(range(1, M + 1))
    counts = np.bincount(reg, minlength=M + 1)[1:]
    assert counts.sum() == sign_flip.n
    terms = [sign_tree.nodes[t] for t in sign_tree.terminals]
    np.testing.assert_array_equal(counts, [n.n_samples for n in terms])
    assert [n.region for n in terms] == list(range(1, M + 1))
    assert M <= 2 ** sign_tree.depth


def test_threshold_tie_routes_right(sign_tree):
    root = sign_tree.nodes[0]
    x = np.zeros((1, 3))
    x[0, root.feature] = root.threshold
    assert sign_tree.route(x, max_depth=1)[0] == root.right
    x[0, root.feature] = np.nextafter(root.threshold, -np.inf)
    assert sign_tree.route(x, max_depth=1)[0] == root.left


def test_rss_monotone_in_depth(sign_flip):
    y = sign_flip.predictions
    rss = []
    for d in range(4):
        t = fit_slim(sign_flip, SlimConfig(max_depth=d))
        rss.append(float(np.sum((y - predict_slim(t, sign_flip.rows)) ** 2)))
    assert all(b <= a + 1e-9 for a, b in zip(rss, rss[1:]))


def test_deterministic(sign_flip, sign_tree):
    again = fit_slim(sign_flip, SlimConfig(max_depth=3))
    np.testing.assert_array_equal(predict_slim(again, sign_flip.rows), predict_slim(sign_tree, sign_flip.rows))


def test_fidelity_bookkeeping(sign_tree, sign_flip):
    fid = evaluate_fidelity(sign_tree, sign_flip)
    assert fid["mse_fidelity"] == sign_tree.train_mse
    assert fid["r2_fidelity"] == sign_tree.train_r2
    acc = evaluate_fidelity(sign_tree, sign_flip, sign_flip.predictions + 1.0)
    assert acc["mse_accuracy"] == pytest.approx(fid["mse_fidelity"] + 1.0, rel=1e-6, abs=1e-6)


def test_perfect_surrogate(sign_tree, sign_flip):
    own = sign_flip.with_predictions(predict_slim(sign_tree, sign_flip.rows))
    t2 = fit_slim(own, SlimConfig(max_depth=0))
    flat_own = own.with_predictions(predict_slim(t2, own.rows))
    assert evaluate_fidelity(t2, flat_own)["r2_fidelity"] == pytest.approx(1.0, abs=1e-12)


def test_errors(sign_flip, sign_tree):
    with pytest.raises(DataError):
        fit_slim(Dataset(("a",), np.zeros((500, 1))))
    with pytest.raises(DataError):
        fit_slim(sign_flip.take(np.arange(100)), SlimConfig(max_depth=2))
    with pytest.raises(ValueError):
        predict_slim(sign_tree, np.zeros((3, 4)))


def test_serialization(sign_tree, sign_flip):
    t2 = SlimTree.from_dict(sign_tree.to_dict())
    np.testing.assert_array_equal(predict_slim(t2, sign_flip.rows), predict_slim(sign_tree, sign_flip.rows))
    assert t2.terminals == sign_tree.terminals


def test_tuner_picks_split(sign_flip):
    tree, depth, scores = tune_slim(sign_flip, SlimConfig(max_depth=3))
    assert depth >= 1
    assert len(scores) == 4
    assert scores[depth] >= max(scores) - 0.005


def test_linear_depth_one_fidelity():
    sc = generate_scenario(ScenarioConfig("linear", 0.0, n_train=5000, n_test=1000, seed=2))
    tree = fit_slim(sc.train, SlimConfig(max_depth=1))
    assert tree.train_r2 >= 0.98
    assert evaluate_fidelity(tree, sc.test)["r2_fidelity"] >= 0.98
