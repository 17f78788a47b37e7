import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbtshap.baselines import (GaussianModelSpec, conditional_expectation_exact, empirical_global_shapley,
                               empirical_kernel_ce, gaussian_conditional_moments, marginal_global_shapley,
                               marginal_value_function, mean_abs_aggregate, oracle_global_shapley, oracle_shap,
                               oracle_value_table, relative_error)
from mbtshap.data import Dataset, FeatureSubset
from mbtshap.scenarios import LINEAR_BETA, ScenarioConfig, default_correlation, generate_scenario, model_spec
from mbtshap.shapley import exact_shapley_brute


def test_kernel_five_point_toy():
    x = np.array([0.0, 1.0, 2.0, 3.0, 10.0])
    y = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    data = Dataset(("a", "b"), np.column_stack([x, np.zeros(5)]), y)
    # neighbours of 0.4 are 0 and 1 at distances 0.4 and 0.6
    w = np.exp(-np.array([0.4, 0.6]) ** 2 / 2)
    expect = (w[0] * 1 + w[1] * 2) / w.sum()
    assert empirical_kernel_ce(data, (0,), np.array([0.4, 0.0]), [[1.0]], varrho=1.0, k=2) == pytest.approx(expect)


def test_kernel_identity_distance():
    r = np.random.default_rng(0)
    X = r.standard_normal((50, 2))
    data = Dataset(("a", "b"), X, r.standard_normal(50))
    q = np.array([0.3, 0.0])
    got = empirical_kernel_ce(data, (0,), q, [[1.0]], varrho=0.5, k=7)
    d = np.abs(X[:, 0] - 0.3)
    near = np.argsort(d)[:7]
    w = np.exp(-d[near] ** 2 / (2 * 0.25))
    assert got == pytest.approx(np.sum(w * data.predictions[near]) / w.sum(), rel=1e-10)


def test_kernel_wide_bandwidth_is_mean():
    r = np.random.default_rng(1)
    X = r.standard_normal((40, 3))
    data = Dataset(("a", "b", "c"), X, r.standard_normal(40))
    got = empirical_kernel_ce(data, (0, 2), X[:5], np.eye(2), varrho=1e6, k=40)
    np.testing.assert_allclose(got, data.predictions.mean(), rtol=1e-9)
    assert empirical_kernel_ce(data, (), X[0], np.eye(0)) == pytest.approx(data.predictions.mean())
    with pytest.raises(ValueError):
        empirical_kernel_ce(data, (0,), X[0], [[1.0]], k=0)


def test_kernel_singular_block_warns():
    r = np.random.default_rng(2)
    X = r.standard_normal((30, 2))
    data = Dataset(("a", "b"), X, X[:, 0])
    with pytest.warns(RuntimeWarning):
        val = empirical_kernel_ce(data, (0, 1), X[0], np.ones((2, 2)), k=5)
    assert np.isfinite(val)


def test_empirical_global_runs_small():
    sc = generate_scenario(ScenarioConfig("interaction", 0.0, n_train=600, n_test=10, n_explain=1, seed=3))
    pct = empirical_global_shapley(sc.train, k=50, varrho=0.3, n_eval=50)
    assert pct.shape == (6,)
    assert pct.sum() == pytest.approx(100.0)


def test_mean_abs():
    np.testing.assert_allclose(mean_abs_aggregate([[1.0], [-3.0]], percent=False), [2.0])
    r = np.random.default_rng(3)
    pct = mean_abs_aggregate(r.standard_normal((20, 4)))
    assert np.all(pct >= 0) and pct.sum() == pytest.approx(100.0)
    with pytest.raises(ValueError):
        mean_abs_aggregate(np.zeros((0, 3)))


def test_conditional_moments_bivariate():
    rho = 0.6
    sig = np.array([[1.0, rho], [rho, 1.0]])
    m, c = gaussian_conditional_moments(sig, (0,), np.array([2.0]))
    assert m[0] == pytest.approx(rho * 2.0)
    assert c[0, 0] == pytest.approx(1 - rho**2)
    m0, c0 = gaussian_conditional_moments(sig, (), np.zeros(0))
    np.testing.assert_allclose(m0, 0.0)
    np.testing.assert_allclose(c0, sig)
    with pytest.raises(ValueError):
        gaussian_conditional_moments(sig, (0,), np.zeros(2))


def test_conditional_moments_precision_oracle():
    rho = 0.4
    sig = np.full((3, 3), rho) + (1 - rho) * np.eye(3)
    x = np.array([1.0, -0.5])
    m, c = gaussian_conditional_moments(sig, (0, 1), x)
    # from the precision matrix: cov = 1/Q22, mean = -Q21 x / Q22
    Q = np.linalg.inv(sig)
    assert c[0, 0] == pytest.approx(1 / Q[2, 2])
    assert m[0] == pytest.approx(-(Q[2, 0] * x[0] + Q[2, 1] * x[1]) / Q[2, 2])


@given(st.integers(2, 6), st.integers(0, 2**31), st.data())
@settings(max_examples=40, deadline=None)
def test_conditional_covariance_psd(p, seed, data):
    A = np.random.default_rng(seed).standard_normal((p, p + 1))
    sig = A @ A.T
    members = data.draw(st.lists(st.integers(0, p - 1), unique=True, max_size=p - 1))
    _, c = gaussian_conditional_moments(sig, sorted(members), np.zeros(len(members)))
    assert np.allclose(c, c.T, atol=1e-9)
    assert np.linalg.eigvalsh(c).min() >= -1e-8 * max(1.0, np.abs(c).max())


def test_relative_error():
    assert relative_error([50, 50], [40, 60]) == pytest.approx(0.04)
    a, b = np.array([3.0, 1.0, 2.0]), np.array([2.5, 1.5, 2.0])
    assert relative_error(a, b) == pytest.approx(relative_error(10 * a, 10 * b))
    # symmetric under swapping which side is truth when norms agree
    assert relative_error([1.0, 2.0], [2.0, 1.0]) == relative_error([2.0, 1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        relative_error([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        relative_error([1.0], [1.0, 2.0])


def test_marginal_unused_and_constant():
    r = np.random.default_rng(4)
    X = r.standard_normal((300, 3))
    data = Dataset(("a", "b", "c"), X, X[:, 0] + X[:, 1])

    def f(Z):
        return Z[:, 0] + 2 * Z[:, 1]

    pct = marginal_global_shapley(f, data, n_mc=20, n_eval=200)
    assert abs(pct[2]) <= 1e-9
    assert marginal_value_function(lambda Z: np.full(Z.shape[0], 3.0), data, (0, 1), n_mc=5) == 0.0
    with pytest.raises(ValueError):
        marginal_value_function(f, data, (0,), n_mc=0)


def test_marginal_linear_rho0_reference_row():
    sc = generate_scenario(ScenarioConfig("linear", 0.0))
    pct = marginal_global_shapley(sc.spec.f, sc.train, n_mc=4, n_eval=5000)
    reference = [11.18, 10.05, 10.46, 4.73, 8.95, 1.09, 14.51, 15.13, 0, 0, 0, 11.70, 12.20]
    np.testing.assert_allclose(pct, reference, atol=1.0)
    np.testing.assert_allclose(pct[8:11], 0.0, atol=1e-9)


def test_oracle_linear_shares_closed_form():
    spec = model_spec("linear", default_correlation("linear", 0.0).matrix())
    t = time.perf_counter()
    pct = oracle_global_shapley(spec)
    assert time.perf_counter() - t < 1.0
    np.testing.assert_allclose(pct, LINEAR_BETA**2 / np.sum(LINEAR_BETA**2) * 100, atol=1e-9)
    assert np.sum(LINEAR_BETA**2) == pytest.approx(21.56)


def test_oracle_nonlinear_equals_linear():
    for rho in (0.0, 0.5):
        sig = default_correlation("linear", rho).matrix()
        a = oracle_global_shapley(model_spec("linear", sig))
        b = oracle_global_shapley(model_spec("nonlinear", sig))
        c = oracle_global_shapley(model_spec("binary", sig))
        np.testing.assert_allclose(a, b, atol=1e-9)
        np.testing.assert_allclose(a, c, atol=1e-9)


def test_oracle_table_linear_correlated():
    # closed form for a bivariate linear model: c({0}) = (b0 + rho b1)^2
    rho, b = 0.7, np.array([1.0, 2.0])
    spec = GaussianModelSpec(np.array([[1, rho], [rho, 1.0]]), "linear", b)
    table = oracle_value_table(spec)
    assert table[1] == pytest.approx((b[0] + rho * b[1]) ** 2)
    assert table[2] == pytest.approx((b[1] + rho * b[0]) ** 2)
    assert table[3] == pytest.approx(b @ spec.sigma @ b)


def test_oracle_interaction_rho0():
    spec = model_spec("interaction", default_correlation("interaction", 0.0).matrix())
    np.testing.assert_allclose(oracle_global_shapley(spec, n_mc=100_000), [30, 50, 10, 0, 10, 0], atol=0.3)


def test_oracle_shap_interaction_closed_form():
    spec = model_spec("interaction", default_correlation("interaction", 0.0).matrix())
    rows = np.random.default_rng(5).standard_normal((20, 6))
    phi = oracle_shap(spec, rows)
    x = rows.T
    np.testing.assert_allclose(phi[:, 0], x[0] + x[0] * x[1] / 2, atol=1e-10)
    np.testing.assert_allclose(phi[:, 1], x[1] ** 2 - 1 + x[0] * x[1] / 2, atol=1e-10)
    np.testing.assert_allclose(phi[:, 2], x[2] * x[4] / 2, atol=1e-10)
    np.testing.assert_allclose(phi[:, [3, 5]], 0.0, atol=1e-12)


def test_exact_ce_matches_brute_efficiency():
    spec = model_spec("interaction", default_correlation("interaction", 0.5).matrix())
    rows = np.random.default_rng(6).multivariate_normal(np.zeros(6), spec.sigma, 5)
    phi = oracle_shap(spec, rows)
    full = conditional_expectation_exact(spec, FeatureSubset(tuple(range(6)), 6), rows)
    empty = conditional_expectation_exact(spec, FeatureSubset((), 6), rows)
    np.testing.assert_allclose(full, spec.f(rows), atol=1e-12)
    np.testing.assert_allclose(phi.sum(axis=1), full - empty, atol=1e-10)
    table = np.array([conditional_expectation_exact(spec, FeatureSubset.from_mask(m, 6), rows[:1])[0]
                      for m in range(64)])
    np.testing.assert_allclose(exact_shapley_brute(table - table[0]), phi[0], atol=1e-10)


def test_unsupported_kind():
    spec = GaussianModelSpec(np.eye(2), "quartic", np.ones(2))
    with pytest.raises(ValueError):
        oracle_value_table(spec)
    with pytest.raises(ValueError):
        spec.f(np.zeros((1, 2)))
