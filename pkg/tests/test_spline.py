import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbtshap.spline import GamModel, SplineBasis, build_basis, fit_wls_gam, hat_values, predict_gam, solve_normal


def test_two_knot_basis_is_linear():
    x = np.linspace(0, 1, 11)
    kn = build_basis(x, 2)
    np.testing.assert_array_equal(kn, [0.0, 1.0])
    H = hat_values(x, kn)
    np.testing.assert_allclose(H[:, 0], 1 - x, atol=1e-15)
    np.testing.assert_allclose(H[:, 1], x, atol=1e-15)


def test_gaussian_quantile_knots():
    z = np.random.default_rng(0).standard_normal(20_000)
    kn = build_basis(z, 10)
    s = np.sort(z)
    # linear-interpolation quantiles computed by hand
    pos = np.arange(10) / 9 * (z.size - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, z.size - 1)
    expect = s[lo] + (pos - lo) * (s[hi] - s[lo])
    assert kn.size == 10
    np.testing.assert_allclose(kn, expect, rtol=0, atol=1e-12)


def test_constant_column_single_knot():
    kn = build_basis(np.full(5, 3.0), 10)
    assert kn.size == 1
    assert SplineBasis((kn,)).n_columns == 1


def test_basis_preconditions():
    with pytest.raises(ValueError):
        build_basis([1.0], 3)
    with pytest.raises(ValueError):
        build_basis([1.0, 2.0], 1)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=40), st.integers(2, 12),
       st.lists(st.floats(-100, 100), min_size=1, max_size=20))
@settings(max_examples=60, deadline=None)
def test_partition_of_unity(col, n_knots, queries):
    kn = build_basis(col, n_knots)
    H = hat_values(queries, kn)
    np.testing.assert_allclose(H.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(H >= -1e-15)


def test_exact_line():
    x = np.linspace(-1, 2, 200)[:, None]
    y = 3.0 - 1.5 * x[:, 0]
    m = fit_wls_gam(x, y, ridge=0.0, n_knots=2)
    assert m.rss <= 1e-16 * x.shape[0]
    np.testing.assert_allclose(predict_gam(m, x), y, atol=1e-12)


def test_y_equals_2x():
    x = np.linspace(0, 1, 50)[:, None]
    m = fit_wls_gam(x, 2 * x[:, 0], ridge=0.0, n_knots=2)
    assert predict_gam(m, np.array([[0.25]]))[0] == pytest.approx(0.5, abs=1e-9)


def test_clamping():
    x = np.linspace(0, 1, 50)[:, None]
    m = fit_wls_gam(x, np.sin(3 * x[:, 0]), n_knots=5)
    assert predict_gam(m, np.array([[-4.0]]))[0] == predict_gam(m, np.array([[0.0]]))[0]
    assert predict_gam(m, np.array([[9.0]]))[0] == predict_gam(m, np.array([[1.0]]))[0]


def test_intercept_only_model():
    m = GamModel(1.25, (), SplineBasis(()))
    np.testing.assert_array_equal(predict_gam(m, np.zeros((4, 0))), 1.25)


def test_width_mismatch():
    x = np.random.default_rng(1).standard_normal((30, 2))
    m = fit_wls_gam(x, x.sum(axis=1), n_knots=3)
    with pytest.raises(ValueError):
        predict_gam(m, np.zeros((2, 3)))


def test_replication_equals_weight():
    r = np.random.default_rng(2)
    x = r.standard_normal((80, 2))
    y = np.sin(x[:, 0]) + x[:, 1] ** 2 + 0.1 * r.standard_normal(80)
    basis = SplineBasis.from_data(x, 5)
    w = r.integers(1, 4, 80).astype(float)
    a = fit_wls_gam(x, y, w, basis, ridge=0.0)
    idx = np.repeat(np.arange(80), w.astype(int))
    b = fit_wls_gam(x[idx], y[idx], None, basis, ridge=0.0)
    np.testing.assert_allclose(a.beta(), b.beta(), atol=1e-10)


def test_matches_dense_solver():
    r = np.random.default_rng(3)
    x = r.standard_normal((300, 2))
    y = x[:, 0] ** 3 - x[:, 1] + 0.2 * r.standard_normal(300)
    basis = SplineBasis.from_data(x, 6)
    B = basis.design(x)
    # a 50/50 empirical split gives every row weight 0.5; also try uneven weights
    for w in (np.full(300, 0.5), 0.5 * r.random(300)):
        _check_dense(x, y, w, basis, B)


def _check_dense(x, y, w, basis, B):
    m = fit_wls_gam(x, y, w, basis, ridge=0.0)
    sw = np.sqrt(w)
    ref = np.linalg.lstsq(B * sw[:, None], y * sw, rcond=None)[0]
    np.testing.assert_allclose(m.beta(), ref, atol=1e-8)
    resid = y - B @ m.beta()
    assert np.max(np.abs(B.T @ (w * resid))) <= 1e-8 * max(1.0, np.abs(B.T @ (w * y)).max())


def test_additivity():
    r = np.random.default_rng(4)
    x = r.standard_normal((200, 3))
    m = fit_wls_gam(x, np.exp(x[:, 0]) + x[:, 1] * 2 - x[:, 2] ** 2, n_knots=6)
    a = np.array([[0.1, -0.3, 0.7]])
    b = np.array([[-1.0, 0.5, 0.7]])
    mixed = np.array([[-1.0, -0.3, 0.7]])
    lhs = predict_gam(m, a) - predict_gam(m, b)
    rhs = (predict_gam(m, a) - predict_gam(m, mixed)) + (predict_gam(m, mixed) - predict_gam(m, b))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    # changing x1 alone moves the prediction by the g1 difference only
    d1 = predict_gam(m, mixed) - predict_gam(m, b)
    d1_other = predict_gam(m, np.array([[-1.0, -0.3, 0.0]])) - predict_gam(m, np.array([[-1.0, 0.5, 0.0]]))
    np.testing.assert_allclose(d1, d1_other, atol=1e-12)


def test_rank_deficient_flagged():
    x = np.column_stack([np.linspace(0, 1, 40), np.linspace(0, 1, 40)])  # identical columns
    m = fit_wls_gam(x, x[:, 0], ridge=0.0, n_knots=3)
    assert m.ridge_fallback
    assert np.all(np.isfinite(m.beta()))


def test_zero_weights_and_degenerate():
    x = np.random.default_rng(5).standard_normal((20, 2))
    with pytest.raises(ValueError):
        fit_wls_gam(x, x[:, 0], np.zeros(20))
    with pytest.raises(ValueError):
        fit_wls_gam(x, x[:, 0], -np.ones(20))
    w = np.zeros(20)
    w[:3] = [1.0, 2.0, 1.0]
    m = fit_wls_gam(x, x[:, 0], w, SplineBasis.from_data(x, 10))
    assert m.degenerate
    assert m.intercept == pytest.approx((x[0, 0] + 2 * x[1, 0] + x[2, 0]) / 4)


def test_solve_normal_multiple_rhs():
    G = np.array([[4.0, 1.0], [1.0, 3.0]])
    rhs = np.array([[1.0, 0.0], [2.0, 1.0]])
    beta, flagged = solve_normal(G, rhs, 0.0)
    np.testing.assert_allclose(G @ beta, rhs, atol=1e-12)
    assert not flagged
    with pytest.raises(ValueError):
        solve_normal(G, rhs, -1.0)


def test_gam_serialization():
    x = np.random.default_rng(6).standard_normal((60, 2))
    m = fit_wls_gam(x, x[:, 0] - x[:, 1], n_knots=4)
    m2 = GamModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(predict_gam(m, x), predict_gam(m2, x))
