"""Comparison attributions and the Gaussian ground truth.

* marginal approximation (features spliced from independent background rows)
* empirical Gaussian-kernel conditional expectations
* mean-absolute aggregation of local values
* exact oracle values for Gaussian linear / monotone-transformed / quadratic models
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FeatureSubset, check_psd, enumerate_subsets
from .shapley import WlsSystem, exact_shapley_brute, solve_wls, value_global

# name -> (latent -> observed, observed -> latent)
TRANSFORMS = {
    "identity": (lambda z: z, lambda x: x),
    "arctan": (np.arctan, np.tan),
    "pow5": (lambda z: z**5, lambda x: np.sign(x) * np.abs(x) ** 0.2),
    "exp": (np.exp, np.log),
    "cube": (lambda z: z**3, np.cbrt),
    "cbrt": (np.cbrt, lambda x: x**3),
    "root5": (lambda z: np.sign(z) * np.abs(z) ** 0.2, lambda x: x**5),
}


@dataclass
class GaussianModelSpec:
    """Data-generating model over latent ``Z ~ N(0, sigma)``.

    ``kind`` is ``linear`` (f = beta'X), ``nonlinear`` (X_j = T_j(Z_j) and
    f = beta'Z), ``interaction`` (polynomial ``terms`` of degree <= 2) or
    ``binary`` (log-odds of the nonlinear model).
    """

    sigma: np.ndarray
    kind: str
    beta: np.ndarray | None = None
    terms: list = field(default_factory=list)  # [(coef, (i,) or (i, j))]
    transforms: dict = field(default_factory=dict)  # feature -> TRANSFORMS key

    @property
    def p(self) -> int:
        return self.sigma.shape[0]

    def to_latent(self, X) -> np.ndarray:
        Z = np.array(X, dtype=np.float64, copy=True)
        for j, name in self.transforms.items():
            Z[:, j] = TRANSFORMS[name][1](Z[:, j])
        return Z

    def from_latent(self, Z) -> np.ndarray:
        X = np.array(Z, dtype=np.float64, copy=True)
        for j, name in self.transforms.items():
            X[:, j] = TRANSFORMS[name][0](X[:, j])
        return X

    def f(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.kind == "linear":
            return X @ self.beta
        if self.kind in ("nonlinear", "binary"):
            return self.to_latent(X) @ self.beta
        if self.kind == "interaction":
            out = np.zeros(X.shape[0])
            for coef, idx in self.terms:
                out += coef * np.prod(X[:, list(idx)], axis=1)
            return out
        raise ValueError(f"unsupported model kind {self.kind!r}")


def _hybrid_mean(predict_fn, x_rows, background, u_members):
    """Mean of f over background rows with the coalition spliced in."""
    n, n_bg = x_rows.shape[0], background.shape[0]
    hyb = np.repeat(background[None, :, :], n, axis=0)
    if u_members:
        hyb[:, :, u_members] = x_rows[:, None, u_members]
    vals = np.asarray(predict_fn(hyb.reshape(n * n_bg, -1)), dtype=np.float64)
    return vals.reshape(n, n_bg).mean(axis=1)


def marginal_value_function(predict_fn, data: Dataset, u, n_mc: int = 100, seed: int = 0, n_eval: int | None = None,
                            local: bool = False):
    """Marginal approximation ``E_{X_ubar} f(x_u, X_ubar)``.

    Background draws come from the dataset's own rows.  Returns the variance
    over evaluated instances, or the per-instance values when ``local``.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    X = data.rows
    bg = X[rng.integers(0, X.shape[0], n_mc)]
    ev = X if n_eval is None or n_eval >= X.shape[0] else X[:n_eval]
    members = list(u.members if isinstance(u, FeatureSubset) else u)
    vals = _hybrid_mean(predict_fn, ev, bg, members)
    return vals if local else value_global(vals)


def marginal_global_shapley(predict_fn, data: Dataset, subsets=None, n_mc: int = 100, n_eval: int = 1000,
                            seed: int = 0) -> np.ndarray:
    """Global Shapley percentages from the marginal value function."""
    subsets = subsets or enumerate_subsets(data.p)
    vals = np.array([marginal_value_function(predict_fn, data, u, n_mc, seed, n_eval) for u in subsets])
    for k, u in enumerate(subsets):
        if u.size == 0:
            vals[k] = 0.0
    phi = solve_wls(WlsSystem.build(subsets, vals))
    return phi / phi.sum() * 100.0


def _inv_block(sigma_u: np.ndarray) -> np.ndarray:
    """Inverse of a covariance block; ridge-regularised if near singular."""
    if np.linalg.cond(sigma_u) < 1e12:
        return np.linalg.inv(sigma_u)
    warnings.warn("singular covariance block; using ridge-regularised inverse", RuntimeWarning)
    lam = 1e-8 * max(np.trace(sigma_u) / sigma_u.shape[0], 1e-12)
    return np.linalg.inv(sigma_u + lam * np.eye(sigma_u.shape[0]))


def empirical_kernel_ce(data: Dataset, u, x_star, sigma_u, varrho: float = 0.1, k: int = 500):
    """Gaussian-kernel weighted mean of predictions over the ``k`` nearest rows.

    Distance is ``sqrt(d' inv(sigma_u) d / |u|)`` on the coalition coordinates.
    ``x_star`` may be a single row or a matrix of query rows.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    y = data.require_predictions()
    members = list(u.members if isinstance(u, FeatureSubset) else u)
    Q = np.atleast_2d(np.asarray(x_star, dtype=np.float64))
    single = np.ndim(x_star) == 1
    if not members:
        out = np.full(Q.shape[0], y.mean())
        return float(out[0]) if single else out
    S = np.atleast_2d(np.asarray(sigma_u, dtype=np.float64))
    inv = _inv_block(S)
    L = np.linalg.cholesky((inv + inv.T) / 2)
    R = data.rows[:, members] @ L
    Qr = Q[:, members] @ L
    k = min(k, data.n)
    rr = np.sum(R**2, axis=1)
    out = np.empty(Q.shape[0])
    step = max(1, 2_000_000 // data.n)
    for a in range(0, Q.shape[0], step):
        q = Qr[a:a + step]
        d2 = np.maximum(rr[None, :] - 2.0 * q @ R.T + np.sum(q**2, axis=1)[:, None], 0.0) / len(members)
        logw = -d2 / (2.0 * varrho**2)
        if k < data.n:
            top = np.argpartition(-logw, k - 1, axis=1)[:, :k]
            lw = np.take_along_axis(logw, top, axis=1)
            yk = y[top]
        else:
            lw, yk = logw, np.broadcast_to(y, logw.shape)
        w = np.exp(lw - lw.max(axis=1, keepdims=True))
        out[a:a + step] = np.sum(w * yk, axis=1) / w.sum(axis=1)
    return float(out[0]) if single else out


def empirical_global_shapley(data: Dataset, subsets=None, sigma=None, varrho: float = 0.1, k: int = 500,
                             n_eval: int = 100) -> np.ndarray:
    """Global Shapley percentages from empirical-kernel conditional expectations."""
    subsets = subsets or enumerate_subsets(data.p)
    sigma = np.cov(data.rows, rowvar=False) if sigma is None else np.asarray(sigma)
    Q = data.rows[: min(n_eval, data.n)]
    vals = np.zeros(len(subsets))
    for j, u in enumerate(subsets):
        if u.size == 0:
            continue
        idx = list(u.members)
        vals[j] = value_global(empirical_kernel_ce(data, u, Q, sigma[np.ix_(idx, idx)], varrho, k))
    phi = solve_wls(WlsSystem.build(subsets, vals))
    return phi / phi.sum() * 100.0


def mean_abs_aggregate(local_phis, percent: bool = True) -> np.ndarray:
    """Column-wise mean absolute local value, normalised to percentages."""
    phi = np.atleast_2d(np.asarray(local_phis, dtype=np.float64))
    if phi.shape[0] < 1:
        raise ValueError("need at least one row")
    m = np.abs(phi).mean(axis=0)
    if not percent:
        return m
    tot = m.sum()
    return m / tot * 100.0 if tot > 0 else m


def gaussian_conditional_moments(sigma, u, x_u, mean=None):
    """Mean and covariance of ``X_ubar`` given ``X_u = x_u``.

    ``x_u`` may be a vector (``|u|``) or a matrix of rows (``n x |u|``); the
    conditional covariance does not depend on ``x_u``.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    p = sigma.shape[0]
    members = list(u.members if isinstance(u, FeatureSubset) else u)
    rest = [j for j in range(p) if j not in members]
    mu = np.zeros(p) if mean is None else np.asarray(mean, dtype=np.float64)
    xu = np.asarray(x_u, dtype=np.float64)
    if xu.shape[-1] != len(members):
        raise ValueError(f"x_u has {xu.shape[-1]} entries for |u|={len(members)}")
    if not members:
        shape = xu.shape[:-1] + (p,)
        return np.broadcast_to(mu, shape).copy(), sigma.copy()
    S_uu = sigma[np.ix_(members, members)]
    S_ru = sigma[np.ix_(rest, members)]
    inv = _inv_block(S_uu)
    K = S_ru @ inv
    cond_mean = mu[rest] + (xu - mu[members]) @ K.T
    cond_cov = sigma[np.ix_(rest, rest)] - K @ S_ru.T
    return cond_mean, (cond_cov + cond_cov.T) / 2


def _full_moments(sigma, members, Xu):
    """Conditional mean of all p coordinates (exact on u) and full covariance."""
    p = sigma.shape[0]
    rest = [j for j in range(p) if j not in members]
    M = np.zeros((Xu.shape[0], p))
    S = np.zeros((p, p))
    if members:
        M[:, members] = Xu
    if rest:
        cm, cc = gaussian_conditional_moments(sigma, members, Xu) if members else (np.zeros((Xu.shape[0], len(rest))), sigma)
        M[:, rest] = cm
        S[np.ix_(rest, rest)] = cc
    return M, S


def conditional_expectation_exact(spec: GaussianModelSpec, u, X) -> np.ndarray:
    """``E[f(X) | X_u = x_u]`` for each row of ``X`` (observed scale)."""
    members = list(u.members if isinstance(u, FeatureSubset) else u)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if spec.kind in ("linear", "nonlinear", "binary"):
        Z = spec.to_latent(X) if spec.kind != "linear" else X
        M, _ = _full_moments(spec.sigma, members, Z[:, members])
        return M @ spec.beta
    if spec.kind == "interaction":
        M, S = _full_moments(spec.sigma, members, X[:, members])
        out = np.zeros(X.shape[0])
        for coef, idx in spec.terms:
            if len(idx) == 1:
                out += coef * M[:, idx[0]]
            elif len(idx) == 2:
                i, j = idx
                out += coef * (M[:, i] * M[:, j] + S[i, j])
            else:
                raise ValueError("only terms of degree <= 2 are supported")
        return out
    raise ValueError(f"unsupported model kind {spec.kind!r}")


def oracle_value_table(spec: GaussianModelSpec, n_mc: int = 200_000, seed: int = 0) -> np.ndarray:
    """``Var(E[f | X_u])`` for all ``2^p`` subsets, indexed by bitmask."""
    p = spec.p
    table = np.zeros(1 << p)
    if spec.kind in ("linear", "nonlinear", "binary"):
        beta, sigma = spec.beta, spec.sigma
        for u in enumerate_subsets(p):
            if u.size == 0:
                continue
            m = list(u.members)
            b_star = _inv_block(sigma[np.ix_(m, m)]) @ sigma[m, :] @ beta
            table[u.mask] = float(b_star @ sigma[np.ix_(m, m)] @ b_star)
        return table
    if spec.kind == "interaction":
        F = check_psd(spec.sigma, "oracle covariance")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
        X = rng.standard_normal((n_mc, p)) @ F.T
        for u in enumerate_subsets(p):
            if u.size == 0:
                continue
            table[u.mask] = value_global(conditional_expectation_exact(spec, u, X))
        return table
    raise ValueError(f"unsupported model kind {spec.kind!r}")


def oracle_global_shapley(spec: GaussianModelSpec, n_mc: int = 200_000, seed: int = 0,
                          percent: bool = True) -> np.ndarray:
    """True global Shapley values in percent (raw variance shares if not ``percent``)."""
    phi = exact_shapley_brute(oracle_value_table(spec, n_mc, seed), spec.p)
    return phi / phi.sum() * 100.0 if percent else phi


def oracle_shap(spec: GaussianModelSpec, rows) -> np.ndarray:
    """Exact SHAP values (centred conditional expectations) for each row."""
    X = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    p = spec.p
    table = np.zeros((1 << p, X.shape[0]))
    for u in enumerate_subsets(p):
        table[u.mask] = conditional_expectation_exact(spec, u, X)
    table -= table[0]
    return np.column_stack([exact_shapley_brute(table[:, i], p) for i in range(X.shape[0])]).T


def relative_error(phi_true, phi_est) -> float:
    """``sum (phi - phi_hat)^2 / sum phi^2`` (inputs in percent)."""
    t = np.asarray(phi_true, dtype=np.float64)
    e = np.asarray(phi_est, dtype=np.float64)
    if t.shape != e.shape:
        raise ValueError("length mismatch")
    den = float(np.sum(t**2))
    if den == 0:
        raise ValueError("true attribution is identically zero")
    return float(np.sum((t - e) ** 2)) / den
