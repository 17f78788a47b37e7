"""Linear B-spline bases and weighted least-squares additive models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

DEFAULT_RIDGE_SCALE = 1e-8
MIN_WEIGHT = 1e-12


def build_basis(column, n_knots: int = 10) -> np.ndarray:
    """Knots at equally spaced empirical quantiles of ``column`` (deduplicated).

    The first and last knots are the column minimum and maximum.  A constant
    column yields a single knot, i.e. no basis columns beyond the intercept.
    """
    x = np.asarray(column, dtype=np.float64).reshape(-1)
    if x.shape[0] < 2:
        raise ValueError("need at least 2 values to place knots")
    if n_knots < 2:
        raise ValueError("n_knots must be >= 2")
    knots = np.unique(np.quantile(x, np.linspace(0.0, 1.0, n_knots)))
    knots[0], knots[-1] = x.min(), x.max()
    return knots


def hat_values(x, knots) -> np.ndarray:
    """All piecewise-linear hat functions at ``x`` (``len(x) x len(knots)``).

    Inputs are clamped to the knot range, so rows always sum to one.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    knots = np.asarray(knots, dtype=np.float64)
    k = knots.shape[0]
    out = np.zeros((x.shape[0], k))
    if k == 1:
        out[:, 0] = 1.0
        return out
    xc = np.clip(x, knots[0], knots[-1])
    i = np.clip(np.searchsorted(knots, xc, side="right") - 1, 0, k - 2)
    h = knots[i + 1] - knots[i]
    right = (xc - knots[i]) / h
    rows = np.arange(x.shape[0])
    out[rows, i] = 1.0 - right
    out[rows, i + 1] = right
    return out


@dataclass(frozen=True)
class SplineBasis:
    """Per-feature knot sequences.  Design columns drop each feature's first
    hat so the intercept stays identifiable."""

    knots: tuple
    knots_per_feature: int = 10

    @classmethod
    def from_data(cls, rows, n_knots: int = 10) -> "SplineBasis":
        rows = np.asarray(rows, dtype=np.float64)
        return cls(tuple(build_basis(rows[:, j], n_knots) for j in range(rows.shape[1])), n_knots)

    @property
    def n_features(self) -> int:
        return len(self.knots)

    def widths(self) -> list[int]:
        return [len(k) - 1 for k in self.knots]

    def offsets(self) -> np.ndarray:
        """Start column of each feature block (intercept is column 0)."""
        return np.concatenate([[1], 1 + np.cumsum(self.widths())]).astype(int)

    @property
    def n_columns(self) -> int:
        return 1 + sum(self.widths())

    def design(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows.reshape(-1, self.n_features)
        if rows.shape[1] != self.n_features:
            raise ValueError(f"row width {rows.shape[1]} != basis width {self.n_features}")
        blocks = [np.ones((rows.shape[0], 1))]
        for j, kn in enumerate(self.knots):
            blocks.append(hat_values(rows[:, j], kn)[:, 1:])
        return np.hstack(blocks)

    def subset(self, features) -> "SplineBasis":
        return SplineBasis(tuple(self.knots[j] for j in features), self.knots_per_feature)

    def columns_for(self, features) -> np.ndarray:
        """Design-column indices (intercept first) covering ``features``."""
        off = self.offsets()
        cols = [np.array([0])]
        for j in features:
            cols.append(np.arange(off[j], off[j + 1]))
        return np.concatenate(cols)


@dataclass(frozen=True)
class GamModel:
    """Additive model ``g0 + sum_i g_i(x_i)`` over linear B-spline blocks."""

    intercept: float
    coefs: tuple
    basis: SplineBasis
    subset: tuple = ()
    weight_sum: float = 0.0
    rss: float = 0.0
    ridge_fallback: bool = False
    degenerate: bool = False

    @property
    def n_features(self) -> int:
        return len(self.coefs)

    def beta(self) -> np.ndarray:
        return np.concatenate([[self.intercept], *self.coefs]) if self.coefs else np.array([self.intercept])

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "coefs": [c.tolist() for c in self.coefs],
            "knots": [k.tolist() for k in self.basis.knots],
            "knots_per_feature": self.basis.knots_per_feature,
            "subset": list(self.subset),
            "weight_sum": self.weight_sum,
            "rss": self.rss,
            "ridge_fallback": self.ridge_fallback,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GamModel":
        basis = SplineBasis(tuple(np.asarray(k, dtype=np.float64) for k in d["knots"]), int(d["knots_per_feature"]))
        return cls(
            float(d["intercept"]),
            tuple(np.asarray(c, dtype=np.float64) for c in d["coefs"]),
            basis,
            tuple(d["subset"]),
            float(d["weight_sum"]),
            float(d["rss"]),
            bool(d["ridge_fallback"]),
            bool(d["degenerate"]),
        )


def default_ridge(gram: np.ndarray) -> float:
    k = gram.shape[0] - 1
    if k <= 0:
        return 0.0
    tr = float(np.trace(gram[1:, 1:]))
    return DEFAULT_RIDGE_SCALE * tr / k if tr > 0 else DEFAULT_RIDGE_SCALE


def solve_normal(gram, rhs, ridge: float | None = None):
    """Solve ``(G + ridge*I') beta = rhs`` where ``I'`` skips the intercept.

    ``ridge=None`` uses the trace-scaled default.  With ``ridge=0`` a
    rank-deficient system is re-solved with the default ridge; the returned
    flag reports that fallback.  ``rhs`` may be a matrix of right-hand sides.
    """
    gram = np.asarray(gram, dtype=np.float64)
    flagged = False
    lam = default_ridge(gram) if ridge is None else float(ridge)
    if lam < 0:
        raise ValueError("ridge must be >= 0")
    a = gram.copy()
    idx = np.arange(1, a.shape[0])
    a[idx, idx] += lam
    try:
        c, low = linalg.cho_factor(a, lower=True, check_finite=False)
        d = np.abs(np.diag(c)) ** 2
        if lam == 0 and d.min() <= 1e-12 * max(d.max(), 1e-300):
            raise linalg.LinAlgError("rank deficient")
        return linalg.cho_solve((c, low), rhs, check_finite=False), flagged
    except linalg.LinAlgError:
        if lam == 0:
            beta, _ = solve_normal(gram, rhs, None)
            return beta, True
        beta = linalg.lstsq(a, rhs, check_finite=False)[0]
        return beta, True


def gam_from_beta(beta, basis: SplineBasis, subset=(), **diag) -> GamModel:
    beta = np.asarray(beta, dtype=np.float64)
    off = basis.offsets()
    coefs = tuple(beta[off[j]:off[j + 1]].copy() for j in range(basis.n_features))
    return GamModel(float(beta[0]), coefs, basis, tuple(subset), **diag)


def fit_wls_gam(design_rows, responses, weights=None, basis: SplineBasis | None = None, ridge: float | None = None,
                subset=(), n_knots: int = 10) -> GamModel:
    """Weighted least-squares fit of an additive linear-spline model.

    Minimises ``sum w_i (y_i - B_i beta)^2 + ridge * |beta_{1:}|^2``.  Rows
    with weight below 1e-12 are dropped.  When fewer positively weighted rows
    than coefficients remain, the model falls back to the weighted mean.
    """
    X = np.asarray(design_rows, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(responses, dtype=np.float64).reshape(-1)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != y.shape[0] or X.shape[0] != y.shape[0]:
        raise ValueError("design, responses and weights disagree on N")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    keep = w >= MIN_WEIGHT
    if not keep.any():
        raise ValueError("all weights are zero")
    if basis is None:
        basis = SplineBasis.from_data(X[keep] if keep.sum() >= 2 else X, n_knots)
    X, y, w = X[keep], y[keep], w[keep]
    B = basis.design(X)
    wsum = float(w.sum())
    if X.shape[0] < B.shape[1]:
        mean = float(w @ y / wsum)
        beta = np.zeros(B.shape[1])
        beta[0] = mean
        rss = float(w @ (y - mean) ** 2)
        return gam_from_beta(beta, basis, subset, weight_sum=wsum, rss=rss, degenerate=True)
    Bw = B * w[:, None]
    beta, flagged = solve_normal(Bw.T @ B, Bw.T @ y, ridge)
    r = y - B @ beta
    return gam_from_beta(beta, basis, subset, weight_sum=wsum, rss=float(w @ r**2), ridge_fallback=flagged)


def predict_gam(model: GamModel, rows) -> np.ndarray:
    """Additive evaluation; inputs outside the knot range are clamped."""
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, model.n_features) if model.n_features else X.reshape(-1, 1)[:, :0]
    if X.shape[1] != model.n_features:
        raise ValueError(f"row width {X.shape[1]} != model width {model.n_features}")
    if model.n_features == 0:
        return np.full(X.shape[0], model.intercept)
    return model.basis.design(X) @ model.beta()
