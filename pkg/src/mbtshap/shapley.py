"""Shapley value machinery and the end-to-end attribution pipeline.

The value of a coalition ``u`` is built from the surrogate tree: path
probabilities weight per-terminal additive fits on ``X_u``, their sum gives
``E(Yhat | X_u)``.  Global attributions use ``Var(E(Yhat | X_u))``, local
(SHAP) ones use the centred conditional expectation itself.  Both are
aggregated by the same weighted least-squares projection.
"""

from __future__ import annotations

import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import linalg

from .data import Dataset, DataError, FeatureSubset, enumerate_subsets
from .forest import ForestConfig
from .pathprob import NodeModelBank, build_node_model_bank, left_probability, node_case, path_probability
from .slim import SlimConfig, SlimTree, fit_slim, tune_slim
from .spline import MIN_WEIGHT, GamModel, SplineBasis, gam_from_beta, predict_gam, solve_normal

log = logging.getLogger(__name__)

LARGE_WEIGHT = 1e5


class SolverError(ArithmeticError):
    """Normal equations singular even after regularisation."""


def shapley_weight(p: int, s: int, large: float = LARGE_WEIGHT) -> float:
    """WLS weight ``(p-1) / (C(p,s) s (p-s))``; ``large`` for the empty and full sets."""
    if not 0 <= s <= p:
        raise ValueError(f"subset size {s} outside [0, {p}]")
    if s == 0 or s == p:
        return float(large)
    return (p - 1) / (math.comb(p, s) * s * (p - s))


def max_gamma(p: int) -> int:
    return (p + 1) // 2


def threshold_subsets(p: int, gamma: int) -> list[FeatureSubset]:
    """Subsets with ``|u| <= gamma`` or ``|complement| <= gamma``."""
    if int(gamma) != gamma or not 1 <= gamma <= max_gamma(p):
        raise ValueError(f"gamma must be an integer in [1, {max_gamma(p)}] for p={p}, got {gamma}")
    gamma = int(gamma)
    return [FeatureSubset(c, p) for k in range(p + 1) if k <= gamma or p - k <= gamma
            for c in combinations(range(p), k)]


@dataclass
class WlsSystem:
    Z: np.ndarray  # |D| x p incidence rows
    weights: np.ndarray  # |D|
    C: np.ndarray  # |D| or |D| x n
    sizes: np.ndarray

    @classmethod
    def build(cls, subsets, values, large: float = LARGE_WEIGHT) -> "WlsSystem":
        p = subsets[0].universe_size
        Z = np.array([u.indicator() for u in subsets])
        sizes = Z.sum(1).astype(int)
        w = np.array([shapley_weight(p, int(s), large) for s in sizes])
        C = np.asarray(values, dtype=np.float64)
        if C.shape[0] != len(subsets):
            raise ValueError("one value (row) per subset required")
        if not (np.all(np.isfinite(C)) and np.all(np.isfinite(w))):
            raise ValueError("non-finite entries in WLS system")
        return cls(Z, w, C, sizes)


def _solve_psd(A, rhs, what: str):
    try:
        c = linalg.cho_factor(A, lower=True, check_finite=False)
        d = np.diag(c[0]) ** 2
        if d.min() > 1e-12 * d.max():
            return linalg.cho_solve(c, rhs, check_finite=False)
    except linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(A)
    tol = 1e-12 * max(w.max(), 1e-300)
    if w.min() <= tol:
        dirs = V[:, w <= tol]
        raise SolverError(f"{what}: singular normal equations; deficient directions {np.round(dirs.T, 6).tolist()}")
    A2 = A + 1e-10 * (np.trace(A) / A.shape[0]) * np.eye(A.shape[0])
    return np.linalg.solve(A2, rhs)


def solve_wls(system: WlsSystem, constrain_extremes: bool = True) -> np.ndarray:
    """Shapley values as the WLS projection of the value table.

    With ``constrain_extremes`` the empty-set and full-set rows hold
    exactly (``sum(phi) = c(K) - c(empty)``) and are eliminated; otherwise
    their large weights approximate the constraints.  ``C`` may carry one
    column per explained instance.
    """
    Z, w, C, sizes = system.Z, system.weights, system.C, system.sizes
    p = Z.shape[1]
    if not constrain_extremes:
        ZB = Z.T * w
        return _solve_psd(ZB @ Z, ZB @ C, "unconstrained WLS")
    empty = np.flatnonzero(sizes == 0)
    full = np.flatnonzero(sizes == p)
    if empty.size != 1 or full.size != 1:
        raise ValueError("constrained solve needs exactly one empty-set row and one full-set row")
    if Z.shape[0] < p + 1:
        raise ValueError(f"need at least p+1={p + 1} subsets, got {Z.shape[0]}")
    c0 = C[empty[0]]
    total = C[full[0]] - c0
    if p == 1:
        return np.atleast_1d(total)[None, ...].reshape((1,) + np.shape(total))
    mid = (sizes > 0) & (sizes < p)
    Zm, wm = Z[mid], w[mid]
    A = Zm[:, :-1] - Zm[:, -1:]
    if C.ndim == 1:
        rhs = C[mid] - c0 - Zm[:, -1] * total
    else:
        rhs = C[mid] - c0[None, :] - Zm[:, -1:] * total[None, :]
    AB = A.T * wm
    head = _solve_psd(AB @ A, AB @ rhs, "constrained WLS")
    last = total - head.sum(axis=0)
    return np.concatenate([head, last[None, ...]], axis=0)


def solver_matrix(subsets, constrain_extremes: bool = True, large: float = LARGE_WEIGHT) -> np.ndarray:
    """``p x |D|`` linear map from value column to Shapley values."""
    eye = np.eye(len(subsets))
    return solve_wls(WlsSystem.build(subsets, eye, large), constrain_extremes)


def _full_table(values, p: int) -> np.ndarray:
    if isinstance(values, dict):
        table = np.full(1 << p, np.nan)
        for k, v in values.items():
            table[k.mask if isinstance(k, FeatureSubset) else int(k)] = v
    else:
        table = np.asarray(values, dtype=np.float64)
    if table.shape[0] != 1 << p or np.any(np.isnan(table)):
        raise ValueError(f"incomplete value table: need all {1 << p} subsets")
    return table


def exact_shapley_brute(values, p: int | None = None) -> np.ndarray:
    """Shapley values by direct summation over all ``2^p`` coalitions.

    ``values`` is indexed by subset bitmask (array of length ``2^p``) or a
    dict keyed by ``FeatureSubset``/bitmask.
    """
    if p is None:
        n = len(values)
        p = n.bit_length() - 1
    if p > 15:
        raise ValueError("brute force limited to p <= 15")
    table = _full_table(values, p)
    masks = np.arange(1 << p)
    size = np.array([bin(m).count("1") for m in masks])
    coef = np.array([math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p) if s < p else 0.0
                     for s in range(p + 1)])
    phi = np.zeros(p)
    for i in range(p):
        without = masks[(masks >> i & 1) == 0]
        phi[i] = np.sum(coef[size[without]] * (table[without | (1 << i)] - table[without]))
    return phi


def value_global(values) -> float:
    """Population variance of conditional-expectation values."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 1:
        raise ValueError("need at least one value")
    m = v.mean()
    return float(np.mean((v - m) ** 2))


def conditional_expectation(tree: SlimTree, bank: NodeModelBank, gams: dict, u, x) -> np.ndarray | float:
    """``sum_m p(R_m | X_u = x_u) * E(Yhat | R_m, X_u = x_u)``.

    ``gams`` maps terminal region id (1..M) to the local GamModel on ``X_u``.
    """
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    members = list(u.members if isinstance(u, FeatureSubset) else u)
    probs = path_probability(tree, bank, u, X)
    out = np.zeros(X.shape[0])
    for m in range(1, tree.n_terminals + 1):
        if m not in gams:
            raise KeyError(f"no local model for terminal {m}")
        out += probs[:, m - 1] * predict_gam(gams[m], X[:, members])
    return float(out[0]) if single else out


@dataclass
class PipelineConfig:
    gamma: int | None = None  # None -> all subsets
    top_vars: int = 3
    n_knots: int = 10
    max_depth: int = 6
    tune: bool = True
    min_node_size: int = 200
    candidate_quantiles: int = 16
    holdout: float = 0.1
    forest: ForestConfig = field(default_factory=ForestConfig)
    seed: int = 0
    threads: int = 1
    constrain_extremes: bool = True
    large_weight: float = LARGE_WEIGHT

    def slim_config(self) -> SlimConfig:
        return SlimConfig(self.max_depth, self.min_node_size, self.n_knots, self.candidate_quantiles)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["forest"] = dict(self.forest.__dict__)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        d["forest"] = ForestConfig(**d["forest"])
        return cls(**d)


@dataclass
class AttributionResult:
    phi: np.ndarray  # p (global) or n x p (local)
    mode: str
    gamma: int
    n_subsets: int
    wall_ms: float
    columns: tuple = ()
    percent: np.ndarray | None = None
    offset: float = 0.0  # mean prediction removed from local values
    error: float | None = None
    flags: dict = field(default_factory=dict)

    @property
    def total(self):
        return self.phi.sum(axis=-1)


@dataclass
class LocalModelTable:
    """Per-(subset, terminal) local coefficients on the shared global basis."""

    basis: SplineBasis
    betas: dict = field(default_factory=dict)  # (mask, region) -> coefficient vector

    def gam(self, u: FeatureSubset, region: int) -> GamModel:
        cols_basis = self.basis.subset(u.members)
        return gam_from_beta(self.betas[(u.mask, region)], cols_basis, u.members)


class MBTExplainer:
    """Fitted state shared by global and local attributions."""

    def __init__(self, config: PipelineConfig | None = None):
        self.config = config or PipelineConfig()
        self.tree: SlimTree | None = None
        self.bank: NodeModelBank | None = None
        self.local: LocalModelTable | None = None
        self.subsets: list | None = None
        self.columns: tuple = ()
        self.mean_prediction = 0.0
        self.values: np.ndarray | None = None  # global c(u) per subset
        self.failures: list = []
        self.timings: dict = {}
        self.selected_depth: int | None = None

    # ---- fitting -------------------------------------------------------
    @property
    def p(self) -> int:
        return self.tree.p

    @property
    def gamma(self) -> int:
        return self.config.gamma or max_gamma(self.p)

    def fit(self, data: Dataset) -> "MBTExplainer":
        y = data.require_predictions()
        cfg = self.config
        t0 = time.perf_counter()
        if cfg.tune:
            self.tree, self.selected_depth, _ = tune_slim(data, cfg.slim_config(), cfg.holdout, cfg.seed)
        else:
            self.tree = fit_slim(data, cfg.slim_config())
            self.selected_depth = self.tree.depth
        t1 = time.perf_counter()
        self.bank = build_node_model_bank(self.tree, data, cfg.top_vars, cfg.forest, cfg.seed, cfg.threads)
        t2 = time.perf_counter()
        self.timings.update(slim_s=t1 - t0, bank_s=t2 - t1)
        self.columns = data.columns
        self.mean_prediction = float(y.mean())
        self.fit_values(data)
        return self

    def fit_values(self, data: Dataset, gamma: int | None = None) -> np.ndarray:
        """Fit the per-(subset, terminal) local models and the global values.

        Reuses the fitted tree and bank; only the subset sweep reruns.
        """
        if gamma is not None:
            self.config.gamma = gamma
        t0 = time.perf_counter()
        self.subsets = threshold_subsets(self.p, self.gamma)
        sweep = _Sweep(self, data)
        results = sweep.run(self.subsets, self.config.threads)
        self.local = LocalModelTable(sweep.basis)
        values = np.zeros(len(self.subsets))
        self.failures = []
        for k, (u, (val, betas, err)) in enumerate(zip(self.subsets, results)):
            values[k] = val
            for region, beta in betas.items():
                self.local.betas[(u.mask, region)] = beta
            if err is not None:
                self.failures.append((u.members, err))
        if len(self.failures) > 0.01 * len(self.subsets):
            raise RuntimeError(f"{len(self.failures)} of {len(self.subsets)} subsets failed: {self.failures[:3]}")
        self.values = values
        self.timings["sweep_s"] = time.perf_counter() - t0
        return values

    # ---- attribution ---------------------------------------------------
    def global_shapley(self) -> AttributionResult:
        t0 = time.perf_counter()
        phi = solve_wls(WlsSystem.build(self.subsets, self.values, self.config.large_weight),
                        self.config.constrain_extremes)
        total = phi.sum()
        flags = {"failures": len(self.failures), "missing_bank_lookups": self.bank.missing_lookups}
        if abs(total) <= 1e-12 * max(1.0, float(np.abs(self.values).max())):
            percent = np.full(self.p, np.nan)
            flags["undefined_percent"] = True
        else:
            percent = phi / total * 100.0
        wall = (self.timings.get("sweep_s", 0.0) + time.perf_counter() - t0) * 1e3
        return AttributionResult(phi, "global", self.gamma, len(self.subsets), wall, self.columns, percent,
                                 flags=flags)

    def conditional_expectations(self, rows) -> np.ndarray:
        """``E(Yhat | X_u = x_u)`` for every selected subset (``|D| x n``)."""
        X = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if X.shape[1] != self.p:
            raise ValueError(f"row width {X.shape[1]} != {self.p}")
        B = self.local.basis.design(X)
        cache: dict = {}
        out = np.zeros((len(self.subsets), X.shape[0]))
        for k, u in enumerate(self.subsets):
            probs = path_probability(self.tree, self.bank, u, X, cache)
            cols = self.local.basis.columns_for(u.members)
            for region in range(1, self.tree.n_terminals + 1):
                pm = probs[:, region - 1]
                if not pm.any():
                    continue
                out[k] += pm * (B[:, cols] @ self.local.betas[(u.mask, region)])
        return out

    def shap(self, rows) -> AttributionResult:
        """Per-row SHAP values; row sums equal ``E(Yhat | X_K = x) - mean(Yhat)``."""
        t0 = time.perf_counter()
        X = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        C = self.conditional_expectations(X) - self.mean_prediction
        empty = [k for k, u in enumerate(self.subsets) if u.size == 0]
        C[empty] = 0.0
        P = solver_matrix(self.subsets, self.config.constrain_extremes, self.config.large_weight)
        phi = (P @ C).T
        wall = (time.perf_counter() - t0) * 1e3
        return AttributionResult(phi, "local", self.gamma, len(self.subsets), wall, self.columns,
                                 offset=self.mean_prediction,
                                 flags={"missing_bank_lookups": self.bank.missing_lookups})


class _Sweep:
    """Subset sweep over the training rows (local fits + global values)."""

    def __init__(self, explainer: MBTExplainer, data: Dataset):
        self.ex = explainer
        self.X = data.rows
        self.y = data.require_predictions()
        self.basis = SplineBasis.from_data(self.X, explainer.config.n_knots)
        self.B = self.basis.design(self.X)
        self.paths = explainer.tree.paths()
        self.model_cache: dict = {}
        self.gram_cache: dict = {}
        self.lock = threading.Lock()
        # warm the forest prediction cache so worker threads only read it
        for node in explainer.tree.splitting_nodes():
            nm = explainer.bank.nodes.get(node.id)
            for s in (nm.models if nm is not None else ()):
                left_probability(explainer.bank, node, s, self.X, self.model_cache)

    def _signature(self, u: FeatureSubset, region: int) -> tuple:
        sig = []
        for nid, went_left in self.paths[region - 1]:
            case = node_case(self.ex.bank, self.ex.tree.nodes[nid], u)
            sig.append((nid, went_left, case))
        return tuple(sig)

    def _gram(self, sig, weights):
        key = sig
        with self.lock:
            hit = self.gram_cache.get(key)
        if hit is not None:
            return hit
        keep = weights >= MIN_WEIGHT
        w = weights[keep]
        Bk = self.B[keep]
        Bw = Bk * w[:, None]
        entry = (Bw.T @ Bk, Bw.T @ self.y[keep], int(keep.sum()), float(w.sum()), float(w @ self.y[keep]))
        with self.lock:
            self.gram_cache.setdefault(key, entry)
        return entry

    def one(self, u: FeatureSubset):
        tree = self.ex.tree
        probs = path_probability(tree, self.ex.bank, u, self.X, self.model_cache)
        cols = self.basis.columns_for(u.members)
        ce = np.zeros(self.X.shape[0])
        betas = {}
        err = None
        for region in range(1, tree.n_terminals + 1):
            w = probs[:, region - 1]
            G, b, n_pos, wsum, wy = self._gram(self._signature(u, region), w)
            beta = np.zeros(cols.size)
            try:
                if wsum <= 0:
                    raise DataError(f"terminal {region} has no weight")
                if n_pos < cols.size:
                    beta[0] = wy / wsum
                else:
                    beta, _ = solve_normal(G[np.ix_(cols, cols)], b[cols], None)
            except Exception as exc:  # degenerate fit: intercept-only fallback keeps Z fixed
                err = repr(exc)
                beta = np.zeros(cols.size)
                beta[0] = float(self.y.mean())
            betas[region] = beta
            pos = w > 0
            if pos.all():
                ce += w * (self.B[:, cols] @ beta)
            elif pos.any():
                ce[pos] += w[pos] * (self.B[np.ix_(pos, cols)] @ beta)
        if u.size == 0:
            return 0.0, betas, err
        return value_global(ce), betas, err

    def run(self, subsets, threads: int = 1):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return list(pool.map(self.one, subsets))
        return [self.one(u) for u in subsets]


def compute_global_shapley(data: Dataset, config: PipelineConfig | None = None) -> AttributionResult:
    """Fit the full pipeline and return global Shapley values (percentages)."""
    t0 = time.perf_counter()
    ex = MBTExplainer(config).fit(data)
    res = ex.global_shapley()
    res.wall_ms = (time.perf_counter() - t0) * 1e3
    res.flags["explainer"] = ex
    return res


def compute_shap(data: Dataset, explain_rows, config: PipelineConfig | None = None) -> AttributionResult:
    """Fit the pipeline on ``data`` and return SHAP values for ``explain_rows``."""
    ex = MBTExplainer(config).fit(data)
    rows = explain_rows.rows if isinstance(explain_rows, Dataset) else explain_rows
    res = ex.shap(rows)
    res.flags["explainer"] = ex
    return res
