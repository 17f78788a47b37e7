"""Surrogate model-based tree: binary splits with additive spline leaves."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DataError, Dataset
from .spline import GamModel, SplineBasis, fit_wls_gam, predict_gam, solve_normal


@dataclass(frozen=True)
class SlimConfig:
    max_depth: int = 6
    min_node_size: int = 200
    n_knots: int = 10
    candidate_quantiles: int = 16
    min_rel_improvement: float = 1e-3
    ridge: float | None = None


@dataclass
class SlimNode:
    id: int
    depth: int
    n_samples: int
    gam: GamModel
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    n_left: int = 0
    region: int = 0  # terminal id 1..M, 0 for splitting nodes

    @property
    def is_split(self) -> bool:
        return self.feature >= 0

    @property
    def left_fraction(self) -> float:
        return self.n_left / self.n_samples if self.n_samples else 0.5


@dataclass
class SlimTree:
    nodes: list
    p: int
    config: SlimConfig
    train_mse: float = float("nan")
    train_r2: float = float("nan")
    terminals: list = field(default_factory=list)

    def __post_init__(self):
        if not self.terminals:
            self._index_terminals()

    def _index_terminals(self):
        self.terminals = []
        for node in self.nodes:
            if node.is_split:
                node.region = 0
            else:
                self.terminals.append(node.id)
                node.region = len(self.terminals)

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.nodes)

    @property
    def n_terminals(self) -> int:
        return len(self.terminals)

    def splitting_nodes(self) -> list:
        return [n for n in self.nodes if n.is_split]

    def paths(self) -> list:
        """For each terminal (in region order): list of (node id, went_left)."""
        out = {}
        stack = [(0, [])]
        while stack:
            nid, path = stack.pop()
            node = self.nodes[nid]
            if node.is_split:
                stack.append((node.right, path + [(nid, False)]))
                stack.append((node.left, path + [(nid, True)]))
            else:
                out[nid] = path
        return [out[t] for t in self.terminals]

    def route(self, rows, max_depth: int | None = None) -> np.ndarray:
        """Node id reached by each row (left iff ``x_j < t``)."""
        X = _check_width(rows, self.p)
        node = np.zeros(X.shape[0], dtype=np.int64)
        feat = np.array([n.feature for n in self.nodes])
        thr = np.array([n.threshold for n in self.nodes])
        left = np.array([n.left for n in self.nodes])
        right = np.array([n.right for n in self.nodes])
        depth = np.array([n.depth for n in self.nodes])
        rows_idx = np.arange(X.shape[0])
        while True:
            active = feat[node] >= 0
            if max_depth is not None:
                active &= depth[node] < max_depth
            if not active.any():
                return node
            ni = node[active]
            go_left = X[rows_idx[active], feat[ni]] < thr[ni]
            node[active] = np.where(go_left, left[ni], right[ni])

    def terminal_of(self, rows) -> np.ndarray:
        """Region id (1..M) for each row."""
        regions = np.array([n.region for n in self.nodes])
        return regions[self.route(rows)]

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "config": self.config.__dict__,
            "train_mse": self.train_mse,
            "train_r2": self.train_r2,
            "nodes": [
                {
                    "id": n.id, "depth": n.depth, "n_samples": n.n_samples, "feature": n.feature,
                    "threshold": n.threshold, "left": n.left, "right": n.right, "n_left": n.n_left,
                    "gam": n.gam.to_dict(),
                }
                for n in self.nodes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SlimTree":
        nodes = [
            SlimNode(nd["id"], nd["depth"], nd["n_samples"], GamModel.from_dict(nd["gam"]), nd["feature"],
                     float(nd["threshold"]), nd["left"], nd["right"], nd["n_left"])
            for nd in d["nodes"]
        ]
        return cls(nodes, int(d["p"]), SlimConfig(**d["config"]), float(d["train_mse"]), float(d["train_r2"]))


def _check_width(rows, p: int) -> np.ndarray:
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1) if X.size == p else X.reshape(-1, p)
    if X.shape[1] != p:
        raise ValueError(f"row width {X.shape[1]} != tree width {p}")
    return X


def _rss_from_gram(G, b, yy, ridge):
    beta, _ = solve_normal(G, b, ridge)
    return max(yy - 2.0 * beta @ b + beta @ G @ beta, 0.0)


def _best_split(X, y, cfg: SlimConfig):
    """Scan quantile thresholds on every feature using per-bin Gram sums."""
    n, p = X.shape
    basis = SplineBasis.from_data(X, cfg.n_knots)
    B = basis.design(X)
    levels = np.arange(1, cfg.candidate_quantiles + 1) / (cfg.candidate_quantiles + 1)
    best = (np.inf, -1, 0.0)
    for j in range(p):
        xj = X[:, j]
        ts = np.unique(np.quantile(xj, levels))
        if ts.size == 0:
            continue
        bins = np.searchsorted(ts, xj, side="right")
        nb = ts.size + 1
        counts = np.bincount(bins, minlength=nb)
        G = np.zeros((nb, B.shape[1], B.shape[1]))
        bv = np.zeros((nb, B.shape[1]))
        yy = np.zeros(nb)
        for k in range(nb):
            m = bins == k
            if counts[k]:
                Bk = B[m]
                G[k] = Bk.T @ Bk
                bv[k] = Bk.T @ y[m]
                yy[k] = y[m] @ y[m]
        cG, cb, cy, cn = np.cumsum(G, 0), np.cumsum(bv, 0), np.cumsum(yy), np.cumsum(counts)
        for k in range(ts.size):
            nl = cn[k]
            if nl < cfg.min_node_size or n - nl < cfg.min_node_size:
                continue
            rss = _rss_from_gram(cG[k], cb[k], cy[k], cfg.ridge) + _rss_from_gram(
                cG[-1] - cG[k], cb[-1] - cb[k], cy[-1] - cy[k], cfg.ridge)
            if rss < best[0]:
                best = (rss, j, float(ts[k]))
    return best


def _fit_leaf(X, y, cfg: SlimConfig) -> GamModel:
    return fit_wls_gam(X, y, None, SplineBasis.from_data(X, cfg.n_knots), cfg.ridge, subset=tuple(range(X.shape[1])))


def fit_slim(data: Dataset, config: SlimConfig = SlimConfig()) -> SlimTree:
    """Greedy growth; each node keeps a leaf GAM over all p features."""
    if data.predictions is None:
        raise DataError("fit_slim needs predictions attached")
    X, y = data.rows, data.predictions
    if X.shape[0] < 2 * config.min_node_size and config.max_depth > 0:
        raise DataError(f"N={X.shape[0]} < 2*min_node_size={2 * config.min_node_size}")
    nodes: list[SlimNode] = []

    def grow(idx, depth, gam):
        node = SlimNode(len(nodes), depth, idx.shape[0], gam)
        nodes.append(node)
        if depth >= config.max_depth or idx.shape[0] < 2 * config.min_node_size:
            return node.id
        Xn, yn = X[idx], y[idx]
        rss, j, t = _best_split(Xn, yn, config)
        if j < 0:
            return node.id
        go_left = Xn[:, j] < t
        gl = _fit_leaf(Xn[go_left], yn[go_left], config)
        gr = _fit_leaf(Xn[~go_left], yn[~go_left], config)
        if gl.rss + gr.rss > (1.0 - config.min_rel_improvement) * gam.rss:
            return node.id
        node.feature, node.threshold, node.n_left = j, t, int(go_left.sum())
        node.left = grow(idx[go_left], depth + 1, gl)
        node.right = grow(idx[~go_left], depth + 1, gr)
        return node.id

    grow(np.arange(X.shape[0]), 0, _fit_leaf(X, y, config))
    tree = SlimTree(nodes, X.shape[1], config)
    fitted = predict_slim(tree, X)
    tree.train_mse = float(np.mean((y - fitted) ** 2))
    tree.train_r2 = _r2(y, fitted)
    return tree


def _r2(y, fitted) -> float:
    ss = float(np.sum((y - y.mean()) ** 2))
    if ss == 0:
        return 1.0 if np.allclose(y, fitted) else 0.0
    return 1.0 - float(np.sum((y - fitted) ** 2)) / ss


def predict_slim(tree: SlimTree, rows, max_depth: int | None = None) -> np.ndarray:
    """Route rows (left iff x_j < t) and evaluate the reached node's GAM."""
    X = _check_width(rows, tree.p)
    reached = tree.route(X, max_depth)
    out = np.empty(X.shape[0])
    for nid in np.unique(reached):
        m = reached == nid
        out[m] = predict_gam(tree.nodes[nid].gam, X[m])
    return out


def evaluate_fidelity(tree: SlimTree, data: Dataset, original_response=None) -> dict:
    """MSE / R^2 of the surrogate against the model predictions, and
    optionally against the original responses."""
    y = data.require_predictions()
    fitted = predict_slim(tree, data.rows)
    out = {"mse_fidelity": float(np.mean((y - fitted) ** 2)), "r2_fidelity": _r2(y, fitted)}
    if original_response is not None:
        r = np.asarray(original_response, dtype=np.float64)
        out["mse_accuracy"] = float(np.mean((r - fitted) ** 2))
        out["r2_accuracy"] = _r2(r, fitted)
    return out


def tune_slim(data: Dataset, config: SlimConfig = SlimConfig(), holdout: float = 0.1, seed: int = 0,
              tolerance: float = 0.005):
    """Pick the depth by held-out R^2 over 0..max_depth and refit on all rows.

    The smallest depth whose R^2 is within ``tolerance`` of the best wins.
    Returns ``(tree, depth, r2_by_depth)``.
    """
    y = data.require_predictions()
    n = data.n
    perm = np.random.default_rng(np.random.SeedSequence([seed, 90210])).permutation(n)
    n_hold = max(1, int(round(holdout * n)))
    hold, train = perm[:n_hold], perm[n_hold:]
    if config.max_depth == 0 or train.shape[0] < 2 * config.min_node_size:
        return fit_slim(data, config.__class__(**{**config.__dict__, "max_depth": 0})), 0, [float("nan")]
    big = fit_slim(data.take(train), config)
    Xh, yh = data.rows[hold], y[hold]
    scores = [_r2(yh, predict_slim(big, Xh, d)) for d in range(config.max_depth + 1)]
    best = max(scores)
    depth = next(d for d, s in enumerate(scores) if s >= best - tolerance)
    tree = fit_slim(data, config.__class__(**{**config.__dict__, "max_depth": depth}))
    return tree, depth, scores
