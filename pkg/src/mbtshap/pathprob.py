"""Split-event probability models and chain-rule path probabilities.

Each splitting node of the surrogate tree gets a small set ``v`` of
variables most predictive of its split event, and one forest per nonempty
``s`` in ``v`` predicting the event from ``X_s``.  Branch probabilities for a
coalition ``u`` then fall into three cases:

* the split variable is in ``u``: deterministic routing;
* ``u & v`` is nonempty: the forest keyed by ``u & v``;
* otherwise: the empirical left fraction observed when the tree was fitted.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from .data import Dataset, FeatureSubset
from .forest import ForestConfig, ForestModel, fit_forest, gini_importance, predict_proba
from .slim import SlimNode, SlimTree

PROB_CLIP = 1e-6


@dataclass
class NodeModels:
    node_id: int
    split_feature: int
    v: tuple
    left_fraction: float
    n_samples: int
    selector: ForestModel | None = None
    models: dict = field(default_factory=dict)  # tuple(sorted s) -> ForestModel
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "split_feature": self.split_feature,
            "v": list(self.v),
            "left_fraction": self.left_fraction,
            "n_samples": self.n_samples,
            "degenerate": self.degenerate,
            "selector": None if self.selector is None else self.selector.to_dict(),
            "models": [{"s": list(k), "forest": m.to_dict()} for k, m in self.models.items()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NodeModels":
        return cls(
            int(d["node_id"]), int(d["split_feature"]), tuple(d["v"]), float(d["left_fraction"]),
            int(d["n_samples"]), None if d["selector"] is None else ForestModel.from_dict(d["selector"]),
            {tuple(e["s"]): ForestModel.from_dict(e["forest"]) for e in d["models"]}, bool(d["degenerate"]),
        )


@dataclass
class NodeModelBank:
    nodes: dict  # node id -> NodeModels
    a: int
    missing_lookups: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def n_event_models(self) -> int:
        return sum(len(nm.models) for nm in self.nodes.values())

    def n_models(self) -> int:
        """Event models plus one selector per node (T * (2^|v| - 1 + 1))."""
        return self.n_event_models() + sum(nm.selector is not None for nm in self.nodes.values())

    def _note_missing(self):
        with self._lock:
            self.missing_lookups += 1

    def to_dict(self) -> dict:
        return {"a": self.a, "nodes": [nm.to_dict() for nm in self.nodes.values()]}

    @classmethod
    def from_dict(cls, d: dict) -> "NodeModelBank":
        nodes = {}
        for e in d["nodes"]:
            nm = NodeModels.from_dict(e)
            nodes[nm.node_id] = nm
        return cls(nodes, int(d["a"]))


def _node_rows(tree: SlimTree, X: np.ndarray) -> dict:
    """Training-row indices reaching every node."""
    out = {0: np.arange(X.shape[0])}
    for node in tree.nodes:
        if node.is_split and node.id in out:
            idx = out[node.id]
            go_left = X[idx, node.feature] < node.threshold
            out[node.left] = idx[go_left]
            out[node.right] = idx[~go_left]
    return out


def _derive_seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def select_top_vars(tree: SlimTree, node: SlimNode, data: Dataset, a: int = 3, seed: int = 0,
                    forest_config: ForestConfig = ForestConfig(), rows=None, threads: int = 1):
    """Top-``a`` Gini-importance predictors of the node's split event.

    Returns ``(v, selector, degenerate)``.  ``v`` excludes the splitting
    variable; ties go to the lower feature index.
    """
    if not node.is_split:
        raise ValueError(f"node {node.id} is not a splitting node")
    p = data.p
    others = np.array([j for j in range(p) if j != node.feature], dtype=int)
    k = min(a, p - 1)
    if rows is None:
        rows = _node_rows(tree, data.rows)[node.id]
    Xn = data.rows[rows]
    event = (Xn[:, node.feature] < node.threshold).astype(np.uint8)
    if k <= 0 or rows.shape[0] < 2:
        return tuple(int(j) for j in others[:k]), None, True
    cfg = replace(forest_config, seed=_derive_seed(seed, node.id, 1 << 40))
    selector = fit_forest(Xn[:, others], event, cfg, threads=threads)
    if event.min() == event.max():
        return tuple(int(j) for j in others[:k]), selector, True
    imp = gini_importance(selector)
    order = np.argsort(-imp, kind="stable")[:k]
    return tuple(sorted(int(others[i]) for i in order)), selector, False


def build_node_model_bank(tree: SlimTree, data: Dataset, a: int = 3, forest_config: ForestConfig = ForestConfig(),
                          seed: int = 0, threads: int = 1) -> NodeModelBank:
    """Selector plus ``2^|v| - 1`` event forests for every splitting node.

    Every forest trains on all rows reaching the node, ignoring the
    coalition in the conditioning set.
    """
    X = data.rows
    rows = _node_rows(tree, X)
    nodes = {}
    jobs = []
    for node in tree.splitting_nodes():
        idx = rows[node.id]
        nm = NodeModels(node.id, node.feature, (), node.left_fraction, node.n_samples)
        nodes[node.id] = nm
        if idx.shape[0] < 2:
            nm.degenerate = True
            continue
        nm.v, nm.selector, nm.degenerate = select_top_vars(tree, node, data, a, seed, forest_config, idx, threads)
        event = (X[idx, node.feature] < node.threshold).astype(np.uint8)
        for size in range(1, len(nm.v) + 1):
            for s in combinations(nm.v, size):
                jobs.append((nm, s, idx, event))

    def fit_one(job):
        nm, s, idx, event = job
        mask = sum(1 << j for j in s)
        cfg = replace(forest_config, seed=_derive_seed(seed, nm.node_id, mask))
        return fit_forest(X[np.ix_(idx, list(s))], event, cfg)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fitted = list(pool.map(fit_one, jobs))
    else:
        fitted = [fit_one(j) for j in jobs]
    for (nm, s, _, _), model in zip(jobs, fitted):
        nm.models[s] = model
    return NodeModelBank(nodes, a)


def _subset_members(u) -> tuple:
    return tuple(u.members) if isinstance(u, FeatureSubset) else tuple(sorted(int(i) for i in u))


def node_case(bank: NodeModelBank, node: SlimNode, u) -> tuple:
    """Classify a node for coalition ``u``: ``("route",)``, ``("model", s)`` or ``("empirical",)``."""
    members = set(_subset_members(u))
    if node.feature in members:
        return ("route",)
    nm = bank.nodes.get(node.id)
    if nm is None:
        return ("empirical",)
    s = tuple(j for j in nm.v if j in members)
    return ("model", s) if s else ("empirical",)


def left_probability(bank: NodeModelBank, node: SlimNode, u, rows, model_cache: dict | None = None) -> np.ndarray:
    """Probability of the left branch at ``node`` for each row given ``X_u``."""
    X = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    case = node_case(bank, node, u)
    if case[0] == "route":
        return (X[:, node.feature] < node.threshold).astype(np.float64)
    nm = bank.nodes.get(node.id)
    if case[0] == "model":
        s = case[1]
        model = nm.models.get(s)
        if model is not None:
            key = (node.id, s)
            if model_cache is not None and key in model_cache:
                return model_cache[key]
            q = np.clip(predict_proba(model, X[:, list(s)]), PROB_CLIP, 1.0 - PROB_CLIP)
            if model_cache is not None:
                model_cache[key] = q
            return q
        bank._note_missing()
    frac = nm.left_fraction if nm is not None else node.left_fraction
    return np.full(X.shape[0], frac)


def conditional_split_prob(bank: NodeModelBank, node: SlimNode, u, x, branch: str = "left") -> float:
    """Probability that ``x`` follows ``branch`` at ``node`` given ``X_u = x_u``."""
    q = float(left_probability(bank, node, u, np.asarray(x, dtype=np.float64).reshape(1, -1))[0])
    if branch == "left":
        return q
    if branch == "right":
        return 1.0 - q
    raise ValueError("branch must be 'left' or 'right'")


def path_probability(tree: SlimTree, bank: NodeModelBank, u, rows, model_cache: dict | None = None) -> np.ndarray:
    """``p(R_m | X_u = x_u)`` for every row and terminal (``rows x M``).

    Right-branch probability is one minus the left one, so each row sums to 1.
    """
    X = np.asarray(rows, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    reach = {0: np.ones(X.shape[0])}
    for node in tree.nodes:
        if not node.is_split:
            continue
        here = reach[node.id]
        q = np.clip(left_probability(bank, node, u, X, model_cache), 0.0, 1.0)
        reach[node.left] = here * q
        reach[node.right] = here * (1.0 - q)
    out = np.column_stack([reach[t] for t in tree.terminals])
    return out[0] if single else out
