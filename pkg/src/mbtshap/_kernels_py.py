"""Pure numpy implementation of the classification-tree kernels.

Mirrors ``_kernels.pyx`` operation for operation so both backends grow
bitwise-identical trees.
"""

import numpy as np


def _best_split(X, y, samples, feats, min_leaf):
    n = samples.shape[0]
    best_score = np.inf
    best_f = -1
    best_t = 0.0
    pos_total = int(y[samples].sum())
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    for f in feats:
        vals = X[samples, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        pl = np.cumsum(y[samples][order].astype(np.int64))[:-1].astype(np.float64)
        pr = pos_total - pl
        valid = (sv[1:] > sv[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
        if not valid.any():
            continue
        score = 2.0 * pl * (nl - pl) / nl + 2.0 * pr * (nr - pr) / nr
        score = np.where(valid, score, np.inf)
        i = int(np.argmin(score))
        if score[i] < best_score:
            best_score = float(score[i])
            best_f = int(f)
            t = (sv[i] + sv[i + 1]) * 0.5
            if t <= sv[i]:
                t = sv[i + 1]
            best_t = float(t)
    return best_f, best_t, best_score


def fit_tree(X, y, samples, feat_draws, max_depth, min_leaf):
    """Grow one CART classification tree on ``X[samples]``.

    Returns ``(feature, threshold, left, right, value, importance)``; leaves
    have ``feature == -1`` and ``value`` holds the positive fraction.
    ``importance`` accumulates the sample-weighted Gini decrease per feature.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.uint8)
    samples = np.ascontiguousarray(samples, dtype=np.int64)
    cap = min(2 ** (max_depth + 1) - 1, 2 * samples.shape[0] + 1)
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap, dtype=np.float64)
    importance = np.zeros(X.shape[1], dtype=np.float64)
    state = {"nodes": 0, "draw": 0}

    def build(idx, depth):
        node = state["nodes"]
        state["nodes"] += 1
        n = idx.shape[0]
        pos = int(y[idx].sum())
        value[node] = pos / n
        if depth >= max_depth or pos == 0 or pos == n or n < 2 * min_leaf:
            return node
        feats = feat_draws[state["draw"]]
        state["draw"] += 1
        f, t, score = _best_split(X, y, idx, feats, min_leaf)
        if f < 0:
            return node
        feature[node] = f
        threshold[node] = t
        importance[f] += 2.0 * pos * (n - pos) / n - score
        go_left = X[idx, f] < t
        left[node] = build(idx[go_left], depth + 1)
        right[node] = build(idx[~go_left], depth + 1)
        return node

    build(samples, 0)
    m = state["nodes"]
    return feature[:m].copy(), threshold[:m].copy(), left[:m].copy(), right[:m].copy(), value[:m].copy(), importance


def predict_forest(X, feature, threshold, left, right, value, roots):
    """Mean leaf value over trees stored back to back in flat arrays."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    m = X.shape[0]
    acc = np.zeros(m, dtype=np.float64)
    rows = np.arange(m)
    for root in roots:
        node = np.full(m, root, dtype=np.int64)
        while True:
            f = feature[node]
            internal = f >= 0
            if not internal.any():
                break
            ri = rows[internal]
            ni = node[internal]
            go_left = X[ri, f[internal]] < threshold[ni]
            node[internal] = np.where(go_left, left[ni], right[ni])
        acc += value[node]
    return acc / len(roots)
