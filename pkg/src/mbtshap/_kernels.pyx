# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled classification-tree kernels (CART growth and forest prediction)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY
ctypedef cnp.int64_t i64

cnp.import_array()

cdef struct Builder:
    const double* xs          # d x n, column-major copy of X[samples]
    Py_ssize_t n
    Py_ssize_t d
    const unsigned char* ys   # labels of the bootstrap sample
    i64* order                # d x n, per-feature positions sorted by value
    i64* buf
    unsigned char* goes_left
    const i64* draws
    Py_ssize_t mf
    int max_depth
    Py_ssize_t min_leaf
    i64* feature
    double* threshold
    i64* left
    i64* right
    double* value
    double* importance
    Py_ssize_t n_nodes
    Py_ssize_t n_draws


cdef Py_ssize_t _build(Builder* b, Py_ssize_t start, Py_ssize_t n, int depth) noexcept nogil:
    cdef Py_ssize_t node = b.n_nodes
    b.n_nodes += 1
    cdef Py_ssize_t i, k, pos = 0, pl, nl, nr, pr, a, c
    cdef i64 f, best_f = -1
    cdef double score, best_score = INFINITY, best_t = 0.0, t, dpl, dpr, dnl, dnr, v0, v1
    cdef i64* ordf = b.order
    cdef const double* xf
    for i in range(start, start + n):
        pos += b.ys[ordf[i]]
    b.value[node] = <double>pos / <double>n
    if depth >= b.max_depth or pos == 0 or pos == n or n < 2 * b.min_leaf:
        return node
    cdef const i64* feats = b.draws + b.n_draws * b.mf
    b.n_draws += 1
    for k in range(b.mf):
        f = feats[k]
        ordf = b.order + f * b.n + start
        xf = b.xs + f * b.n
        pl = 0
        for i in range(n - 1):
            pl += b.ys[ordf[i]]
            v0 = xf[ordf[i]]
            v1 = xf[ordf[i + 1]]
            if not (v1 > v0):
                continue
            nl = i + 1
            nr = n - nl
            if nl < b.min_leaf or nr < b.min_leaf:
                continue
            pr = pos - pl
            dpl = <double>pl
            dpr = <double>pr
            dnl = <double>nl
            dnr = <double>nr
            score = 2.0 * dpl * (dnl - dpl) / dnl + 2.0 * dpr * (dnr - dpr) / dnr
            if score < best_score:
                best_score = score
                best_f = f
                t = (v0 + v1) * 0.5
                if t <= v0:
                    t = v1
                best_t = t
    if best_f < 0:
        return node
    b.feature[node] = best_f
    b.threshold[node] = best_t
    b.importance[best_f] += 2.0 * <double>pos * <double>(n - pos) / <double>n - best_score
    xf = b.xs + best_f * b.n
    ordf = b.order + start
    nl = 0
    for i in range(n):
        if xf[ordf[i]] < best_t:
            b.goes_left[ordf[i]] = 1
            nl += 1
        else:
            b.goes_left[ordf[i]] = 0
    # stable partition of every feature's sorted positions
    for f in range(b.d):
        ordf = b.order + f * b.n + start
        a = 0
        c = 0
        for i in range(n):
            if b.goes_left[ordf[i]]:
                ordf[a] = ordf[i]
                a += 1
            else:
                b.buf[c] = ordf[i]
                c += 1
        for i in range(c):
            ordf[a + i] = b.buf[i]
    b.left[node] = _build(b, start, nl, depth + 1)
    b.right[node] = _build(b, start + nl, n - nl, depth + 1)
    return node


def fit_tree(X, y, samples, feat_draws, int max_depth, Py_ssize_t min_leaf):
    """Grow one CART classification tree; same contract as the numpy fallback."""
    X = np.asarray(X, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.int64)
    cdef Py_ssize_t n = samples.shape[0]
    if n == 0:
        raise ValueError("empty sample")
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] xs = np.ascontiguousarray(X[samples].T)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1, mode="c"] ys = np.ascontiguousarray(np.asarray(y, dtype=np.uint8)[samples])
    cdef cnp.ndarray[cnp.int64_t, ndim=2, mode="c"] order = np.ascontiguousarray(np.argsort(xs, axis=1, kind="stable"), dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] buf = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1, mode="c"] goes_left = np.zeros(n, dtype=np.uint8)
    cdef cnp.ndarray[cnp.int64_t, ndim=2, mode="c"] draws = np.ascontiguousarray(feat_draws, dtype=np.int64)
    cdef Py_ssize_t cap = min((1 << (max_depth + 1)) - 1, 2 * n + 1)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] feature = np.full(cap, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] threshold = np.zeros(cap, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] left = np.full(cap, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] right = np.full(cap, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] value = np.zeros(cap, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] importance = np.zeros(xs.shape[0], dtype=np.float64)
    cdef Builder b
    b.xs = &xs[0, 0]
    b.n = n
    b.d = xs.shape[0]
    b.ys = &ys[0]
    b.order = &order[0, 0]
    b.buf = &buf[0]
    b.goes_left = &goes_left[0]
    b.draws = &draws[0, 0] if draws.shape[0] > 0 else NULL
    b.mf = draws.shape[1]
    b.max_depth = max_depth
    b.min_leaf = min_leaf
    b.feature = &feature[0]
    b.threshold = &threshold[0]
    b.left = &left[0]
    b.right = &right[0]
    b.value = &value[0]
    b.importance = &importance[0]
    b.n_nodes = 0
    b.n_draws = 0
    with nogil:
        _build(&b, 0, n, 0)
    m = b.n_nodes
    return feature[:m].copy(), threshold[:m].copy(), left[:m].copy(), right[:m].copy(), value[:m].copy(), importance


def predict_forest(X, feature, threshold, left, right, value, roots):
    """Mean leaf value over trees stored back to back in flat arrays."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Xc = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] fe = np.ascontiguousarray(feature, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] th = np.ascontiguousarray(threshold, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] le = np.ascontiguousarray(left, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] ri = np.ascontiguousarray(right, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] va = np.ascontiguousarray(value, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] rt = np.ascontiguousarray(roots, dtype=np.int64)
    cdef Py_ssize_t m = Xc.shape[0], d = Xc.shape[1], n_trees = rt.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(m, dtype=np.float64)
    cdef Py_ssize_t r, t
    cdef i64 node
    cdef double acc
    with nogil:
        for r in range(m):
            acc = 0.0
            for t in range(n_trees):
                node = rt[t]
                while fe[node] >= 0:
                    if Xc[r, fe[node]] < th[node]:
                        node = le[node]
                    else:
                        node = ri[node]
                acc += va[node]
            out[r] = acc / <double>n_trees
    return out
