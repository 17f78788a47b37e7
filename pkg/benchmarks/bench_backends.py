"""Compare the compiled and pure-numpy forest kernels.

    python3 benchmarks/bench_backends.py --rows 20000 --features 6 --repeat 3
"""

import argparse
import time

import numpy as np

from mbtshap._backend import get_kernels
from mbtshap.forest import ForestConfig, fit_forest, predict_proba


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=20_000)
    ap.add_argument("--features", type=int, default=6)
    ap.add_argument("--trees", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    X = rng.standard_normal((args.rows, args.features))
    logit = X[:, 0] - 0.5 * X[:, 1] ** 2 + 0.3 * rng.standard_normal(args.rows)
    y = (logit > 0).astype(np.uint8)
    cfg = ForestConfig(n_trees=args.trees, seed=args.seed)

    backends = ["python"]
    try:
        get_kernels("cython")
        backends.append("cython")
    except ImportError:
        print("compiled backend unavailable; timing the fallback only")

    results = {}
    for name in backends:
        t_fit, model = _time(lambda: fit_forest(X, y, cfg, backend=name), args.repeat)
        t_pred, prob = _time(lambda: predict_proba(model, X, backend=name), args.repeat)
        results[name] = (t_fit, t_pred, model, prob)
        print(f"{name:8s} fit {t_fit * 1e3:9.1f} ms   predict {t_pred * 1e3:8.1f} ms")

    if len(results) == 2:
        py, cy = results["python"], results["cython"]
        same = all(np.array_equal(a.feature, b.feature) and np.array_equal(a.threshold, b.threshold)
                   and np.array_equal(a.value, b.value) for a, b in zip(py[2].trees, cy[2].trees))
        print(f"speedup  fit x{py[0] / cy[0]:.2f}   predict x{py[1] / cy[1]:.2f}")
        print(f"identical trees: {same}; max |prob diff| = {np.max(np.abs(py[3] - cy[3])):.3g}")


if __name__ == "__main__":
    main()
