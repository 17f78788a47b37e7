"""Benchmark drivers: accuracy table, thresholding sweep, SHAP fidelity."""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import replace

import numpy as np

from . import csvio
from .baselines import (empirical_global_shapley, marginal_global_shapley, mean_abs_aggregate, oracle_global_shapley,
                        oracle_shap, relative_error)
from .scenarios import ScenarioConfig, generate_scenario
from .shapley import MBTExplainer, PipelineConfig, max_gamma

log = logging.getLogger(__name__)

METHODS = ("mbt", "marginal", "empirical", "mean_abs")


def _oracle(spec, n_mc, seed):
    t0 = time.perf_counter()
    return oracle_global_shapley(spec, n_mc, seed), (time.perf_counter() - t0) * 1e3


def _cell(method, sc, config, cache, opts):
    train = sc.train
    if method in ("mbt", "mean_abs") and "ex" not in cache:
        t0 = time.perf_counter()
        cache["ex"] = MBTExplainer(replace(config, gamma=None)).fit(train)
        cache["fit_ms"] = (time.perf_counter() - t0) * 1e3
    if method == "mbt":
        t0 = time.perf_counter()
        pct = cache["ex"].global_shapley().percent
        return pct, cache["fit_ms"] + (time.perf_counter() - t0) * 1e3
    t0 = time.perf_counter()
    if method == "mean_abs":
        pct = mean_abs_aggregate(cache["ex"].shap(sc.explain.rows).phi)
        return pct, cache["fit_ms"] + (time.perf_counter() - t0) * 1e3
    if method == "marginal":
        pct = marginal_global_shapley(sc.spec.f, train, n_mc=opts.get("marginal_n_mc", 100),
                                      n_eval=opts.get("marginal_n_eval", 1000), seed=config.seed)
    elif method == "empirical":
        pct = empirical_global_shapley(train, varrho=opts.get("varrho", 0.1), k=opts.get("k", 500),
                                       n_eval=opts.get("empirical_n_eval", 100))
    else:
        raise ValueError(f"unknown method {method!r}")
    return pct, (time.perf_counter() - t0) * 1e3


def run_accuracy_benchmark(scenarios, rhos, methods, out_path, config: PipelineConfig | None = None,
                           n_train: int = 20_000, seed: int = 0, oracle_n_mc: int = 200_000, plot: bool = False,
                           **opts) -> list:
    """One row per (scenario, rho, method, feature), plus the oracle rows.

    A failing cell is logged and recorded as NaN rows; the run continues.
    """
    methods = list(methods)
    if not methods:
        raise ValueError("methods must be nonempty")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    config = config or PipelineConfig(seed=seed)
    rows = []
    for kind in scenarios:
        for rho in rhos:
            sc = generate_scenario(ScenarioConfig(kind, float(rho), n_train=n_train, seed=seed))
            names = sc.train.columns
            oracle, oms = _oracle(sc.spec, oracle_n_mc, seed)
            rows += [dict(scenario=kind, rho=float(rho), method="oracle", feature=n, phi_pct=float(v), error=0.0,
                          wall_ms=oms) for n, v in zip(names, oracle)]
            cache: dict = {}
            for m in methods:
                try:
                    pct, ms = _cell(m, sc, config, cache, opts)
                    err = relative_error(oracle, pct)
                except Exception as exc:  # noqa: BLE001 - keep going, record NaN
                    log.warning("cell (%s, %s, %s) failed: %r", kind, rho, m, exc)
                    pct, ms, err = np.full(len(names), np.nan), float("nan"), float("nan")
                rows += [dict(scenario=kind, rho=float(rho), method=m, feature=n, phi_pct=float(v), error=err,
                              wall_ms=ms) for n, v in zip(names, pct)]
            csvio.write_table(out_path, csvio.ACCURACY_FIELDS, rows)
    csvio.write_table(out_path, csvio.ACCURACY_FIELDS, rows)
    if plot:
        plot_accuracy(out_path)
    return rows


def run_gamma_sweep(scenario, rho, gammas, out_path, config: PipelineConfig | None = None, n_train: int = 20_000,
                    seed: int = 0, oracle_n_mc: int = 200_000, plot: bool = False) -> list:
    """Refit only the subset sweep for each gamma; the tree and bank are shared."""
    config = replace(config or PipelineConfig(seed=seed), gamma=None)
    sc = generate_scenario(ScenarioConfig(scenario, float(rho), n_train=n_train, seed=seed))
    p = sc.train.p
    for g in gammas:
        if not 1 <= int(g) <= max_gamma(p):
            raise ValueError(f"gamma={g} outside [1, {max_gamma(p)}] for p={p}")
    oracle = oracle_global_shapley(sc.spec, oracle_n_mc, seed)
    ex = MBTExplainer(config).fit(sc.train)
    full = ex.global_shapley().percent
    rows = []
    for g in gammas:
        t0 = time.perf_counter()
        ex.fit_values(sc.train, int(g))
        res = ex.global_shapley()
        ms = (time.perf_counter() - t0) * 1e3
        rows.append(dict(gamma=int(g), n_subsets=len(ex.subsets), wall_ms=ms,
                         error_vs_full=relative_error(full, res.percent),
                         error_vs_oracle=relative_error(oracle, res.percent)))
    csvio.write_table(out_path, csvio.GAMMA_FIELDS, rows, {"scenario": scenario, "rho": float(rho), "seed": seed})
    if plot:
        plot_gamma(out_path)
    return rows


def scatter_path(out_path) -> str:
    root, ext = os.path.splitext(os.fspath(out_path))
    return f"{root}_scatter{ext or '.csv'}"


def run_shap_benchmark(rho_list, out_path, config: PipelineConfig | None = None, n_train: int = 20_000,
                       n_explain: int = 1_000, seed: int = 0, plot: bool = False):
    """Interaction scenario: MBT SHAP vs exact SHAP on the explain rows.

    Writes per-(rho, feature) correlations to ``out_path`` and all
    (true, estimated) pairs to ``<out>_scatter.csv``.
    """
    config = replace(config or PipelineConfig(seed=seed), gamma=None)
    corr, scatter = [], []
    for rho in rho_list:
        sc = generate_scenario(ScenarioConfig("interaction", float(rho), n_train=n_train, n_explain=n_explain,
                                              seed=seed))
        ex = MBTExplainer(replace(config)).fit(sc.train)
        est = ex.shap(sc.explain.rows).phi
        true = oracle_shap(sc.spec, sc.explain.rows)
        for j, name in enumerate(sc.train.columns):
            t, e = true[:, j], est[:, j]
            r = float(np.corrcoef(t, e)[0, 1]) if t.std() > 1e-12 and e.std() > 1e-12 else float("nan")
            corr.append(dict(rho=float(rho), feature=name, pearson=r, rms_estimated=math.sqrt(float(np.mean(e**2))),
                             rms_true=math.sqrt(float(np.mean(t**2)))))
            scatter += [dict(rho=float(rho), feature=name, row_id=i, true=float(t[i]), estimated=float(e[i]))
                        for i in range(t.shape[0])]
    csvio.write_table(out_path, csvio.SHAP_CORR_FIELDS, corr, {"seed": seed})
    csvio.write_table(scatter_path(out_path), csvio.SCATTER_FIELDS, scatter, {"seed": seed})
    if plot:
        plot_shap_scatter(scatter_path(out_path))
    return corr, scatter


# ---- static plots (optional matplotlib) -------------------------------------

def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("plotting needs matplotlib (pip install 'mbtshap[plot]')") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _png(path) -> str:
    return os.path.splitext(os.fspath(path))[0] + ".png"


def plot_accuracy(csv_path) -> str:
    plt = _pyplot()
    _, rows = csvio.read_table(csv_path)
    cells = {}
    for r in rows:
        if r["method"] != "oracle":
            cells.setdefault((r["scenario"], r["method"]), {})[float(r["rho"])] = float(r["error"])
    fig, ax = plt.subplots(figsize=(6, 4))
    for (scen, m), d in sorted(cells.items()):
        xs = sorted(d)
        ax.plot(xs, [d[x] for x in xs], marker="o", label=f"{scen}/{m}")
    ax.set_xlabel("rho")
    ax.set_ylabel("relative error")
    ax.set_yscale("symlog", linthresh=1e-4)
    ax.legend(fontsize=7)
    out = _png(csv_path)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_gamma(csv_path) -> str:
    plt = _pyplot()
    _, rows = csvio.read_table(csv_path)
    g = [int(r["gamma"]) for r in rows]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.5))
    a1.plot(g, [float(r["wall_ms"]) for r in rows], marker="o")
    a1.set_xlabel("gamma")
    a1.set_ylabel("wall ms")
    a2.plot(g, [float(r["error_vs_oracle"]) for r in rows], marker="o")
    a2.set_xlabel("gamma")
    a2.set_ylabel("error vs oracle")
    out = _png(csv_path)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_shap_scatter(csv_path) -> str:
    plt = _pyplot()
    _, rows = csvio.read_table(csv_path)
    keys = list(dict.fromkeys((r["rho"], r["feature"]) for r in rows))
    rhos = list(dict.fromkeys(k[0] for k in keys))
    feats = list(dict.fromkeys(k[1] for k in keys))
    fig, axes = plt.subplots(len(rhos), len(feats), figsize=(2.2 * len(feats), 2.2 * len(rhos)), squeeze=False)
    pts: dict = {}
    for r in rows:
        pts.setdefault((r["rho"], r["feature"]), []).append((float(r["true"]), float(r["estimated"])))
    for i, rho in enumerate(rhos):
        for j, f in enumerate(feats):
            xy = np.array(pts.get((rho, f), [(0.0, 0.0)]))
            ax = axes[i, j]
            ax.scatter(xy[:, 0], xy[:, 1], s=2)
            lo, hi = xy.min(), xy.max()
            ax.plot([lo, hi], [lo, hi], lw=0.5, color="k")
            ax.set_title(f"rho={rho} {f}", fontsize=7)
    out = _png(csv_path)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    return out
