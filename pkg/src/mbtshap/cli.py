"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 numeric failure.
``MBTSHAP_THREADS`` sets the worker count when ``--threads`` is not given.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import bench, csvio
from .baselines import oracle_global_shapley
from .bundle import BundleError, load_bundle, save_bundle
from .data import DataError, load_dataset
from .forest import ForestConfig
from .scenarios import KINDS, default_correlation, model_spec
from .shapley import AttributionResult, MBTExplainer, PipelineConfig, SolverError
from .slim import evaluate_fidelity

THREADS_ENV = "MBTSHAP_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _names(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _shared(p: argparse.ArgumentParser):
    p.add_argument("--data", help="CSV with a header row")
    p.add_argument("--pred-col", help="column holding model predictions")
    p.add_argument("--gamma", type=int, default=None, help="threshold (default: all subsets)")
    p.add_argument("--top-vars", type=int, default=3)
    p.add_argument("--knots", type=int, default=10)
    p.add_argument("--max-depth", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--bundle", help="model bundle JSON path")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mbtshap", description="Global Shapley and SHAP values via a model-based tree surrogate.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("fit", help="fit the surrogate and subset models; save a bundle")
    _shared(p)
    p = sub.add_parser("global", help="global Shapley values (fits, or reuses --bundle)")
    _shared(p)
    p = sub.add_parser("shap", help="local SHAP values for rows")
    _shared(p)
    p.add_argument("--explain", help="CSV of rows to explain (default: --data rows)")
    p.add_argument("--rows", type=int, default=None, help="explain only the first N rows")

    p = sub.add_parser("oracle", help="exact global Shapley values for a simulated scenario")
    _shared(p)
    p.add_argument("--scenario", choices=KINDS, default="linear")
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--n-mc", type=int, default=200_000)

    p = sub.add_parser("bench-accuracy", help="accuracy table across scenarios, rhos and methods")
    _shared(p)
    p.add_argument("--scenarios", type=_names, default=["linear"])
    p.add_argument("--rhos", type=_floats, default=[0.0])
    p.add_argument("--methods", type=_names, default=["mbt", "marginal"])
    p.add_argument("--n-train", type=int, default=20_000)
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("bench-gamma", help="runtime/accuracy sweep over gamma")
    _shared(p)
    p.add_argument("--scenario", choices=KINDS, default="linear")
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--gammas", type=_ints, default=None)
    p.add_argument("--n-train", type=int, default=20_000)
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("bench-shap", help="SHAP vs exact values on the interaction scenario")
    _shared(p)
    p.add_argument("--rhos", type=_floats, default=[0.0])
    p.add_argument("--n-train", type=int, default=20_000)
    p.add_argument("--n-explain", type=int, default=1_000)
    p.add_argument("--plot", action="store_true")
    return ap


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        n = flag
    else:
        env = os.environ.get(THREADS_ENV, "").strip()
        try:
            n = int(env) if env else 1
        except ValueError:
            raise UsageError(f"{THREADS_ENV}={env!r} is not an integer") from None
    if n < 1:
        raise UsageError(f"thread count must be >= 1, got {n}")
    return n


def _config(args) -> PipelineConfig:
    if args.top_vars < 0 or args.knots < 2 or args.max_depth < 0:
        raise UsageError("--top-vars >= 0, --knots >= 2 and --max-depth >= 0 are required")
    return PipelineConfig(gamma=args.gamma, top_vars=args.top_vars, n_knots=args.knots, max_depth=args.max_depth,
                          seed=args.seed, threads=resolve_threads(args.threads), forest=ForestConfig(seed=args.seed))


def _need(args, *names):
    for n in names:
        if getattr(args, n.replace("-", "_")) is None:
            raise UsageError(f"--{n} is required for '{args.command}'")


def _fit(args):
    _need(args, "data", "pred-col")
    data = load_dataset(args.data, args.pred_col)
    if args.gamma is not None and not 1 <= args.gamma <= (data.p + 1) // 2:
        raise UsageError(f"--gamma must lie in [1, {(data.p + 1) // 2}] for p={data.p}")
    ex = MBTExplainer(_config(args)).fit(data)
    logging.info("fitted depth %s, %d terminals, %d bank models", ex.selected_depth, ex.tree.n_terminals,
                 ex.bank.n_models())
    return ex, data


def _loaded(args) -> MBTExplainer:
    if not os.path.exists(args.bundle):
        raise UsageError(f"bundle {args.bundle} does not exist")
    ex = load_bundle(args.bundle).explainer
    if args.threads is not None or os.environ.get(THREADS_ENV):
        ex.config = replace(ex.config, threads=resolve_threads(args.threads))
    return ex


def cmd_fit(args):
    _need(args, "bundle")
    ex, data = _fit(args)
    save_bundle(ex, args.bundle)
    fid = evaluate_fidelity(ex.tree, data)
    print(f"saved {args.bundle}: depth={ex.selected_depth} terminals={ex.tree.n_terminals} "
          f"subsets={len(ex.subsets)} r2_fidelity={fid['r2_fidelity']:.4f}")
    if args.out:
        csvio.write_global(args.out, ex.global_shapley(), args.seed)


def cmd_global(args):
    _need(args, "out")
    if args.data is None and args.bundle is not None:
        ex = _loaded(args)
    else:
        ex, _ = _fit(args)
        if args.bundle:
            save_bundle(ex, args.bundle)
    res = ex.global_shapley()
    csvio.write_global(args.out, res, ex.config.seed)
    _print_global(res)


def cmd_shap(args):
    _need(args, "out")
    if args.bundle is not None and args.pred_col is None:
        ex = _loaded(args)
    else:
        ex, _ = _fit(args)
        if args.bundle:
            save_bundle(ex, args.bundle)
    rows_path = args.explain or args.data
    if rows_path is None:
        raise UsageError("--explain or --data is required for 'shap'")
    table = load_dataset(rows_path)
    if set(ex.columns) <= set(table.columns):
        rows = table.rows[:, [table.columns.index(c) for c in ex.columns]]
    else:
        pred = [j for j, c in enumerate(table.columns) if c == args.pred_col]
        rows = np.delete(table.rows, pred, axis=1) if pred else table.rows
    if rows.shape[1] != ex.p:
        raise UsageError(f"{rows_path} has {rows.shape[1]} feature columns, bundle expects {ex.p}")
    if args.rows is not None:
        rows = rows[: args.rows]
    res = ex.shap(rows)
    csvio.write_local(args.out, res, ex.config.seed)
    print(f"wrote {res.phi.shape[0]} rows x {res.phi.shape[1]} features to {args.out}")


def cmd_oracle(args):
    _need(args, "out")
    if not 0.0 <= args.rho < 1.0:
        raise UsageError(f"--rho must lie in [0, 1), got {args.rho}")
    spec = model_spec(args.scenario, default_correlation(args.scenario, args.rho).matrix())
    t0 = time.perf_counter()
    phi = oracle_global_shapley(spec, args.n_mc, args.seed, percent=False)
    pct = phi / phi.sum() * 100.0
    names = tuple(f"X{j + 1}" for j in range(spec.p))
    res = AttributionResult(phi, "global", (spec.p + 1) // 2, 1 << spec.p, (time.perf_counter() - t0) * 1e3,
                            names, pct)
    csvio.write_global(args.out, res, args.seed, method="oracle")
    _print_global(res)


def cmd_bench_accuracy(args):
    _need(args, "out")
    rows = bench.run_accuracy_benchmark(args.scenarios, args.rhos, args.methods, args.out, _config(args),
                                        n_train=args.n_train, seed=args.seed, plot=args.plot)
    errs = {}
    for r in rows:
        errs[(r["scenario"], r["rho"], r["method"])] = r["error"]
    for (s, rho, m), e in errs.items():
        print(f"{s:12s} rho={rho:<5g} {m:10s} error={e:.5f}")
    if any(np.isnan(e) for e in errs.values()):
        return 2


def cmd_bench_gamma(args):
    _need(args, "out")
    p = 6 if args.scenario == "interaction" else 13
    gammas = args.gammas or list(range(1, (p + 1) // 2 + 1))
    rows = bench.run_gamma_sweep(args.scenario, args.rho, gammas, args.out, _config(args), n_train=args.n_train,
                                 seed=args.seed, plot=args.plot)
    for r in rows:
        print(f"gamma={r['gamma']} |D|={r['n_subsets']} wall_ms={r['wall_ms']:.1f} "
              f"vs_full={r['error_vs_full']:.5f} vs_oracle={r['error_vs_oracle']:.5f}")


def cmd_bench_shap(args):
    _need(args, "out")
    corr, _ = bench.run_shap_benchmark(args.rhos, args.out, _config(args), n_train=args.n_train,
                                       n_explain=args.n_explain, seed=args.seed, plot=args.plot)
    for r in corr:
        print(f"rho={r['rho']:<5g} {r['feature']:4s} r={r['pearson']:.4f} rms={r['rms_estimated']:.4f}")


def _print_global(res):
    for name, v, q in zip(res.columns, res.phi, res.percent):
        print(f"{name:>12s} {v: .6g} {q:7.3f}%")


COMMANDS = {
    "fit": cmd_fit, "global": cmd_global, "shap": cmd_shap, "oracle": cmd_oracle,
    "bench-accuracy": cmd_bench_accuracy, "bench-gamma": cmd_bench_gamma, "bench-shap": cmd_bench_shap,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args) or 0
    except (UsageError, DataError, BundleError, FileNotFoundError, ValueError) as exc:
        print(f"mbtshap {args.command}: {exc}", file=sys.stderr)
        return 1
    except (SolverError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"mbtshap {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
