"""Command-line entry point: ``titan run-nmf | run-mcp | bench | check``.

Exit codes: 0 success, 1 configuration or data error, 2 numerical failure,
3 failed check.
"""
import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, InnerSolverError, NumericalError
from .io import load_config, load_ratings, split_train_test, write_metrics

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _resolve(base, path):
    p = Path(path)
    return p if p.is_absolute() else Path(base) / p


def _load_dense(path):
    path = Path(path)
    if path.suffix == ".mtx":
        import scipy.io
        M = scipy.io.mmread(str(path))
        return np.asarray(M.todense() if hasattr(M, "todense") else M, dtype=np.float64)
    try:
        return np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def _solver_opts(cfg):
    from .solver import SolverOptions
    return SolverOptions(max_iters=cfg.max_iters, time_budget=cfg.time_budget,
                         stop_tol=cfg.stop_tol, monitor="off")


def run_one(cfg, seed, base="."):
    """One seeded run of the configured experiment. Returns ``(log, final metric)``."""
    from .apps.mcp import McpInstance, mcp_run
    from .apps.nmf import SparseNmfInstance, sparse_nmf_run
    from .apps.synth import synthesize_instances

    opts = _solver_opts(cfg)
    if cfg.app == "nmf":
        if cfg.synthesize is not None:
            base_inst = synthesize_instances("nmf", seed=cfg.synthesize.get("seed", 0),
                                             rank=cfg.r, s=cfg.s,
                                             **{k: v for k, v in cfg.synthesize.items()
                                                if k not in ("seed", "rank")})
            M = base_inst.M
        else:
            M = _load_dense(_resolve(base, cfg.dataset))
        inst = SparseNmfInstance(M, cfg.r, cfg.s, cfg.kappa, cfg.C, cfg.nu)
        _, _, log = sparse_nmf_run(inst, opts, seed=seed, variant=cfg.variant,
                                   repeats=tuple(cfg.repeats), restart=cfg.restart,
                                   spectral_method=cfg.spectral_method)
    else:
        if cfg.synthesize is not None:
            kw = {k: v for k, v in cfg.synthesize.items() if k not in ("seed", "rank")}
            inst = synthesize_instances("mcp", rank=cfg.r, seed=seed, lam=cfg.lam,
                                        theta=cfg.theta, train_fraction=cfg.train_fraction,
                                        **kw)
        else:
            full = load_ratings(_resolve(base, cfg.dataset), cfg.dataset_format)
            train, test = split_train_test(full, cfg.train_fraction, seed)
            inst = McpInstance(train, test, cfg.r, cfg.lam, cfg.theta, cfg.C)
        _, _, log, _ = mcp_run(inst, opts, seed=seed, variant=cfg.variant,
                               spectral_method=cfg.spectral_method)
    final = log.iterations[-1].metric if log.iterations else None
    return log, final


def _run_seeds(cfg, seeds, out_dir, base, threads):
    out_dir.mkdir(parents=True, exist_ok=True)

    def task(seed):
        log, final = run_one(cfg, seed, base)
        write_metrics(log, out_dir / f"{cfg.app}-{cfg.variant}-seed{seed}.csv")
        F = log.F[-1]
        return seed, F, final, len(log)

    if threads <= 1:
        return [task(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(task, seeds))


def _mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return float(np.mean(arr)), std


def write_summary(rows, path):
    """``quantity,mean,std,n`` over seeds; std uses the ``n - 1`` denominator."""
    objs = [r[1] for r in rows]
    mets = [r[2] for r in rows if r[2] is not None]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "mean", "std", "n"])
        for name, vals in (("objective", objs), ("rel_error_or_rmse", mets)):
            if vals:
                mean, std = _mean_std(vals)
                w.writerow([name, "%.17g" % mean, "%.17g" % std, len(vals)])


def _threads():
    raw = os.environ.get("TITAN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"TITAN_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("TITAN_THREADS must be >= 1")
    return n


def _cmd_run(args, app):
    cfg = load_config(args.config)
    if cfg.app != app:
        raise ConfigError(f"{args.config} configures app '{cfg.app}', not '{app}'")
    base = Path(args.config).resolve().parent
    out = Path(args.out) if args.out else _resolve(base, cfg.output_dir)
    rows = _run_seeds(cfg, cfg.seeds, out, base, 1)
    for seed, F, metric, iters in rows:
        label = "rel_error" if app == "nmf" else "rmse"
        print(f"seed {seed}: {iters} iterations, objective {F:.10g}, {label} {metric}")
    return EXIT_OK


def _cmd_bench(args):
    cfg = load_config(args.config)
    base = Path(args.config).resolve().parent
    out = Path(args.out) if args.out else _resolve(base, cfg.output_dir)
    seeds = list(range(args.seeds)) if args.seeds else list(cfg.seeds)
    if not seeds:
        raise ConfigError("--seeds must be positive")
    rows = _run_seeds(cfg, seeds, out, base, _threads())
    summary = out / f"{cfg.app}-{cfg.variant}-summary.csv"
    write_summary(rows, summary)
    print(summary.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def _cmd_check(args):
    from .checks import run_checks
    failed = 0
    for res in run_checks():
        print(f"[{'PASS' if res.passed else 'FAIL'}] {res.name}: {res.detail}")
        failed += not res.passed
    return EXIT_CHECK if failed else EXIT_OK


def build_parser():
    parser = _Parser(prog="titan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("run-nmf", "run-mcp"):
        sp = sub.add_parser(name, help=f"run the {name[4:]} app for every seed in the config")
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", help="output directory (default: config output_dir)")
    bp = sub.add_parser("bench", help="multi-seed runs with a mean/std summary CSV")
    bp.add_argument("--config", required=True)
    bp.add_argument("--seeds", type=int, help="use seeds 0..N-1 instead of the config list")
    bp.add_argument("--out")
    sub.add_parser("check", help="run the built-in invariant and oracle checks")
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.command == "run-nmf":
            return _cmd_run(args, "nmf")
        if args.command == "run-mcp":
            return _cmd_run(args, "mcp")
        if args.command == "bench":
            return _cmd_bench(args)
        return _cmd_check(args)
    except (ConfigError, DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, InnerSolverError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
