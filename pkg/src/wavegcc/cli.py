"""Command line: ``wavegcc run|validate|list``."""

from __future__ import annotations

import argparse
import os
import sys

MEMORY_BUDGET = 4 * 2 ** 30  # bytes
DENSE_BYTES_PER_ENTRY = 16

GRAMIAN_EXPERIMENTS = {"lower-bound", "shell", "blowup-scan", "hum", "smoothing"}


def list_experiments():
    from .config import EXPERIMENTS

    return dict(EXPERIMENTS)


def _human(n):
    for unit in ("B", "KiB", "MiB", "GiB", "TiB", "PiB"):
        if n < 1024 or unit == "PiB":
            return f"{n:.1f} {unit}"
        n /= 1024


def validate(cfg, budget=MEMORY_BUDGET):
    """Dry-run resource estimate; returns a list of (level, message)."""
    from .experiments import check_manifold
    from .gramian import DENSE_MAX
    from .spectral import SpectralBasis

    out = []
    check_manifold(cfg.experiment, cfg.manifold)
    sv = cfg.solver
    out.append(("info", f"experiment {cfg.experiment}, manifold {type(cfg.manifold).__name__}, "
                        f"region {cfg.region.describe()}"))
    if cfg.experiment in GRAMIAN_EXPERIMENTS:
        K = max(cfg.params.get("K", [sv["K_max"]])) if cfg.experiment == "smoothing" else sv["K_max"]
        n = (2 * K + 1) ** 2
        dim = 2 * n
        dense_bytes = DENSE_BYTES_PER_ENTRY * dim * dim
        basis = SpectralBasis(K, cfg.manifold.periods)
        grid_bytes = 16 * basis.N ** 2 * 8 * 8  # node chunk x block of complex grids
        mode = "dense" if dim <= DENSE_MAX else "matrix-free"
        out.append(("info", f"Gramian dimension {dim} (K_max={K}), collocation grid {basis.N}^2, "
                            f"assembly {mode}"))
        out.append(("info", f"dense Gramian memory {_human(dense_bytes)}; matrix-free working set "
                            f"{_human(grid_bytes)}"))
        if dense_bytes > budget:
            out.append(("warning", f"dense Gramian ({_human(dense_bytes)}) exceeds the memory budget "
                                   f"{_human(budget)}; only matrix-free operations are feasible"))
        if mode == "matrix-free":
            out.append(("warning", "matrix-free eigenvalues are LOBPCG upper bounds; expect long runtimes"))
    if cfg.experiment == "damped-beam":
        basis = SpectralBasis(sv["K_max"], cfg.manifold.periods)
        if sv["dt"] > 0.5 / basis.lam_max:
            out.append(("warning", f"dt={sv['dt']:g} exceeds the stability limit {0.5 / basis.lam_max:.3g}"))
        k = cfg.params.get("k", 16)
        if 2 * k > sv["K_max"]:
            out.append(("warning", f"beam k={k} needs K_max >= {2 * k}"))
    if cfg.experiment == "egorov":
        kmax = max(cfg.params.get("k", [16, 32, 64]))
        out.append(("info", f"largest truncation K_max={2 * kmax}"))
    return out


def _parser():
    p = argparse.ArgumentParser(prog="wavegcc", description="Wave observability experiments on compact surfaces.")
    p.add_argument("--threads", type=int, default=None, help="cap worker threads (FFT and BLAS)")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: config 'output' or out/<experiment>)")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    r.add_argument("--no-figures", action="store_true", help="write plot.py but do not render PNGs")
    v = sub.add_parser("validate", help="check a config and estimate resources")
    v.add_argument("config")
    v.add_argument("--budget-gib", type=float, default=MEMORY_BUDGET / 2 ** 30)
    v.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    sub.add_parser("list", help="list experiments")
    return p


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise SystemExit("wavegcc: --threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None):
    args = _parser().parse_args(argv)
    _set_threads(args.threads)

    from .config import load
    from .errors import ConfigError, WaveGCCError

    if args.command == "list":
        for name, desc in list_experiments().items():
            print(f"{name:15s} {desc}")
        return 0

    from .spectral import set_workers

    set_workers(args.threads)
    try:
        cfg = load(args.config)
    except ConfigError as e:
        print(f"wavegcc: config error: {e}", file=sys.stderr)
        return 2

    if args.command == "validate":
        try:
            diags = validate(cfg, args.budget_gib * 2 ** 30)
        except ConfigError as e:
            print(f"wavegcc: config error: {e}", file=sys.stderr)
            return 2
        for level, msg in diags:
            print(f"{level}: {msg}")
        print("ok")
        return 0

    from .experiments import run

    if args.seed is not None:
        if args.seed < 0:
            print("wavegcc: --seed must be >= 0", file=sys.stderr)
            return 2
        cfg.seed = args.seed
    out = args.out or cfg.output or os.path.join("out", cfg.experiment)
    try:
        res, manifest = run(cfg, out, figures=not args.no_figures)
    except ConfigError as e:
        print(f"wavegcc: config error: {e}", file=sys.stderr)
        return 2
    except WaveGCCError as e:
        print(f"wavegcc: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    for a in res.assertions:
        print(f"{'PASS' if a.passed else 'FAIL'}  {a.name}  {a.detail}")
    print(f"{manifest['status']}: wrote {len(manifest['tables'])} table(s) to {out} "
          f"in {manifest['wall_time_s']:.1f} s")
    return 0 if res.passed else 1


if __name__ == "__main__":
    sys.exit(main())
