"""Command-line entry point.

A thin shell over the other modules: it parses arguments and config files,
dispatches to the harness, writes report files, and maps suite status to
exit codes.  It performs no numerical work of its own.

Exit codes: 0 all mandatory checks pass, 1 failures, 2 usage/config error,
3 indeterminate results only.
"""

import argparse
import os
import sys

from . import fiber, harness, spectral
from .config import ConfigError, apply_overrides, load_config

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_INDETERMINATE = 3


def _cmd_info(args, out):
    n, p = args.n, args.p
    if not (2 <= n <= 8):
        print(f"info: --n must be in [2, 8], got {n}", file=sys.stderr)
        return EXIT_USAGE
    if not (0 <= p <= 6):
        print(f"info: --p must be in [0, 6], got {p}", file=sys.stderr)
        return EXIT_USAGE
    print(f"fiber dimensions for n = {n}", file=out)
    print(f"{'p':>3} {'sym_dim':>9} {'tracefree_dim':>14} {'ck_dim_bound':>13}", file=out)
    for q in range(p + 1):
        bound = str(fiber.ck_dim_bound(n, q)) if q >= 1 else "-"
        print(f"{q:>3} {fiber.sym_dim(n, q):>9} "
              f"{fiber.tracefree_dim(n, q):>14} {bound:>13}", file=out)
    if n == 2:
        print("note: ck_dim_bound extrapolated for n=2 (closed form is stated "
              "for n >= 3)", file=out)
    return EXIT_PASS


def _load_config(args):
    cfg = load_config(args.config)
    if args.override:
        cfg = apply_overrides(cfg, args.override)
    return cfg


def _write_reports(reports, out_dir, out):
    for report in reports:
        for fmt in ("json", "csv", "markdown-summary"):
            path = harness.emit_report(report, fmt, out_dir=out_dir)
            print(f"  wrote {path}", file=out)


def _summarize(report, out):
    c = report.counts
    secs = report.timing.get("total", 0.0)
    print(f"[{report.suite}] {report.status}: {c['pass']} pass, {c['fail']} fail, "
          f"{c['indeterminate']} indeterminate, {c['measured']} measured "
          f"({secs:.1f}s)", file=out)
    for r in sorted(report.records, key=lambda r: r.check_id):
        if r.status in ("fail", "indeterminate"):
            val = "n/a" if r.value is None else f"{r.value:.6e}"
            print(f"  {r.status}: {r.check_id} [{r.anchor}] value {val} "
                  f"{r.detail}", file=out)


def _exit_code(reports):
    statuses = {r.status for r in reports}
    if "fail" in statuses:
        return EXIT_FAIL
    if "indeterminate" in statuses:
        return EXIT_INDETERMINATE
    return EXIT_PASS


def _cmd_check(args, out):
    cfg = _load_config(args)
    reports = harness.run_suites(cfg)
    for report in reports:
        _summarize(report, out)
    _write_reports(reports, args.out, out)
    return _exit_code(reports)


def _cmd_kernel(args, out):
    cfg = _load_config(args)
    report = harness.kernel_experiment(cfg)
    _summarize(report, out)
    _write_reports([report], args.out, out)
    return _exit_code([report])


def _cmd_converge(args, out):
    cfg = _load_config(args)
    report = harness.convergence_study(cfg)
    _summarize(report, out)
    _write_reports([report], args.out, out)
    return _exit_code([report])


def _cmd_symbol(args, out):
    cfg = _load_config(args)
    rank = args.rank if args.rank is not None else cfg.ranks[0]
    cache = harness.build_cache(cfg, cfg.sizes[-1])
    registry = spectral.named_handles(cache, rank)
    if args.operator not in registry:
        print(f"symbol: unknown operator {args.operator!r}; "
              f"known: {', '.join(sorted(registry))}", file=sys.stderr)
        return EXIT_USAGE
    handle = registry[args.operator]
    if handle.symbol is None:
        print(f"symbol: {args.operator!r} has no symbol builder", file=sys.stderr)
        return EXIT_USAGE
    out_dir = args.out or os.environ.get("GRADLAB_OUT") or "."
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"symbol_{args.operator}_p{rank}.csv")
    reports = spectral.symbol_scan_to_csv(
        handle, path, n_dirs=args.directions, seed=cfg.seed
    )
    min_sv = min(r.min_singular_value for r in reports)
    dist = max(r.distance_to_scalar for r in reports)
    print(f"[symbol] {args.operator} p={rank}: {args.directions} directions, "
          f"min singular value {min_sv:.6e}, max distance to scalar {dist:.6e}",
          file=out)
    print(f"  wrote {path}", file=out)
    return EXIT_PASS


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gradlab",
        description="Verification experiments for the gradient decomposition "
                    "on periodic tensor fields.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_info = sub.add_parser("info", help="print fiber dimension table")
    p_info.add_argument("--n", type=int, required=True, help="base dimension (2..8)")
    p_info.add_argument("--p", type=int, required=True, help="max tensor rank (0..6)")

    def add_common(p):
        p.add_argument("--config", required=True, help="path to a key=value config")
        p.add_argument("--out", default=None,
                       help="output directory (default: $GRADLAB_OUT or '.')")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="config override, repeatable")

    p_check = sub.add_parser("check", help="run the suites named in the config")
    add_common(p_check)
    p_kernel = sub.add_parser("kernel", help="run the kernel-counting experiment")
    add_common(p_kernel)
    p_conv = sub.add_parser("converge", help="run the convergence study")
    add_common(p_conv)
    p_sym = sub.add_parser("symbol", help="scan a principal symbol over directions")
    add_common(p_sym)
    p_sym.add_argument("--operator", default="d1_star_d1",
                       help="operator name from the handle registry")
    p_sym.add_argument("--rank", type=int, default=None,
                       help="tensor rank (default: first rank in the config)")
    p_sym.add_argument("--directions", type=int, default=64,
                       help="number of random unit directions")
    return parser


_COMMANDS = {
    "info": _cmd_info,
    "check": _cmd_check,
    "kernel": _cmd_kernel,
    "converge": _cmd_converge,
    "symbol": _cmd_symbol,
}


def main(argv=None, out=sys.stdout):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args, out)
    except (ConfigError, harness.HarnessError) as exc:
        print(f"gradlab {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
