"""Command-line front end: ``roughweak <command> [options]``.

Exit codes: 0 success, 1 invalid arguments or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys

from threadpoolctl import threadpool_limits

from . import experiments as ex
from .kernels_cov import HurstParams, TimeGrid
from .markovian import build_theta_grid, l2_error_profile, tail_variance_bound
from .path_sampler import DEFAULT_CHUNK, dump_batch, sample_joint_paths
from .payoffs import romano_touzi_price
from .schemes import PsiSpec

log = logging.getLogger("roughweak")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


_KEY_HELP = {
    "H": "Hurst parameter(s), comma separated, each in (0, 1/2]",
    "T": "horizon",
    "log2_n_ref": "log2 of the reference step count",
    "log2_n_list": "coarse levels log2(n), comma list or range lo..hi",
    "M": "number of Monte Carlo paths",
    "seed": "seed of every random stream",
    "psi": "integrand: linear or rbergomi:<xi>,<eta>",
    "payoffs": "payoffs separated by ';' or spaces (square, cube, heaviside, "
               "shifted_cube:c, poly:a0,a1,..., call:K)",
    "out": "output CSV path",
    "mem_budget_mb": f"path-storage budget in MiB (default from ${ex.MEM_BUDGET_ENV} or 1024)",
}


def _add_weak_error(sub) -> None:
    epilog = "config keys (file syntax 'key = value'; flags override the file):\n" + "\n".join(
        f"  {k:<14} {_KEY_HELP[k]}" for k in ex.CONFIG_KEYS
    )
    p = sub.add_parser("weak-error", help="run the coupled weak-error experiment",
                       epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="key-value config file")
    for key in ex.CONFIG_KEYS:
        flags = [f"--{key}"]
        if "_" in key:
            flags.append(f"--{key.replace('_', '-')}")
        p.add_argument(*flags, dest=key, default=None, help=_KEY_HELP[key])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="roughweak", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS worker threads (results do not depend on it)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sample-paths", help="sample (W^H, W) paths and dump them")
    p.add_argument("--H", type=float, default=0.1)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--M", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stream-layout", type=int, default=DEFAULT_CHUNK)
    p.add_argument("--out", required=True)

    p = sub.add_parser("markov-compare",
                       help="coupled L2 error of the OU surrogate next to the tail bound")
    p.add_argument("--H", type=float, default=0.1)
    p.add_argument("--L", type=float, default=50.0)
    p.add_argument("--N-L", "--N_L", dest="N_L", type=int, default=None,
                   help="quadrature nodes (default 10 L)")
    p.add_argument("--rule", choices=("uniform", "geometric"), default="uniform")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--M", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)

    _add_weak_error(sub)

    p = sub.add_parser("fit-rate", help="fit weak rates from a weak-error CSV")
    p.add_argument("csv")
    p.add_argument("--H", type=float, default=None)
    p.add_argument("--payoff", default=None)

    p = sub.add_parser("price-bergomi", help="Romano-Touzi call price in rough Bergomi")
    p.add_argument("--H", type=float, default=0.1)
    p.add_argument("--xi", type=float, default=0.04)
    p.add_argument("--eta", type=float, default=1.9)
    p.add_argument("--rho", type=float, default=-0.7)
    p.add_argument("--S0", type=float, default=100.0)
    p.add_argument("--K", type=float, default=100.0)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--M", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _run_config(args) -> ex.RunConfig:
    data: dict[str, object] = {}
    if args.config:
        data.update(ex.load_config_file(args.config))
    for key in ex.CONFIG_KEYS:
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    cfg = ex.RunConfig.from_mapping(data)
    if cfg.out is None:
        raise ex.ConfigError("an output path is required (--out or 'out' in the config)")
    return cfg


def _prepare(args):
    """Validate arguments and return a zero-argument job; raises on bad input."""
    if args.command == "sample-paths":
        hp, grid = HurstParams(args.H), TimeGrid(args.T, args.n)
        if args.M < 0 or args.stream_layout < 1:
            raise ValueError("M must be >= 0 and --stream-layout >= 1")

        def job():
            factor = ex.joint_factor(grid, hp)
            batch = sample_joint_paths(factor, grid, hp, args.M, args.seed, args.stream_layout)
            dump_batch(batch, args.out)
            print(f"wrote {args.M} paths on {grid.n} steps to {args.out}")
        return job

    if args.command == "markov-compare":
        hp, grid = HurstParams(args.H), TimeGrid(args.T, args.n)
        N_L = args.N_L if args.N_L is not None else max(1, round(10 * args.L))
        bound = tail_variance_bound(args.L, hp)
        # the surrogate needs L > 1; at L = 1 only the bound is reported
        quad = build_theta_grid(args.L, N_L, args.rule, hp) if args.L > 1 else None
        if args.M < 2:
            raise ValueError("M must be >= 2")

        def job():
            print(f"H={hp.H!r} L={args.L!r} N_L={N_L} rule={args.rule} n={grid.n} M={args.M}")
            if quad is None:
                print("l2_error=nan (surrogate needs L > 1)")
            else:
                ms, se = l2_error_profile(quad, grid, args.M, args.seed)
                i = int(ms.argmax())
                print(f"l2_error={ms[i] ** 0.5:.10g}")
                print(f"mean_square_error={ms[i]:.10g} se={se[i]:.3g} at t={grid.times[i]!r}")
            print(f"tail_variance_bound={bound!r}")
        return job

    if args.command == "weak-error":
        cfg = _run_config(args)

        def job():
            report = ex.weak_error_curve(cfg)
            fits = ex.fit_rates(report)
            ex.emit_report(report, fits, cfg.out, cfg)
            for (H, payoff), fit in fits.items():
                print(f"H={H!r} payoff={payoff} slope={fit.slope:.6f} "
                      f"[{fit.slope_lo:.6f}, {fit.slope_hi:.6f}]")
            print(f"wrote {cfg.out}")
        return job

    if args.command == "fit-rate":
        def job():
            report = ex.read_report(args.csv)
            groups = [(h, p) for h, p in report.groups()
                      if (args.H is None or h == args.H) and (args.payoff is None or p == args.payoff)]
            if not groups:
                raise ex.RateFitError("no matching rows in the report")
            for H, payoff in groups:
                fit = ex.fit_rate(report, H, payoff)
                print(f"H={H!r} payoff={payoff} slope={fit.slope:.6f} intercept={fit.intercept:.6f} "
                      f"slope_lo={fit.slope_lo:.6f} slope_hi={fit.slope_hi:.6f} r2={fit.r2:.6f}")
        return job

    if args.command == "price-bergomi":
        hp, grid = HurstParams(args.H), TimeGrid(args.T, args.n)
        psi = PsiSpec("rbergomi", args.xi, args.eta)
        if not -1 <= args.rho <= 1 or args.S0 <= 0 or args.K <= 0 or args.M < 2:
            raise ValueError("need |rho| <= 1, S0 > 0, K > 0 and M >= 2")

        def job():
            factor = ex.joint_factor(grid, hp)
            batch = sample_joint_paths(factor, grid, hp, args.M, args.seed)
            est, se = romano_touzi_price(batch, psi, args.rho, args.S0, args.K, hp)
            print(f"estimate={est:.10g} se={se:.10g}")
        return job

    raise UsageError(f"unknown command {args.command!r}")  # pragma: no cover


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        job = _prepare(args)
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    limits = threadpool_limits(args.threads) if args.threads else contextlib.nullcontext()
    try:
        with limits:
            job()
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 2
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
