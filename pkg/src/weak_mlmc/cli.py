"""Command-line entry point: ``weak-mlmc {variance,convergence,complexity,price,report}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .engine import ConvergenceError
from .sde import SimulationFault

log = logging.getLogger("weak_mlmc")


def _float_list(text):
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _variants(text):
    try:
        return ex.parse_variants(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    common.add_argument("--model", choices=sorted(ex.MODEL_BUILDERS))
    common.add_argument("--payoff", help="payoff name for gbm/linear models")
    common.add_argument("--variant", type=_variants, dest="variants",
                        help="comma list of euler, normal, binomial (or 'all')")
    common.add_argument("--rmse", type=_float_list, help="comma list of RMSE targets, descending")
    common.add_argument("--reps", type=int, dest="repetitions", help="repetitions per setting")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, help=f"output directory (default ${ex.OUT_ENV} or ./results)")
    common.add_argument("--enum-budget", type=int, dest="enum_budget")
    common.add_argument("--levels", type=int, help="levels for fixed-sample level studies")
    common.add_argument("--samples", type=int,
                        help="samples per level for level studies (0: use full MLMC runs)")
    common.add_argument("--jobs", type=int, help="worker processes for repetitions")
    common.add_argument("--no-plot", action="store_true", help="skip figure rendering")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="weak-mlmc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("variance", parents=[common], help="variance of level corrections per level")
    sub.add_parser("convergence", parents=[common], help="|mean| of level corrections per level")
    sub.add_parser("complexity", parents=[common], help="level-0 paths and RMSE^2 cost per RMSE")
    sub.add_parser("price", parents=[common], help="MLMC estimates per variant and RMSE")
    sub.add_parser("report", parents=[common], help="all studies plus a four-panel figure")
    return parser


_OVERRIDE_KEYS = ("model", "payoff", "variants", "rmse", "repetitions", "seed", "out",
                  "enum_budget", "levels", "samples", "jobs")


def _write_level_rows(rows_by_variant, out, name, header):
    for variant, rows in rows_by_variant.items():
        path = ex.emit_csv(rows, ex.variant_dir(out, variant) / f"{name}.csv", header)
        print(f"wrote {path}")


def _summarise_fits(rows_by_variant, symbol):
    from .engine import fit_slope

    for variant, rows in rows_by_variant.items():
        pts = [(l, v) for l, v, _ in rows if v > 0]
        if len(pts) >= 3:
            print(f"{variant.value:>9s}: {symbol} = {fit_slope(*zip(*pts)):.3f}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in _OVERRIDE_KEYS}
    try:
        config = ex.load_config(args.config, overrides)
        out = Path(config.out)
        plot = not args.no_plot
        if args.command in ("variance", "convergence", "report"):
            study = ex.level_study(config)
            variance = ex.run_variance_study(config, study)
            convergence = ex.run_convergence_study(config, study)
            if args.command in ("variance", "report"):
                _write_level_rows(variance, out, "variance", ex.VARIANCE_HEADER)
                _summarise_fits(variance, "beta")
            if args.command in ("convergence", "report"):
                _write_level_rows(convergence, out, "convergence", ex.MEAN_HEADER)
                _summarise_fits(convergence, "p")
        if args.command in ("complexity", "report"):
            comp = ex.run_complexity_study(config)
            for variant, tables in comp.items():
                d = ex.variant_dir(out, variant)
                print(f"wrote {ex.emit_csv(tables['paths'], d / 'paths.csv', ex.PATHS_HEADER)}")
                print(f"wrote {ex.emit_csv(tables['cost'], d / 'compcost.csv', ex.COST_HEADER)}")
        if args.command == "price":
            rows = ex.run_price(config)
            header = ("variant", "rmse", "value", "err", "cost", "finest_level", "reference")
            path = ex.emit_csv(rows, out / "price.csv", header)
            for r in rows:
                print(f"{r['variant']:>9s} rmse={r['rmse']:.1e} value={r['value']:.8f} "
                      f"+-{r['err']:.2e} cost={r['cost']:.3e} L={r['finest_level']}")
            print(f"wrote {path}")
        if plot:
            from . import plotting

            figs = []
            if args.command == "variance":
                figs.append(plotting.plot_variance(variance, out / "variance.png"))
            elif args.command == "convergence":
                figs.append(plotting.plot_convergence(convergence, out / "convergence.png"))
            elif args.command == "complexity":
                figs.append(plotting.plot_paths({v: t["paths"] for v, t in comp.items()}, out / "paths.png"))
                figs.append(plotting.plot_complexity({v: t["cost"] for v, t in comp.items()}, out / "compcost.png"))
            elif args.command == "report":
                figs.append(plotting.plot_report(
                    variance, convergence,
                    {v: t["paths"] for v, t in comp.items()},
                    {v: t["cost"] for v, t in comp.items()},
                    out / "report.png",
                ))
            for f in figs:
                print(f"wrote {f}")
    except ex.ConfigError as exc:
        print(f"weak-mlmc: configuration error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, SimulationFault, OverflowError) as exc:
        print(f"weak-mlmc: simulation failed: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"weak-mlmc: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
