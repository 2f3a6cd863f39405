"""Command-line entry points for the experiment harness."""

from __future__ import annotations

import argparse
import json
import sys

from .harness import RunConfig, rmse_table, run
from .simgen import available_settings, build_setting, save_setting


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(","))


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (or a manifest); flags override it")
    p.add_argument("--setting", help="catalog setting id")
    p.add_argument("--setting-file", help="custom setting JSON (overrides --setting)")
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--N_Q", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--delta", type=_parse_floats, help="comma list of ridge levels")
    p.add_argument("--M", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--alpha0", type=float)
    p.add_argument("--tau0", type=float)
    p.add_argument("--eta0", type=float)
    p.add_argument("--index-set", choices=["coord", "chisq"], dest="index_set")
    p.add_argument("--regime", choices=["auto", "covshift", "known", "noshift"])
    p.add_argument("--methods", help="comma list: proposed,normality,bootstrap,subsampling")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--lowdim", action="store_true", default=None)
    p.add_argument("--split", action="store_true", default=None,
                   help="use sample splitting in the covariance-matrix estimate")
    p.add_argument("--force-zero-draws", action="store_true", default=None)
    p.add_argument("--perb", type=float, help="perturbation scale for setting 5")
    p.add_argument("--resample-m", type=int)
    p.add_argument("--resample-B", type=int)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    base: dict = {}
    if args.config:
        with open(args.config) as fh:
            loaded = json.load(fh)
        base = loaded.get("config", loaded)  # accept a manifest or a bare config
    mapping = {
        "setting": args.setting,
        "setting_file": args.setting_file,
        "n": args.n,
        "p": args.p,
        "N_Q": args.N_Q,
        "reps": args.reps,
        "deltas": args.delta,
        "M": args.M,
        "alpha": args.alpha,
        "alpha0": args.alpha0,
        "tau0": args.tau0,
        "eta0": args.eta0,
        "index_variant": {"coord": "coordinate", "chisq": "chisq"}.get(args.index_set),
        "regime": args.regime,
        "methods": tuple(args.methods.split(",")) if args.methods else None,
        "seed": args.seed,
        "workers": args.workers,
        "out": args.out,
        "lowdim": args.lowdim,
        "sample_split": args.split,
        "force_zero_draws": args.force_zero_draws,
        "perb": args.perb,
        "resample_m": args.resample_m,
        "resample_B": args.resample_B,
    }
    for key, val in mapping.items():
        if val is not None:
            base[key] = val
    return RunConfig(**base)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="maximin", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a replicated coverage/length study")
    _add_run_flags(p_run)

    p_rmse = sub.add_parser("rmse-table", help="RMSE of the point estimator over an n grid")
    _add_run_flags(p_rmse)
    p_rmse.add_argument("--n-grid", type=_parse_ints, required=True)

    p_set = sub.add_parser("settings", help="list or export catalog settings")
    p_set.add_argument("--list", action="store_true")
    p_set.add_argument("--export", metavar="ID")
    p_set.add_argument("--out", default="setting.json")
    p_set.add_argument("--n", type=int)
    p_set.add_argument("--p", type=int)
    p_set.add_argument("--N_Q", type=int)

    args = parser.parse_args(argv)
    if args.command == "settings":
        if args.export:
            spec = build_setting(args.export, n=args.n, p=args.p, N_Q=args.N_Q)
            save_setting(spec, args.out)
            print(f"wrote {args.out}", file=sys.stderr)
        else:
            print("\n".join(available_settings()))
        return 0

    config = _config_from_args(args)
    if args.command == "run":
        run(config)
    else:
        rmse_table(config, args.n_grid)
    return 0


if __name__ == "__main__":
    sys.exit(main())
