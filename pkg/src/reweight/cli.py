"""Command-line front end.

Subcommands map onto the library's entry points:

    run-study        run a robustness study grid and write rows.csv
    emit-table       aggregate a finished run into one of the named tables
    influence-check  numeric influence-decay check on a Poisson base
    glm-equivalence  localized-GLM / weighted-GLM identity over random configs
    ingest-movielens parse a `user::item::rating::ts` ratings file

Exit codes: 0 success, 2 configuration error, 3 run finished but some
cells failed (error rows present).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .core import Dataset, make_rng
from .errors import ConfigError, ParseError, ReweightError
from . import datagen as dg
from . import localization as lz
from . import models as md
from . import robustness as rb
from . import studies as st
from . import weight_priors as wp

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted both before and after the subcommand; the
    # shared parent uses SUPPRESS so an unset subcommand-level flag never
    # clobbers a value parsed at the top level
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--seed", type=int, default=argparse.SUPPRESS, help="master rng seed"
    )
    common.add_argument(
        "--threads",
        type=int,
        default=argparse.SUPPRESS,
        help="worker thread cap (cells currently run serially)",
    )
    common.add_argument(
        "--out", default=argparse.SUPPRESS, help="output directory"
    )
    common.add_argument(
        "--config", default=argparse.SUPPRESS, help="JSON config file"
    )

    parser = argparse.ArgumentParser(
        prog="reweight",
        description="Robust Bayesian inference via observation reweighting.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command")

    p_run = sub.add_parser(
        "run-study", help="run one study across its grid", parents=[common]
    )
    p_run.add_argument("--study", choices=st.STUDIES)
    p_run.add_argument("--grid", nargs="+", help="mismatch levels")
    p_run.add_argument("--n-obs", type=int, dest="n_obs")
    p_run.add_argument("--n-reps", type=int, dest="n_reps")
    p_run.add_argument("--weight-prior", dest="weight_prior")
    p_run.add_argument("--inference", help="JSON inference options")
    p_run.add_argument("--data-path", dest="data_path")
    p_run.add_argument(
        "--models", nargs="+", help="subset of model variants to fit"
    )
    p_run.add_argument(
        "--table",
        action="append",
        choices=st.TABLES,
        help="also emit these tables after the run",
    )

    p_tab = sub.add_parser(
        "emit-table", help="aggregate a finished run", parents=[common]
    )
    p_tab.add_argument("--result", required=True, help="run directory")
    p_tab.add_argument("--table", required=True, choices=st.TABLES)

    p_inf = sub.add_parser(
        "influence-check",
        help="influence decay of the reweighted estimator",
        parents=[common],
    )
    p_inf.add_argument("--prior", default="gamma:2,1", help="weight prior")
    p_inf.add_argument(
        "--unweighted",
        action="store_true",
        help="check the unweighted estimator instead",
    )
    p_inf.add_argument(
        "--z-grid",
        nargs="+",
        type=float,
        default=[16.0, 40.0, 1e4, 1e8],
        help="contamination points",
    )
    p_inf.add_argument("--n-obs", type=int, default=100, dest="n_obs")

    p_glm = sub.add_parser(
        "glm-equivalence",
        help="check the localized-GLM / weighted-GLM identity",
        parents=[common],
    )
    p_glm.add_argument("--n-configs", type=int, default=50, dest="n_configs")
    p_glm.add_argument("--n-obs", type=int, default=40, dest="n_obs")

    p_ing = sub.add_parser(
        "ingest-movielens",
        help="parse a ratings file into a user-item matrix",
        parents=[common],
    )
    p_ing.add_argument("--path", required=True)

    return parser


def _run_study(args) -> int:
    cfg_kwargs = {}
    if args.config:
        with open(args.config) as fh:
            cfg_kwargs.update(json.load(fh))
    for key in ("study", "grid", "n_obs", "n_reps", "weight_prior", "data_path", "models"):
        val = getattr(args, key, None)
        if val is not None:
            cfg_kwargs[key] = val
    if args.inference:
        cfg_kwargs["inference"] = json.loads(args.inference)
    if args.seed is not None:
        cfg_kwargs["seed"] = args.seed
    if args.out is not None:
        cfg_kwargs["out_dir"] = args.out
    if "study" not in cfg_kwargs:
        raise ConfigError("run-study needs --study (or a config file with one)")
    if "grid" in cfg_kwargs and cfg_kwargs["study"] not in (
        "linreg-misspec",
        "gmm-skew",
    ):
        cfg_kwargs["grid"] = [float(v) for v in cfg_kwargs["grid"]]

    cfg = st.StudyConfig(**cfg_kwargs)
    result = st.run_study(cfg)
    print(result.out_path)
    for table in args.table or []:
        print(st.emit_table(result, table))
    n_err = sum(1 for r in result.rows if r["status"] != "ok")
    if n_err:
        print(f"{n_err} cell(s) failed; see error rows", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _emit_table(args) -> int:
    result = st.load_result(args.result)
    print(st.emit_table(result, args.table))
    return EXIT_OK


def _influence_check(args) -> int:
    seed = args.seed if args.seed is not None else 0
    rng = make_rng(seed, 0)
    base = Dataset(rng.poisson(5.0, args.n_obs).astype(float))
    prior = None if args.unweighted else wp.parse_weight_prior(args.prior)
    out = rb.influence_decay_check(md.PoissonRate(), prior, base, args.z_grid)
    curve = out["curve"]
    print(
        json.dumps(
            {
                "pass": out["pass"],
                "conditions": out["conditions"],
                "z_grid": curve.z_grid.tolist(),
                "if_values": curve.if_values.tolist(),
                "loglik_at_z": curve.loglik_at_z.tolist(),
            }
        )
    )
    return EXIT_OK


def _glm_equivalence(args) -> int:
    seed = args.seed if args.seed is not None else 0
    rng = make_rng(seed, 0)
    worst = 0.0
    for _ in range(args.n_configs):
        x = rng.normal(rng.uniform(-5, 5), rng.uniform(0.5, 3), args.n_obs)
        lam_sq = float(rng.uniform(0.1, 10.0))
        sig_sq = float(rng.uniform(0.1, 10.0))
        intercept, slope = rng.uniform(-3, 3, 2)
        noise_sd = np.sqrt((x - x.mean()) ** 2 * lam_sq + sig_sq)
        y = intercept + slope * x + noise_sd * rng.standard_normal(x.size)
        res = lz.verify_glm_equivalence(Dataset(y, x[:, None]), lam_sq, sig_sq)
        worst = max(worst, res["max_abs_diff"])
    print(json.dumps({"n_configs": args.n_configs, "max_abs_diff": worst}))
    return EXIT_OK


def _ingest_movielens(args) -> int:
    data = dg.load_movielens(args.path)
    summary = {
        "n_users": data.n_users,
        "n_items": data.n_items,
        "n_entries": data.n_entries,
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        np.savez(
            os.path.join(args.out, "ratings.npz"),
            users=data.users,
            items=data.items,
            counts=data.counts,
            user_ids=data.user_ids,
            item_ids=data.item_ids,
        )
        summary["written"] = os.path.join(args.out, "ratings.npz")
    print(json.dumps(summary))
    return EXIT_OK


_HANDLERS = {
    "run-study": _run_study,
    "emit-table": _emit_table,
    "influence-check": _influence_check,
    "glm-equivalence": _glm_equivalence,
    "ingest-movielens": _ingest_movielens,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # the shared flags use SUPPRESS (set_defaults would mutate the parent
    # actions shared with every subparser, letting subcommand defaults
    # clobber values parsed before the subcommand), so backfill here
    for key, val in (("seed", None), ("threads", 1), ("out", None), ("config", None)):
        if not hasattr(args, key):
            setattr(args, key, val)
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    if args.threads is not None and args.threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _HANDLERS[args.command](args)
    except (ConfigError, ParseError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReweightError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
