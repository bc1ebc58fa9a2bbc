"""Command-line entry point: ``switchadjust {simulate,truth,adjust,study}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import config
from .adjusters import METHODS, RECENSOR_MODES, run_method
from .errors import BootstrapError, ConfigError, ExtrapolationRequiredError, FitError
from .inference import BootstrapSpec, bootstrap_ci
from .simulate import CONDITIONS, ScenarioSpec, TrialDataset, scenario_preset, simulate_external, simulate_rct, stream, true_control_rmst
from .study import StudyConfig, run_study
from .survival import RmstPolicy

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FIT = 3
EXIT_IO = 4

_RMST_ALIASES = {"km": "km-only", "km-only": "km-only", "weibull": "weibull", "hybrid": "hybrid"}


def _rmst_policy(name: str, beyond: str = "error") -> RmstPolicy:
    return RmstPolicy(_RMST_ALIASES[name], beyond)


def cmd_simulate(args) -> int:
    spec = scenario_preset(args.scenario, args.condition)
    if args.config:
        overrides, _ = config.coerce_fields(ScenarioSpec, config.read_flat(args.config))
        spec = spec.replace(**overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rct = simulate_rct(spec, stream(args.seed, 0))
    external = simulate_external(spec, stream(args.seed, 1))
    rct.to_csv(out / "rct.csv", omit_oracle=args.omit_oracle_cols)
    external.to_csv(out / "external.csv", omit_oracle=args.omit_oracle_cols)
    print(f"wrote {len(rct)} RCT and {len(external)} external rows to {out}")
    return EXIT_OK


def cmd_truth(args) -> int:
    if args.config:
        spec = ScenarioSpec.from_mapping(config.read_flat(args.config))
    else:
        spec = scenario_preset(args.scenario)
    print(f"{true_control_rmst(spec, args.tstar):.6f}")
    return EXIT_OK


def cmd_adjust(args) -> int:
    rct = TrialDataset.from_csv(args.rct)
    external = TrialDataset.from_csv(args.external) if args.external else None
    if args.method in ("atse", "eca") and external is None:
        print(f"note: {args.method} without --external runs on trial data only", file=sys.stderr)
    if args.method == "oracle" and not rct.has_oracle:
        raise ConfigError("oracle needs the os_noswitch columns in the RCT file")
    if args.c <= 0:
        raise ConfigError("--c must be > 0")
    covariates = tuple(c for c in args.covariates.split(",") if c)
    policy = _rmst_policy(args.rmst, args.beyond)

    def method(r, e):
        return run_method(args.method, r, e, covariates=covariates, c=args.c, recensor=args.recensor,
                          t_star=args.tstar, rmst_policy=policy)

    result = method(rct, external)
    extra = {}
    if args.bootstrap:
        spec = BootstrapSpec(replicates=args.bootstrap, level=args.level, seed=args.seed)
        extra["bootstrap"] = bootstrap_ci(rct, external, method, spec=spec, workers=args.threads).to_dict()
    print(result.to_json(**extra))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        result.to_csv(out / "adjusted.csv")
        (out / "diagnostics.json").write_text(result.to_json(**extra) + "\n")
    return EXIT_OK


def cmd_study(args) -> int:
    cfg = StudyConfig.from_file(args.config) if args.config else StudyConfig()
    changes = {k: v for k, v in (("reps", args.reps), ("threads", args.threads), ("seed", args.seed),
                                 ("format", args.format), ("out", args.out)) if v is not None}
    cfg = cfg.replace(**changes)
    result = run_study(cfg)
    if cfg.out:
        table, raw = result.write(cfg.out, args.raw_out)
        print(f"wrote {table} and {raw}", file=sys.stderr)
    else:
        sys.stdout.write(result.render())
        if args.raw_out:
            Path(args.raw_out).write_text(result.raw_csv())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="switchadjust", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one RCT and one external cohort")
    p.add_argument("--scenario", type=int, required=True, choices=range(1, 9), metavar="1-8")
    p.add_argument("--condition", choices=CONDITIONS, default="A")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="scenario overrides (key = value file)")
    p.add_argument("--omit-oracle-cols", action="store_true", help="drop u and os_noswitch columns")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("truth", help="true control-arm RMST by quadrature")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="scenario file")
    src.add_argument("--scenario", type=int, choices=range(1, 9), metavar="1-8")
    p.add_argument("--tstar", type=float, default=None, help="horizon in days (default: enddate)")
    p.set_defaults(func=cmd_truth)

    p = sub.add_parser("adjust", help="estimate control RMST with one method")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--rct", required=True)
    p.add_argument("--external")
    p.add_argument("--c", type=float, default=1.0, help="ATSE decay factor")
    p.add_argument("--recensor", choices=RECENSOR_MODES, default="switchers-only")
    p.add_argument("--rmst", choices=sorted(_RMST_ALIASES), default="hybrid")
    p.add_argument("--beyond", choices=("error", "extend"), default="error",
                   help="km-only behaviour past the last follow-up")
    p.add_argument("--covariates", default="badprog", help="comma-separated covariate columns")
    p.add_argument("--tstar", type=float, required=True)
    p.add_argument("--bootstrap", type=int, default=0, metavar="B")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="directory for adjusted.csv and diagnostics.json")
    p.set_defaults(func=cmd_adjust)

    p = sub.add_parser("study", help="run the Monte Carlo study")
    p.add_argument("--config", help="study/scenario key = value file")
    p.add_argument("--reps", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=("csv", "json", "md"))
    p.add_argument("--out", help="metrics table path (default: stdout)")
    p.add_argument("--raw-out", help="per-replication estimates CSV (default: <out stem>.raw.csv)")
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ExtrapolationRequiredError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FitError, BootstrapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
