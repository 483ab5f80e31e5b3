"""Command line entry point: ``transport-tmle <subcommand> ...``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path

from .config import RunConfig
from .data import MISSING_OUTCOME, SURVIVAL, Schema, read_csv
from .dgp import SCENARIOS, DGPSpec, generate, missing_outcome_dgp, survival_dgp, true_values
from .errors import NumericalFailure, TransportError, ValidationError
from .nuisance import NuisanceFitError

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
DESIGNS = {"missing": lambda: missing_outcome_dgp(),
           "missing-v-equals-w": lambda: missing_outcome_dgp(True),
           "survival": lambda: survival_dgp()}


# -- helpers ---------------------------------------------------------------------------

def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def _infer_schema(path, kind, t0=None, tau=None) -> Schema:
    """Column roles from a CSV header: covariates sit between ``s`` and ``a``;
    for missing-outcome data V is the set of covariates filled in on some
    target row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"{path}: empty file")
        if "s" not in header or "a" not in header:
            raise ValidationError(f"{path}: header needs s and a columns")
        covs = header[header.index("s") + 1:header.index("a")]
        if kind == SURVIVAL:
            return Schema(covs, covs, SURVIVAL, t0, tau)
        seen = set()
        for row in reader:
            if len(row) != len(header):
                raise ValidationError(f"{path}: ragged row")
            if row[0].strip() == "0":
                seen |= {c for c in covs if row[header.index(c)].strip() != ""}
    v = [c for c in covs if c in seen] or covs
    return Schema(v, covs, MISSING_OUTCOME)


def _config(args, estimand) -> RunConfig:
    doc = _load_json(args.config) if getattr(args, "config", None) else {}
    doc.setdefault("estimand", estimand)
    for flag, key in (("fluctuation", "fluctuation"), ("targeting", "targeting"),
                      ("truncation", "truncation"), ("t0", "t0"), ("tau", "tau"),
                      ("seed", "seed")):
        val = getattr(args, flag, None)
        if val is not None:
            doc[key] = val
    if getattr(args, "less_aggressive", False):
        doc["unit_ratio"] = True
    if getattr(args, "no_marginal_odds", False):
        doc["density_ratio_includes_marginal_odds"] = False
    return RunConfig.from_dict(doc)


def _schema(args, cfg: RunConfig, kind) -> Schema:
    if getattr(args, "schema", None):
        doc = _load_json(args.schema)
        doc.setdefault("estimand", kind)
        sch = Schema.from_dict(doc)
    else:
        cfg_doc = _load_json(args.config) if getattr(args, "config", None) else {}
        if "w_columns" in cfg_doc:
            sch = Schema.from_dict({"estimand": kind, "w_columns": cfg_doc["w_columns"],
                                    "v_columns": cfg_doc.get("v_columns", cfg_doc["w_columns"]),
                                    "t0": cfg.t0, "tau": cfg.tau})
        else:
            sch = _infer_schema(args.data, kind, cfg.t0, cfg.tau)
    if kind == SURVIVAL:
        t0 = cfg.t0 if cfg.t0 is not None else sch.t0
        tau = cfg.tau if cfg.tau is not None else sch.tau
        sch = Schema(sch.w_columns, sch.w_columns, SURVIVAL, t0, tau)
    return sch


def _write(text, out):
    if out:
        Path(out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


# -- commands --------------------------------------------------------------------------

def cmd_validate(args) -> int:
    kind = SURVIVAL if args.survival else MISSING_OUTCOME
    cfg = _config(args, kind)
    ds = read_csv(args.data, _schema(args, cfg, kind))
    _write(json.dumps(ds.counts() | {"schema": ds.schema.to_dict()}, indent=2, sort_keys=True),
           args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    from .tmle import fit_tmle

    cfg = _config(args, MISSING_OUTCOME)
    ds = read_csv(args.data, _schema(args, cfg, MISSING_OUTCOME))
    res = fit_tmle(ds, cfg)
    _write(res.report.to_json(), args.out)
    if args.eic_out:
        res.eic.to_csv(args.eic_out)
    return EXIT_OK


def cmd_estimate_survival(args) -> int:
    from .survival import fit_survival_tmle

    cfg = _config(args, SURVIVAL)
    ds = read_csv(args.data, _schema(args, cfg, SURVIVAL))
    res = fit_survival_tmle(ds, cfg)
    _write(res.report.to_json(), args.out)
    if args.eic_out:
        res.eic.to_csv(args.eic_out)
    return EXIT_OK


def _spec(args) -> DGPSpec:
    if args.spec:
        return DGPSpec.from_dict(_load_json(args.spec))
    return DESIGNS[args.design]()


def cmd_simulate(args) -> int:
    spec = _spec(args)
    seed = args.seed if args.seed is not None else spec.seed
    ds = generate(spec, args.n, seed)
    ds.to_csv(args.out)
    if args.schema_out:
        Path(args.schema_out).write_text(json.dumps(ds.schema.to_dict(), indent=2,
                                                    sort_keys=True) + "\n")
    return EXIT_OK


def cmd_truth(args) -> int:
    spec = _spec(args)
    method = "monte-carlo" if args.monte_carlo else "enumeration"
    tr = true_values(spec, method, args.draws, args.seed or 0)
    _write(json.dumps(tr.to_dict(), indent=2, sort_keys=True), args.out)
    return EXIT_OK


def cmd_study(args) -> int:
    from .study import run_study

    spec = _spec(args)
    cfg = _config(args, spec.kind)
    scenarios = tuple(args.scenarios.split(",")) if args.scenarios else SCENARIOS
    res = run_study(spec, args.n, args.replications, args.seed or 0, scenarios,
                    config=cfg, jobs=args.jobs)
    if args.out:
        res.to_csv(args.out)
    if args.replicates_out:
        res.replicates_csv(args.replicates_out)
    sys.stdout.write(res.table() + "\n")
    return EXIT_OK


def cmd_export_model(args) -> int:
    from .federated import fit_less_aggressive

    kind = SURVIVAL if args.survival else MISSING_OUTCOME
    cfg = _config(args, kind)
    ds = read_csv(args.data, _schema(args, cfg, kind), require_both_strata=False)
    if ds.n_source == 0:
        raise ValidationError("export needs source units (s=1)")
    report, bundle = fit_less_aggressive(ds, cfg)
    bundle.write(args.out)
    if args.report_out and report is not None:
        report.write(args.report_out)
    return EXIT_OK


def cmd_apply_model(args) -> int:
    from .federated import TargetedModelExport, apply_export, read_target_csv

    bundle = TargetedModelExport.load(args.bundle)
    frame = read_target_csv(args.target, bundle)
    _write(apply_export(frame, bundle).to_json(), args.out)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------

def _estimation_flags(p, survival=False):
    p.add_argument("--data", required=True, help="CSV file in the documented layout")
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--schema", help="schema JSON naming v_columns / w_columns")
    p.add_argument("--fluctuation", choices=("covariate", "weight") if survival
                   else ("covariate", "weight", "linear"))
    p.add_argument("--targeting", choices=("separate", "simultaneous", "difference")
                   if survival else ("separate", "joint"))
    p.add_argument("--truncation", type=float, help="probability truncation bound")
    p.add_argument("--less-aggressive", action="store_true",
                   help="fix the density ratio at one")
    p.add_argument("--no-marginal-odds", action="store_true",
                   help="omit P(S=1)/P(S=0) from the density ratio")
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--eic-out", help="write per-unit gradient values as CSV")
    if survival:
        p.add_argument("--t0", type=int, help="horizon")
        p.add_argument("--tau", type=int, help="last period of follow-up")


def _spec_flags(p):
    p.add_argument("--spec", help="DGP specification JSON")
    p.add_argument("--design", choices=sorted(DESIGNS), default="missing",
                   help="built-in design used when --spec is absent")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transport-tmle",
        description="Targeted estimation of transported treatment effects.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a data file and print counts")
    p.add_argument("--data", required=True)
    p.add_argument("--schema")
    p.add_argument("--config")
    p.add_argument("--survival", action="store_true")
    p.add_argument("--t0", type=int)
    p.add_argument("--tau", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("estimate", help="TMLE for an outcome subject to missingness")
    _estimation_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("estimate-survival", help="TMLE for survival at horizon t0")
    _estimation_flags(p, survival=True)
    p.set_defaults(func=cmd_estimate_survival)

    p = sub.add_parser("simulate", help="draw a dataset from a DGP")
    _spec_flags(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--schema-out", help="also write the matching schema JSON")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("truth", help="true parameter values of a DGP")
    _spec_flags(p)
    p.add_argument("--monte-carlo", action="store_true")
    p.add_argument("--draws", type=int, default=10**6)
    p.add_argument("--out")
    p.set_defaults(func=cmd_truth)

    p = sub.add_parser("study", help="replicated bias / coverage study")
    _spec_flags(p)
    p.add_argument("--config")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--replications", type=int, default=100)
    p.add_argument("--scenarios", help=f"comma list from {','.join(SCENARIOS)}")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="summary CSV")
    p.add_argument("--replicates-out", help="per-replication CSV")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("export-model", help="fit the less aggressive TMLE and write a bundle")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--schema")
    p.add_argument("--survival", action="store_true")
    p.add_argument("--t0", type=int)
    p.add_argument("--tau", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--report-out", help="local report when the file has target rows")
    p.set_defaults(func=cmd_export_model)

    p = sub.add_parser("apply-model", help="apply a bundle to target covariates")
    p.add_argument("--bundle", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_apply_model)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            if args.command == "study":
                warnings.simplefilter("ignore")
            return args.func(args)
    except NuisanceFitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID if isinstance(exc.__cause__, ValidationError) else EXIT_NUMERIC
    except (NumericalFailure, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, TransportError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
