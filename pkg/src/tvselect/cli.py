"""Command-line interface: fit, tune, predict, classify, simulate.

Every command accepts its options as flags or bundled in a JSON config file
(`--config`); on conflict the file wins with a warning.  The fully resolved
configuration is echoed next to the outputs so any run can be reproduced
from its output directory alone.  Exit codes: 0 success, 1 numerical
failure, 2 usage or I/O errors.  Numeric CSV output uses 17 significant
digits so values round-trip exactly.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import artifact
from .basis import EQUALLY_SPACED, TIME_QUANTILES, SplineConfig, build_basis
from .data import build_design, demean_within_subject, load_long_csv, standardize
from .errors import (
    ArtifactMismatchError,
    ConfigurationError,
    DegenerateColumnError,
    DegenerateDesignError,
    DimensionError,
    DomainError,
    OracleNonconvergenceError,
    ParseError,
    SingularBlockError,
    StudyError,
    TuningError,
)
from .simulate import (
    StudyOptions,
    format_summary,
    make_scenario,
    replication_curves,
    run_study,
)
from .solver import (
    METHODS,
    METHOD_TV_SELECT,
    PenaltyConfig,
    SolverOptions,
    fit_baseline,
    fit_bcd,
)
from .structure import classify
from .tuning import TuningGrid, default_grid, tune_cv, tune_ebic

USAGE_ERRORS = (ParseError, ConfigurationError, ArtifactMismatchError,
                DegenerateDesignError, DegenerateColumnError, FileNotFoundError)
NUMERICAL_ERRORS = (SingularBlockError, OracleNonconvergenceError, TuningError,
                    StudyError, DimensionError, DomainError)

FMT = "%.17g"


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return FMT % float(value)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(cell if isinstance(cell, str) else _fmt(cell)
                              for cell in row) + "\n")


def _load_config_file(path):
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot open config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ParseError(f"{path}: config must be a JSON object")
    return payload


def _merge_config(args, parser_defaults, file_config):
    """File values override explicit flags (with a warning) and defaults."""
    merged = vars(args).copy()
    for key, value in file_config.items():
        if key in ("command", "config"):
            continue
        if key not in merged:
            raise ParseError(f"config key '{key}' is not a recognized option")
        flag_given = merged[key] != parser_defaults.get(key)
        if flag_given and merged[key] != value:
            print(f"warning: config file overrides --{key.replace('_', '-')} "
                  f"({merged[key]!r} -> {value!r})", file=sys.stderr)
        merged[key] = value
    return merged


def _echo_config(out_dir, command, merged):
    payload = {k: v for k, v in merged.items() if k != "config"}
    payload["command"] = command
    path = os.path.join(out_dir, "config_echo.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=str)
        fh.write("\n")


def _prepare_dataset(cfg):
    dataset = load_long_csv(cfg["data"])
    binary = tuple(s for s in (cfg.get("binary_cols") or "").split(",") if s)
    if not cfg.get("no_standardize"):
        dataset = standardize(dataset, binary_columns=binary)
    if not cfg.get("no_demean"):
        dataset = demean_within_subject(dataset)
    return dataset


def _basis_for(cfg, dataset):
    config = SplineConfig(degree=cfg["degree"], num_internal_knots=cfg["knots"],
                          knot_placement=cfg["knot_placement"])
    times = np.concatenate([s.times for s in dataset.subjects])
    return build_basis(config, observed_times=times)


def _solver_options(cfg) -> SolverOptions:
    return SolverOptions(tol=cfg["tol"], max_iter=cfg["max_iter"])


def _write_partition_report(path, part, names):
    payload = {
        "threshold": part.threshold_used,
        "labels": {name: part.label(k) for k, name in enumerate(names)},
        "vary": sorted(names[k] for k in part.s_vary),
        "const": sorted(names[k] for k in part.s_const),
        "zero": sorted(names[k] for k in part.s_zero),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_curves(path, fit, names, grid_size=200):
    tgrid = np.linspace(0.0, 1.0, grid_size)
    curves = fit.coefficient_curves(tgrid)
    rows = []
    for k, name in enumerate(names):
        for g, t in enumerate(tgrid):
            rows.append((str(k + 1), name, t, curves[k, g]))
    _write_csv(path, ("k", "covariate", "t", "beta_hat"), rows)


def cmd_fit(cfg) -> int:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    dataset = _prepare_dataset(cfg)
    basis = _basis_for(cfg, dataset)
    design = build_design(dataset, basis)
    penalty = PenaltyConfig(lambda1=cfg["lambda1"], lambda2=cfg["lambda2"])
    options = _solver_options(cfg)
    if cfg["method"] == METHOD_TV_SELECT:
        fit = fit_bcd(design, basis, penalty, options)
    else:
        fit = fit_baseline(design, basis, cfg["method"], penalty, options)
    artifact.save_fit(fit, os.path.join(out, "fit.json"), dataset)
    part = classify(fit, threshold_multiplier=cfg["threshold_multiplier"])
    _write_partition_report(os.path.join(out, "partition.json"), part,
                            dataset.covariate_names)
    _write_curves(os.path.join(out, "curves.csv"), fit, dataset.covariate_names)
    print(f"method={fit.method} converged={fit.converged} iterations={fit.iterations} "
          f"objective={_fmt(fit.objective_trace[-1])}")
    print(f"vary={sorted(dataset.covariate_names[k] for k in part.s_vary)} "
          f"const={sorted(dataset.covariate_names[k] for k in part.s_const)}")
    return 0


def cmd_tune(cfg) -> int:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    dataset = _prepare_dataset(cfg)
    basis = _basis_for(cfg, dataset)
    design = build_design(dataset, basis)
    options = _solver_options(cfg)
    if cfg["lambda1_grid"]:
        lam1 = tuple(sorted((float(v) for v in cfg["lambda1_grid"].split(",")), reverse=True))
        lam2 = tuple(sorted((float(v) for v in cfg["lambda2_grid"].split(",")), reverse=True))
        grid = TuningGrid(lam1, lam2, gamma=cfg["gamma"])
    else:
        grid = default_grid(design, gamma=cfg["gamma"])
    if cfg["criterion"] == "ebic":
        result = tune_ebic(design, basis, grid, options)
    else:
        result = tune_cv(dataset, basis, grid, n_folds=cfg["cv_folds"],
                         seed=cfg["seed"], options=options)
    _write_csv(os.path.join(out, "surface.csv"),
               ("lambda1", "lambda2", "criterion"), list(result.surface_rows()))
    artifact.save_fit(result.best_fit, os.path.join(out, "fit.json"), dataset)
    part = classify(result.best_fit, threshold_multiplier=cfg["threshold_multiplier"])
    _write_partition_report(os.path.join(out, "partition.json"), part,
                            dataset.covariate_names)
    _write_curves(os.path.join(out, "curves.csv"), result.best_fit,
                  dataset.covariate_names)
    print(f"criterion={result.criterion} best_lambda1={_fmt(result.best_lambda1)} "
          f"best_lambda2={_fmt(result.best_lambda2)}")
    return 0


def cmd_predict(cfg) -> int:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    fit, prep = artifact.load_fit(cfg["artifact"])
    dataset = load_long_csv(cfg["data"], rescale=False)
    artifact.check_compatible(fit, prep, dataset)

    _, X, raw_times = dataset.stacked()
    # new times are mapped through the ARTIFACT's fitted time domain
    lo, hi = (prep or {}).get("time_domain", [0.0, 1.0])
    t01 = (raw_times - lo) / (hi - lo) if hi > lo else raw_times

    bad = [i + 2 for i, t in enumerate(t01) if not 0.0 <= t <= 1.0]
    if bad:
        report = os.path.join(out, "prediction_errors.csv")
        _write_csv(report, ("row", "reason"),
                   [(str(r), "time outside the fitted [0,1] range") for r in bad])
        print(f"error: {len(bad)} rows have times outside the model's range; "
              f"see {report}", file=sys.stderr)
        return 2

    if prep and prep.get("center") is not None:
        X = (X - np.asarray(prep["center"])) / np.asarray(prep["scale"])
    Bt = fit.basis.eval_centered(t01)
    pred = fit.beta0 + X @ fit.mu
    for k, th in enumerate(fit.theta):
        if np.any(th):
            pred = pred + X[:, k] * (Bt @ th)
    rows = [(i + 1, t, value) for i, (t, value) in enumerate(zip(t01, pred))]
    _write_csv(os.path.join(out, "predictions.csv"),
               ("row", "time01", "prediction"), rows)
    print(f"wrote {len(rows)} predictions")
    return 0


def cmd_classify(cfg) -> int:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    fit, prep = artifact.load_fit(cfg["artifact"])
    names = (prep or {}).get("covariate_names") or [f"x{k+1}" for k in range(fit.p)]
    part = classify(fit, threshold_multiplier=cfg["threshold_multiplier"])
    _write_partition_report(os.path.join(out, "partition.json"), part, names)
    print(f"threshold={_fmt(part.threshold_used)} "
          f"vary={len(part.s_vary)} const={len(part.s_const)} zero={len(part.s_zero)}")
    return 0


def cmd_simulate(cfg) -> int:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    overrides = {}
    for key in ("rho", "alpha", "sigma", "sigma_x2", "amplitude", "t_df"):
        if cfg.get(key) is not None:
            overrides[key] = cfg[key]
    for key in ("error_model", "time_design", "covariate_design"):
        if cfg.get(key):
            overrides[key] = cfg[key]
    spec = make_scenario(cfg["scenario"], N=cfg["subjects"], n_i=cfg["obs_per_subject"],
                         p=cfg["covariates"], s_v=cfg["s_vary"], s_c=cfg["s_const"],
                         q=cfg["q"], seed=cfg["seed"], **overrides)
    # re-echo with the resolved scenario values (presets and forced fields)
    resolved = dict(cfg)
    resolved.update({
        "rho": spec.rho, "alpha": spec.alpha, "sigma": spec.sigma,
        "sigma_x2": spec.sigma_x2, "amplitude": spec.amplitude, "t_df": spec.t_df,
        "error_model": spec.error_model, "time_design": spec.time_design,
        "covariate_design": spec.covariate_design,
    })
    _echo_config(out, "simulate", resolved)
    methods = tuple(m.strip() for m in cfg["methods"].split(",") if m.strip())
    for m in methods:
        if m not in METHODS:
            raise ConfigurationError(f"unknown method '{m}', expected subset of {METHODS}")
    options = StudyOptions(methods=methods, gamma=cfg["gamma"],
                           lambda2_values=tuple(
                               sorted((float(v) for v in cfg["lambda2_grid"].split(",")),
                                      reverse=True)),
                           n_test=cfg["test_subjects"])
    reports = run_study(spec, R=cfg["replications"], seed=cfg["seed"],
                        parallelism=cfg["parallel"], options=options)
    rows = []
    for rep in reports:
        rows.extend(rep.rows())
    _write_csv(os.path.join(out, "metrics.csv"),
               ("scenario", "config", "method", "metric", "mean", "se"), rows)
    if cfg["curves"]:
        data = replication_curves(spec, 0, cfg["seed"], options)
        crows = []
        for method, curves in data["methods"].items():
            for k in range(spec.p):
                for t, bt, bh in zip(data["t"], data["truth"][k], curves[k]):
                    crows.append((method, str(k + 1), t, bt, bh))
        _write_csv(os.path.join(out, "curves.csv"),
                   ("method", "k", "t", "beta_true", "beta_hat"), crows)
    print(format_summary(reports))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tvselect",
        description="Varying-coefficient model selection for longitudinal data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="JSON config file; wins over flags")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0)

    def add_data_opts(p):
        p.add_argument("--data", required=False, default=None, help="long-format CSV")
        p.add_argument("--no-demean", action="store_true", dest="no_demean")
        p.add_argument("--no-standardize", action="store_true", dest="no_standardize")
        p.add_argument("--binary-cols", default="", dest="binary_cols",
                       help="comma-separated covariates to exempt from standardization")
        p.add_argument("--degree", type=int, default=3)
        p.add_argument("--knots", type=int, default=4, help="interior knot count")
        p.add_argument("--knot-placement", dest="knot_placement",
                       choices=(EQUALLY_SPACED, TIME_QUANTILES), default=EQUALLY_SPACED)
        p.add_argument("--tol", type=float, default=1e-6)
        p.add_argument("--max-iter", dest="max_iter", type=int, default=500)
        p.add_argument("--threshold-multiplier", dest="threshold_multiplier",
                       type=float, default=1.0)

    p_fit = sub.add_parser("fit", help="fit at fixed penalties")
    add_common(p_fit)
    add_data_opts(p_fit)
    p_fit.add_argument("--lambda1", type=float, default=0.1)
    p_fit.add_argument("--lambda2", type=float, default=1e-4)
    p_fit.add_argument("--method", choices=METHODS, default=METHOD_TV_SELECT)

    p_tune = sub.add_parser("tune", help="select penalties by EBIC or subject-wise CV")
    add_common(p_tune)
    add_data_opts(p_tune)
    p_tune.add_argument("--criterion", choices=("ebic", "cv"), default="ebic")
    p_tune.add_argument("--gamma", type=float, default=0.5)
    p_tune.add_argument("--cv-folds", dest="cv_folds", type=int, default=5)
    p_tune.add_argument("--lambda1-grid", dest="lambda1_grid", default="",
                        help="comma-separated values; default: data-driven path")
    p_tune.add_argument("--lambda2-grid", dest="lambda2_grid", default="1,0.1,0.01,0.001,0.0001")

    p_pred = sub.add_parser("predict", help="predict new rows from a fit artifact")
    add_common(p_pred)
    p_pred.add_argument("--artifact", required=True)
    p_pred.add_argument("--data", required=True)

    p_cls = sub.add_parser("classify", help="structural partition from a fit artifact")
    add_common(p_cls)
    p_cls.add_argument("--artifact", required=True)
    p_cls.add_argument("--threshold-multiplier", dest="threshold_multiplier",
                       type=float, default=1.0)

    p_sim = sub.add_parser("simulate", help="run a replicated benchmark scenario")
    add_common(p_sim)
    p_sim.add_argument("--scenario", choices=tuple("ABCDEF"), default="A")
    p_sim.add_argument("--subjects", type=int, default=100, help="N")
    p_sim.add_argument("--obs-per-subject", dest="obs_per_subject", type=int, default=5)
    p_sim.add_argument("--covariates", type=int, default=20, help="p")
    p_sim.add_argument("--s-vary", dest="s_vary", type=int, default=3)
    p_sim.add_argument("--s-const", dest="s_const", type=int, default=3)
    p_sim.add_argument("--q", type=int, default=12)
    p_sim.add_argument("--replications", type=int, default=30)
    p_sim.add_argument("--rho", type=float, default=None)
    p_sim.add_argument("--alpha", type=float, default=None)
    p_sim.add_argument("--sigma", type=float, default=None)
    p_sim.add_argument("--sigma-x2", dest="sigma_x2", type=float, default=None)
    p_sim.add_argument("--amplitude", type=float, default=None)
    p_sim.add_argument("--t-df", dest="t_df", type=float, default=None)
    p_sim.add_argument("--error-model", dest="error_model", default="")
    p_sim.add_argument("--time-design", dest="time_design", default="")
    p_sim.add_argument("--covariate-design", dest="covariate_design", default="")
    p_sim.add_argument("--methods", default=",".join(METHODS))
    p_sim.add_argument("--gamma", type=float, default=0.5)
    p_sim.add_argument("--lambda2-grid", dest="lambda2_grid",
                       default="1,0.0316,0.001,3.16e-05,1e-06")
    p_sim.add_argument("--test-subjects", dest="test_subjects", type=int, default=500)
    p_sim.add_argument("--parallel", type=int, default=os.cpu_count() or 1)
    p_sim.add_argument("--curves", action="store_true")
    return parser


COMMANDS = {
    "fit": cmd_fit,
    "tune": cmd_tune,
    "predict": cmd_predict,
    "classify": cmd_classify,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    defaults = {a.dest: a.default
                for g in parser._subparsers._group_actions
                for a in g.choices[args.command]._actions}
    try:
        file_cfg = _load_config_file(args.config) if args.config else {}
        cfg = _merge_config(args, defaults, file_cfg)
        if args.command in ("fit", "tune") and not cfg.get("data"):
            print("error: --data is required", file=sys.stderr)
            return 2
        os.makedirs(cfg["out"], exist_ok=True)
        _echo_config(cfg["out"], args.command, cfg)
        return COMMANDS[args.command](cfg)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
