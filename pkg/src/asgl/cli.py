"""Command-line entry point.

Exit codes: 0 success, 1 numerical failure (details under ``"error"`` in the
JSON output), 2 usage error, 66 missing input file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ASGLError, IllPosed, MaxIterations
from .groups import build_groups
from .loss import Dataset
from .penalty import AdaptiveConfig, PenaltySpec, check_rate_feasibility
from .pipeline import KINDS, PipelineConfig, fit_estimator
from .sim import (METHODS, TABLE_LABELS, RateTuning, ScenarioSpec, run_scenario,
                  selection_consistency_curve)
from .solver import SolverConfig, kkt_verify, solve

log = logging.getLogger("asgl")

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE, EXIT_NOINPUT = 0, 1, 2, 66
AGGREGATE_HEADER = ["method", "mse", "C", "IC", "exact_rate"]


class UsageError(Exception):
    pass


class InputNotFound(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str
    args: argparse.Namespace
    inputs: list[Path] = field(default_factory=list)
    output: Path | None = None
    pipeline: PipelineConfig | None = None
    scenario: ScenarioSpec | None = None
    log_level: str = "WARNING"


def _json_arg(text: str, what: str):
    """Parse inline JSON, or read it from a file when ``text`` names one."""
    p = Path(text)
    try:
        if not text.lstrip().startswith(("[", "{")) and p.suffix == ".json":
            if not p.exists():
                raise InputNotFound(str(p))
            return json.loads(p.read_text())
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what}: invalid JSON ({exc})")


def _float_list(text: str) -> list[float]:
    text = text.strip()
    if text.startswith("["):
        return [float(v) for v in json.loads(text)]
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asgl", description="(Adaptive) sparse-group LASSO toolkit")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def data_args(sp, required=True):
        sp.add_argument("--data", required=required, help="CSV file with a header row")
        sp.add_argument("--response", required=required, help="name of the response column")
        sp.add_argument("--groups", required=required, help="JSON array of group sizes")
        sp.add_argument("--family", choices=["squared", "logistic"], default="squared")
        sp.add_argument("--out", help="write JSON here instead of stdout")

    fit = sub.add_parser("fit", help="fit at fixed (lambda, gamma)")
    data_args(fit)
    fit.add_argument("--lambda", dest="lam", type=float, required=True)
    fit.add_argument("--gamma", type=float, required=True)
    fit.add_argument("--alpha-weights", help="JSON array of per-coefficient weights")
    fit.add_argument("--xi-weights", help="JSON array of per-group weights")
    fit.add_argument("--tol", type=float, default=SolverConfig.tol)
    fit.add_argument("--max-iter", type=int, default=SolverConfig.max_outer_iters)

    cv = sub.add_parser("cv-fit", help="cross-validated fit of one estimator kind")
    data_args(cv)
    cv.add_argument("--kind", choices=KINDS, default="adaptive_sgl")
    cv.add_argument("--folds", type=int, default=5)
    cv.add_argument("--grid", type=_float_list, help="grid factors, JSON array or comma list")
    cv.add_argument("--config", help="AdaptiveConfig JSON (inline or .json file)")
    cv.add_argument("--xi-scale", choices=["unit", "sqrt_size"], default="unit")

    ver = sub.add_parser("verify", help="recompute the KKT residual of a saved fit")
    ver.add_argument("--fit", required=True, help="JSON written by `fit` or `cv-fit`")
    ver.add_argument("--data", help="override the data path stored in the fit")
    ver.add_argument("--response", help="override the response column stored in the fit")
    ver.add_argument("--out")

    rates = sub.add_parser("check-rates", help="evaluate the tuning-rate feasibility system")
    rates.add_argument("--config", help="AdaptiveConfig JSON (inline or .json file)")
    for name in AdaptiveConfig.__dataclass_fields__:
        rates.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)
    rates.add_argument("--out")

    sim = sub.add_parser("simulate", help="Monte Carlo comparison of estimators")
    sim.add_argument("--scenario", required=True,
                     help='ScenarioSpec JSON; {"preset": 500} selects a reference design')
    sim.add_argument("--methods", default=",".join(KINDS))
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--config", help="AdaptiveConfig JSON (inline or .json file)")
    sim.add_argument("--tuning", choices=["cv", "rates"], default="cv",
                     help="cross-validate, or use lambda_T = T^beta, gamma_T = T^alpha")
    sim.add_argument("--scale", type=float, default=1.0, help="multiplier for --tuning rates")
    sim.add_argument("--curve", action="store_true", help="emit the recovery-vs-T curve")
    sim.add_argument("--T-list", type=lambda s: [int(v) for v in _float_list(s)],
                     default=[200, 500, 1000])
    sim.add_argument("--reps", type=int, help="override the scenario's replications")
    return p


def _adaptive(args) -> AdaptiveConfig:
    if getattr(args, "config", None):
        return AdaptiveConfig.from_dict(_json_arg(args.config, "--config"))
    return AdaptiveConfig()


def parse_args(argv) -> RunConfig:
    """Parse and validate; raises ``UsageError`` or ``InputNotFound``."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code == 0:  # --help
            raise
        raise UsageError("invalid arguments") from exc
    cfg = RunConfig(args.subcommand, args, log_level=args.log_level.upper())
    if getattr(args, "data", None):
        cfg.inputs.append(Path(args.data))
    if args.subcommand == "verify":
        cfg.inputs.append(Path(args.fit))
    for path in cfg.inputs:
        if not path.exists():
            raise InputNotFound(str(path))
    if getattr(args, "groups", None):
        sizes = _json_arg(args.groups, "--groups")
        if not isinstance(sizes, list):
            raise UsageError("--groups must be a JSON array of integers")
        args.groups = sizes
    if args.out:
        cfg.output = Path(args.out)
    if args.subcommand == "cv-fit":
        grid = args.grid if args.grid else PipelineConfig.grid_factors
        cfg.pipeline = PipelineConfig(adaptive=_adaptive(args), cv_folds=args.folds,
                                      grid_factors=tuple(grid), xi_scale=args.xi_scale)
    elif args.subcommand == "simulate":
        cfg.pipeline = PipelineConfig(adaptive=_adaptive(args))
        raw = _json_arg(args.scenario, "--scenario")
        if "preset" in raw:
            preset = int(raw.pop("preset"))
            cfg.scenario = ScenarioSpec.table1(preset, **{k: v for k, v in raw.items()})
        else:
            cfg.scenario = ScenarioSpec.from_dict(raw)
        if args.reps:
            cfg.scenario = ScenarioSpec.from_dict({**cfg.scenario.to_dict(),
                                                   "replications": args.reps})
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        bad = [m for m in methods if m not in METHODS]
        if bad:
            raise UsageError(f"unknown methods {bad}; choose from {list(METHODS)}")
        args.methods = methods
    return cfg


def read_csv_dataset(path, response: str) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        try:
            rows = [[float(v) for v in row] for row in reader if row]
        except ValueError as exc:
            raise UsageError(f"{path}: non-numeric entry ({exc})")
    if response not in header:
        raise UsageError(f"response column {response!r} not in {header}")
    arr = np.asarray(rows, dtype=float)
    j = header.index(response)
    return Dataset(np.delete(arr, j, axis=1), arr[:, j])


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _emit(obj, out: Path | None):
    text = json.dumps(obj, indent=2, default=_json_default)
    if out is None:
        print(text)
    else:
        out.write_text(text + "\n", encoding="utf-8")


def _fit_payload(res, spec, groups, args, **extra) -> dict:
    return {
        **res.to_dict(),
        "groups": groups.to_list(),
        "family": args.family,
        "penalty": spec.to_dict(),
        "data": str(Path(args.data).resolve()),
        "response": args.response,
        **extra,
    }


def _run_fit(cfg: RunConfig) -> int:
    a = cfg.args
    data = read_csv_dataset(a.data, a.response)
    groups = build_groups(a.groups)
    alpha = np.asarray(_json_arg(a.alpha_weights, "--alpha-weights")) if a.alpha_weights \
        else np.ones(groups.d)
    xi = np.asarray(_json_arg(a.xi_weights, "--xi-weights")) if a.xi_weights \
        else np.ones(groups.m)
    spec = PenaltySpec(a.lam, a.gamma, alpha, xi)
    res = solve(data, groups, spec, a.family, SolverConfig(max_outer_iters=a.max_iter, tol=a.tol,
                                                           inner_tol=min(1e-10, a.tol)))
    payload = _fit_payload(res, spec, groups, a)
    if not res.converged:
        payload["error"] = "MaxIterations"
        _emit(payload, cfg.output)
        return EXIT_NUMERICAL
    _emit(payload, cfg.output)
    return EXIT_OK


def _run_cv_fit(cfg: RunConfig) -> int:
    a = cfg.args
    data = read_csv_dataset(a.data, a.response)
    groups = build_groups(a.groups)
    ef = fit_estimator(data, groups, a.kind, cfg.pipeline, family=a.family)
    payload = _fit_payload(ef.fit, ef.spec, groups, a, kind=a.kind, cv=ef.cv.to_dict())
    if not ef.fit.converged:
        payload["error"] = "MaxIterations"
        _emit(payload, cfg.output)
        return EXIT_NUMERICAL
    _emit(payload, cfg.output)
    return EXIT_OK


def _run_verify(cfg: RunConfig) -> int:
    a = cfg.args
    saved = json.loads(Path(a.fit).read_text(encoding="utf-8"))
    data_path = a.data or saved["data"]
    if not Path(data_path).exists():
        raise InputNotFound(data_path)
    data = read_csv_dataset(data_path, a.response or saved["response"])
    groups = build_groups(saved["groups"])
    pen = saved["penalty"]
    spec = PenaltySpec(pen["lambda"], pen["gamma"], np.asarray(pen["alpha_weights"]),
                       np.asarray(pen["xi_weights"]))
    rep = kkt_verify(data, groups, spec, saved["family"], np.asarray(saved["theta"]))
    _emit({"kkt_residual": rep.residual, "per_group": list(rep.per_group),
           "zero_groups": list(rep.zero_groups)}, cfg.output)
    return EXIT_OK


def _run_check_rates(cfg: RunConfig) -> int:
    a = cfg.args
    base = _adaptive(a).to_dict()
    for name in AdaptiveConfig.__dataclass_fields__:
        if getattr(a, name, None) is not None:
            base[name] = getattr(a, name)
    _emit(check_rate_feasibility(AdaptiveConfig(**base)).to_dict(), cfg.output)
    return EXIT_OK


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _run_simulate(cfg: RunConfig) -> int:
    a, spec = cfg.args, cfg.scenario
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    tuning = None
    if a.tuning == "rates":
        ad = cfg.pipeline.adaptive
        tuning = RateTuning(ad.beta_rate, ad.alpha_rate, a.scale, a.scale)
    if a.curve:
        with open(out / "curve.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "T", "d_T", "recovery_rate", "std_error", "n", "failed"])
            for m in a.methods:
                for p in selection_consistency_curve(spec, a.T_list, m, spec.replications,
                                                     cfg.pipeline, tuning):
                    w.writerow([m, p.T, p.d_T, _fmt(p.recovery_rate), _fmt(p.std_error),
                                p.n, p.failed])
        return EXIT_OK
    res = run_scenario(spec, a.methods, cfg.pipeline, tuning)
    with open(out / "replications.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "rep", "mse", "C", "IC", "exact"])
        for r in res.records:
            w.writerow([r.method, r.replication, _fmt(r.mse), r.C, r.IC, int(r.exact_recovery)])
    table = res.table()
    with open(out / "aggregate.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(AGGREGATE_HEADER)
        for m, row in table.items():
            w.writerow([m] + [_fmt(row[k]) for k in AGGREGATE_HEADER[1:]])
    truth = res.truth_row()
    lines = ["| T | d_T | N_g | S | A | Model | MSE | C | IC |",
             "|---|---|---|---|---|---|---|---|---|",
             f"| {spec.T} | {truth['d_T']} | {truth['N_g']} | {truth['S']} | {truth['A']} "
             f"| Truth | | {truth['C']} | 0 |"]
    for m, row in table.items():
        lines.append(f"| | | | | | {TABLE_LABELS[m]} | {row['mse']:.4f} | {row['C']:.2f} "
                     f"| {row['IC']:.2f} |")
    (out / "aggregate.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if res.failures:
        with open(out / "failures.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "rep", "error"])
            w.writerows(res.failures)
    return EXIT_OK


HANDLERS = {"fit": _run_fit, "cv-fit": _run_cv_fit, "verify": _run_verify,
            "check-rates": _run_check_rates, "simulate": _run_simulate}


def run(cfg: RunConfig) -> int:
    logging.basicConfig(level=getattr(logging, cfg.log_level, logging.WARNING))
    try:
        return HANDLERS[cfg.subcommand](cfg)
    except (IllPosed, MaxIterations) as exc:
        _emit({"error": type(exc).__name__, "message": str(exc)}, cfg.output)
        return EXIT_NUMERICAL
    except ASGLError as exc:
        _emit({"error": type(exc).__name__, "message": str(exc)}, cfg.output)
        return EXIT_NUMERICAL


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_args(argv)
        return run(cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputNotFound as exc:
        print(f"file not found: {exc}", file=sys.stderr)
        return EXIT_NOINPUT


if __name__ == "__main__":
    sys.exit(main())
