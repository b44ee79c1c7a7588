"""Command-line front end.

Every run is driven by a YAML config; flags override config keys. All
outputs are computed in memory first and only written once the whole
subcommand has succeeded, so a failing run leaves no partial files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import harness
from .core import InclusionProbabilities, partition, read_portfolio_csv, write_portfolio_csv
from .errors import ConvergenceError, InvalidArgumentError, ReservingError, SchemaError
from .estimators import CSV_HEADER, ESTIMATORS
from .pipeline import FitOptions, Fitted, evaluate_estimators, fit_models
from .simulator import SimConfig, simulate
from .synthetic import fixed_pseudo_population

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_UNKNOWN_ESTIMATOR = 3
EXIT_SCHEMA = 4
EXIT_CONVERGENCE = 5
EXIT_ESTIMATION = 6

EXIT_CODES_HELP = f"""exit codes:
  {EXIT_OK}  success
  {EXIT_UNEXPECTED}  unexpected internal error
  {EXIT_CONFIG}  invalid config, flag or argument (missing file, bad value)
  {EXIT_UNKNOWN_ESTIMATOR}  unknown estimator name (registry: {', '.join(ESTIMATORS)})
  {EXIT_SCHEMA}  input CSV schema mismatch
  {EXIT_CONVERGENCE}  model fit did not converge
  {EXIT_ESTIMATION}  other estimation failure (degenerate data, undefined estimator)

Errors are written to stderr as one JSON object with keys
"error", "message" and "exit_code".
"""


class UnknownEstimatorError(InvalidArgumentError):
    kind = "unknown-estimator"


class ConfigError(InvalidArgumentError):
    kind = "config-error"


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, UnknownEstimatorError):
        return EXIT_UNKNOWN_ESTIMATOR
    if isinstance(exc, SchemaError):
        return EXIT_SCHEMA
    if isinstance(exc, ConvergenceError):
        return EXIT_CONVERGENCE
    if isinstance(exc, (InvalidArgumentError, FileNotFoundError, yaml.YAMLError)):
        return EXIT_CONFIG
    if isinstance(exc, ReservingError):
        return EXIT_ESTIMATION
    return EXIT_UNEXPECTED


# -- config --------------------------------------------------------------------------


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at top level")
    data["_base"] = str(p.parent)
    return data


def _resolve(cfg: dict, path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(cfg.get("_base", ".")) / p


def merged(args) -> dict:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads is not None:
        cfg["threads"] = args.threads
    if args.estimators is not None:
        cfg["estimators"] = [e.strip() for e in args.estimators.split(",") if e.strip()]
    if args.tau is not None:
        cfg.setdefault("valuation", {})["tau"] = args.tau
    if args.out is not None:
        cfg["out"] = args.out
        cfg["_out_from_flag"] = True
    if getattr(args, "pis", None) is not None:
        cfg["pis"] = args.pis
        cfg["_pis_from_flag"] = True
    return cfg


def _estimators(cfg) -> list:
    names = list(cfg.get("estimators", ESTIMATORS))
    bad = [e for e in names if e not in ESTIMATORS]
    if bad:
        raise UnknownEstimatorError(f"unknown estimators {bad}; choose from {list(ESTIMATORS)}")
    return names


def _options(cfg) -> FitOptions:
    try:
        return FitOptions.from_dict(cfg.get("model", {}))
    except TypeError as exc:
        raise ConfigError(f"bad model options: {exc}") from None


def _sim_config(cfg) -> SimConfig:
    if "simulation" not in cfg:
        raise ConfigError("config has no 'simulation' section")
    sim = dict(cfg["simulation"])
    if "seed" in cfg:
        sim["rng_seed"] = int(cfg["seed"])
    try:
        return SimConfig.from_dict(sim)
    except TypeError as exc:
        raise ConfigError(f"bad simulation section: {exc}") from None


def _out_dir(cfg) -> Path:
    out = cfg.get("out")
    if out is None:
        raise ConfigError("no output directory: pass --out or set 'out' in the config")
    return Path(out) if cfg.get("_out_from_flag") else _resolve(cfg, out)


def _tau(cfg) -> float:
    tau = cfg.get("valuation", {}).get("tau")
    if tau is None:
        raise ConfigError("no valuation date: pass --tau or set valuation.tau")
    tau = float(tau)
    if not tau > 0:
        raise ConfigError("valuation date must be > 0")
    return tau


def _grid(cfg) -> list:
    val = cfg.get("valuation", {})
    grid = val.get("grid")
    if grid is None:
        return [_tau(cfg)]
    if isinstance(grid, dict):
        start, stop, step = float(grid["start"]), float(grid["stop"]), float(grid.get("step", 1.0))
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [start + k * step for k in range(n)]
    return [float(t) for t in grid]


def _portfolio(cfg):
    """Portfolio from CSV inputs, or simulated from the simulation section."""
    data = cfg.get("data")
    if data:
        claims, policies = _resolve(cfg, data["claims"]), _resolve(cfg, data["policies"])
        for p in (claims, policies):
            if not p.is_file():
                raise ConfigError(f"input file not found: {p}")
        return read_portfolio_csv(claims, policies), None
    return simulate(_sim_config(cfg))


def _read_pis(path, portfolio, reported_idx) -> InclusionProbabilities:
    """Fixed inclusion probabilities from a ``claim_id,pi`` CSV."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"probability file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header[:2] != ["claim_id", "pi"]:
            raise SchemaError(f"{path}: expected header 'claim_id,pi', got {header}")
        values = {}
        for row in reader:
            if not row:
                continue
            try:
                values[row[0].strip()] = float(row[1])
            except (IndexError, ValueError):
                raise SchemaError(f"{path}: malformed row {row}") from None
    ids = [portfolio.claim_ids[i] for i in reported_idx]
    missing = [c for c in ids if c not in values]
    if missing:
        raise SchemaError(f"{path}: no probability for reported claims {missing[:5]}")
    raw = np.array([values[c] for c in ids])
    if np.any(~((raw > 0) & (raw <= 1))):
        raise InvalidArgumentError("fixed probabilities must lie in (0, 1]")
    return InclusionProbabilities.from_raw(raw, source="fixed")


# -- writers -------------------------------------------------------------------------


def _json_text(obj) -> str:
    return json.dumps(harness._jsonable(obj), indent=2, sort_keys=True) + "\n"


def _estimates_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _commit(files: dict) -> list:
    """Write ``{path: text}``; directories are created as needed."""
    written = []
    for path, text in files.items():
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        tmp.replace(path)
        written.append(str(path))
    return written


# -- subcommands ----------------------------------------------------------------------


def plan(command, cfg) -> dict:
    out = _out_dir(cfg)
    p = {"command": command, "out": str(out)}
    if cfg.get("data"):
        p["inputs"] = {k: str(_resolve(cfg, v)) for k, v in cfg["data"].items()}
    else:
        p["inputs"] = {"simulation": _sim_config(cfg).to_dict()}
    if command in ("fit", "reserve"):
        p["tau"] = _tau(cfg)
    if command in ("reserve", "backtest"):
        p["estimators"] = _estimators(cfg)
    if command in ("fit", "reserve", "backtest"):
        p["model"] = vars(_options(cfg)).copy()
    if command in ("simulate", "backtest"):
        p["grid"] = _grid(cfg)
    if command == "validate":
        p["validate"] = {k: v for k, v in cfg.get("validate", {}).items() if not isinstance(v, dict)}
    p["outputs"] = sorted(OUTPUTS[command])
    return p


OUTPUTS = {
    "simulate": ["claims.csv", "policies.csv", "ground_truth.json"],
    "fit": ["models.json", "ibnr_law.csv", "pseudo_population.csv"],
    "reserve": ["estimates.csv", "reserve.json"],
    "backtest": ["backtest.json", "estimates.csv", "metrics.csv", "long.csv"],
    "validate": ["validate.json"],
}


def cmd_simulate(cfg) -> dict:
    out = _out_dir(cfg)
    portfolio, truth = simulate(_sim_config(cfg))
    with tempfile.TemporaryDirectory() as tmp:
        c, p = Path(tmp) / "claims.csv", Path(tmp) / "policies.csv"
        write_portfolio_csv(portfolio, c, p)
        files = {out / "claims.csv": c.read_text(), out / "policies.csv": p.read_text()}
    grid = _grid(cfg) if cfg.get("valuation") else []
    files[out / "ground_truth.json"] = _json_text(truth.to_json(grid))
    return files


def cmd_fit(cfg) -> dict:
    out = _out_dir(cfg)
    portfolio, _ = _portfolio(cfg)
    options = _options(cfg)
    fitted = fit_models(portfolio, _tau(cfg), options)
    models = fitted.params.to_dict()
    models["severity_wbp"] = fitted.severity_wbp.to_dict() if fitted.severity_wbp else None
    models["inclusion_probabilities"] = fitted.pis.summary()
    files = {out / "models.json": _json_text(models)}
    with tempfile.TemporaryDirectory() as tmp:
        if fitted.law is not None:
            fitted.law.write_csv(Path(tmp) / "law.csv")
            files[out / "ibnr_law.csv"] = (Path(tmp) / "law.csv").read_text()
        pseudo = fixed_pseudo_population(fitted.pis)
        ids = [portfolio.claim_ids[i] for i in fitted.context.reported_idx]
        pseudo.write_csv(Path(tmp) / "pseudo.csv", ids)
        files[out / "pseudo_population.csv"] = (Path(tmp) / "pseudo.csv").read_text()
    return files


_NEEDS_MODELS = {"AIPW", "AIPW-CL", "ML", "ML-wBP", "ML-WL", "CRED"}


def cmd_reserve(cfg) -> dict:
    out = _out_dir(cfg)
    names = _estimators(cfg)
    tau = _tau(cfg)
    portfolio, _ = _portfolio(cfg)
    options = _options(cfg)
    boot = cfg.get("bootstrap")
    boot = dict(boot, threads=int(cfg.get("threads", 1))) if boot else None
    ctx = partition(portfolio, tau)
    fixed = None
    if cfg.get("pis"):
        pis_path = Path(cfg["pis"]) if cfg.get("_pis_from_flag") else _resolve(cfg, cfg["pis"])
        fixed = _read_pis(pis_path, portfolio, ctx.reported_idx)
    results = {}
    if fixed is not None and not (_NEEDS_MODELS & set(names)):
        fitted = _model_free(ctx, fixed)
    else:
        fitted = fit_models(portfolio, tau, options)
        if fixed is not None:
            fitted = replace(fitted, pis=fixed)
    results = evaluate_estimators(portfolio, fitted, names, options, boot)
    failures = {k: v for k, v in results.items() if isinstance(v, str)}
    if failures and len(failures) == len(results):
        raise EstimationFailed(failures)
    rows = [results[n].to_row(tau) for n in names if not isinstance(results[n], str)]
    report = {
        "tau": tau,
        "estimates": {k: (v if isinstance(v, str) else v.to_dict()) for k, v in results.items()},
    }
    return {out / "estimates.csv": _estimates_csv(rows), out / "reserve.json": _json_text(report)}


class EstimationFailed(ReservingError):
    kind = "estimation-failed"

    def __init__(self, failures):
        super().__init__("; ".join(f"{k}: {v}" for k, v in failures.items()))


def _model_free(ctx, pis):
    """Fitted stand-in for IPW and CL, which need no parameter models."""
    empty = np.zeros(0)
    return Fitted(ctx, None, pis, np.zeros(0, dtype=np.int64), empty, empty, None, empty, None)


def cmd_backtest(cfg) -> dict:
    out = _out_dir(cfg)
    names = _estimators(cfg)
    grid = _grid(cfg)
    options = _options(cfg)
    portfolio, _ = _portfolio(cfg)
    boot = cfg.get("bootstrap")
    report = harness.backtest(
        portfolio, grid, names, refit=cfg.get("refit", "every"), options=options,
        truth_known=bool(cfg.get("truth_known", True)), threads=int(cfg.get("threads", 1)),
        bootstrap=dict(boot) if boot else None,
    )
    with tempfile.TemporaryDirectory() as tmp:
        paths = report.write(tmp)
        return {out / p.name: p.read_text() for p in paths}


def cmd_validate(cfg) -> dict:
    out = _out_dir(cfg)
    v = cfg.get("validate")
    if not v:
        raise ConfigError("config has no 'validate' section")
    threads = int(cfg.get("threads", 1))
    seed = cfg.get("seed")
    result = {}
    ident = v.get("identity")
    if ident:
        for name, section in sorted(ident.get("configs", {}).items()):
            sc = dict(section)
            if seed is not None:
                sc["rng_seed"] = int(seed)
            try:
                sim = SimConfig.from_dict(sc)
            except TypeError as exc:
                raise ConfigError(f"bad identity config {name}: {exc}") from None
            rep = harness.validate_ipw_identity(sim, float(ident["tau"]), int(ident.get("n_replicates", 10_000)),
                                                threads)
            result.setdefault("identity", {})[name] = rep.to_dict()
    rob = v.get("robustness")
    if rob:
        sc = dict(rob["config"])
        if seed is not None:
            sc["rng_seed"] = int(seed)
        try:
            sim = SimConfig.from_dict(sc)
        except TypeError as exc:
            raise ConfigError(f"bad robustness config: {exc}") from None
        result["robustness"] = harness.double_robustness_grid(
            sim, float(rob["tau"]), int(rob.get("n_replicates", 1000)),
            severity_bias=float(rob.get("severity_bias", 1.5)),
            distortion=float(rob.get("distortion", 1.3)),
            cohort_width=float(rob.get("cohort_width", 1.0)), threads=threads,
        )
    if not result:
        raise ConfigError("validate section needs 'identity' and/or 'robustness'")
    return {out / "validate.json": _json_text(result)}


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "reserve": cmd_reserve,
    "backtest": cmd_backtest,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="claimsampling",
        description="IBNR reserving by inclusion-probability weighting.",
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "simulate a portfolio; writes claims/policies CSV and ground_truth.json",
        "fit": "fit delay, count and severity models at --tau; writes models.json",
        "reserve": "evaluate estimators at --tau; writes estimates.csv",
        "backtest": "re-estimate over a valuation grid and score against the truth",
        "validate": "Monte-Carlo identity and double-robustness checks",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, epilog=EXIT_CODES_HELP,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", metavar="PATH", help="YAML run configuration")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides 'out')")
        p.add_argument("--seed", type=int, metavar="N", help="simulation seed (overrides 'seed')")
        p.add_argument("--threads", type=int, metavar="N", help="worker pool size")
        p.add_argument("--estimators", metavar="LIST", help="comma-separated estimator names")
        p.add_argument("--tau", type=float, metavar="T", help="valuation date")
        p.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
        if name == "reserve":
            p.add_argument("--pis", metavar="PATH", help="CSV 'claim_id,pi' of fixed probabilities")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = merged(args)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.dry_run:
            print(_json_text(plan(args.command, cfg)), end="")
            return EXIT_OK
        files = COMMANDS[args.command](cfg)
        written = _commit(files)
        print(json.dumps({"command": args.command, "written": written}))
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - mapped to an exit code below
        code = _exit_code(exc)
        kind = getattr(exc, "kind", type(exc).__name__)
        print(json.dumps({"error": kind, "message": str(exc), "exit_code": code}), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
