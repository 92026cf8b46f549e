"""Command-line front end.

``mrtwcls fit``          WCLS fit of a CSV dataset against a model spec
``mrtwcls simulate``     write a simulated dataset
``mrtwcls mc``           Monte Carlo study (preset or custom)
``mrtwcls compare-gee``  the endogeneity preset of ``mc``
``mrtwcls sensitivity``  local quadratic effect-over-time curve

Every subcommand writes ``result.json``, ``result.csv`` and
``effective_config.json`` into ``--out``.  Settings come from flags, then a
``--config`` JSON file, then built-in defaults, in that order of priority.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from importlib import resources
from pathlib import Path

from .dataset import Schema, derive_lag, load_csv, log_transform, write_csv
from .design import ModelSpec
from .errors import InputError, NumericalError, ReplicationError
from .estimator import wcls_fit
from .loess import DEFAULT_GRID, DEFAULT_SPAN, LoessSpec, effect_over_time
from .montecarlo import EstimatorSpec, run_mc
from .presets import get_preset
from .simulate import SimScenario, generate

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
BUILTIN_SPECS = ("q1", "q2", "q3", "q4")

DEFAULTS = {
    "common": {"out": ".", "round": None, "config": None},
    "fit": {"data": None, "spec": None, "schema": None, "level": 0.95, "log_transform": [],
            "lag": []},
    "simulate": {"kind": None, "n": None, "T": None, "seed": None, "params": {}},
    "mc": {"preset": None, "scenario": None, "estimators": None, "truth": None, "reps": 1000,
           "seed": None, "n": None, "T": None, "params": {}, "workers": 1, "failure_budget": 0},
    "sensitivity": {"data": None, "spec": None, "schema": None, "level": 0.95, "span": DEFAULT_SPAN,
                    "degree": 2, "grid": None, "arm": None, "variable": "day",
                    "log_transform": [], "lag": []},
}


class _IOFailure(Exception):
    pass


# -- argument parsing ------------------------------------------------------------


def _key_value(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    k, v = text.split("=", 1)
    try:
        return k, json.loads(v)
    except json.JSONDecodeError:
        return k, v


def _grid(text: str):
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be comma-separated numbers, got {text!r}") from None


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file of settings; flags take precedence")
    p.add_argument("--out", help="output directory (created if missing; default: current directory)")
    p.add_argument("--round", type=int, metavar="K",
                   help="round numbers in result.csv to K decimals (JSON keeps full precision)")


def _add_data(p: argparse.ArgumentParser):
    p.add_argument("--data", help="input CSV, one row per participant and decision point")
    p.add_argument("--spec", help=f"model spec JSON file, or a built-in name ({', '.join(BUILTIN_SPECS)})")
    p.add_argument("--schema", help="JSON file mapping CSV columns to roles")
    p.add_argument("--level", type=float, help="confidence level (default 0.95)")
    p.add_argument("--log-transform", action="append", metavar="COLUMN", dest="log_transform",
                   help="replace COLUMN by log(COLUMN + 0.5) before fitting; repeatable")
    p.add_argument("--lag", action="append", metavar="COLUMN",
                   help="add COLUMN_lag1, the previous decision point's value (0 when absent); repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrtwcls", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("fit", help="fit a WCLS model to a dataset",
                       description="Fit a WCLS excursion-effect model and write the coefficient table.")
    _add_data(p)
    _add_common(p)

    p = sub.add_parser("simulate", help="write a simulated dataset",
                       description="Simulate a micro-randomized trial and write it as CSV.")
    p.add_argument("--kind", help="appendix_c, endogenous_two_period, availability_marginal or multi_arm")
    p.add_argument("--n", type=int, help="participants")
    p.add_argument("--T", type=int, help="decision points per participant")
    p.add_argument("--seed", type=_seed, help="random seed (required)")
    p.add_argument("--param", action="append", type=_key_value, metavar="KEY=VALUE",
                   help="scenario parameter override, VALUE parsed as JSON; repeatable")
    _add_common(p)

    for name, desc in (("mc", "Run a Monte Carlo study of bias, SD and coverage."),
                       ("compare-gee", "Monte Carlo comparison of WCLS with independence and "
                                       "exchangeable GEE under an endogenous covariate "
                                       "(the endogeneity preset of mc).")):
        p = sub.add_parser(name, help=desc.split(".")[0].split(" (")[0].lower(), description=desc)
        if name == "mc":
            p.add_argument("--preset", help="appendix-c or endogeneity; otherwise give scenario and "
                                            "estimators in --config")
        p.add_argument("--reps", type=int, help="replications (default 1000)")
        p.add_argument("--seed", type=_seed, help="random seed (required)")
        p.add_argument("--n", type=int, help="participants per simulated trial")
        if name == "mc":
            p.add_argument("--T", type=int, help="decision points per participant")
        p.add_argument("--param", action="append", type=_key_value, metavar="KEY=VALUE",
                       help="scenario parameter override, VALUE parsed as JSON; repeatable")
        p.add_argument("--workers", type=int, help="worker processes (default 1)")
        p.add_argument("--failure-budget", type=int, dest="failure_budget",
                       help="failed fits tolerated before the study aborts (default 0)")
        _add_common(p)

    p = sub.add_parser("sensitivity", help="effect-over-time curve",
                       description="Local quadratic (tricube-weighted) WCLS effect curve over study "
                                   "days with the linear-in-day comparator.")
    _add_data(p)
    p.add_argument("--span", type=float, help="fraction of rows in each window (default 2/3)")
    p.add_argument("--degree", type=int, help="local polynomial degree (default 2)")
    p.add_argument("--grid", type=_grid, help="comma-separated evaluation days (default 0..41)")
    p.add_argument("--arm", help="arm whose effect is smoothed (default: the spec's first arm)")
    p.add_argument("--variable", help="day-in-study column (default 'day')")
    _add_common(p)
    return parser


# -- config merging ------------------------------------------------------------------


def _read_json(path) -> object:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise _IOFailure(f"cannot read {path}: {e.strerror or e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON ({e})") from None


def merge_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicitly given flags."""
    section = "mc" if command == "compare-gee" else command
    cfg = dict(DEFAULTS["common"])
    cfg.update(DEFAULTS[section])
    if args.config:
        file_cfg = _read_json(args.config)
        if not isinstance(file_cfg, dict):
            raise InputError("config file must hold a JSON object")
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise InputError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(file_cfg)
    for k, v in vars(args).items():
        if k in ("command", "config") or v is None:
            continue
        if k == "param":
            cfg["params"] = {**dict(cfg.get("params") or {}), **dict(v)}
        elif k in ("log_transform", "lag"):
            cfg[k] = list(v)
        else:
            cfg[k] = v
    cfg["config"] = args.config
    if command == "compare-gee":
        cfg["preset"] = "endogeneity"
    return cfg


def _load_spec(ref) -> ModelSpec:
    if ref is None:
        raise InputError("a model spec is required (--spec)")
    if isinstance(ref, dict):
        return ModelSpec.from_dict(ref)
    if str(ref).lower() in BUILTIN_SPECS:
        text = resources.files("mrtwcls").joinpath("specs", f"{str(ref).lower()}.json").read_text()
        return ModelSpec.from_json(text)
    d = _read_json(ref)
    if not isinstance(d, dict):
        raise InputError("spec file must hold a JSON object")
    return ModelSpec.from_dict(d)


def _load_schema(ref) -> Schema:
    if ref is None:
        return Schema()
    d = ref if isinstance(ref, dict) else _read_json(ref)
    if not isinstance(d, dict):
        raise InputError("schema must be a JSON object")
    return Schema.from_dict(d)


def _load_data(cfg):
    if not cfg.get("data"):
        raise InputError("an input dataset is required (--data)")
    path = Path(cfg["data"])
    if not path.is_file():
        raise _IOFailure(f"cannot read {path}: no such file")
    try:
        ds = load_csv(path, _load_schema(cfg.get("schema")))
    except (OSError, UnicodeDecodeError) as e:
        raise _IOFailure(f"cannot read {path}: {e}") from e
    for col in cfg.get("log_transform") or []:
        ds = log_transform(ds, col)
    for col in cfg.get("lag") or []:
        ds = derive_lag(ds, col)
    return ds


def _require_seed(cfg):
    if cfg.get("seed") is None:
        raise InputError("a seed is required for stochastic subcommands (--seed)")
    return int(cfg["seed"])


# -- subcommands -----------------------------------------------------------------


def cmd_fit(cfg: dict) -> dict:
    spec = _load_spec(cfg["spec"])
    ds = _load_data(cfg)
    res = wcls_fit(ds, spec, level=float(cfg["level"]))
    cfg["spec"] = spec.to_dict()
    return {"result.json": res.to_json(), "result.csv": res.to_csv(cfg.get("round"))}


def cmd_simulate(cfg: dict) -> dict:
    seed = _require_seed(cfg)
    if cfg.get("kind") is None or cfg.get("n") is None or cfg.get("T") is None:
        raise InputError("simulate needs --kind, --n and --T")
    sc = SimScenario(cfg["kind"], cfg["n"], cfg["T"], seed, cfg.get("params") or {})
    ds = generate(sc)
    cfg["scenario"] = sc.to_dict()
    summary = {"scenario": sc.to_dict(), "rows": len(ds), "participants": ds.n,
               "arms": list(ds.arms), "columns": list(ds.to_frame().columns)}
    return {"result.json": json.dumps(summary, indent=2), "result.csv": ds}


def cmd_mc(cfg: dict) -> dict:
    seed = _require_seed(cfg)
    reps = cfg.get("reps")
    if reps is None or int(reps) < 1:
        raise InputError(f"reps must be a positive integer, got {reps!r}")
    if cfg.get("preset"):
        preset = get_preset(cfg["preset"], seed=seed, n=cfg.get("n"), T=cfg.get("T"),
                            params=cfg.get("params") or None)
        scenario, estimators, truth = preset.scenario, preset.estimators, preset.truth
        if cfg.get("truth") is not None:
            truth = cfg["truth"]
    else:
        if cfg.get("scenario") is None or cfg.get("estimators") is None or cfg.get("truth") is None:
            raise InputError("without --preset the config must give scenario, estimators and truth")
        sc = dict(cfg["scenario"])
        sc["seed"] = seed
        for k in ("n", "T"):
            if cfg.get(k) is not None:
                sc[k] = cfg[k]
        if cfg.get("params"):
            sc["params"] = {**dict(sc.get("params") or {}), **cfg["params"]}
        scenario = SimScenario.from_dict(sc)
        estimators = [EstimatorSpec.from_dict(e) for e in cfg["estimators"]]
        truth = cfg["truth"]
    report = run_mc(scenario, estimators, int(reps), truth,
                    failure_budget=int(cfg.get("failure_budget") or 0),
                    workers=max(1, int(cfg.get("workers") or 1)))
    cfg["scenario"] = scenario.to_dict()
    cfg["estimators"] = [e.to_dict() for e in estimators]
    cfg["truth"] = truth
    return {"result.json": report.to_json(), "result.csv": report.to_csv(cfg.get("round"))}


def cmd_sensitivity(cfg: dict) -> dict:
    spec = _load_spec(cfg["spec"])
    ds = _load_data(cfg)
    grid = cfg.get("grid")
    lo = LoessSpec(span=cfg["span"], degree=cfg["degree"],
                   grid=DEFAULT_GRID if grid is None else grid, variable=cfg["variable"])
    curve = effect_over_time(ds, spec, lo, arm=cfg.get("arm"), level=float(cfg["level"]))
    cfg["spec"] = spec.to_dict()
    cfg["grid"] = list(lo.grid)
    return {"result.json": json.dumps(curve.to_dict(), indent=2),
            "result.csv": curve.to_csv(cfg.get("round"))}


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "mc": cmd_mc, "compare-gee": cmd_mc,
            "sensitivity": cmd_sensitivity}


def _write_outputs(out_dir: Path, files: dict, cfg: dict):
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, content in files.items():
            if isinstance(content, str):
                (out_dir / name).write_text(content, encoding="utf-8")
            else:
                write_csv(content, out_dir / name)
        (out_dir / "effective_config.json").write_text(
            json.dumps(cfg, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    except OSError as e:
        raise _IOFailure(f"cannot write to {out_dir}: {e.strerror or e}") from e


def _exit_code_for(err: BaseException) -> int:
    if isinstance(err, ReplicationError):
        return _exit_code_for(err.cause)
    if isinstance(err, InputError):
        return EXIT_INPUT
    if isinstance(err, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_NUMERICAL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = merge_config(args.command, args)
        cfg["command"] = args.command
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            files = COMMANDS[args.command](cfg)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        _write_outputs(Path(cfg["out"]), files, cfg)
    except _IOFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (InputError, NumericalError, ReplicationError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return _exit_code_for(e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
