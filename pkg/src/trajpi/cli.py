"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 I/O or file
format error.  Settings resolve in the order defaults < ``--config`` file
< command-line flags, and the resolved settings are echoed into every
file the command writes.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .conformal import QuantileStrategy
from .envs.trajectories import ENVS, TrajectorySet, make_env, read_trajectories, sample_trajectories, write_trajectories
from .errors import SchemaMismatch
from .eval.metrics import coverage, coverage_ci_lower
from .eval.studies import (
    GaussianStudyConfig,
    MdpStudyConfig,
    QuantileCIStudyConfig,
    run_gaussian_study,
    run_mdp_study,
    run_quantile_ci_study,
)
from .io import fmt, load_model, read_json, save_model, write_band_csv, write_json, write_rows_csv
from .qrf import ForestParams, set_threads
from .trajband import SplitConfig, SqboxModel, fit_cte, fit_sqbox

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO = 0, 2, 3, 4
EXPERIMENTS = ("gaussian", "tamarisk", "battle", "quantile-ci")


class UsageError(Exception):
    pass


def _workers(args) -> int:
    if getattr(args, "workers", None):
        return args.workers
    env = os.environ.get("TRAJPI_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"TRAJPI_WORKERS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _output_dir(args) -> Path:
    d = getattr(args, "output_dir", None) or os.environ.get("TRAJPI_OUTPUT_DIR") or "."
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _out_path(args, name: str) -> Path:
    """An explicit ``--out`` wins; otherwise ``name`` inside the output directory."""
    if getattr(args, "out", None):
        return Path(args.out)
    return _output_dir(args) / name


def load_config(path) -> dict:
    """YAML or JSON mapping (JSON is a YAML subset)."""
    if path is None:
        return {}
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise SchemaMismatch(f"{path}: cannot parse config ({exc})") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise SchemaMismatch(f"{path}: config must be a mapping, got {type(doc).__name__}")
    return doc


def _merge(base: dict, cfg: dict, flags: dict) -> dict:
    out = dict(base)
    out.update({k: v for k, v in cfg.items()})
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _strategy(name: str, confidence) -> QuantileStrategy:
    return QuantileStrategy(name, confidence)


def _emit(doc: dict) -> None:
    """Print a summary document with 6 significant digits."""

    def walk(x):
        if isinstance(x, float):
            return float(fmt(x))
        if isinstance(x, dict):
            return {k: walk(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [walk(v) for v in x]
        return x

    print(json.dumps(walk(doc), sort_keys=True))


# commands


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    env_cfg = dict(cfg.get("env_config", {}))
    resolved = _merge({"env": None, "n": None, "horizon": None, "seed": 0}, cfg,
                      {"env": args.env, "n": args.n, "horizon": args.horizon, "seed": args.seed})
    resolved.pop("env_config", None)
    if resolved["env"] not in ENVS:
        raise UsageError(f"--env must be one of {sorted(ENVS)}, got {resolved['env']!r}")
    if resolved["n"] is None:
        raise UsageError("--n is required")
    env = make_env(resolved["env"], **env_cfg)
    if resolved["horizon"] is None:
        resolved["horizon"] = env.horizon
    if resolved["n"] < 1 or resolved["horizon"] < 1:
        raise ValueError("n and horizon must both be >= 1")
    resolved["env_config"] = env.config.to_dict()
    records = sample_trajectories(env, resolved["n"], resolved["horizon"], resolved["seed"],
                                  workers=_workers(args))
    out = _out_path(args, f"{resolved['env']}-trajectories.jsonl")
    write_trajectories(out, records, header={"command": "simulate", "config": resolved, "version": __version__})
    _emit({"command": "simulate", "out": str(out), "records": len(records), "config": resolved})
    return EXIT_OK


def _load_set(path):
    records, header = read_trajectories(path)
    if not records:
        raise SchemaMismatch(f"{path}: no trajectory records")
    return TrajectorySet.from_records(records), header


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    resolved = _merge(
        {"method": "sqbox", "l": None, "m": None, "delta": 0.1, "delta_prime": 0.2, "strategy": "strict",
         "ucb_confidence": None, "trees": 1000, "min_leaf": 20, "seed": 0},
        cfg,
        {"method": args.method, "l": args.l, "m": args.m, "delta": args.delta, "delta_prime": args.delta_prime,
         "strategy": args.strategy, "ucb_confidence": args.ucb_confidence, "trees": args.trees,
         "min_leaf": args.min_leaf, "seed": args.seed},
    )
    if resolved["method"] not in ("sqbox", "cte"):
        raise UsageError(f"--method must be sqbox or cte, got {resolved['method']!r}")
    data, _ = _load_set(args.data)
    n = len(data)
    # default split: half for training, 100 (or a tenth) rows for scaling
    if resolved["l"] is None:
        resolved["l"] = n // 2
    if resolved["m"] is None:
        resolved["m"] = min(100, max(1, (n - resolved["l"]) // 10))
    set_threads(_workers(args))
    split = SplitConfig(resolved["l"], resolved["m"], resolved["delta"], resolved["delta_prime"],
                        _strategy(resolved["strategy"], resolved["ucb_confidence"]))
    params = ForestParams(resolved["trees"], resolved["min_leaf"], "third", resolved["seed"])
    fitter = fit_sqbox if resolved["method"] == "sqbox" else fit_cte
    model = fitter(data.behavior, data.features, split, params)
    resolved["data"] = str(args.data)
    resolved["n"] = n
    out = _out_path(args, f"{resolved['method']}-model.npz")
    save_model(out, model, provenance={"command": "fit", "config": resolved, "version": __version__})
    summary = {"command": "fit", "out": str(out), "config": resolved, "guaranteed": model.guaranteed}
    if isinstance(model, SqboxModel):
        summary.update(beta=model.beta, sigma_mean=float(model.sigma.mean()))
    else:
        summary.update(c_hat=model.c_hat)
    _emit(summary)
    return EXIT_OK


def _parse_start(text: str) -> np.ndarray:
    try:
        vals = json.loads(text) if text.strip().startswith("[") else [float(v) for v in text.split(",")]
        return np.asarray(vals, dtype=float)
    except ValueError:
        raise UsageError(f"--start must be comma-separated numbers or a JSON list, got {text!r}") from None


def cmd_predict(args) -> int:
    model = load_model(args.model)
    s0 = _parse_start(args.start)
    band = model.predict(s0[None, :])
    lo, hi = band.lo[0], band.hi[0]
    if args.out:
        write_band_csv(args.out, lo, hi)
    else:
        print("t,lo,hi")
        for t, (a, b) in enumerate(zip(lo, hi), 1):
            print(f"{t},{fmt(a)},{fmt(b)}")
    return EXIT_OK


def evaluate_model(model, data: TrajectorySet, confidence: float = 0.99) -> dict:
    """Coverage of a fitted model on held-out trajectories."""
    band = model.predict(data.features)
    if isinstance(model, SqboxModel):
        rep = coverage(band.lo, band.hi, data.behavior, confidence)
        rep.pop("covered")
        rep["beta"] = model.beta
    else:
        totals = model.total_exceedance(data.features, data.behavior)
        hits = int(np.sum(totals <= model.c_hat))
        rep = {
            "n": len(data),
            "hits": hits,
            "coverage": hits / len(data),
            "coverage_lower": coverage_ci_lower(hits, len(data), confidence),
            "confidence": confidence,
            "mean_width": float(band.width.mean()),
            "width_by_t": band.width.mean(axis=0).tolist(),
            "c_hat": model.c_hat,
        }
    rep["target"] = 1 - model.config.delta
    rep["guaranteed"] = model.guaranteed
    return rep


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    data, _ = _load_set(args.data)
    if data.behavior.shape[1] != model.horizon:
        raise SchemaMismatch(f"trajectory horizon {data.behavior.shape[1]} != model horizon {model.horizon}")
    rep = evaluate_model(model, data, args.confidence)
    kind = "sqbox" if isinstance(model, SqboxModel) else "cte"
    doc = {"command": "evaluate", "kind": kind, "model": str(args.model), "data": str(args.data),
           "config": model.meta.get("provenance", {}).get("config", {}), "report": rep}
    out = _out_path(args, "coverage-report.json")
    write_json(out, doc)
    _emit({"command": "evaluate", "out": str(out), "coverage": rep["coverage"],
           "coverage_lower": rep["coverage_lower"], "target": rep["target"], "mean_width": rep["mean_width"]})
    return EXIT_OK


def _study_config(name: str, args, cfg: dict):
    keys = {"seed": args.seed}
    if name == "gaussian":
        base = GaussianStudyConfig()
        keys.update(m=args.m, ucb_confidence=args.ucb_confidence)
    elif name == "quantile-ci":
        base = QuantileCIStudyConfig()
        keys.update(ucb_confidence=args.ucb_confidence)
    else:
        base = MdpStudyConfig(env=name)
        keys.update(m=args.m, delta_prime=args.delta_prime, tree_count=args.trees, min_leaf=args.min_leaf,
                    ucb_confidence=args.ucb_confidence, workers=_workers(args))
    if args.quick:
        base = base.quick()
    fields = set(base.to_dict())
    unknown = set(cfg) - fields
    if unknown:
        raise UsageError(f"unknown {name} config keys: {sorted(unknown)}")
    tuples = {k: tuple(v) for k, v in cfg.items() if isinstance(v, list)}
    merged = {**cfg, **tuples, **{k: v for k, v in keys.items() if v is not None}}
    return replace(base, **merged)


def run_experiment(name: str, config) -> dict:
    if name == "gaussian":
        return run_gaussian_study(config)
    if name == "quantile-ci":
        return run_quantile_ci_study(config)
    set_threads(config.workers)
    return run_mdp_study(config)


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    config = _study_config(args.name, args, cfg)
    started = time.perf_counter()
    report = run_experiment(args.name, config)
    elapsed = time.perf_counter() - started
    report["quick"] = bool(args.quick)
    report["version"] = __version__
    out_dir = _output_dir(args)
    stem = args.name + ("-quick" if args.quick else "")
    write_json(out_dir / f"{stem}-report.json", report)
    write_records_csv(out_dir / f"{stem}-records.csv", report)
    write_plot_data(out_dir / f"{stem}-plot-data.csv", report)
    print(f"{args.name}: {len(report['records'])} records in {fmt(elapsed)} s -> {out_dir}")
    for line in summary_lines(report):
        print(line)
    return EXIT_OK


def write_records_csv(path, report: dict) -> None:
    """Scalar fields of every record, one row per configuration."""
    recs = report["records"]
    cols = [k for k, v in recs[0].items() if not isinstance(v, (list, dict))]
    for r in recs[1:]:
        cols += [k for k, v in r.items() if k not in cols and not isinstance(v, (list, dict))]
    write_rows_csv(path, cols, ([r.get(k, "") for k in cols] for r in recs))


def plot_rows(report: dict) -> list:
    """``(x, y, series)`` triples for every plotted quantity of a report."""
    rows = []
    study = report["study"]
    for r in report["records"]:
        if study == "gaussian":
            tag = f"{r['method']} rho={fmt(r['rho'])}"
            rows.append((r["delta"], r["coverage_delta_quantile"], f"coverage-delta-quantile {tag}"))
            rows.append((r["delta"], r["mean_coverage"], f"mean-coverage {tag}"))
            rows.append((r["delta"], r["mean_width"], f"mean-width {tag}"))
        elif study == "quantile-ci":
            rows.append((r["n"], r["strict_success"], f"success strict delta={fmt(r['delta'])}"))
            rows.append((r["n"], r["ucb_success"], f"success ucb delta={fmt(r['delta'])}"))
        else:
            tag = f"{r['method']} delta={fmt(r['delta'])}"
            rows.append((r["size"], r["coverage"], f"coverage {tag}"))
            rows.append((r["size"], r["coverage_lower"], f"coverage-lower {tag}"))
            rows.append((r["size"], r["mean_width"], f"mean-width {tag}"))
            for t, w in enumerate(r.get("width_by_t", []), 1):
                rows.append((t, w, f"width-by-t {tag} size={r['size']}"))
            if "c_hat" in r:
                rows.append((r["size"], r["c_hat"], f"exceedance-bound {tag}"))
    return rows


def write_plot_data(path, report: dict) -> None:
    write_rows_csv(path, ["x", "y", "series"], plot_rows(report))


def summary_lines(report: dict) -> list:
    study = report["study"]
    lines = []
    for r in report["records"]:
        if study == "gaussian":
            lines.append(f"rho={fmt(r['rho'])} delta={fmt(r['delta'])} {r['method']:<10} "
                         f"mean={fmt(r['mean_coverage'])} dq={fmt(r['coverage_delta_quantile'])} "
                         f"width={fmt(r['mean_width'])}")
        elif study == "quantile-ci":
            lines.append(f"delta={fmt(r['delta'])} n={r['n']} strict={fmt(r['strict_success'])} "
                         f"ucb={fmt(r['ucb_success'])} guaranteed={r['ucb_guaranteed']}")
        else:
            lines.append(f"size={r['size']} delta={fmt(r['delta'])} {r['method']:<8} "
                         f"cov={fmt(r['coverage'])} lower={fmt(r['coverage_lower'])} width={fmt(r['mean_width'])}")
    return lines


def cmd_plot_data(args) -> int:
    report = read_json(args.report)
    if "study" not in report or "records" not in report:
        raise SchemaMismatch(f"{args.report}: not a study report")
    if args.out:
        write_plot_data(args.out, report)
    else:
        print("x,y,series")
        for x, y, s in plot_rows(report):
            print(f"{fmt(x) if isinstance(x, float) else x},{fmt(y)},{s}")
    return EXIT_OK


# parser


def _add_common(p, *, split=False, forest=False, seed=True):
    p.add_argument("--config", help="YAML or JSON file of settings")
    p.add_argument("--workers", type=int, help="worker count (default: TRAJPI_WORKERS or all cores)")
    p.add_argument("--output-dir", help="output directory (default: TRAJPI_OUTPUT_DIR or .)")
    if seed:
        p.add_argument("--seed", type=int, help="master seed")
    if split:
        p.add_argument("--delta", type=float, help="miscoverage level")
        p.add_argument("--delta-prime", dest="delta_prime", type=float, help="inner quantile band level")
        p.add_argument("--l", type=int, help="training rows")
        p.add_argument("--m", type=int, help="scale-estimation rows")
        p.add_argument("--strategy", choices=("strict", "ucb"), help="conformal order statistic")
        p.add_argument("--ucb-confidence", dest="ucb_confidence", type=float,
                       help="UCB confidence (default 1 - delta)")
    if forest:
        p.add_argument("--trees", type=int, help="trees per forest")
        p.add_argument("--min-leaf", dest="min_leaf", type=int, help="minimum leaf size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajpi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="roll out a fixed policy and write trajectories")
    _add_common(p)
    p.add_argument("--env", choices=sorted(ENVS))
    p.add_argument("--n", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a trajectory band model")
    _add_common(p, split=True, forest=True)
    p.add_argument("--data", required=True, help="trajectory file")
    p.add_argument("--method", choices=("sqbox", "cte"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="band for one starting state")
    p.add_argument("--model", required=True)
    p.add_argument("--start", required=True, help="start features, e.g. 1,0,2,2,1,0,0")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="coverage of a model on trajectories")
    _add_common(p, seed=False)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--confidence", type=float, default=0.99, help="level of the coverage lower bound")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run a replication study")
    _add_common(p, forest=True)
    # studies sweep delta, sizes and strategies themselves
    p.add_argument("--m", type=int, help="scale-estimation rows")
    p.add_argument("--delta-prime", dest="delta_prime", type=float, help="inner quantile band level")
    p.add_argument("--ucb-confidence", dest="ucb_confidence", type=float,
                   help="UCB confidence (default 1 - delta)")
    p.add_argument("name", choices=EXPERIMENTS)
    p.add_argument("--quick", action="store_true", help="reduced replication counts")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("plot-data", help="(x, y, series) CSV from a study report")
    p.add_argument("--report", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"trajpi: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaMismatch, OSError, json.JSONDecodeError) as exc:
        print(f"trajpi: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        print(f"trajpi: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
