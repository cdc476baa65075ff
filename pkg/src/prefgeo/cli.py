"""Command-line interface: simulate | fit | predict | evaluate | reproduce.

Each command resolves a configuration (JSON file via --config, overridden
by flags), derives a short config hash, and stamps every output file with
that hash and the seed. Re-running a command with the same configuration
and seed reproduces every numeric output byte for byte (timing fields
excluded).

Exit codes: 0 success, 2 usage error, 3 data/schema error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .errors import (DataSchemaError, DomainError, InvalidRegionError,
                     NumericalError, ParameterError)
from .estimators import EmConfig, fit_em, fit_laplace, fit_mcla, fit_npg
from .grid import SpatialGrid, bin_locations, build_grid
from .metrics import evaluate
from .point_process import PreferentialDataset, simulate_preferential
from .predictor import MhConfig, krige, predict_s, predict_s_mode, predict_y, sample_predictive
from .random_field import LatentField, Params

ESTIMATORS = ("npg", "mcla", "laplace", "mcem", "saem")
PREDICT_METHODS = ("mh", "kriging", "mode")

DEFAULT_THETA = {"mu": 4.0, "tau2": 0.1, "sigma2": 1.5, "phi": 0.15, "beta": 2.0}

SIMULATE_DEFAULTS = {
    "bounds": [0.0, 1.0, 0.0, 1.0],
    "grid": [50, 50],
    "theta": DEFAULT_THETA,
    "n": 100,
    "seed": 0,
    "out_dir": ".",
}

FIT_DEFAULTS = {
    "data": "dataset.csv",
    "bounds": [0.0, 1.0, 0.0, 1.0],
    "grid": [15, 15],
    "mask": None,
    "estimator": "mcem",
    "seed": 0,
    "out_dir": ".",
    "init": None,
    "fix_phi": None,
    "m": 100,
    "maxfev": 4000,
    "compute_se": False,
    "em": {"W": 400, "c": 0.25, "L": 20, "tol": 1e-3, "burn_in": 100,
           "block_size": 10, "adapt": True, "proposal_sd": None},
}

PREDICT_DEFAULTS = {
    "data": "dataset.csv",
    "bounds": [0.0, 1.0, 0.0, 1.0],
    "grid": [30, 30],
    "mask": None,
    "theta": None,
    "report": None,
    "method": "mh",
    "mh": {"iterations": 300, "burn_in": 100, "block_size": 10,
           "adapt": True, "proposal_sd": None},
    "seed": 0,
    "out_dir": ".",
    "pgm": False,
}

EVALUATE_DEFAULTS = {
    "estimate": "s_surface.csv",
    "truth": "true_field.csv",
    "out_dir": ".",
}

REPRODUCE_DEFAULTS = {
    "study": "table2",
    "replicates": None,          # per-study default when None
    "workers": None,             # None -> cpu count
    "seed": 0,
    "out_dir": ".",
    "theta": DEFAULT_THETA,
    "n": 100,
    # table2 / estimator-comparison protocol knobs
    "sim_grid": [30, 30],
    "pred_grid": [15, 15],
    "betas": [0.0, 1.0, 2.0],
    "mh": {"iterations": 300, "burn_in": 100, "block_size": 10,
           "adapt": True, "proposal_sd": None},
    # table1 knobs
    "grids": [[15, 15], [30, 30]],
    "block_sizes": [1, 5, 10],
    "iterations": 1000,
    # estimator-comparison knobs
    "estimators": ["mcla", "laplace", "mcem", "saem"],
    "fit_grid": [15, 15],
    "fix_phi": 0.15,
    "em": {"W": 150, "c": 0.25, "L": 20, "tol": 1e-3, "burn_in": 100,
           "block_size": 10, "adapt": True, "proposal_sd": None},
    "m": 100,
}


class UsageError(ValueError):
    pass


def _resolve(defaults: dict, config_path: str | None, overrides: dict) -> dict:
    cfg = json.loads(json.dumps(defaults))  # deep copy
    if config_path:
        try:
            with open(config_path) as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise DataSchemaError(f"config file not found: {config_path}")
        except json.JSONDecodeError as exc:
            raise DataSchemaError(f"config {config_path}: invalid JSON: {exc}")
        for key, value in user.items():
            if isinstance(value, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    return cfg


def _meta(cfg: dict) -> dict:
    return {"config_hash": io.config_hash(cfg), "seed": cfg.get("seed")}


def _theta_from_cfg(d: dict) -> Params:
    return Params.from_dict(d)


def _grid_from_cfg(cfg: dict, key: str = "grid") -> SpatialGrid:
    nx, ny = (int(v) for v in cfg[key])
    include = None
    if cfg.get("mask"):
        include = io.read_mask_csv(cfg["mask"], nx * ny)
    return build_grid(tuple(float(b) for b in cfg["bounds"]), nx, ny,
                      include=include)


def _load_dataset(cfg: dict, grid: SpatialGrid) -> PreferentialDataset:
    locations, y = io.read_dataset_csv(cfg["data"])
    return PreferentialDataset.from_locations(grid, locations, y)


def _em_config(cfg: dict) -> EmConfig:
    em = cfg["em"]
    mh = MhConfig(iterations=max(1000, int(em["burn_in"]) + 1),
                  burn_in=int(em["burn_in"]),
                  block_size=int(em["block_size"]),
                  proposal_sd=em.get("proposal_sd"),
                  adapt=bool(em.get("adapt", True)))
    return EmConfig(W=int(em["W"]), c=float(em["c"]), L=int(em["L"]),
                    mh=mh, tol=float(em["tol"]), fix_phi=cfg.get("fix_phi"))


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(cfg: dict) -> int:
    out = io.ensure_dir(cfg["out_dir"])
    meta = _meta(cfg)
    grid = _grid_from_cfg(cfg)
    theta = _theta_from_cfg(cfg["theta"])
    if theta.beta is None:
        raise ParameterError("simulate requires theta.beta (use 0.0)")
    sim = simulate_preferential(grid, theta, int(cfg["n"]), int(cfg["seed"]))
    io.write_dataset_csv(out / "dataset.csv", sim.locations, sim.y, meta)
    io.write_surface_csv(out / "true_field.csv", grid, sim.field.values, meta,
                         value_name="s")
    io.write_json(out / "run.json", {"command": "simulate", "config": cfg},
                  meta)
    print(f"simulate: wrote {out / 'dataset.csv'} (n={cfg['n']}) and "
          f"{out / 'true_field.csv'} (N={grid.n_cells})")
    return 0


def cmd_fit(cfg: dict) -> int:
    estimator = cfg["estimator"]
    if estimator not in ESTIMATORS:
        raise UsageError(f"unknown estimator {estimator!r}; "
                         f"choose from {', '.join(ESTIMATORS)}")
    out = io.ensure_dir(cfg["out_dir"])
    meta = _meta(cfg)
    grid = _grid_from_cfg(cfg)
    data = _load_dataset(cfg, grid)
    init = _theta_from_cfg(cfg["init"]) if cfg.get("init") else None
    seed = int(cfg["seed"])
    if estimator == "npg":
        report = fit_npg(data, init=init, maxfev=int(cfg["maxfev"]),
                         fix_phi=cfg.get("fix_phi"))
    elif estimator == "mcla":
        report = fit_mcla(data, grid, m=int(cfg["m"]), init=init, seed=seed,
                          fix_phi=cfg.get("fix_phi"),
                          maxfev=int(cfg["maxfev"]))
    elif estimator == "laplace":
        report = fit_laplace(data, grid, init=init,
                             fix_phi=cfg.get("fix_phi"),
                             maxfev=int(cfg["maxfev"]),
                             compute_se=bool(cfg.get("compute_se")))
    else:
        report = fit_em(data, grid, init=init, cfg=_em_config(cfg),
                        seed=seed, variant=estimator,
                        compute_se=bool(cfg.get("compute_se")))
    io.write_json(out / "report.json", report.to_dict(), meta)
    io.write_trace_csv(out / "trace.csv", report.trace, meta)
    theta = report.theta_hat
    print(f"fit[{estimator}]: mu={theta.mu:.4g} tau2={theta.tau2:.4g} "
          f"sigma2={theta.sigma2:.4g} phi={theta.phi:.4g} "
          f"beta={'-' if theta.beta is None else f'{theta.beta:.4g}'} "
          f"converged={report.converged} ({len(report.trace)} rows)")
    return 0


def cmd_predict(cfg: dict) -> int:
    method = cfg["method"]
    if method not in PREDICT_METHODS:
        raise UsageError(f"unknown method {method!r}; "
                         f"choose from {', '.join(PREDICT_METHODS)}")
    out = io.ensure_dir(cfg["out_dir"])
    meta = _meta(cfg)
    grid = _grid_from_cfg(cfg)
    data = _load_dataset(cfg, grid)
    if cfg.get("report"):
        report = io.read_json(cfg["report"])
        theta = Params.from_dict(report["theta_hat"])
    elif cfg.get("theta"):
        theta = _theta_from_cfg(cfg["theta"])
    else:
        raise UsageError("predict needs either 'theta' or 'report' in config")
    seed = int(cfg["seed"])

    if method == "kriging":
        if theta.beta is not None:
            print("warning: kriging ignores the sampling design but beta is "
                  "present in theta", file=sys.stderr)
        mean, var = krige(data, theta, grid.centroids)
        s_values = mean - theta.mu
        y_values = mean
        io.write_surface_csv(out / "y_variance.csv", grid, var, meta,
                             value_name="variance")
    elif method == "mode":
        if theta.beta is None:
            raise ParameterError("mode prediction requires beta in theta")
        s_field = predict_s_mode(theta, data, grid)
        s_values = s_field.values
        y_values = predict_y(s_field, theta.mu)
    else:
        if theta.beta is None:
            raise ParameterError("MH prediction requires beta in theta")
        mh = cfg["mh"]
        chain = sample_predictive(
            data, grid, theta,
            MhConfig(iterations=int(mh["iterations"]),
                     burn_in=int(mh["burn_in"]),
                     block_size=int(mh["block_size"]),
                     proposal_sd=mh.get("proposal_sd"),
                     adapt=bool(mh.get("adapt", True)), seed=seed))
        s_field = predict_s(chain, int(mh["burn_in"]))
        s_values = s_field.values
        y_values = predict_y(s_field, theta.mu)
        io.write_chain_csv(out / "chain.csv", chain, meta)
        for w in chain.warnings:
            print(f"warning: {w}", file=sys.stderr)
    io.write_surface_csv(out / "s_surface.csv", grid, s_values, meta,
                         value_name="s")
    io.write_surface_csv(out / "y_surface.csv", grid, y_values, meta,
                         value_name="y")
    if cfg.get("pgm"):
        io.write_field_pgm(out / "s_surface.pgm", grid, s_values, meta)
        io.write_field_pgm(out / "y_surface.pgm", grid, y_values, meta)
    print(f"predict[{method}]: wrote surfaces over {grid.n_cells} cells to {out}")
    return 0


def cmd_evaluate(cfg: dict) -> int:
    out = io.ensure_dir(cfg["out_dir"])
    meta = _meta(cfg)
    est = io.read_surface_csv(cfg["estimate"])
    truth = io.read_surface_csv(cfg["truth"])
    result = evaluate(est, truth)
    io.write_json(out / "eval.json", {"rows": [result.to_dict()]}, meta)
    print(f"evaluate: mae={result.mae:.6g} rmse={result.rmse:.6g} "
          f"n_cells={result.n_cells}")
    return 0


# --- reproduce studies ------------------------------------------------------

def _bin_true_field_to(pred_grid: SpatialGrid, sim_grid: SpatialGrid,
                       field: np.ndarray) -> np.ndarray:
    """True field at the prediction grid's centroids, read off the
    simulation grid by cell lookup."""
    cells = bin_locations(sim_grid, pred_grid.centroids).cell_of
    return field[cells]


def _table2_replicate(args: dict) -> dict:
    beta = args["beta"]
    seed = args["seed"]
    theta = Params.from_dict({**args["theta"], "beta": beta})
    sim_grid = build_grid(tuple(args["bounds"]), *args["sim_grid"])
    pred_grid = build_grid(tuple(args["bounds"]), *args["pred_grid"])
    sim = simulate_preferential(sim_grid, theta, args["n"], seed)
    data = PreferentialDataset.from_locations(pred_grid, sim.locations, sim.y)
    s_true = _bin_true_field_to(pred_grid, sim_grid, sim.field.values)
    mh = args["mh"]
    chain = sample_predictive(
        data, pred_grid, theta,
        MhConfig(iterations=int(mh["iterations"]), burn_in=int(mh["burn_in"]),
                 block_size=int(mh["block_size"]),
                 proposal_sd=mh.get("proposal_sd"),
                 adapt=bool(mh.get("adapt", True)), seed=seed))
    s_mh = predict_s(chain, int(mh["burn_in"])).values
    krige_mean, _ = krige(data, theta.replace(beta=None), pred_grid.centroids)
    s_krige = krige_mean - theta.mu
    res_mh = evaluate(s_mh, s_true)
    res_kr = evaluate(s_krige, s_true)
    return {"beta": beta, "seed": seed,
            "mh_mae": res_mh.mae, "mh_rmse": res_mh.rmse,
            "krige_mae": res_kr.mae, "krige_rmse": res_kr.rmse}


def _comparison_replicate(args: dict) -> dict:
    seed = args["seed"]
    theta = Params.from_dict(args["theta"])
    sim_grid = build_grid(tuple(args["bounds"]), *args["sim_grid"])
    fit_grid = build_grid(tuple(args["bounds"]), *args["fit_grid"])
    sim = simulate_preferential(sim_grid, theta, args["n"], seed)
    data = PreferentialDataset.from_locations(fit_grid, sim.locations, sim.y)
    out: dict = {"seed": seed}
    em_cfg_d = {"em": args["em"], "fix_phi": args["fix_phi"]}
    for est in args["estimators"]:
        try:
            if est == "npg":
                rep = fit_npg(data, compute_se=False)
            elif est == "mcla":
                rep = fit_mcla(data, fit_grid, m=args["m"], seed=seed)
            elif est == "laplace":
                rep = fit_laplace(data, fit_grid)
            else:
                rep = fit_em(data, fit_grid, cfg=_em_config(em_cfg_d),
                             seed=seed, variant=est)
            out[est] = rep.theta_hat.to_dict()
        except Exception as exc:  # keep other estimators' replicates
            out[est] = {"error": f"{type(exc).__name__}: {exc}"}
    return out


def _run_pool(fn, tasks: list, workers: int | None):
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _write_rows_csv(path, fieldnames: list[str], rows: list[dict],
                    meta: dict) -> None:
    import csv as _csv
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={meta['config_hash']} seed={meta['seed']}\n")
        writer = _csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (io.fmt(v) if isinstance(v, float) else v)
                             for k, v in row.items()})


def cmd_reproduce(cfg: dict) -> int:
    study = cfg["study"]
    out = io.ensure_dir(cfg["out_dir"])
    meta = _meta(cfg)
    base_seed = int(cfg["seed"])
    workers = cfg.get("workers")

    if study == "table2":
        reps = int(cfg["replicates"] or 10)
        tasks = [{"beta": float(b), "seed": base_seed + r,
                  "theta": cfg["theta"], "bounds": cfg["bounds"],
                  "sim_grid": cfg["sim_grid"], "pred_grid": cfg["pred_grid"],
                  "n": int(cfg["n"]), "mh": cfg["mh"]}
                 for b in cfg["betas"] for r in range(reps)]
        rows = _run_pool(_table2_replicate, tasks, workers)
        summary = []
        for b in cfg["betas"]:
            sub = [r for r in rows if r["beta"] == float(b)]
            summary.append({
                "beta": float(b), "replicates": len(sub),
                "mh_mae": float(np.mean([r["mh_mae"] for r in sub])),
                "krige_mae": float(np.mean([r["krige_mae"] for r in sub])),
                "mh_rmse": float(np.mean([r["mh_rmse"] for r in sub])),
                "krige_rmse": float(np.mean([r["krige_rmse"] for r in sub])),
            })
        _write_rows_csv(out / "table2.csv",
                        ["beta", "replicates", "mh_mae", "krige_mae",
                         "mh_rmse", "krige_rmse"], summary, meta)
        _write_rows_csv(out / "table2_replicates.csv",
                        list(rows[0].keys()), rows, meta)
        for row in summary:
            print(f"beta={row['beta']}: MH mae={row['mh_mae']:.3f} vs "
                  f"kriging mae={row['krige_mae']:.3f}")
        print(f"reproduce[table2]: wrote {out / 'table2.csv'}")
        return 0

    if study == "table1":
        rows = []
        theta = Params.from_dict(cfg["theta"])
        for gspec in cfg["grids"]:
            grid = build_grid(tuple(cfg["bounds"]), *[int(v) for v in gspec])
            sim = simulate_preferential(grid, theta, int(cfg["n"]), base_seed)
            data = PreferentialDataset.from_locations(grid, sim.locations, sim.y)
            for bs in cfg["block_sizes"]:
                mh = MhConfig(iterations=int(cfg["iterations"]),
                              burn_in=min(100, int(cfg["iterations"]) - 1),
                              block_size=int(bs), seed=base_seed)
                t0 = time.perf_counter()
                sample_predictive(data, grid, theta, mh)
                secs = time.perf_counter() - t0
                rows.append({"grid_cells": grid.n_cells, "block_size": int(bs),
                             "seconds": secs})
                print(f"grid {grid.n_cells} block {bs}: {secs:.2f} s")
        _write_rows_csv(out / "table1.csv",
                        ["grid_cells", "block_size", "seconds"], rows, meta)
        print(f"reproduce[table1]: wrote {out / 'table1.csv'}")
        return 0

    if study == "estimator-comparison":
        reps = int(cfg["replicates"] or 20)
        tasks = [{"seed": base_seed + r, "theta": cfg["theta"],
                  "bounds": cfg["bounds"], "sim_grid": cfg["sim_grid"],
                  "fit_grid": cfg["fit_grid"], "n": int(cfg["n"]),
                  "estimators": cfg["estimators"], "em": cfg["em"],
                  "fix_phi": cfg.get("fix_phi"), "m": int(cfg["m"])}
                 for r in range(reps)]
        rows = _run_pool(_comparison_replicate, tasks, workers)
        qs = [0.1, 0.25, 0.5, 0.75, 0.9]
        summary = []
        for est in cfg["estimators"]:
            ok = [r[est] for r in rows if "error" not in r[est]]
            for param in ("mu", "tau2", "sigma2", "phi", "beta"):
                vals = [d[param] for d in ok if d.get(param) is not None]
                if not vals:
                    continue
                qv = np.quantile(vals, qs)
                summary.append({"estimator": est, "param": param,
                                "n_ok": len(vals),
                                **{f"q{int(q * 100)}": float(v)
                                   for q, v in zip(qs, qv)},
                                "mean": float(np.mean(vals))})
        _write_rows_csv(out / "estimator_comparison.csv",
                        ["estimator", "param", "n_ok", "q10", "q25", "q50",
                         "q75", "q90", "mean"], summary, meta)
        with open(out / "estimator_comparison_replicates.json", "w") as fh:
            json.dump({"rows": rows, "_meta": meta}, fh, indent=2, sort_keys=True)
        for row in summary:
            if row["param"] in ("mu", "beta"):
                print(f"{row['estimator']:8s} {row['param']:6s} "
                      f"median={row['q50']:.3f}")
        print(f"reproduce[estimator-comparison]: wrote "
              f"{out / 'estimator_comparison.csv'}")
        return 0

    raise UsageError(f"unknown study {study!r}; choose from "
                     f"table1, table2, estimator-comparison")


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefgeo",
        description="Geostatistical inference under preferential sampling")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", dest="out_dir", default=None)

    p_sim = sub.add_parser("simulate", help="simulate a preferential dataset")
    common(p_sim)
    p_sim.add_argument("--grid", nargs=2, type=int, metavar=("NX", "NY"),
                       default=None)
    p_sim.add_argument("--n", type=int, default=None)

    p_fit = sub.add_parser("fit", help="fit a dataset by any estimator")
    common(p_fit)
    p_fit.add_argument("--data", default=None)
    p_fit.add_argument("--estimator", default=None)
    p_fit.add_argument("--grid", nargs=2, type=int, metavar=("NX", "NY"),
                       default=None)
    p_fit.add_argument("--mask", default=None)

    p_pred = sub.add_parser("predict", help="predict field/response surfaces")
    common(p_pred)
    p_pred.add_argument("--data", default=None)
    p_pred.add_argument("--method", default=None)
    p_pred.add_argument("--report", default=None)
    p_pred.add_argument("--grid", nargs=2, type=int, metavar=("NX", "NY"),
                        default=None)
    p_pred.add_argument("--mask", default=None)
    p_pred.add_argument("--pgm", action="store_true", default=None)

    p_eval = sub.add_parser("evaluate", help="MAE/RMSE of a surface estimate")
    common(p_eval)
    p_eval.add_argument("--estimate", default=None)
    p_eval.add_argument("--truth", default=None)

    p_rep = sub.add_parser("reproduce", help="run a scaled study end to end")
    common(p_rep)
    p_rep.add_argument("--study", default=None)
    p_rep.add_argument("--replicates", type=int, default=None)
    p_rep.add_argument("--workers", type=int, default=None)
    return parser


_COMMANDS = {
    "simulate": (SIMULATE_DEFAULTS, cmd_simulate,
                 ("seed", "out_dir", "grid", "n")),
    "fit": (FIT_DEFAULTS, cmd_fit,
            ("seed", "out_dir", "data", "estimator", "grid", "mask")),
    "predict": (PREDICT_DEFAULTS, cmd_predict,
                ("seed", "out_dir", "data", "method", "report", "grid",
                 "mask", "pgm")),
    "evaluate": (EVALUATE_DEFAULTS, cmd_evaluate,
                 ("seed", "out_dir", "estimate", "truth")),
    "reproduce": (REPRODUCE_DEFAULTS, cmd_reproduce,
                  ("seed", "out_dir", "study", "replicates", "workers")),
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    defaults, runner, override_keys = _COMMANDS[args.command]
    overrides = {k: getattr(args, k, None) for k in override_keys}
    try:
        cfg = _resolve(defaults, args.config, overrides)
        if "seed" in cfg and cfg["seed"] is None:
            cfg["seed"] = 0
        return runner(cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (DataSchemaError, DomainError, InvalidRegionError,
            ParameterError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
