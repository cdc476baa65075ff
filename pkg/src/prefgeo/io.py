"""File formats: dataset/surface CSV, report JSON, PGM heatmaps.

Every output file carries the hash of the run configuration and the seed,
either as a leading ``#`` comment line (CSV, PGM) or a ``_meta`` object
(JSON). Floats are written with 17 significant digits so re-runs are
byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import DataSchemaError
from .grid import SpatialGrid

DATASET_COLUMNS = ["x", "y_coord", "response"]


def fmt(v: float) -> str:
    return f"{float(v):.17g}"


def config_hash(config: dict) -> str:
    """Short stable hash of a resolved run configuration."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _meta_line(meta: dict | None) -> str | None:
    if not meta:
        return None
    parts = " ".join(f"{k}={v}" for k, v in meta.items())
    return f"# {parts}"


def write_dataset_csv(path, locations: np.ndarray, y: np.ndarray,
                      meta: dict | None = None) -> None:
    locations = np.atleast_2d(locations)
    with open(path, "w", newline="") as fh:
        line = _meta_line(meta)
        if line:
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(DATASET_COLUMNS)
        for (px, py), resp in zip(locations, y):
            writer.writerow([fmt(px), fmt(py), fmt(resp)])


def read_dataset_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a dataset CSV with the strict header ``x,y_coord,response``.

    Leading ``#`` comment lines are skipped. Schema violations raise
    :class:`DataSchemaError` naming the 1-based line number.
    """
    locations = []
    responses = []
    with open(path, newline="") as fh:
        header_seen = False
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = next(csv.reader([line]))
            if not header_seen:
                if [f.strip() for f in fields] != DATASET_COLUMNS:
                    raise DataSchemaError(
                        f"{path}: line {lineno}: expected header "
                        f"{','.join(DATASET_COLUMNS)!r}, got {line!r}")
                header_seen = True
                continue
            if len(fields) != 3:
                raise DataSchemaError(
                    f"{path}: line {lineno}: expected 3 columns, got {len(fields)}")
            try:
                px, py, resp = (float(f) for f in fields)
            except ValueError:
                raise DataSchemaError(
                    f"{path}: line {lineno}: non-numeric value in {line!r}") from None
            locations.append((px, py))
            responses.append(resp)
        if not header_seen:
            raise DataSchemaError(f"{path}: empty file (no header)")
    if not locations:
        raise DataSchemaError(f"{path}: no data rows")
    return np.array(locations), np.array(responses)


def write_surface_csv(path, grid: SpatialGrid, values: np.ndarray,
                      meta: dict | None = None, value_name: str = "value") -> None:
    """Per-cell surface: columns cell, x, y, <value_name> in active order."""
    values = np.asarray(values, dtype=float)
    if values.size != grid.n_cells:
        raise ValueError("surface length does not match the grid")
    cents = grid.centroids
    with open(path, "w", newline="") as fh:
        line = _meta_line(meta)
        if line:
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["cell", "x", "y", value_name])
        for j in range(grid.n_cells):
            writer.writerow([j, fmt(cents[j, 0]), fmt(cents[j, 1]), fmt(values[j])])


def read_surface_csv(path) -> np.ndarray:
    """Read the value column of a surface CSV (last column)."""
    values = []
    with open(path, newline="") as fh:
        header_seen = False
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = next(csv.reader([line]))
            if not header_seen:
                header_seen = True
                continue
            try:
                values.append(float(fields[-1]))
            except (ValueError, IndexError):
                raise DataSchemaError(
                    f"{path}: line {lineno}: bad surface row {line!r}") from None
    if not values:
        raise DataSchemaError(f"{path}: no surface rows")
    return np.array(values)


def write_centroids_csv(path, grid: SpatialGrid, meta: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        line = _meta_line(meta)
        if line:
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["index", "x", "y"])
        for j, (cx, cy) in enumerate(grid.centroids):
            writer.writerow([j, fmt(cx), fmt(cy)])


def write_trace_csv(path, trace, meta: dict | None = None) -> None:
    """Fit trace: iteration, parameters and the objective proxy per row."""
    with open(path, "w", newline="") as fh:
        line = _meta_line(meta)
        if line:
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "mu", "tau2", "sigma2", "phi", "beta",
                         "objective_proxy"])
        for row in trace:
            th = row.theta
            writer.writerow([row.iteration, fmt(th.mu), fmt(th.tau2),
                             fmt(th.sigma2), fmt(th.phi),
                             "" if th.beta is None else fmt(th.beta),
                             fmt(row.objective)])


def write_chain_csv(path, chain, meta: dict | None = None) -> None:
    """Chain diagnostics: sweep, log-density, per-sweep acceptance fraction."""
    with open(path, "w", newline="") as fh:
        line = _meta_line(meta)
        if line:
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(["sweep", "logdensity", "acceptance"])
        for i in range(len(chain)):
            writer.writerow([i + 1, fmt(chain.log_density[i]),
                             fmt(chain.sweep_acceptance[i])])


def write_json(path, obj: dict, meta: dict | None = None) -> None:
    out = dict(obj)
    if meta:
        out["_meta"] = meta
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_field_pgm(path, grid: SpatialGrid, values: np.ndarray,
                    meta: dict | None = None) -> None:
    """8-bit binary PGM heatmap of a grid surface.

    Linear scaling min -> 0, max -> 255 (constant surfaces map to 0); the
    scaling bounds go to a ``<path>.json`` sidecar. Rows run from y_max
    down to y_min (image convention); masked-out cells render as 0.
    """
    values = np.asarray(values, dtype=float)
    if values.size != grid.n_cells:
        raise ValueError("surface length does not match the grid")
    vmin = float(values.min())
    vmax = float(values.max())
    scale = 255.0 / (vmax - vmin) if vmax > vmin else 0.0
    full = np.zeros(grid.nx * grid.ny)
    full[grid.full_index] = np.round((values - vmin) * scale)
    img = full.reshape(grid.ny, grid.nx)[::-1].astype(np.uint8)
    header = f"P5\n# {'' if not meta else ' '.join(f'{k}={v}' for k, v in meta.items())}\n{grid.nx} {grid.ny}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode())
        fh.write(img.tobytes())
    sidecar = {"min": vmin, "max": vmax, "nx": grid.nx, "ny": grid.ny,
               "scaling": "linear min->0 max->255, rows from y_max down"}
    if meta:
        sidecar.update(meta)
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_mask_csv(path, grid_cells: int) -> tuple[int, ...]:
    """Inclusion mask CSV with header ``cell,include`` over full-grid indices."""
    include = []
    with open(path, newline="") as fh:
        header_seen = False
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = next(csv.reader([line]))
            if not header_seen:
                if [f.strip() for f in fields] != ["cell", "include"]:
                    raise DataSchemaError(
                        f"{path}: line {lineno}: expected header 'cell,include'")
                header_seen = True
                continue
            try:
                cell, flag = int(fields[0]), int(fields[1])
            except (ValueError, IndexError):
                raise DataSchemaError(
                    f"{path}: line {lineno}: bad mask row {line!r}") from None
            if not 0 <= cell < grid_cells:
                raise DataSchemaError(
                    f"{path}: line {lineno}: cell {cell} outside 0..{grid_cells - 1}")
            if flag:
                include.append(cell)
    if not include:
        raise DataSchemaError(f"{path}: mask includes no cells")
    return tuple(sorted(set(include)))


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
