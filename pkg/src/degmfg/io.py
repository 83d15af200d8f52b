"""Run-directory serialization: CSV field dumps and JSON summaries.

Field CSVs have the header ``x1,x2,value``, one row per grid node in
row-major order (x1 outer, x2 inner), values at 17 significant digits so a
round trip is bit-exact for doubles. A run directory is self-describing:
it contains the exact config used (config.json), the value path under u/,
the density path under m/, and a summary.json.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .config import RunConfig, config_to_dict, parse_config, serialize_config
from .errors import ConfigurationError
from .grid import DensityPath, Grid2D, ValuePath

_FMT = "%.17g"


def write_field_csv(path, grid: Grid2D, values: np.ndarray):
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise ConfigurationError("field shape %s does not match grid %s"
                                 % (values.shape, grid.shape))
    x1, x2 = grid.x1, grid.x2
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "value"])
        for i in range(grid.n1):
            for j in range(grid.n2):
                writer.writerow([_FMT % x1[i], _FMT % x2[j],
                                 _FMT % values[i, j]])


def read_field_csv(path):
    """Read a field CSV back into (Grid2D, values).

    The grid is reconstructed from the coordinate columns; spacing must be
    uniform per axis.
    """
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["x1", "x2", "value"]:
            raise ConfigurationError("%s: expected header x1,x2,value, got %r"
                                     % (path, header))
        rows = [(float(a), float(b), float(c)) for a, b, c in reader]
    if not rows:
        raise ConfigurationError("%s: no data rows" % path)
    arr = np.asarray(rows)
    x1 = np.unique(arr[:, 0])
    x2 = np.unique(arr[:, 1])
    n1, n2 = len(x1), len(x2)
    if n1 * n2 != len(rows):
        raise ConfigurationError("%s: rows do not form a full grid" % path)
    for ax in (x1, x2):
        steps = np.diff(ax)
        if len(steps) and not np.allclose(steps, steps[0], rtol=1e-12,
                                          atol=1e-12):
            raise ConfigurationError("%s: non-uniform grid spacing" % path)
    grid = Grid2D(float(x1[0]), float(x1[-1]), float(x2[0]), float(x2[-1]),
                  n1, n2)
    values = np.empty(grid.shape)
    i1 = np.searchsorted(x1, arr[:, 0])
    i2 = np.searchsorted(x2, arr[:, 1])
    values[i1, i2] = arr[:, 2]
    return grid, values


def _json_default(o):
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError("not JSON serializable: %r" % type(o))


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _write_path(dirname, grid, values_3d):
    os.makedirs(dirname, exist_ok=True)
    for k in range(values_3d.shape[0]):
        write_field_csv(os.path.join(dirname, "slice_%04d.csv" % k),
                        grid, values_3d[k])


def _read_path(dirname):
    names = sorted(n for n in os.listdir(dirname)
                   if n.startswith("slice_") and n.endswith(".csv"))
    if not names:
        raise ConfigurationError("%s: no slice CSVs found" % dirname)
    grid = None
    slices = []
    for name in names:
        g, v = read_field_csv(os.path.join(dirname, name))
        if grid is None:
            grid = g
        elif g != grid:
            raise ConfigurationError("%s: inconsistent grids across slices"
                                     % dirname)
        slices.append(v)
    return grid, np.stack(slices)


def save_run(run_dir, cfg: RunConfig, u_path: ValuePath, m_path: DensityPath,
             summary: dict):
    """Write a self-describing run directory: config, fields, summary."""
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w",
              encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))
    _write_path(os.path.join(run_dir, "u"), u_path.grid, u_path.values)
    _write_path(os.path.join(run_dir, "m"), m_path.grid, m_path.values)
    meta = dict(summary)
    meta.setdefault("grid", config_to_dict(cfg)["grid"])
    meta.setdefault("dt", u_path.dt)
    meta.setdefault("nt", u_path.nt)
    write_json(os.path.join(run_dir, "summary.json"), meta)


def load_run(run_dir):
    """Read a run directory back: (u_path, m_path, dynamics, coupling)."""
    cfg_path = os.path.join(run_dir, "config.json")
    if not os.path.exists(cfg_path):
        raise ConfigurationError("%s: missing config.json" % run_dir)
    with open(cfg_path, "r", encoding="utf-8") as fh:
        cfg = parse_config(fh.read())
    summary = read_json(os.path.join(run_dir, "summary.json"))
    dt = float(summary["dt"])
    gu, uv = _read_path(os.path.join(run_dir, "u"))
    gm, mv = _read_path(os.path.join(run_dir, "m"))
    if gu != gm:
        raise ConfigurationError("%s: u and m grids differ" % run_dir)
    u_path = ValuePath(gu, dt, uv)
    validate = bool(summary.get("validate_density", True))
    m_path = DensityPath(gm, dt, mv, validate_slices=validate)
    return u_path, m_path, cfg.make_dynamics(), cfg.make_coupling()
