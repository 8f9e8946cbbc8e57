"""Run artifacts: trace/fields CSV, JSON summary, SVG heatmaps, report.

All emitters are deterministic functions of their inputs: floats are
written with shortest round-trip ``repr`` and JSON keys are sorted, so
identical runs produce byte-identical trace files and two reports over
one run directory render identical text.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os

import numpy as np

from .errors import MissingArtifacts, ValidationError
from .geometry import SphereChartGrid
from .transport import hessian_metric, transport_map

SUMMARY_NAME = "run_summary.json"
TRACE_NAME = "trace.csv"
FIELDS_NAME = "fields.csv"
HEATMAP_NAME = "heatmap.svg"

TRACE_COLUMNS = ("t", "residual_inf", "grad_max", "lambda_max",
                 "min_eig_w", "newton_iters", "dt")


def _fmt(value):
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def axis_names(grid):
    if isinstance(grid, SphereChartGrid):
        return ["phi", "theta"]
    return [f"x{a}" for a in range(grid.dimension)]


# -- CSV emitters --------------------------------------------------------


def write_trace_csv(path, states):
    """One row per accepted continuation state."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRACE_COLUMNS)
        for s in states:
            writer.writerow([
                _fmt(s.t), _fmt(s.residual_inf), _fmt(s.grad_max),
                _fmt(s.lambda_max), _fmt(s.min_eig_w),
                _fmt(s.newton_iters), _fmt(s.dt)])


def field_table(potential):
    """Per-node map diagnostics: gradient length, curvature, w diagonal."""
    grid = potential.grid
    mf = transport_map(potential, check=False)
    wf = hessian_metric(potential, map_field=mf)
    n = grid.dimension
    coords = grid.coords.reshape(-1, n)
    table = {name: coords[:, a] for a, name in enumerate(axis_names(grid))}
    table["u"] = potential.values.reshape(-1)
    table["grad_norm"] = mf.disp_norm.reshape(-1)
    table["lambda"] = wf.max_eig.reshape(-1)
    diag = np.diagonal(wf.frame, axis1=-2, axis2=-1).reshape(-1, n)
    for a in range(n):
        table[f"w_diag{a}"] = diag[:, a]
    return table


def write_fields_csv(path, potential):
    table = field_table(potential)
    names = list(table)
    rows = np.stack([table[name] for name in names], axis=-1)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(names)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_slice_csvs(directory, potential, stem="heatmap_slice"):
    """Per-slice CSVs along the last axis for three-dimensional fields."""
    grid = potential.grid
    if grid.dimension != 3:
        raise ValidationError("slice export is for three-dimensional grids")
    table = field_table(potential)
    names = list(table)
    depth = grid.resolution[2]
    shaped = {k: np.asarray(v).reshape(grid.resolution)
              for k, v in table.items()}
    paths = []
    for k in range(depth):
        path = os.path.join(directory, f"{stem}{k}.csv")
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(names)
            flat = [shaped[name][:, :, k].reshape(-1) for name in names]
            for row in zip(*flat):
                writer.writerow([_fmt(v) for v in row])
        paths.append(path)
    return paths


# -- SVG heatmaps --------------------------------------------------------

# Eleven anchor colours of a perceptually uniform dark-to-light ramp,
# linearly interpolated.
_RAMP = np.array([
    (0.267, 0.005, 0.329), (0.283, 0.141, 0.458), (0.254, 0.265, 0.530),
    (0.207, 0.372, 0.553), (0.164, 0.471, 0.558), (0.128, 0.567, 0.551),
    (0.135, 0.659, 0.518), (0.267, 0.749, 0.441), (0.478, 0.821, 0.318),
    (0.741, 0.873, 0.150), (0.993, 0.906, 0.144)])


def _color(x):
    x = min(max(float(x), 0.0), 1.0) * (len(_RAMP) - 1)
    lo = int(np.floor(x))
    hi = min(lo + 1, len(_RAMP) - 1)
    w = x - lo
    rgb = (1.0 - w) * _RAMP[lo] + w * _RAMP[hi]
    return "#{:02x}{:02x}{:02x}".format(
        *(int(round(255 * c)) for c in rgb))


def _panel(values, title, x_off, cell, pad):
    n0, n1 = values.shape
    vmin = float(np.min(values))
    vmax = float(np.max(values))
    span = vmax - vmin
    parts = [f'<text x="{x_off}" y="{pad - 8}" font-family="monospace" '
             f'font-size="12">{title}  min={vmin:.6g}  max={vmax:.6g}'
             f'</text>']
    for i in range(n0):
        for j in range(n1):
            level = 0.5 if span == 0 else (values[i, j] - vmin) / span
            x = x_off + i * cell
            y = pad + (n1 - 1 - j) * cell
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_color(level)}"/>')
    return parts


def write_svg_heatmap(path, grid, panels):
    """Self-contained SVG with one colour panel per named 2D field."""
    if grid.dimension != 2:
        raise ValidationError("SVG heatmaps are for two-dimensional grids")
    panels = dict(panels)
    if not panels:
        raise ValidationError("no fields given to render")
    n0, n1 = grid.resolution
    cell = max(2, 384 // max(n0, n1))
    pad = 28
    gap = 16
    width = pad + len(panels) * (n0 * cell + gap)
    height = pad + n1 * cell + pad // 2
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    x_off = pad // 2
    for title, values in panels.items():
        values = np.asarray(values, dtype=float)
        if values.shape != (n0, n1):
            raise ValidationError(
                f"panel {title!r} shape {values.shape} does not match the "
                f"grid resolution {(n0, n1)}")
        parts.extend(_panel(values, title, x_off, cell, pad))
        x_off += n0 * cell + gap
    parts.append("</svg>")
    with open(path, "w") as handle:
        handle.write("\n".join(parts) + "\n")
    return path


# -- JSON summary --------------------------------------------------------


def _jsonable(value):
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return _jsonable(dataclasses.asdict(value))
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, float) and not np.isfinite(value):
        return repr(value)
    return value


def write_run_summary(directory, summary):
    summary = dict(summary)
    summary["schema"] = 1
    path = os.path.join(directory, SUMMARY_NAME)
    with open(path, "w") as handle:
        json.dump(_jsonable(summary), handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path


def read_run_summary(run_dir):
    path = os.path.join(run_dir, SUMMARY_NAME)
    if not os.path.exists(path):
        raise MissingArtifacts(f"no {SUMMARY_NAME} in {run_dir}")
    with open(path) as handle:
        return json.load(handle)


# -- human-readable report ----------------------------------------------


def _line(label, value):
    return f"{label:<26}{value}"


def render_report(run_dir):
    """Deterministic one-page summary of a finished run directory."""
    summary = read_run_summary(run_dir)
    lines = [f"run report  [schema {summary.get('schema')}]",
             _line("subcommand", summary.get("subcommand", "?")),
             _line("status", summary.get("status", "?")),
             _line("exit code", summary.get("exit_code", "?"))]
    grid = summary.get("grid")
    if grid:
        lines.append(_line("grid", f"{grid['kind']} resolution "
                                   f"{grid['resolution']}"))
    ledger = summary.get("ledger")
    if ledger:
        lines.append("constants ledger:")
        for key in ("dimension", "cbar", "grad_budget", "poly_c1",
                    "poly_c2", "poly_degree", "hessian_cap", "root_low",
                    "root_high", "split_valid"):
            lines.append(_line(f"  {key}", ledger.get(key)))
    trace = summary.get("trace")
    if trace:
        lines.append("trajectory extremes:")
        for key in ("length", "t_final", "lambda_max", "grad_max",
                    "residual_final", "min_eig_w"):
            lines.append(_line(f"  {key}", trace.get(key)))
    distances = summary.get("distances")
    if distances:
        lines.append("distances:")
        for key in sorted(distances):
            lines.append(_line(f"  {key}", distances[key]))
    verify = summary.get("verify")
    if verify:
        lines.append("verification:")
        for key in sorted(verify):
            lines.append(_line(f"  {key}", json.dumps(
                _jsonable(verify[key]), sort_keys=True)))
    guard = summary.get("guard")
    if guard:
        lines.append(_line("guard verdict", guard.get("verdict")))
        if guard.get("warning"):
            lines.append(
                "WARNING: curvature in the transitional band above the "
                "lower root")
        if not guard.get("precondition_met", True):
            lines.append("WARNING: guard preconditions unmet; verdict is "
                         "advisory only")
    error = summary.get("error")
    if error:
        lines.append(_line("error", f"{error.get('type')}: "
                                    f"{error.get('message')}"))
    certificate = summary.get("certificate")
    if certificate and certificate.get("granted"):
        lines.append("CERTIFICATE: Λ_max ≤ C₃+1")
    else:
        reason = (certificate or {}).get("reason") or \
            (error or {}).get("message") or "run did not complete"
        lines.append(f"NO CERTIFICATE: {reason}")
    return "\n".join(lines) + "\n"
