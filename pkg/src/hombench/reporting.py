"""Run reports (versioned JSON) and plot-ready CSV tables.

A report is self-contained: it embeds the full config snapshot plus the
seed, so re-running the tool with those reproduces the counts exactly.
JSON is written with sorted keys and a fixed indent; apart from the
`wall_seconds` field the bytes are a pure function of config, seed, and
code version. CSV output is locale-independent ('.' decimal separator,
',' field separator) with one stable column schema for point data:

    delay_ps,gates,singles_a,singles_b,coincidences[,mean,stddev]

where the two optional columns carry per-point statistics across repeated
scans (mean and sample standard deviation of the coincidence counts; the
count columns then hold totals across repeats).
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Mapping, Sequence

from ._version import __version__
from .configio import config_to_schema_dict
from .fitting import FitResult
from .model import ExperimentConfig
from .simulate import ScanPoint

SCHEMA_VERSION = 1
TOOL_NAME = "hombench"

POINT_COLUMNS = ("delay_ps", "gates", "singles_a", "singles_b", "coincidences")
REPEAT_COLUMNS = POINT_COLUMNS + ("mean", "stddev")


def fit_to_dict(fit: FitResult) -> dict[str, Any]:
    out: dict[str, Any] = {
        "baseline": fit.params.baseline,
        "visibility": fit.params.visibility,
        "sigma_ps": fit.params.sigma_ps,
        "std_errors": [float(e) for e in fit.std_errors],
        "covariance": [[float(v) for v in row] for row in fit.covariance],
        "chi_squared": fit.chi_squared,
        "dof": fit.dof,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "degenerate": fit.degenerate,
        "message": fit.message,
    }
    if fit.center_ps is not None:
        out["center_ps"] = fit.center_ps
    return out


def point_to_dict(point: ScanPoint) -> dict[str, Any]:
    return {
        "delay_ps": point.delay_ps,
        "gates": point.gates,
        "singles_a": point.singles_a,
        "singles_b": point.singles_b,
        "coincidences": point.coincidences,
    }


def build_report(
    kind: str,
    config: ExperimentConfig,
    seed: int | None,
    data: Mapping[str, Any],
    analytic: Mapping[str, Any] | None = None,
    wall_seconds: float = 0.0,
) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": TOOL_NAME, "version": __version__},
        "kind": kind,
        "seed": seed,
        "config": config_to_schema_dict(config),
        "analytic": dict(analytic) if analytic is not None else {},
        "data": dict(data),
        "wall_seconds": wall_seconds,
    }


def report_json(report: Mapping[str, Any]) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_report(report: Mapping[str, Any], path: str | Path) -> None:
    Path(path).write_text(report_json(report))


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite value in CSV output: {value!r}")
        return repr(value)
    return str(value)


def points_csv(
    points: Sequence[ScanPoint],
    repeat_stats: Sequence[tuple[float, float]] | None = None,
) -> str:
    """Render scan points in the stable point-data schema.

    `repeat_stats`, when given, must align with `points` and supplies the
    (mean, stddev) pair of per-repeat coincidence counts for each point.
    """
    if repeat_stats is not None and len(repeat_stats) != len(points):
        raise ValueError("repeat_stats length must match points")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPEAT_COLUMNS if repeat_stats is not None else POINT_COLUMNS)
    for i, pt in enumerate(points):
        row = [
            _fmt(pt.delay_ps),
            _fmt(pt.gates),
            _fmt(pt.singles_a),
            _fmt(pt.singles_b),
            _fmt(pt.coincidences),
        ]
        if repeat_stats is not None:
            mean, stddev = repeat_stats[i]
            row += [_fmt(float(mean)), _fmt(float(stddev))]
        writer.writerow(row)
    return buf.getvalue()


def read_points_csv(path: str | Path) -> list[ScanPoint]:
    """Read point data back; accepts the 5- or 7-column schema.

    Used by the `fit` subcommand, so external data only needs the five
    required columns (extras beyond the schema are rejected to catch
    header typos).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty CSV")
        missing = [c for c in POINT_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ValueError(f"{path}: missing columns: {', '.join(missing)}")
        extra = [c for c in reader.fieldnames if c not in REPEAT_COLUMNS]
        if extra:
            raise ValueError(f"{path}: unknown columns: {', '.join(extra)}")
        points = []
        for line, row in enumerate(reader, start=2):
            try:
                points.append(
                    ScanPoint(
                        delay_ps=float(row["delay_ps"]),
                        gates=int(float(row["gates"])),
                        coincidences=int(float(row["coincidences"])),
                        singles_a=int(float(row["singles_a"])),
                        singles_b=int(float(row["singles_b"])),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: bad row at line {line}: {exc}") from exc
    if not points:
        raise ValueError(f"{path}: no data rows")
    return points


def two_column_csv(header: tuple[str, str], rows: Sequence[tuple[Any, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for key, value in rows:
        writer.writerow([str(key), _fmt(value)])
    return buf.getvalue()


def sweep_csv(rows: Sequence[Mapping[str, Any]]) -> str:
    """Summary table of a pair-rate sweep, one row per operating point.

    Rows whose fit failed leave the estimate columns empty; the analytic
    prediction column is always present for overlay plots.
    """
    columns = (
        "pairs_per_pulse",
        "visibility_fit",
        "visibility_err",
        "sigma_fit_ps",
        "sigma_err_ps",
        "visibility_predicted",
        "converged",
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(
            ["" if row.get(c) is None else _fmt(row[c]) for c in columns]
        )
    return buf.getvalue()


def car_offsets_csv(matched: int, unmatched: Sequence[int]) -> str:
    """Slot histogram: offset 0 is the same-gate (matched) count."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("offset_gates", "coincidences"))
    writer.writerow(("0", str(matched)))
    for k, count in enumerate(unmatched, start=1):
        writer.writerow((str(k), str(count)))
    return buf.getvalue()
