"""Analysis pipeline orchestration and report generation.

``analyze`` runs parse -> clean -> (segment) -> metrics -> trend for every
battery found in an input directory and assembles per-battery reports plus
a condition matrix grouping results by (ambient temperature, discharge
current, cut-off voltage). Per-battery failures are isolated and reported,
never fatal to the run.

Outputs are deterministic: fixed ordering (sorted by series id), fixed
float formatting (shortest round-trip repr in machine documents, 6
significant digits in the text summary), and atomic file writes
(write-then-rename). Serialization only reads values already computed by
the pipeline.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .cleaning import CleaningAudit, CleaningPolicy, RemovedCycle, RetainedFlag, clean_history
from .cycledata import (
    BatteryHistory,
    OperatingConditions,
    Segment,
    parse_history,
    segment_history,
)
from .metrics import IntegrationRule, J_PER_WH, MetricsSeries, compute_series, pearson
from .trend import (
    DEFAULT_NO_TREND_THRESHOLD,
    DEFAULT_SIGNIFICANCE,
    FitResult,
    MKResult,
    TrendCall,
    mk_test,
    first_difference,
    ols_fit,
)

log = logging.getLogger(__name__)

MIN_TREND_POINTS = 4


class PlotKind(str, Enum):
    TRAJECTORY = "trajectory"
    FITTED_TREND = "fitted"
    RANGE = "range"
    FACTOR_COMPARISON = "comparison"


class Factor(str, Enum):
    TEMPERATURE = "temperature"
    CURRENT = "current"
    CUTOFF = "cutoff"


@dataclass(frozen=True)
class AnalysisConfig:
    integration: IntegrationRule = IntegrationRule.LEFT_RECT
    significance: float = DEFAULT_SIGNIFICANCE
    no_trend_threshold: float = DEFAULT_NO_TREND_THRESHOLD
    clean: bool = True
    cleaning: CleaningPolicy = field(default_factory=CleaningPolicy)
    # battery_id -> segments, overriding the metadata sidecar
    segment_overrides: dict[str, tuple[Segment, ...]] | None = None


@dataclass(frozen=True)
class BatteryReport:
    """Everything the pipeline derives for one battery (or one segment of a
    variable-condition battery)."""

    battery_id: str
    segment_label: str | None
    conditions: OperatingConditions
    series: MetricsSeries
    pcc_soe_soh: float
    mk_diff: MKResult
    linear_verdict: bool
    fit: FitResult
    removed_cycles: tuple[RemovedCycle, ...]
    retained_flags: tuple[RetainedFlag, ...]

    @property
    def series_id(self) -> str:
        if self.segment_label:
            return f"{self.battery_id}:{self.segment_label}"
        return self.battery_id

    @property
    def verdict_label(self) -> str:
        if self.mk_diff.classification is TrendCall.INCONCLUSIVE:
            return "inconclusive"
        return "linear" if self.linear_verdict else "nonlinear"


@dataclass(frozen=True)
class MatrixCellEntry:
    series_id: str
    n_cycles: int
    slope: float
    intercept: float
    soe_range: tuple[float, float]


@dataclass(frozen=True)
class ConditionCell:
    ambient_temp_C: float
    discharge_current_A: float
    cutoff_voltage_V: float
    entries: tuple[MatrixCellEntry, ...]


@dataclass(frozen=True)
class ConditionMatrix:
    cells: tuple[ConditionCell, ...]

    @property
    def n_entries(self) -> int:
        return sum(len(c.entries) for c in self.cells)


@dataclass(frozen=True)
class BatteryFailure:
    source: str
    error: str


@dataclass(frozen=True)
class AnalysisResult:
    reports: tuple[BatteryReport, ...]
    matrix: ConditionMatrix
    failures: tuple[BatteryFailure, ...]


def analyze_history(h: BatteryHistory, config: AnalysisConfig = AnalysisConfig()) -> list[BatteryReport]:
    """Run the per-battery pipeline on an already-parsed history.

    Returns one report for a constant-condition battery, or one per
    segment when segments are defined. Battery-level cleaning happens
    first; segment bounds refer to original cycle indices and simply cover
    whichever of their cycles survived it.
    """
    audit = CleaningAudit(battery_id=h.battery_id, removed=(), retained_flags=())
    if config.clean:
        h, audit = clean_history(h, config.cleaning, config.integration)

    overrides = (config.segment_overrides or {}).get(h.battery_id)
    segments = overrides if overrides is not None else h.segments

    if not segments:
        return [_report_for(h, None, h.cycles[0].conditions if h.cycles else None, audit, config)]

    reports = []
    for seg, sub in zip(segments, segment_history(h, segments)):
        seg_removed = tuple(
            r for r in audit.removed if seg.first_cycle <= r.cycle_index <= seg.last_cycle
        )
        seg_flags = tuple(
            r for r in audit.retained_flags if seg.first_cycle <= r.cycle_index <= seg.last_cycle
        )
        seg_audit = CleaningAudit(h.battery_id, seg_removed, seg_flags)
        reports.append(_report_for(sub, seg.label, seg.conditions, seg_audit, config))
    return reports


def _report_for(
    h: BatteryHistory,
    segment_label: str | None,
    conditions: OperatingConditions | None,
    audit: CleaningAudit,
    config: AnalysisConfig,
) -> BatteryReport:
    series = compute_series(h, config.integration)
    if len(series) < MIN_TREND_POINTS:
        raise ValueError(
            f"series too short for trend analysis ({len(series)} usable cycles, "
            f"need >= {MIN_TREND_POINTS})"
        )
    soe = series.soe
    try:
        pcc = pearson(soe, series.soh)
    except ValueError:
        pcc = math.nan

    mk = mk_test(
        first_difference(soe, source_id=h.battery_id).values,
        config.significance,
        config.no_trend_threshold,
    )
    fit = ols_fit(series.t, soe)
    if conditions is None:
        conditions = h.cycles[0].conditions
    return BatteryReport(
        battery_id=h.battery_id,
        segment_label=segment_label,
        conditions=conditions,
        series=series,
        pcc_soe_soh=pcc,
        mk_diff=mk,
        linear_verdict=mk.classification is TrendCall.NO_TREND,
        fit=fit,
        removed_cycles=audit.removed,
        retained_flags=audit.retained_flags,
    )


def build_matrix(reports) -> ConditionMatrix:
    """Group reports by operating-condition cell; every report lands in
    exactly one cell."""
    cells: dict[tuple[float, float, float], list[MatrixCellEntry]] = {}
    for rep in reports:
        entry = MatrixCellEntry(
            series_id=rep.series_id,
            n_cycles=len(rep.series),
            slope=rep.fit.slope,
            intercept=rep.fit.intercept,
            soe_range=rep.fit.soe_range,
        )
        cells.setdefault(rep.conditions.group_key(), []).append(entry)
    ordered = []
    for key in sorted(cells):
        entries = tuple(sorted(cells[key], key=lambda e: e.series_id))
        ordered.append(ConditionCell(key[0], key[1], key[2], entries))
    return ConditionMatrix(cells=tuple(ordered))


def discover_input_pairs(input_dir: str | Path) -> list[tuple[Path, Path]]:
    """Find (telemetry, metadata) pairs: ``X.csv`` + ``X.json`` by stem."""
    input_dir = Path(input_dir)
    if not input_dir.is_dir():
        raise FileNotFoundError(f"input directory not found: {input_dir}")
    pairs = []
    for csv_path in sorted(input_dir.glob("*.csv")):
        pairs.append((csv_path, csv_path.with_suffix(".json")))
    return pairs


def analyze(input_dir: str | Path, config: AnalysisConfig = AnalysisConfig()) -> AnalysisResult:
    """Analyze every telemetry/metadata pair in a directory.

    Raises on an empty or missing directory; anything that goes wrong for
    an individual battery becomes a failure entry instead of aborting the
    run. Output ordering is deterministic for fixed input and config.
    """
    pairs = discover_input_pairs(input_dir)
    if not pairs:
        raise FileNotFoundError(f"no telemetry documents (*.csv) in {input_dir}")

    reports: list[BatteryReport] = []
    failures: list[BatteryFailure] = []
    for telemetry, metadata in pairs:
        try:
            if not metadata.exists():
                raise FileNotFoundError(f"missing metadata sidecar {metadata.name}")
            history = parse_history(telemetry, metadata)
            reports.extend(analyze_history(history, config))
        except Exception as exc:
            log.warning("skipping %s: %s", telemetry.name, exc)
            failures.append(BatteryFailure(source=telemetry.name, error=str(exc)))

    reports.sort(key=lambda r: r.series_id)
    return AnalysisResult(
        reports=tuple(reports),
        matrix=build_matrix(reports),
        failures=tuple(failures),
    )


# --- serialization -----------------------------------------------------------

def _float_or_none(x: float):
    return None if math.isnan(x) else x


def conditions_to_dict(c: OperatingConditions) -> dict:
    return {
        "ambient_temp_C": c.ambient_temp_C,
        "discharge_current_A": c.discharge_current_A,
        "cutoff_voltage_V": c.cutoff_voltage_V,
        "charge_current_A": c.charge_current_A,
    }


def mk_to_dict(mk: MKResult) -> dict:
    return {
        "s": mk.s_stat,
        "var_s": mk.var_s,
        "z": mk.z,
        "p_value": mk.p_value,
        "n": mk.n,
        "tie_groups": [[v, c] for v, c in mk.tie_groups],
        "classification": mk.classification.value,
    }


def fit_to_dict(fit: FitResult) -> dict:
    return {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "n": fit.n,
        "soe_range": list(fit.soe_range),
    }


def report_to_dict(rep: BatteryReport) -> dict:
    """Machine document for one report; energies in watt-hours, floats at
    full precision."""
    pts = rep.series.points
    return {
        "battery_id": rep.battery_id,
        "segment": rep.segment_label,
        "series_id": rep.series_id,
        "conditions": conditions_to_dict(rep.conditions),
        "n_cycles": len(pts),
        "series": {
            "t": [p.t for p in pts],
            "cycle_index": [p.cycle_index for p in pts],
            "soe": [p.metrics.soe for p in pts],
            "soh": [p.metrics.soh for p in pts],
            "ce": [_float_or_none(p.metrics.ce) for p in pts],
            "e_charged_Wh": [p.metrics.e_charged_J / J_PER_WH for p in pts],
            "e_discharged_Wh": [p.metrics.e_discharged_J / J_PER_WH for p in pts],
            "e_dissipated_Wh": [p.metrics.e_dissipated_J / J_PER_WH for p in pts],
            "charge_capacity_Ah": [p.metrics.charge_capacity_Ah for p in pts],
            "discharge_capacity_Ah": [p.metrics.discharge_capacity_Ah for p in pts],
        },
        "pcc_soe_soh": _float_or_none(rep.pcc_soe_soh),
        "mann_kendall_diff": mk_to_dict(rep.mk_diff),
        "linear_trend": {**fit_to_dict(rep.fit), "verdict": rep.verdict_label},
        "removed_cycles": [
            {"cycle_index": r.cycle_index, "reasons": list(r.reasons)} for r in rep.removed_cycles
        ],
        "retained_flags": [
            {"cycle_index": r.cycle_index, "flag": r.flag} for r in rep.retained_flags
        ],
        "skipped_cycles": [
            {"cycle_index": s.cycle_index, "reason": s.reason} for s in rep.series.skipped
        ],
    }


def matrix_to_dict(matrix: ConditionMatrix) -> dict:
    return {
        "cells": [
            {
                "ambient_temp_C": cell.ambient_temp_C,
                "discharge_current_A": cell.discharge_current_A,
                "cutoff_voltage_V": cell.cutoff_voltage_V,
                "entries": [
                    {
                        "series_id": e.series_id,
                        "n_cycles": e.n_cycles,
                        "slope": e.slope,
                        "intercept": e.intercept,
                        "soe_range": list(e.soe_range),
                    }
                    for e in cell.entries
                ],
            }
            for cell in matrix.cells
        ],
        "n_entries": matrix.n_entries,
    }


_SUMMARY_COLUMNS = (
    "battery", "cycles", "pcc", "mk_p", "verdict", "slope", "intercept", "soe_range",
)


def summary_rows(reports) -> list[dict]:
    rows = []
    for rep in sorted(reports, key=lambda r: r.series_id):
        rows.append(
            {
                "battery": rep.series_id,
                "cycles": len(rep.series),
                "pcc": _float_or_none(rep.pcc_soe_soh),
                "mk_p": rep.mk_diff.p_value,
                "verdict": rep.verdict_label,
                "slope": rep.fit.slope,
                "intercept": rep.fit.intercept,
                "soe_range": list(rep.fit.soe_range),
            }
        )
    return rows


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def render_summary(reports) -> str:
    """Plain-text summary table, one row per analyzed battery/segment,
    ordered by id. Floats carry 6 significant digits."""
    rows = summary_rows(reports)
    table = [list(_SUMMARY_COLUMNS)]
    for row in rows:
        lo, hi = row["soe_range"]
        table.append(
            [
                row["battery"],
                str(row["cycles"]),
                _fmt(row["pcc"]),
                _fmt(row["mk_p"]),
                row["verdict"],
                _fmt(row["slope"]),
                _fmt(row["intercept"]),
                f"{_fmt(lo)}..{_fmt(hi)}",
            ]
        )
    widths = [max(len(r[i]) for r in table) for i in range(len(_SUMMARY_COLUMNS))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


# --- plot-ready exports ------------------------------------------------------

def sanitize_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "-", name)


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a temp file in the target directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _trajectory_rows(rep: BatteryReport) -> list[str]:
    return [
        f"{rep.series_id},{p.t},{p.metrics.soe!r}" for p in rep.series.points
    ]


def _fitted_rows(rep: BatteryReport) -> list[str]:
    return [
        f"{rep.series_id},{p.t},{rep.fit.value_at(p.t)!r}" for p in rep.series.points
    ]


_FACTOR_FIELD = {
    Factor.TEMPERATURE: "ambient_temp_C",
    Factor.CURRENT: "discharge_current_A",
    Factor.CUTOFF: "cutoff_voltage_V",
}


def export_plot_series(
    reports,
    kind: PlotKind,
    out_dir: str | Path,
    factor: Factor | None = None,
) -> list[Path]:
    """Emit delimited plot-ready series.

    TRAJECTORY and FITTED_TREND write one stacked file with header
    ``series_id,t,value``; RANGE writes ``series_id,low,high`` (one row per
    series, fitted span). FACTOR_COMPARISON writes one trajectory file per
    group of batteries that share the other two condition factors while
    differing on ``factor``; with no valid group it warns and writes a
    single header-only file.
    """
    if not reports:
        raise ValueError("no reports to export")
    out_dir = Path(out_dir)
    reports = sorted(reports, key=lambda r: r.series_id)
    written: list[Path] = []

    if kind is PlotKind.TRAJECTORY or kind is PlotKind.FITTED_TREND:
        rows_of = _trajectory_rows if kind is PlotKind.TRAJECTORY else _fitted_rows
        lines = ["series_id,t,value"]
        for rep in reports:
            lines.extend(rows_of(rep))
        path = out_dir / f"{kind.value}.csv"
        atomic_write_text(path, "\n".join(lines) + "\n")
        written.append(path)
        return written

    if kind is PlotKind.RANGE:
        lines = ["series_id,low,high"]
        for rep in reports:
            lo, hi = rep.fit.soe_range
            lines.append(f"{rep.series_id},{lo!r},{hi!r}")
        path = out_dir / "range.csv"
        atomic_write_text(path, "\n".join(lines) + "\n")
        written.append(path)
        return written

    if factor is None:
        raise ValueError("factor comparison requires a factor")
    varying = _FACTOR_FIELD[factor]
    fixed = [f for f in _FACTOR_FIELD.values() if f != varying]
    groups: dict[tuple[float, float], list[BatteryReport]] = {}
    for rep in reports:
        key = tuple(getattr(rep.conditions, f) for f in fixed)
        groups.setdefault(key, []).append(rep)

    valid = {
        key: grp
        for key, grp in groups.items()
        if len({getattr(r.conditions, varying) for r in grp}) >= 2
    }
    if not valid:
        log.warning("no group varies %s while fixing %s", factor.value, fixed)
        path = out_dir / f"comparison_{factor.value}.csv"
        atomic_write_text(path, "series_id,t,value\n")
        return [path]

    for key in sorted(valid):
        grp = valid[key]
        desc = "_".join(f"{f}={_fmt(v)}" for f, v in zip(fixed, key))
        lines = ["series_id,t,value"]
        for rep in grp:
            lines.extend(_trajectory_rows(rep))
        path = out_dir / sanitize_name(f"comparison_{factor.value}__{desc}.csv")
        atomic_write_text(path, "\n".join(lines) + "\n")
        written.append(path)
    return written


def write_analysis(result: AnalysisResult, out_dir: str | Path) -> list[Path]:
    """Write the full analysis bundle: per-report JSON documents, the
    condition matrix, the text summary and a failure list if any."""
    out_dir = Path(out_dir)
    written = []
    for rep in result.reports:
        path = out_dir / "reports" / f"{sanitize_name(rep.series_id)}.json"
        atomic_write_text(path, json.dumps(report_to_dict(rep), indent=2, sort_keys=True) + "\n")
        written.append(path)
    matrix_path = out_dir / "matrix.json"
    atomic_write_text(
        matrix_path, json.dumps(matrix_to_dict(result.matrix), indent=2, sort_keys=True) + "\n"
    )
    written.append(matrix_path)
    summary_path = out_dir / "summary.txt"
    atomic_write_text(summary_path, render_summary(result.reports))
    written.append(summary_path)
    if result.failures:
        failures_path = out_dir / "failures.json"
        atomic_write_text(
            failures_path,
            json.dumps(
                [{"source": f.source, "error": f.error} for f in result.failures],
                indent=2,
                sort_keys=True,
            )
            + "\n",
        )
        written.append(failures_path)
    return written
