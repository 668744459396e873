"""HTTP service wrapping the analysis pipeline.

Clients ship telemetry/metadata documents inline (the same interchange
formats the CLI reads from disk: telemetry CSV text plus the metadata JSON
object) and get back the full analysis bundle. Endpoints mirror the CLI
subcommands, plus small utility routes for the trend statistics.

Run with ``soekit serve`` or ``uvicorn soekit.service:app``.
"""

from __future__ import annotations

import io
import json
import tempfile
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .cleaning import CleaningPolicy
from .cycledata import OperatingConditions, Segment, parse_history
from .metrics import IntegrationRule
from .report import (
    AnalysisConfig,
    AnalysisResult,
    BatteryFailure,
    Factor,
    PlotKind,
    analyze_history,
    build_matrix,
    export_plot_series,
    matrix_to_dict,
    render_summary,
    report_to_dict,
    summary_rows,
)
from .trend import mk_test, ols_fit


class ConditionsModel(BaseModel):
    ambient_temp_C: float
    discharge_current_A: float
    cutoff_voltage_V: float
    charge_current_A: float

    def to_conditions(self) -> OperatingConditions:
        return OperatingConditions(**self.model_dump())


class SegmentModel(BaseModel):
    label: str
    first_cycle: int
    last_cycle: int
    conditions: ConditionsModel
    exclude_cycles: list[int] = []

    def to_segment(self) -> Segment:
        return Segment(
            label=self.label,
            first_cycle=self.first_cycle,
            last_cycle=self.last_cycle,
            conditions=self.conditions.to_conditions(),
            exclude_cycles=tuple(self.exclude_cycles),
        )


class AnalysisConfigModel(BaseModel):
    integration: Literal["left", "trapezoid"] = "left"
    significance: float = Field(default=0.05, gt=0.0, lt=1.0)
    no_trend_threshold: float = Field(default=0.10, gt=0.0, lt=1.0)
    clean: bool = True
    segment_overrides: dict[str, list[SegmentModel]] | None = None

    def to_config(self) -> AnalysisConfig:
        overrides = None
        if self.segment_overrides is not None:
            overrides = {
                battery: tuple(s.to_segment() for s in segments)
                for battery, segments in self.segment_overrides.items()
            }
        return AnalysisConfig(
            integration=IntegrationRule(self.integration),
            significance=self.significance,
            no_trend_threshold=self.no_trend_threshold,
            clean=self.clean,
            cleaning=CleaningPolicy(),
            segment_overrides=overrides,
        )


class BatteryDocument(BaseModel):
    """One battery's interchange pair, shipped inline."""

    telemetry: str = Field(description="telemetry CSV text")
    metadata: dict = Field(description="metadata sidecar JSON object")


class AnalyzeRequest(BaseModel):
    batteries: list[BatteryDocument] = Field(min_length=1)
    config: AnalysisConfigModel = AnalysisConfigModel()


class SeriesModel(BaseModel):
    t: list[int]
    cycle_index: list[int]
    soe: list[float]
    soh: list[float]
    ce: list[float | None]
    e_charged_Wh: list[float]
    e_discharged_Wh: list[float]
    e_dissipated_Wh: list[float]
    charge_capacity_Ah: list[float]
    discharge_capacity_Ah: list[float]


class MKResultModel(BaseModel):
    s: int
    var_s: float
    z: float
    p_value: float
    n: int
    tie_groups: list[tuple[float, int]]
    classification: str


class LinearTrendModel(BaseModel):
    slope: float
    intercept: float
    n: int
    soe_range: tuple[float, float]
    verdict: str


class RemovedCycleModel(BaseModel):
    cycle_index: int
    reasons: list[str]


class RetainedFlagModel(BaseModel):
    cycle_index: int
    flag: str


class SkippedCycleModel(BaseModel):
    cycle_index: int
    reason: str


class ReportModel(BaseModel):
    battery_id: str
    segment: str | None
    series_id: str
    conditions: ConditionsModel
    n_cycles: int
    series: SeriesModel
    pcc_soe_soh: float | None
    mann_kendall_diff: MKResultModel
    linear_trend: LinearTrendModel
    removed_cycles: list[RemovedCycleModel]
    retained_flags: list[RetainedFlagModel]
    skipped_cycles: list[SkippedCycleModel]


class MatrixEntryModel(BaseModel):
    series_id: str
    n_cycles: int
    slope: float
    intercept: float
    soe_range: tuple[float, float]


class MatrixCellModel(BaseModel):
    ambient_temp_C: float
    discharge_current_A: float
    cutoff_voltage_V: float
    entries: list[MatrixEntryModel]


class MatrixModel(BaseModel):
    cells: list[MatrixCellModel]
    n_entries: int


class FailureModel(BaseModel):
    source: str
    error: str


class AnalyzeResponse(BaseModel):
    reports: list[ReportModel]
    matrix: MatrixModel
    failures: list[FailureModel]


class SummaryRowModel(BaseModel):
    battery: str
    cycles: int
    pcc: float | None
    mk_p: float
    verdict: str
    slope: float
    intercept: float
    soe_range: tuple[float, float]


class SummaryResponse(BaseModel):
    text: str
    rows: list[SummaryRowModel]
    failures: list[FailureModel]


class PlotDataRequest(AnalyzeRequest):
    kind: Literal["trajectory", "fitted", "range", "comparison"] = "trajectory"
    factor: Literal["temperature", "current", "cutoff"] | None = None


class PlotFile(BaseModel):
    name: str
    content: str


class PlotDataResponse(BaseModel):
    files: list[PlotFile]
    failures: list[FailureModel]


class SeriesRequest(BaseModel):
    values: list[float] = Field(min_length=3)
    significance: float = Field(default=0.05, gt=0.0, lt=1.0)
    no_trend_threshold: float = Field(default=0.10, gt=0.0, lt=1.0)


class FitRequest(BaseModel):
    values: list[float] = Field(min_length=2)
    t: list[float] | None = None


class FitResponse(BaseModel):
    slope: float
    intercept: float
    n: int
    soe_range: tuple[float, float]


class HealthResponse(BaseModel):
    status: str
    version: str


app = FastAPI(
    title="soekit",
    description="Battery energy-efficiency degradation analysis service",
    version=__version__,
)


def _run_analysis(req: AnalyzeRequest) -> AnalysisResult:
    config = req.config.to_config()
    reports = []
    failures = []
    for i, doc in enumerate(req.batteries):
        source = str(doc.metadata.get("battery_id", f"document {i}"))
        try:
            history = parse_history(
                io.StringIO(doc.telemetry), io.StringIO(json.dumps(doc.metadata))
            )
            reports.extend(analyze_history(history, config))
        except Exception as exc:
            failures.append(BatteryFailure(source=source, error=str(exc)))
    reports.sort(key=lambda r: r.series_id)
    return AnalysisResult(
        reports=tuple(reports), matrix=build_matrix(reports), failures=tuple(failures)
    )


def _failure_models(result: AnalysisResult) -> list[FailureModel]:
    return [FailureModel(source=f.source, error=f.error) for f in result.failures]


@app.get("/healthz", response_model=HealthResponse)
def healthz() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/analyze", response_model=AnalyzeResponse)
def analyze_endpoint(req: AnalyzeRequest) -> AnalyzeResponse:
    result = _run_analysis(req)
    if not result.reports and result.failures:
        raise HTTPException(
            status_code=422,
            detail=[{"source": f.source, "error": f.error} for f in result.failures],
        )
    return AnalyzeResponse(
        reports=[ReportModel(**report_to_dict(r)) for r in result.reports],
        matrix=MatrixModel(**matrix_to_dict(result.matrix)),
        failures=_failure_models(result),
    )


@app.post("/summary", response_model=SummaryResponse)
def summary_endpoint(req: AnalyzeRequest) -> SummaryResponse:
    result = _run_analysis(req)
    return SummaryResponse(
        text=render_summary(result.reports),
        rows=[SummaryRowModel(**row) for row in summary_rows(result.reports)],
        failures=_failure_models(result),
    )


@app.post("/plotdata", response_model=PlotDataResponse)
def plotdata_endpoint(req: PlotDataRequest) -> PlotDataResponse:
    kind = PlotKind(req.kind)
    factor = Factor(req.factor) if req.factor else None
    if kind is PlotKind.FACTOR_COMPARISON and factor is None:
        raise HTTPException(status_code=422, detail="comparison kind requires a factor")
    result = _run_analysis(req)
    if not result.reports:
        raise HTTPException(status_code=422, detail="no battery could be analyzed")
    with tempfile.TemporaryDirectory() as tmp:
        paths = export_plot_series(result.reports, kind, Path(tmp), factor)
        files = [PlotFile(name=p.name, content=p.read_text(encoding="utf-8")) for p in paths]
    return PlotDataResponse(files=files, failures=_failure_models(result))


@app.post("/trend/mann-kendall", response_model=MKResultModel)
def mk_endpoint(req: SeriesRequest) -> MKResultModel:
    try:
        result = mk_test(req.values, req.significance, req.no_trend_threshold)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    return MKResultModel(
        s=result.s_stat,
        var_s=result.var_s,
        z=result.z,
        p_value=result.p_value,
        n=result.n,
        tie_groups=list(result.tie_groups),
        classification=result.classification.value,
    )


@app.post("/trend/fit", response_model=FitResponse)
def fit_endpoint(req: FitRequest) -> FitResponse:
    t = req.t if req.t is not None else list(range(1, len(req.values) + 1))
    try:
        fit = ols_fit(t, req.values)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    return FitResponse(
        slope=fit.slope, intercept=fit.intercept, n=fit.n, soe_range=fit.soe_range
    )
