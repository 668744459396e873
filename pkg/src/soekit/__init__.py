"""soekit: per-cycle energy-efficiency analytics for lithium-ion cycling data."""

from .cleaning import CleaningAudit, CleaningPolicy, clean_history
from .cycledata import (
    BatteryHistory,
    BatteryMetadata,
    CycleRecord,
    OperatingConditions,
    Phase,
    PhaseTrace,
    Sample,
    Segment,
    TelemetryFormatError,
    load_metadata,
    parse_history,
    segment_history,
    write_history,
)
from .metrics import (
    CycleMetrics,
    IntegrationRule,
    MetricsSeries,
    compute_cycle_metrics,
    compute_series,
    integrate_charge,
    integrate_power,
    pearson,
)
from .report import (
    AnalysisConfig,
    AnalysisResult,
    BatteryReport,
    ConditionMatrix,
    Factor,
    PlotKind,
    analyze,
    analyze_history,
    export_plot_series,
    render_summary,
    write_analysis,
)
from .trend import (
    DiffSeries,
    FitResult,
    MKResult,
    TrendCall,
    first_difference,
    mk_test,
    ols_fit,
    verify_linearity,
)

__version__ = "0.1.0"

__all__ = [
    "AnalysisConfig",
    "AnalysisResult",
    "BatteryHistory",
    "BatteryMetadata",
    "BatteryReport",
    "CleaningAudit",
    "CleaningPolicy",
    "ConditionMatrix",
    "CycleMetrics",
    "CycleRecord",
    "DiffSeries",
    "Factor",
    "FitResult",
    "IntegrationRule",
    "MKResult",
    "MetricsSeries",
    "OperatingConditions",
    "Phase",
    "PhaseTrace",
    "PlotKind",
    "Sample",
    "Segment",
    "TelemetryFormatError",
    "TrendCall",
    "analyze",
    "analyze_history",
    "clean_history",
    "compute_cycle_metrics",
    "compute_series",
    "export_plot_series",
    "first_difference",
    "integrate_charge",
    "integrate_power",
    "load_metadata",
    "mk_test",
    "ols_fit",
    "parse_history",
    "pearson",
    "render_summary",
    "segment_history",
    "verify_linearity",
    "write_analysis",
    "write_history",
]
