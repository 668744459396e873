"""Per-cycle energies, efficiencies, capacities and their series.

Energy of a phase is the accumulated product of terminal voltage and
current over the sampled timestamps; capacity is the accumulated current.
The per-cycle energy efficiency (SOE) is discharged energy over charged
energy, coulombic efficiency (CE) is discharge capacity over charge
capacity, and state of health (SOH) is discharge capacity over rated
capacity.

Internal energy unit is joules; report serialization converts to
watt-hours. Timestamps are used as recorded: no resampling, the interval
between consecutive samples is taken directly from the data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cycledata import BatteryHistory, CycleRecord, PhaseTrace

J_PER_WH = 3600.0
C_PER_AH = 3600.0


class IntegrationRule(str, Enum):
    """Discrete accumulation rule for sampled signals.

    LEFT_RECT holds each sample's value over the following interval
    (sum of y_i * (t_{i+1} - t_i)); TRAPEZOID averages interval endpoints.
    LEFT_RECT is the default.
    """

    LEFT_RECT = "left"
    TRAPEZOID = "trapezoid"


def _accumulate(t: np.ndarray, y: np.ndarray, rule: IntegrationRule) -> float:
    dt = np.diff(t)
    if np.any(dt <= 0.0):
        raise ValueError("non-monotonic trace")
    if rule is IntegrationRule.LEFT_RECT:
        return float(np.dot(y[:-1], dt))
    return float(np.dot((y[:-1] + y[1:]) * 0.5, dt))


def integrate_power(trace: PhaseTrace, rule: IntegrationRule = IntegrationRule.LEFT_RECT) -> float:
    """Energy of one phase in joules from its sampled V*I power."""
    if len(trace) < 2:
        raise ValueError("degenerate trace")
    return _accumulate(trace.time_s, trace.voltage_V * trace.current_A, rule)


def integrate_charge(trace: PhaseTrace, rule: IntegrationRule = IntegrationRule.LEFT_RECT) -> float:
    """Charge throughput of one phase in ampere-hours."""
    if len(trace) < 2:
        raise ValueError("degenerate trace")
    return _accumulate(trace.time_s, trace.current_A, rule) / C_PER_AH


@dataclass(frozen=True)
class CycleMetrics:
    """All derived quantities of one cycle.

    ``e_dissipated_J`` is exactly ``e_charged_J - e_discharged_J``; the
    split between cycling losses and calendar losses is not observable
    from cycle telemetry and is not attempted.
    """

    e_charged_J: float
    e_discharged_J: float
    e_dissipated_J: float
    soe: float
    charge_capacity_Ah: float
    discharge_capacity_Ah: float
    ce: float
    soh: float


def compute_cycle_metrics(
    c: CycleRecord,
    rated_capacity_Ah: float,
    rule: IntegrationRule = IntegrationRule.LEFT_RECT,
) -> CycleMetrics:
    """Metrics of a single cycle.

    SOH uses the cycle's own discharge capacity as the maximum-capacity
    estimate (a per-cycle proxy; no capacity model is fitted).
    """
    e_charged = integrate_power(c.charge, rule)
    if e_charged == 0.0:
        raise ValueError("zero-energy charge phase")
    e_discharged = integrate_power(c.discharge, rule)
    q_charge = integrate_charge(c.charge, rule)
    q_discharge = integrate_charge(c.discharge, rule)
    return CycleMetrics(
        e_charged_J=e_charged,
        e_discharged_J=e_discharged,
        e_dissipated_J=e_charged - e_discharged,
        soe=e_discharged / e_charged,
        charge_capacity_Ah=q_charge,
        discharge_capacity_Ah=q_discharge,
        ce=q_discharge / q_charge if q_charge != 0.0 else math.nan,
        soh=q_discharge / rated_capacity_Ah,
    )


@dataclass(frozen=True)
class MetricsPoint:
    """One series point: position ``t`` (1-based over surviving cycles),
    the original acquisition index, and the cycle's metrics."""

    t: int
    cycle_index: int
    metrics: CycleMetrics


@dataclass(frozen=True)
class SkippedCycle:
    cycle_index: int
    reason: str


@dataclass(frozen=True)
class MetricsSeries:
    """Per-cycle metrics over a battery's (cleaned) history.

    ``t`` runs 1..len(points). Cycles whose metrics could not be computed
    are recorded in ``skipped`` and the remaining points renumbered, so
    ``t`` stays contiguous (skip-and-record policy).
    """

    battery_id: str
    points: tuple[MetricsPoint, ...]
    skipped: tuple[SkippedCycle, ...] = ()

    def __len__(self) -> int:
        return len(self.points)

    @property
    def t(self) -> np.ndarray:
        return np.array([p.t for p in self.points], dtype=float)

    def channel(self, name: str) -> np.ndarray:
        return np.array([getattr(p.metrics, name) for p in self.points], dtype=float)

    @property
    def soe(self) -> np.ndarray:
        return self.channel("soe")

    @property
    def soh(self) -> np.ndarray:
        return self.channel("soh")


def compute_series(
    h: BatteryHistory, rule: IntegrationRule = IntegrationRule.LEFT_RECT
) -> MetricsSeries:
    """Metrics for every cycle of a history, in order."""
    points: list[MetricsPoint] = []
    skipped: list[SkippedCycle] = []
    for rec in h.cycles:
        try:
            m = compute_cycle_metrics(rec, h.rated_capacity_Ah, rule)
        except ValueError as exc:
            skipped.append(SkippedCycle(cycle_index=rec.cycle_index, reason=str(exc)))
            continue
        points.append(MetricsPoint(t=len(points) + 1, cycle_index=rec.cycle_index, metrics=m))
    return MetricsSeries(battery_id=h.battery_id, points=tuple(points), skipped=tuple(skipped))


def pearson(x, y) -> float:
    """Pearson correlation coefficient of two equal-length series."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be equal-length 1-d series")
    if len(x) < 2:
        raise ValueError("need at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    if denom == 0.0:
        raise ValueError("undefined correlation")
    return float(np.dot(dx, dy)) / denom
