"""Cycle-level quality filtering for parsed battery histories.

Raw cycling records contain a break-in first cycle and occasional
abnormal cycles (aborted tests, logger glitches). The policy below removes
them before any trend analysis:

* the first cycle is always dropped (cell chemistry is not yet stable);
* empty or single-sample phases (nothing to integrate);
* non-monotonic timestamps inside a phase;
* incomplete discharge: the discharge never came within a configurable
  margin of the cut-off voltage, i.e. the test stopped early;
* nonphysical efficiency: per-cycle SOE outside (0, max_efficiency].

Cycles with SOE in (1, max_efficiency] are kept (fresh cells can briefly
exceed unity) but flagged ``efficiency-above-unity`` in the audit.

Every removal is recorded so downstream reports can account for each
original cycle. Thresholds are overridable; the defaults are documented
package behavior, not measured constants.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cycledata import BatteryHistory, CycleRecord
from .metrics import IntegrationRule, compute_cycle_metrics

FLAG_FIRST_CYCLE = "first-cycle"
FLAG_EMPTY_PHASE = "empty-phase"
FLAG_NON_MONOTONIC = "non-monotonic-time"
FLAG_INCOMPLETE_DISCHARGE = "incomplete-discharge"
FLAG_NONPHYSICAL_SOE = "nonphysical-efficiency"
FLAG_ABOVE_UNITY = "efficiency-above-unity"


@dataclass(frozen=True)
class CleaningPolicy:
    drop_first_cycle: bool = True
    drop_empty_phase: bool = True
    drop_non_monotonic_time: bool = True
    drop_incomplete_discharge: bool = True
    drop_nonphysical_efficiency: bool = True
    discharge_voltage_margin_V: float = 0.1
    max_efficiency: float = 1.02


@dataclass(frozen=True)
class RemovedCycle:
    cycle_index: int
    reasons: tuple[str, ...]


@dataclass(frozen=True)
class RetainedFlag:
    cycle_index: int
    flag: str


@dataclass(frozen=True)
class CleaningAudit:
    """What the policy did: cycles removed (with every matching reason)
    and noteworthy cycles that were kept."""

    battery_id: str
    removed: tuple[RemovedCycle, ...]
    retained_flags: tuple[RetainedFlag, ...]

    @property
    def removed_indices(self) -> tuple[int, ...]:
        return tuple(r.cycle_index for r in self.removed)


def _removal_reasons(
    rec: CycleRecord,
    rated_capacity_Ah: float,
    policy: CleaningPolicy,
    rule: IntegrationRule,
) -> tuple[list[str], list[str]]:
    """(reasons to drop, flags to record on a kept cycle)."""
    reasons: list[str] = []
    kept_flags: list[str] = []

    degenerate = len(rec.charge) < 2 or len(rec.discharge) < 2
    if policy.drop_empty_phase and degenerate:
        reasons.append(FLAG_EMPTY_PHASE)
    if policy.drop_non_monotonic_time and not (
        rec.charge.is_time_strictly_increasing and rec.discharge.is_time_strictly_increasing
    ):
        reasons.append(FLAG_NON_MONOTONIC)
    if (
        policy.drop_incomplete_discharge
        and len(rec.discharge)
        and float(np.min(rec.discharge.voltage_V))
        > rec.conditions.cutoff_voltage_V + policy.discharge_voltage_margin_V
    ):
        reasons.append(FLAG_INCOMPLETE_DISCHARGE)

    if policy.drop_nonphysical_efficiency and not reasons:
        try:
            soe = compute_cycle_metrics(rec, rated_capacity_Ah, rule).soe
        except ValueError:
            # uncomputable efficiency (e.g. zero charged energy) is as
            # unusable as an out-of-range one
            reasons.append(FLAG_NONPHYSICAL_SOE)
        else:
            if not 0.0 < soe <= policy.max_efficiency:
                reasons.append(FLAG_NONPHYSICAL_SOE)
            elif soe > 1.0:
                kept_flags.append(FLAG_ABOVE_UNITY)
    return reasons, kept_flags


def clean_history(
    h: BatteryHistory,
    policy: CleaningPolicy = CleaningPolicy(),
    rule: IntegrationRule = IntegrationRule.LEFT_RECT,
) -> tuple[BatteryHistory, CleaningAudit]:
    """Apply the policy; returns the surviving history and an audit.

    Surviving cycles keep their original ``cycle_index`` (acquisition
    order); series position 1..n is assigned when metrics are computed.
    Raises ``ValueError("no usable cycles")`` if nothing survives.
    """
    removed: list[RemovedCycle] = []
    retained_flags: list[RetainedFlag] = []
    survivors: list[CycleRecord] = []

    for pos, rec in enumerate(h.cycles):
        reasons, kept_flags = _removal_reasons(rec, h.rated_capacity_Ah, policy, rule)
        if policy.drop_first_cycle and pos == 0:
            reasons.insert(0, FLAG_FIRST_CYCLE)
        if reasons:
            removed.append(RemovedCycle(cycle_index=rec.cycle_index, reasons=tuple(reasons)))
            continue
        if kept_flags:
            retained_flags.extend(RetainedFlag(rec.cycle_index, f) for f in kept_flags)
            rec = rec.with_flags(*kept_flags)
        survivors.append(rec)

    if not survivors:
        raise ValueError("no usable cycles")

    cleaned = replace(h, cycles=tuple(survivors))
    audit = CleaningAudit(
        battery_id=h.battery_id,
        removed=tuple(removed),
        retained_flags=tuple(retained_flags),
    )
    return cleaned, audit
