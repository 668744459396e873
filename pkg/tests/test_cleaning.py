"""Cycle-level cleaning policy behavior."""

import numpy as np
import pytest

from soekit.cleaning import (
    FLAG_ABOVE_UNITY,
    FLAG_EMPTY_PHASE,
    FLAG_FIRST_CYCLE,
    FLAG_INCOMPLETE_DISCHARGE,
    FLAG_NON_MONOTONIC,
    FLAG_NONPHYSICAL_SOE,
    CleaningPolicy,
    clean_history,
)
from soekit.cycledata import BatteryHistory, CycleRecord, Phase, PhaseTrace
from soekit.metrics import compute_cycle_metrics

from synth import DEFAULT_CONDITIONS, ramp_trace, synth_cycle, synth_history


def history_of(cycles):
    return BatteryHistory("T01", 2.0, 3.7, cycles=tuple(cycles))


def test_first_cycle_always_dropped():
    h = synth_history(n_cycles=5, noise=0.0)
    cleaned, audit = clean_history(h)
    assert len(cleaned) == 4
    assert audit.removed_indices == (0,)
    assert audit.removed[0].reasons == (FLAG_FIRST_CYCLE,)


def test_incomplete_discharge_dropped():
    good = [synth_cycle(i) for i in range(3)]
    # discharge stops 0.3 V above the cut-off: more than the 0.1 V margin
    incomplete = synth_cycle(3)
    shallow = ramp_trace(Phase.DISCHARGE, 4.2, DEFAULT_CONDITIONS.cutoff_voltage_V + 0.3, 2.0)
    incomplete = CycleRecord(
        cycle_index=3, charge=incomplete.charge, discharge=shallow,
        conditions=incomplete.conditions,
    )
    cleaned, audit = clean_history(history_of(good + [incomplete]))
    assert 3 in audit.removed_indices
    removed = {r.cycle_index: r.reasons for r in audit.removed}
    assert FLAG_INCOMPLETE_DISCHARGE in removed[3]


def test_nonphysical_efficiency_dropped():
    cycles = [synth_cycle(i) for i in range(3)] + [synth_cycle(3, soe=1.2)]
    cleaned, audit = clean_history(history_of(cycles))
    removed = {r.cycle_index: r.reasons for r in audit.removed}
    assert FLAG_NONPHYSICAL_SOE in removed[3]


def test_above_unity_band_kept_but_flagged():
    cycles = [synth_cycle(i) for i in range(3)] + [synth_cycle(3, soe=1.01)]
    cleaned, audit = clean_history(history_of(cycles))
    assert 3 in cleaned.cycle_indices
    assert any(f.cycle_index == 3 and f.flag == FLAG_ABOVE_UNITY for f in audit.retained_flags)
    kept = next(c for c in cleaned.cycles if c.cycle_index == 3)
    assert FLAG_ABOVE_UNITY in kept.flags


def test_empty_phase_dropped():
    empty = PhaseTrace(Phase.DISCHARGE, np.array([]), np.array([]), np.array([]))
    bad = CycleRecord(
        cycle_index=2, charge=synth_cycle(2).charge, discharge=empty,
        conditions=DEFAULT_CONDITIONS,
    )
    cycles = [synth_cycle(0), synth_cycle(1), bad, synth_cycle(3)]
    cleaned, audit = clean_history(history_of(cycles))
    removed = {r.cycle_index: r.reasons for r in audit.removed}
    assert FLAG_EMPTY_PHASE in removed[2]


def test_non_monotonic_time_dropped():
    tr = synth_cycle(2).charge
    t = tr.time_s.copy()
    t[3] = t[1]  # duplicate timestamp: not strictly increasing
    bad_charge = PhaseTrace(Phase.CHARGE, t, tr.voltage_V, tr.current_A)
    bad = CycleRecord(
        cycle_index=2, charge=bad_charge, discharge=synth_cycle(2).discharge,
        conditions=DEFAULT_CONDITIONS,
    )
    cycles = [synth_cycle(0), synth_cycle(1), bad]
    cleaned, audit = clean_history(history_of(cycles))
    removed = {r.cycle_index: r.reasons for r in audit.removed}
    assert FLAG_NON_MONOTONIC in removed[2]


def test_count_bookkeeping():
    h = synth_history(n_cycles=9, noise=0.0)
    cleaned, audit = clean_history(h)
    assert len(cleaned) == len(h) - len(audit.removed)
    assert 0 in audit.removed_indices


def test_survivors_keep_original_indices_in_order():
    h = synth_history(n_cycles=6, noise=0.0)
    cleaned, _ = clean_history(h)
    assert cleaned.cycle_indices == (1, 2, 3, 4, 5)


def test_no_usable_cycles():
    h = history_of([synth_cycle(0)])
    with pytest.raises(ValueError, match="no usable cycles"):
        clean_history(h)


def test_policy_knobs_can_disable_rules():
    cycles = [synth_cycle(i) for i in range(3)] + [synth_cycle(3, soe=1.2)]
    policy = CleaningPolicy(drop_nonphysical_efficiency=False, drop_first_cycle=False)
    cleaned, audit = clean_history(history_of(cycles), policy)
    assert len(cleaned) == 4
    assert audit.removed == ()


def test_dissipated_energy_nonnegative_for_unflagged_survivors():
    cycles = [synth_cycle(i, soe=0.8 + 0.02 * i) for i in range(8)]
    cleaned, audit = clean_history(history_of(cycles))
    flagged = {f.cycle_index for f in audit.retained_flags}
    for rec in cleaned.cycles:
        if rec.cycle_index in flagged:
            continue
        m = compute_cycle_metrics(rec, 2.0)
        assert m.e_dissipated_J >= 0.0
