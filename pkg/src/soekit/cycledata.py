"""Telemetry data model and interchange-format IO for battery cycling data.

A battery history is a time-ordered sequence of full charge/discharge
cycles. Each cycle carries two sampled phases (voltage/current/time at the
battery terminal) plus the operating conditions it ran under. Histories are
read from a two-file interchange format:

* telemetry CSV, one sample per row:
  ``battery_id,cycle_index,phase,time_s,voltage_V,current_A``
  with ``phase`` in {charge, discharge}, rows grouped by
  (cycle_index, phase) and time-ordered within each group;
* metadata JSON sidecar with the battery's identity, ratings, default
  operating conditions, optional per-cycle-range condition overrides and
  optional segment definitions for variable-condition tests.

All types are immutable after construction, so histories of distinct
batteries can be processed concurrently without shared state.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import IO, Iterator, NamedTuple, Union

import numpy as np

TELEMETRY_HEADER = ("battery_id", "cycle_index", "phase", "time_s", "voltage_V", "current_A")

PathOrIO = Union[str, Path, IO[str]]


class TelemetryFormatError(ValueError):
    """Malformed interchange document. Carries the offending line when known."""

    def __init__(self, message: str, *, source: str = "", line: int | None = None):
        self.source = source
        self.line = line
        prefix = f"{source}:" if source else ""
        if line is not None:
            prefix += f"line {line}: "
        elif source:
            prefix += " "
        super().__init__(prefix + message)


class Phase(str, Enum):
    CHARGE = "charge"
    DISCHARGE = "discharge"


_PHASE_LABELS = {p.value: p for p in Phase}


class Sample(NamedTuple):
    """One telemetry point: seconds since phase start, terminal volts/amps."""

    time_s: float
    voltage_V: float
    current_A: float


@dataclass(frozen=True)
class PhaseTrace:
    """Sampled voltage/current of one charge or discharge phase.

    Arrays are equal-length float64 and frozen read-only. Current values are
    magnitudes (non-negative by convention in both phases); sign
    rectification is the responsibility of whatever produced the telemetry
    file.
    """

    kind: Phase
    time_s: np.ndarray
    voltage_V: np.ndarray
    current_A: np.ndarray

    def __post_init__(self):
        for name in ("time_s", "voltage_V", "current_A"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr = arr.copy() if arr.base is not None or arr.flags.writeable else arr
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        n = len(self.time_s)
        if len(self.voltage_V) != n or len(self.current_A) != n:
            raise ValueError("phase trace arrays must have equal length")

    def __len__(self) -> int:
        return len(self.time_s)

    @property
    def duration_s(self) -> float:
        return float(self.time_s[-1] - self.time_s[0]) if len(self) >= 2 else 0.0

    @property
    def is_time_strictly_increasing(self) -> bool:
        return len(self) < 2 or bool(np.all(np.diff(self.time_s) > 0.0))

    def samples(self) -> Iterator[Sample]:
        for t, v, i in zip(self.time_s, self.voltage_V, self.current_A):
            yield Sample(float(t), float(v), float(i))


@dataclass(frozen=True)
class OperatingConditions:
    """Test conditions a cycle ran under."""

    ambient_temp_C: float
    discharge_current_A: float
    cutoff_voltage_V: float
    charge_current_A: float

    def group_key(self) -> tuple[float, float, float]:
        """Key used to group batteries run under the same test cell."""
        return (self.ambient_temp_C, self.discharge_current_A, self.cutoff_voltage_V)

    def merged(self, overrides: dict) -> "OperatingConditions":
        """New conditions with the given fields replaced."""
        return replace(self, **overrides)


@dataclass(frozen=True)
class CycleRecord:
    """One full cycle: charge phase, discharge phase, conditions, anomaly flags.

    ``cycle_index`` is the original acquisition-order index and is preserved
    through cleaning and segmentation so every derived number stays traceable
    to the source rows.
    """

    cycle_index: int
    charge: PhaseTrace
    discharge: PhaseTrace
    conditions: OperatingConditions
    flags: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.charge.kind is not Phase.CHARGE or self.discharge.kind is not Phase.DISCHARGE:
            raise ValueError("cycle phases must be (charge, discharge)")

    def with_flags(self, *extra: str) -> "CycleRecord":
        return replace(self, flags=self.flags | frozenset(extra))


@dataclass(frozen=True)
class Segment:
    """A contiguous run of cycles under constant conditions.

    Bounds are inclusive original cycle indices. ``exclude_cycles`` marks
    boundary cycles inside the range (condition-jump cycles) that must not
    be analyzed with either neighboring run.
    """

    label: str
    first_cycle: int
    last_cycle: int
    conditions: OperatingConditions
    exclude_cycles: tuple[int, ...] = ()

    def __post_init__(self):
        if self.first_cycle > self.last_cycle:
            raise ValueError(f"segment {self.label!r}: first_cycle > last_cycle")

    def covers(self, cycle_index: int) -> bool:
        return (
            self.first_cycle <= cycle_index <= self.last_cycle
            and cycle_index not in self.exclude_cycles
        )


@dataclass(frozen=True)
class BatteryHistory:
    """The ordered cycle sequence of one battery plus its ratings."""

    battery_id: str
    rated_capacity_Ah: float
    rated_voltage_V: float
    cycles: tuple[CycleRecord, ...]
    segments: tuple[Segment, ...] = ()

    def __post_init__(self):
        idx = [c.cycle_index for c in self.cycles]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("cycle_index values must be strictly increasing")

    def __len__(self) -> int:
        return len(self.cycles)

    @property
    def cycle_indices(self) -> tuple[int, ...]:
        return tuple(c.cycle_index for c in self.cycles)


@dataclass(frozen=True)
class BatteryMetadata:
    """Parsed sidecar document."""

    battery_id: str
    rated_capacity_Ah: float
    rated_voltage_V: float
    default_conditions: OperatingConditions
    condition_overrides: tuple[tuple[int, int, dict], ...] = ()
    segments: tuple[Segment, ...] = ()

    def conditions_for(self, cycle_index: int) -> OperatingConditions:
        cond = self.default_conditions
        for first, last, overrides in self.condition_overrides:
            if first <= cycle_index <= last:
                cond = cond.merged(overrides)
        return cond


_CONDITION_FIELDS = ("ambient_temp_C", "discharge_current_A", "cutoff_voltage_V", "charge_current_A")


def _conditions_from_dict(d: dict, source: str) -> OperatingConditions:
    missing = [k for k in _CONDITION_FIELDS if k not in d]
    if missing:
        raise TelemetryFormatError(f"conditions missing keys {missing}", source=source)
    return OperatingConditions(**{k: float(d[k]) for k in _CONDITION_FIELDS})


def _condition_overrides_from(d: dict, source: str) -> dict:
    unknown = set(d) - set(_CONDITION_FIELDS)
    if unknown:
        raise TelemetryFormatError(f"unknown condition keys {sorted(unknown)}", source=source)
    return {k: float(v) for k, v in d.items()}


def load_metadata(doc: PathOrIO) -> BatteryMetadata:
    """Read and validate a metadata sidecar document."""
    source, fh, owns = _open(doc)
    try:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise TelemetryFormatError(f"invalid JSON: {exc}", source=source) from exc
    finally:
        if owns:
            fh.close()

    for key in ("battery_id", "rated_capacity_Ah", "rated_voltage_V", "conditions"):
        if key not in raw:
            raise TelemetryFormatError(f"metadata missing key {key!r}", source=source)

    default = _conditions_from_dict(raw["conditions"], source)
    overrides = []
    for entry in raw.get("condition_overrides", []):
        overrides.append(
            (
                int(entry["first_cycle"]),
                int(entry["last_cycle"]),
                _condition_overrides_from(entry["conditions"], source),
            )
        )
    segments = []
    for entry in raw.get("segments", []):
        cond = default.merged(_condition_overrides_from(entry["conditions"], source))
        segments.append(
            Segment(
                label=str(entry["label"]),
                first_cycle=int(entry["first_cycle"]),
                last_cycle=int(entry["last_cycle"]),
                conditions=cond,
                exclude_cycles=tuple(int(i) for i in entry.get("exclude_cycles", [])),
            )
        )
    return BatteryMetadata(
        battery_id=str(raw["battery_id"]),
        rated_capacity_Ah=float(raw["rated_capacity_Ah"]),
        rated_voltage_V=float(raw["rated_voltage_V"]),
        default_conditions=default,
        condition_overrides=tuple(overrides),
        segments=tuple(segments),
    )


def _open(doc: PathOrIO) -> tuple[str, IO[str], bool]:
    if isinstance(doc, (str, Path)):
        path = Path(doc)
        return str(path), path.open("r", encoding="utf-8", newline=""), True
    return getattr(doc, "name", "<stream>"), doc, False


def parse_history(telemetry: PathOrIO, metadata: PathOrIO) -> BatteryHistory:
    """Parse the two-file interchange format into a BatteryHistory.

    Every sample row is assigned to exactly one (cycle, phase) group. Hard
    errors (with line numbers where applicable): bad header, wrong field
    count, non-numeric values, negative time, unknown phase label,
    battery_id mismatch against the sidecar, or a (cycle, phase) group that
    restarts after being closed. Non-monotonic timestamps inside a phase do
    not abort parsing; the affected cycle is flagged ``non-monotonic-time``
    and left to the cleaning policy. Non-positive voltage or negative
    current flags the cycle ``nonphysical-sample``.
    """
    meta = load_metadata(metadata)
    source, fh, owns = _open(telemetry)
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TelemetryFormatError("empty telemetry document", source=source) from None
        if tuple(h.strip() for h in header) != TELEMETRY_HEADER:
            raise TelemetryFormatError(
                f"bad header {header!r}, expected {','.join(TELEMETRY_HEADER)}",
                source=source,
                line=1,
            )

        # (cycle_index, phase) -> [times, volts, amps]; contiguity enforced below
        groups: dict[tuple[int, Phase], list[list[float]]] = {}
        order: list[tuple[int, Phase]] = []
        closed: set[tuple[int, Phase]] = set()
        current_key: tuple[int, Phase] | None = None

        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise TelemetryFormatError(
                    f"expected 6 fields, got {len(row)}", source=source, line=line_no
                )
            bat, cyc_s, phase_s, t_s, v_s, i_s = row
            if bat != meta.battery_id:
                raise TelemetryFormatError(
                    f"battery_id {bat!r} does not match metadata {meta.battery_id!r}",
                    source=source,
                    line=line_no,
                )
            phase = _PHASE_LABELS.get(phase_s)
            if phase is None:
                phase = _PHASE_LABELS.get(phase_s.strip().lower())
            if phase is None:
                raise TelemetryFormatError(
                    f"unknown phase label {phase_s.strip()!r}", source=source, line=line_no
                )
            try:
                cyc = int(cyc_s)
                t, v, i = float(t_s), float(v_s), float(i_s)
            except ValueError as exc:
                raise TelemetryFormatError(
                    f"non-numeric field: {exc}", source=source, line=line_no
                ) from None
            if cyc < 0:
                raise TelemetryFormatError("negative cycle_index", source=source, line=line_no)
            if t < 0 or not (math.isfinite(t) and math.isfinite(v) and math.isfinite(i)):
                raise TelemetryFormatError(
                    f"invalid sample values ({t_s}, {v_s}, {i_s})", source=source, line=line_no
                )

            key = (cyc, phase)
            if key != current_key:
                if key in closed:
                    raise TelemetryFormatError(
                        f"rows for cycle {cyc} phase {phase.value} are not contiguous",
                        source=source,
                        line=line_no,
                    )
                if current_key is not None:
                    closed.add(current_key)
                current_key = key
                groups[key] = [[], [], []]
                order.append(key)
            cols = groups[key]
            cols[0].append(t)
            cols[1].append(v)
            cols[2].append(i)
    finally:
        if owns:
            fh.close()

    cycle_order: list[int] = []
    for cyc, _ in order:
        if cyc not in cycle_order:
            cycle_order.append(cyc)
    if sorted(cycle_order) != cycle_order:
        raise TelemetryFormatError("cycle_index groups out of order", source=source)

    records = []
    for cyc in cycle_order:
        traces = {}
        flags = set()
        for phase in (Phase.CHARGE, Phase.DISCHARGE):
            cols = groups.get((cyc, phase), [[], [], []])
            trace = PhaseTrace(
                kind=phase,
                time_s=np.array(cols[0], dtype=float),
                voltage_V=np.array(cols[1], dtype=float),
                current_A=np.array(cols[2], dtype=float),
            )
            if not trace.is_time_strictly_increasing:
                flags.add("non-monotonic-time")
            if len(trace) and (np.any(trace.voltage_V <= 0.0) or np.any(trace.current_A < 0.0)):
                flags.add("nonphysical-sample")
            traces[phase] = trace
        records.append(
            CycleRecord(
                cycle_index=cyc,
                charge=traces[Phase.CHARGE],
                discharge=traces[Phase.DISCHARGE],
                conditions=meta.conditions_for(cyc),
                flags=frozenset(flags),
            )
        )

    return BatteryHistory(
        battery_id=meta.battery_id,
        rated_capacity_Ah=meta.rated_capacity_Ah,
        rated_voltage_V=meta.rated_voltage_V,
        cycles=tuple(records),
        segments=meta.segments,
    )


def write_history(h: BatteryHistory, telemetry: PathOrIO, metadata: PathOrIO) -> None:
    """Serialize a history back to the interchange format.

    Floats are written with shortest round-trip repr, so
    parse -> write -> parse is lossless for all retained fields.
    """
    source, fh, owns = _open_w(telemetry)
    try:
        fh.write(",".join(TELEMETRY_HEADER) + "\n")
        for rec in h.cycles:
            for trace in (rec.charge, rec.discharge):
                for s in trace.samples():
                    fh.write(
                        f"{h.battery_id},{rec.cycle_index},{trace.kind.value},"
                        f"{s.time_s!r},{s.voltage_V!r},{s.current_A!r}\n"
                    )
    finally:
        if owns:
            fh.close()

    doc = history_metadata_dict(h)
    source, fh, owns = _open_w(metadata)
    try:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    finally:
        if owns:
            fh.close()


def _open_w(doc: PathOrIO) -> tuple[str, IO[str], bool]:
    if isinstance(doc, (str, Path)):
        path = Path(doc)
        return str(path), path.open("w", encoding="utf-8", newline=""), True
    return getattr(doc, "name", "<stream>"), doc, False


def _conditions_dict(c: OperatingConditions) -> dict:
    return {k: getattr(c, k) for k in _CONDITION_FIELDS}


def history_metadata_dict(h: BatteryHistory) -> dict:
    """Metadata document for a history, with per-cycle condition changes
    re-expressed as range overrides."""
    doc: dict = {
        "battery_id": h.battery_id,
        "rated_capacity_Ah": h.rated_capacity_Ah,
        "rated_voltage_V": h.rated_voltage_V,
    }
    default = h.cycles[0].conditions if h.cycles else (
        h.segments[0].conditions if h.segments else OperatingConditions(0.0, 0.0, 0.0, 0.0)
    )
    doc["conditions"] = _conditions_dict(default)
    overrides = []
    run_start: int | None = None
    run_cond: OperatingConditions | None = None
    prev_index: int | None = None

    def flush(last_index: int):
        if run_cond is not None and run_cond != default:
            changed = {
                k: getattr(run_cond, k)
                for k in _CONDITION_FIELDS
                if getattr(run_cond, k) != getattr(default, k)
            }
            overrides.append(
                {"first_cycle": run_start, "last_cycle": last_index, "conditions": changed}
            )

    for rec in h.cycles:
        if rec.conditions != run_cond:
            if prev_index is not None:
                flush(prev_index)
            run_start, run_cond = rec.cycle_index, rec.conditions
        prev_index = rec.cycle_index
    if prev_index is not None:
        flush(prev_index)
    if overrides:
        doc["condition_overrides"] = overrides
    if h.segments:
        doc["segments"] = [
            {
                "label": s.label,
                "first_cycle": s.first_cycle,
                "last_cycle": s.last_cycle,
                "conditions": _conditions_dict(s.conditions),
                **({"exclude_cycles": list(s.exclude_cycles)} if s.exclude_cycles else {}),
            }
            for s in h.segments
        ]
    return doc


def load_segment_overrides(doc: PathOrIO) -> dict[str, tuple[Segment, ...]]:
    """Read an external segment-definition document.

    Format: JSON object mapping battery_id to a list of segment entries
    (``label``, ``first_cycle``, ``last_cycle``, full ``conditions``,
    optional ``exclude_cycles``). Used to override or supply segments
    without touching metadata sidecars.
    """
    source, fh, owns = _open(doc)
    try:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise TelemetryFormatError(f"invalid JSON: {exc}", source=source) from exc
    finally:
        if owns:
            fh.close()
    if not isinstance(raw, dict):
        raise TelemetryFormatError("segment document must map battery_id to segments", source=source)
    out = {}
    for battery_id, entries in raw.items():
        segments = []
        for entry in entries:
            segments.append(
                Segment(
                    label=str(entry["label"]),
                    first_cycle=int(entry["first_cycle"]),
                    last_cycle=int(entry["last_cycle"]),
                    conditions=_conditions_from_dict(entry["conditions"], source),
                    exclude_cycles=tuple(int(i) for i in entry.get("exclude_cycles", [])),
                )
            )
        out[str(battery_id)] = tuple(segments)
    return out


def segment_history(h: BatteryHistory, boundaries: list[Segment] | tuple[Segment, ...]) -> list[BatteryHistory]:
    """Split a variable-condition history into one sub-history per segment.

    Boundaries must be ordered, non-overlapping, and each must intersect
    the history's cycle range (hard error otherwise). Bounds may reference
    cycles that are no longer present: cleaning routinely removes boundary
    cycles, so a segment simply covers whichever of its cycles survive.
    Cycles not covered by any segment, and cycles listed in a segment's
    ``exclude_cycles``, are dropped; that is how condition-jump cycles are
    kept out of both neighboring runs. Each sub-history keeps original
    cycle indices and acquisition order; records inherit the segment's
    conditions.
    """
    boundaries = tuple(boundaries)
    if not boundaries:
        raise ValueError("no segments given")
    if not h.cycles:
        raise ValueError("cannot segment an empty history")
    lo, hi = h.cycles[0].cycle_index, h.cycles[-1].cycle_index
    prev_last = None
    for seg in boundaries:
        if seg.last_cycle < lo or seg.first_cycle > hi:
            raise ValueError(
                f"segment {seg.label!r} [{seg.first_cycle}, {seg.last_cycle}] "
                f"outside history range [{lo}, {hi}]"
            )
        if prev_last is not None and seg.first_cycle <= prev_last:
            raise ValueError(f"segment {seg.label!r} overlaps or is out of order")
        prev_last = seg.last_cycle

    out = []
    for seg in boundaries:
        cycles = tuple(
            replace(rec, conditions=seg.conditions)
            for rec in h.cycles
            if seg.covers(rec.cycle_index)
        )
        out.append(
            BatteryHistory(
                battery_id=h.battery_id,
                rated_capacity_Ah=h.rated_capacity_Ah,
                rated_voltage_V=h.rated_voltage_V,
                cycles=cycles,
                segments=(),
            )
        )
    return out
