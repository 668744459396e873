"""Convert NASA PCoE battery aging containers to the telemetry interchange format.

Each container is a MATLAB file holding one struct whose ``cycle`` field is
an ordered array of test entries. Entries are labeled ``charge``,
``discharge`` or ``impedance``; only charge/discharge entries are exported
(impedance entries are dropped with a count in the conversion log).
Consecutive charge/discharge entries form one full cycle.

The converter emits, per battery:

* ``<battery>.csv``   telemetry, one sample per row, full-precision floats;
* ``<battery>.json``  metadata sidecar (ratings, conditions, segments);
* ``<battery>.log``   conversion log (entry counts, skips, derived segments).

Raw sample values are passed through untouched except for one documented
rectification: discharge currents are recorded negative at the terminal and
are exported as magnitudes. Output is a pure function of the input, so
re-running a conversion reproduces the files byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import loadmat

RATED_CAPACITY_AH = 2.0
RATED_VOLTAGE_V = 3.7
CC_CHARGE_CURRENT_A = 1.0

# battery -> (ambient_temp_C, discharge_current_A, cutoff_voltage_V)
TEST_MATRIX: dict[str, tuple[float, float, float]] = {
    "B0005": (24.0, 2.0, 2.7),
    "B0006": (24.0, 2.0, 2.5),
    "B0007": (24.0, 2.0, 2.2),
    "B0029": (43.0, 4.0, 2.0),
    "B0030": (43.0, 4.0, 2.2),
    "B0031": (43.0, 4.0, 2.5),
    "B0032": (43.0, 4.0, 2.7),
    "B0033": (24.0, 4.0, 2.0),
    "B0034": (24.0, 4.0, 2.2),
    "B0045": (4.0, 1.0, 2.0),
    "B0046": (4.0, 1.0, 2.2),
    "B0047": (4.0, 1.0, 2.5),
    "B0048": (4.0, 1.0, 2.7),
    "B0053": (4.0, 2.0, 2.0),
    "B0054": (4.0, 2.0, 2.2),
    "B0055": (4.0, 2.0, 2.5),
    "B0056": (4.0, 2.0, 2.7),
}

# batteries cycled under stepped conditions; cutoff stays fixed per battery
VARIABLE_CUTOFFS: dict[str, float] = {"B0038": 2.2, "B0039": 2.5, "B0040": 2.7}

AMBIENT_GRID = (4.0, 24.0, 43.0)
CURRENT_GRID = (1.0, 2.0, 4.0)

TELEMETRY_HEADER = "battery_id,cycle_index,phase,time_s,voltage_V,current_A"


@dataclass
class CyclePair:
    index: int
    ambient_C: float
    charge: tuple[np.ndarray, np.ndarray, np.ndarray]      # time, voltage, current
    discharge: tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass
class ConversionResult:
    battery_id: str
    telemetry_path: Path
    metadata_path: Path
    log_path: Path
    n_pairs: int
    n_impedance: int
    n_skipped: int
    n_samples_dropped: int


def _field(obj, name, default=None):
    """Field access across loadmat representations (mat_struct, dict, recarray)."""
    if isinstance(obj, dict):
        return obj.get(name, default)
    if hasattr(obj, name):
        return getattr(obj, name)
    try:
        if obj.dtype.names and name in obj.dtype.names:
            return obj[name]
    except AttributeError:
        pass
    return default


def _as_entries(container) -> list:
    cycle = _field(container, "cycle")
    if cycle is None:
        raise ValueError("container has no 'cycle' field")
    if isinstance(cycle, np.ndarray):
        return list(cycle.ravel())
    return [cycle]


def _scalar(value, default=float("nan")) -> float:
    if value is None:
        return default
    arr = np.asarray(value, dtype=float).ravel()
    return float(arr[0]) if arr.size else default


def _vector(value) -> np.ndarray | None:
    if value is None:
        return None
    arr = np.asarray(value, dtype=float).ravel()
    return arr if arr.size else None


def _snap(value: float, grid: tuple[float, ...]) -> float:
    return min(grid, key=lambda g: abs(g - value))


def _load_container(path: Path):
    try:
        raw = loadmat(str(path), squeeze_me=True, struct_as_record=False)
    except Exception as exc:
        raise ValueError(f"unreadable container {path}: {exc}") from exc
    keys = [k for k in raw if not k.startswith("__")]
    stem = path.stem
    if stem in raw:
        return stem, raw[stem]
    if len(keys) == 1:
        return keys[0], raw[keys[0]]
    raise ValueError(f"cannot identify battery struct in {path} (keys: {keys})")


def _extract_phase(entry) -> tuple[np.ndarray, np.ndarray, np.ndarray, int] | str:
    """(time, voltage, current, n_dropped) of one entry, or a skip reason.

    Samples the interchange schema cannot represent (non-finite values,
    negative times) are dropped and counted; remaining values pass through
    untouched.
    """
    data = _field(entry, "data")
    if data is None:
        return "missing data struct"
    t = _vector(_field(data, "Time"))
    v = _vector(_field(data, "Voltage_measured"))
    i = _vector(_field(data, "Current_measured"))
    if t is None or v is None or i is None:
        return "missing Time/Voltage_measured/Current_measured"
    if not (len(t) == len(v) == len(i)):
        return f"mismatched vector lengths ({len(t)}/{len(v)}/{len(i)})"
    keep = np.isfinite(t) & np.isfinite(v) & np.isfinite(i) & (t >= 0)
    dropped = int(len(t) - keep.sum())
    if dropped == len(t):
        return "no representable samples"
    return t[keep], v[keep], i[keep], dropped


def _pair_entries(entries, log: list[str]) -> tuple[list[CyclePair], int, int, int]:
    """Walk entries in acquisition order; a charge followed by the next
    discharge forms one cycle pair."""
    pairs: list[CyclePair] = []
    n_impedance = 0
    n_skipped = 0
    n_samples_dropped = 0
    pending = None  # (entry_no, ambient, phase arrays)

    for entry_no, entry in enumerate(entries, start=1):
        kind = str(_field(entry, "type", "")).strip().lower()
        if kind == "impedance":
            n_impedance += 1
            continue
        if kind not in ("charge", "discharge"):
            n_skipped += 1
            log.append(f"entry {entry_no}: unknown type {kind!r}, skipped")
            continue
        extracted = _extract_phase(entry)
        if isinstance(extracted, str):
            n_skipped += 1
            log.append(f"entry {entry_no}: {extracted}, skipped")
            continue
        t, v, i, dropped = extracted
        if dropped:
            n_samples_dropped += dropped
            log.append(f"entry {entry_no}: {dropped} non-representable samples dropped")
        ambient = _scalar(_field(entry, "ambient_temperature"))
        if kind == "charge":
            if pending is not None:
                n_skipped += 1
                log.append(f"entry {pending[0]}: charge without following discharge, skipped")
            pending = (entry_no, ambient, (t, v, i))
        else:
            if pending is None:
                n_skipped += 1
                log.append(f"entry {entry_no}: discharge without preceding charge, skipped")
                continue
            pairs.append(
                CyclePair(
                    index=len(pairs) + 1,
                    ambient_C=pending[1],
                    charge=pending[2],
                    discharge=(t, v, np.abs(i)),
                )
            )
            pending = None
    if pending is not None:
        n_skipped += 1
        log.append(f"entry {pending[0]}: charge without following discharge, skipped")
    return pairs, n_impedance, n_skipped, n_samples_dropped


@dataclass
class Run:
    """Maximal run of consecutive cycles with the same derived conditions."""

    ambient_C: float
    current_A: float
    first: int
    last: int
    temp_changed: bool = False  # ambient stepped at this run's start


def _discharge_current_label(pair: CyclePair) -> float:
    _, _, i = pair.discharge
    return _snap(float(np.median(i[i > 0.05])) if np.any(i > 0.05) else 0.0, CURRENT_GRID)


def _derive_runs(pairs: list[CyclePair]) -> list[Run]:
    runs: list[Run] = []
    for pair in pairs:
        label = (_snap(pair.ambient_C, AMBIENT_GRID), _discharge_current_label(pair))
        if runs and (runs[-1].ambient_C, runs[-1].current_A) == label:
            runs[-1].last = pair.index
        else:
            changed = bool(runs) and runs[-1].ambient_C != label[0]
            runs.append(Run(label[0], label[1], pair.index, pair.index, temp_changed=changed))
    return runs


def _segments_doc(runs: list[Run], cutoff_V: float, log: list[str]) -> list[dict]:
    """Segment definitions for a variable-condition battery.

    The first cycle of a run that follows an ambient-temperature step is a
    transition cycle and is excluded from its segment so it is analyzed
    with neither neighboring run.
    """
    segments = []
    for run in runs:
        first = run.first
        exclude = []
        if run.temp_changed:
            exclude = [run.first]
            log.append(
                f"cycle {run.first}: ambient step into {run.ambient_C:g} C, "
                "excluded from segment"
            )
        if run.last < first:
            continue
        label = f"{run.ambient_C:g}C-{run.current_A:g}A"
        segments.append(
            {
                "label": label,
                "first_cycle": first,
                "last_cycle": run.last,
                "conditions": {
                    "ambient_temp_C": run.ambient_C,
                    "discharge_current_A": run.current_A,
                    "cutoff_voltage_V": cutoff_V,
                    "charge_current_A": CC_CHARGE_CURRENT_A,
                },
                **({"exclude_cycles": exclude} if exclude else {}),
            }
        )
    return segments


def _metadata_doc(battery_id: str, pairs: list[CyclePair], log: list[str]) -> dict:
    doc: dict = {
        "battery_id": battery_id,
        "rated_capacity_Ah": RATED_CAPACITY_AH,
        "rated_voltage_V": RATED_VOLTAGE_V,
    }
    if battery_id in TEST_MATRIX:
        temp, current, cutoff = TEST_MATRIX[battery_id]
        doc["conditions"] = {
            "ambient_temp_C": temp,
            "discharge_current_A": current,
            "cutoff_voltage_V": cutoff,
            "charge_current_A": CC_CHARGE_CURRENT_A,
        }
        return doc

    cutoff = VARIABLE_CUTOFFS.get(battery_id)
    if cutoff is None:
        # unknown battery: estimate from the data, flag it in the log
        cutoff = round(min(float(np.min(p.discharge[1])) for p in pairs), 1)
        log.append(f"battery not in test matrix; cutoff estimated as {cutoff:g} V")

    runs = _derive_runs(pairs)
    doc["conditions"] = {
        "ambient_temp_C": runs[0].ambient_C,
        "discharge_current_A": runs[0].current_A,
        "cutoff_voltage_V": cutoff,
        "charge_current_A": CC_CHARGE_CURRENT_A,
    }
    if len(runs) > 1:
        doc["condition_overrides"] = [
            {
                "first_cycle": run.first,
                "last_cycle": run.last,
                "conditions": {
                    "ambient_temp_C": run.ambient_C,
                    "discharge_current_A": run.current_A,
                },
            }
            for run in runs[1:]
        ]
        doc["segments"] = _segments_doc(runs, cutoff, log)
    return doc


def _telemetry_text(battery_id: str, pairs: list[CyclePair]) -> str:
    lines = [TELEMETRY_HEADER]
    for pair in pairs:
        for phase, (t, v, i) in (("charge", pair.charge), ("discharge", pair.discharge)):
            for tk, vk, ik in zip(t.tolist(), v.tolist(), i.tolist()):
                lines.append(f"{battery_id},{pair.index},{phase},{tk!r},{vk!r},{ik!r}")
    return "\n".join(lines) + "\n"


def convert_container(raw_path: str | Path, out_dir: str | Path) -> ConversionResult:
    """Convert one container; returns paths and counts."""
    raw_path = Path(raw_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    battery_id, container = _load_container(raw_path)
    entries = _as_entries(container)
    log: list[str] = []
    pairs, n_impedance, n_skipped, n_samples_dropped = _pair_entries(entries, log)
    if not pairs:
        raise ValueError(f"{raw_path}: no charge/discharge pairs found")

    metadata = _metadata_doc(battery_id, pairs, log)

    telemetry_path = out_dir / f"{battery_id}.csv"
    metadata_path = out_dir / f"{battery_id}.json"
    log_path = out_dir / f"{battery_id}.log"

    telemetry_path.write_text(_telemetry_text(battery_id, pairs), encoding="utf-8")
    metadata_path.write_text(
        json.dumps(metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    log_lines = [
        f"battery: {battery_id}",
        f"source: {raw_path.name}",
        f"entries in container: {len(entries)}",
        f"{n_impedance} impedance cycles dropped",
        f"{len(pairs)} charge/discharge pairs exported",
        f"{n_skipped} entries skipped",
        f"{n_samples_dropped} non-representable samples dropped",
        "discharge currents rectified to magnitudes",
    ]
    log_lines.extend(log)
    log_path.write_text("\n".join(log_lines) + "\n", encoding="utf-8")

    return ConversionResult(
        battery_id=battery_id,
        telemetry_path=telemetry_path,
        metadata_path=metadata_path,
        log_path=log_path,
        n_pairs=len(pairs),
        n_impedance=n_impedance,
        n_skipped=n_skipped,
        n_samples_dropped=n_samples_dropped,
    )


def convert_path(raw: str | Path, out_dir: str | Path) -> list[ConversionResult]:
    """Convert a single container or every ``*.mat`` in a directory."""
    raw = Path(raw)
    if raw.is_dir():
        files = sorted(raw.glob("*.mat"))
        if not files:
            raise ValueError(f"no .mat containers in {raw}")
        return [convert_container(f, out_dir) for f in files]
    return [convert_container(raw, out_dir)]
