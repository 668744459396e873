import pytest

from soekit.cycledata import OperatingConditions

from synth import synth_history, write_battery_dir


@pytest.fixture
def two_battery_dir(tmp_path):
    """Two synthetic batteries under different conditions."""
    cold = OperatingConditions(
        ambient_temp_C=4.0, discharge_current_A=1.0, cutoff_voltage_V=2.0, charge_current_A=1.0
    )
    histories = [
        synth_history("SYN01", n_cycles=12, seed=7),
        synth_history("SYN02", n_cycles=10, soe_start=0.78, seed=11, conditions=cold),
    ]
    return write_battery_dir(tmp_path / "fixture", histories)


@pytest.fixture
def metadata_doc() -> dict:
    return {
        "battery_id": "SYN01",
        "rated_capacity_Ah": 2.0,
        "rated_voltage_V": 3.7,
        "conditions": {
            "ambient_temp_C": 24.0,
            "discharge_current_A": 2.0,
            "cutoff_voltage_V": 2.7,
            "charge_current_A": 1.0,
        },
    }
