"""Pipeline orchestration, plot exports, summary rendering."""

import json
import math

import numpy as np
import pytest

from soekit.cycledata import BatteryHistory, OperatingConditions, Segment
from soekit.report import (
    AnalysisConfig,
    BatteryReport,
    Factor,
    PlotKind,
    analyze,
    analyze_history,
    export_plot_series,
    render_summary,
    report_to_dict,
    write_analysis,
)
from soekit.trend import MKResult, TrendCall, ols_fit

from synth import DEFAULT_CONDITIONS, synth_history, write_battery_dir


def segmented_history(battery_id="SYNSEG"):
    h = synth_history(battery_id, n_cycles=31, noise=0.0)
    base = {"cutoff_voltage_V": 2.2, "charge_current_A": 1.0}
    segs = (
        Segment("p1", 1, 10, OperatingConditions(ambient_temp_C=24.0, discharge_current_A=4.0, **base)),
        Segment("p2", 12, 20, OperatingConditions(ambient_temp_C=43.0, discharge_current_A=1.0, **base)),
        Segment("p3", 21, 30, OperatingConditions(ambient_temp_C=43.0, discharge_current_A=2.0, **base)),
    )
    return BatteryHistory(
        battery_id=h.battery_id,
        rated_capacity_Ah=h.rated_capacity_Ah,
        rated_voltage_V=h.rated_voltage_V,
        cycles=h.cycles,
        segments=segs,
    )


class TestAnalyze:
    def test_two_batteries(self, two_battery_dir):
        result = analyze(two_battery_dir)
        assert len(result.reports) == 2
        assert [r.battery_id for r in result.reports] == ["SYN01", "SYN02"]
        assert result.failures == ()
        assert result.matrix.n_entries == 2

    def test_corrupt_file_is_isolated(self, two_battery_dir):
        (two_battery_dir / "BAD01.csv").write_text("battery_id,nope\nBAD01,1\n")
        (two_battery_dir / "BAD01.json").write_text("{}")
        result = analyze(two_battery_dir)
        assert len(result.reports) == 2
        assert len(result.failures) == 1
        assert result.failures[0].source == "BAD01.csv"

    def test_empty_directory_is_fatal(self, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        with pytest.raises(FileNotFoundError):
            analyze(empty)

    def test_missing_directory_is_fatal(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            analyze(tmp_path / "missing")

    def test_deterministic_results(self, two_battery_dir):
        a = analyze(two_battery_dir)
        b = analyze(two_battery_dir)
        for ra, rb in zip(a.reports, b.reports):
            assert report_to_dict(ra) == report_to_dict(rb)

    def test_cleaning_applied_by_default(self, two_battery_dir):
        cleaned = analyze(two_battery_dir)
        raw = analyze(two_battery_dir, AnalysisConfig(clean=False))
        for rc, rr in zip(cleaned.reports, raw.reports):
            assert len(rc.series) == len(rr.series) - 1  # first cycle dropped
            assert rc.removed_cycles and rc.removed_cycles[0].cycle_index == 0
            assert rr.removed_cycles == ()


class TestSegmentedAnalysis:
    def test_one_report_per_segment(self, tmp_path):
        d = write_battery_dir(tmp_path / "seg", [segmented_history()])
        result = analyze(d)
        assert [r.series_id for r in result.reports] == [
            "SYNSEG:p1", "SYNSEG:p2", "SYNSEG:p3",
        ]
        # cleaning removed original cycle 0; jump cycle 11 is covered by no segment
        assert [len(r.series) for r in result.reports] == [10, 9, 10]
        assert result.matrix.n_entries == 3
        keys = {(c.ambient_temp_C, c.discharge_current_A) for c in result.matrix.cells}
        assert keys == {(24.0, 4.0), (43.0, 1.0), (43.0, 2.0)}

    def test_segment_override_file(self, tmp_path):
        h = synth_history("SYNOV", n_cycles=20, noise=0.0)
        d = write_battery_dir(tmp_path / "ov", [h])
        overrides = {
            "SYNOV": (
                Segment("a", 1, 9, DEFAULT_CONDITIONS),
                Segment("b", 10, 19, DEFAULT_CONDITIONS),
            )
        }
        result = analyze(d, AnalysisConfig(segment_overrides=overrides))
        assert [r.series_id for r in result.reports] == ["SYNOV:a", "SYNOV:b"]

    def test_removed_cycles_attributed_to_covering_segment(self, tmp_path):
        d = write_battery_dir(tmp_path / "seg2", [segmented_history()])
        result = analyze(d)
        p1 = result.reports[0]
        assert all(1 <= r.cycle_index <= 10 for r in p1.removed_cycles)

    def test_segment_starting_at_cleaned_first_cycle(self, tmp_path):
        # cleaning removes cycle 0; segment bounds that include it must not
        # fail the battery
        h = synth_history("SEGC", n_cycles=12, noise=0.0)
        h = BatteryHistory(
            battery_id=h.battery_id,
            rated_capacity_Ah=h.rated_capacity_Ah,
            rated_voltage_V=h.rated_voltage_V,
            cycles=h.cycles,
            segments=(
                Segment("head", 0, 5, DEFAULT_CONDITIONS),
                Segment("tail", 6, 11, DEFAULT_CONDITIONS),
            ),
        )
        d = write_battery_dir(tmp_path / "segc", [h])
        result = analyze(d)
        assert result.failures == ()
        assert [len(r.series) for r in result.reports] == [5, 6]
        assert result.reports[0].removed_cycles[0].cycle_index == 0


class TestMatrix:
    def test_every_report_in_exactly_one_cell(self, two_battery_dir):
        result = analyze(two_battery_dir)
        ids = [e.series_id for cell in result.matrix.cells for e in cell.entries]
        assert sorted(ids) == [r.series_id for r in result.reports]

    def test_cell_carries_fit_parameters(self, two_battery_dir):
        result = analyze(two_battery_dir)
        rep = result.reports[0]
        cell = next(
            c for c in result.matrix.cells
            if (c.ambient_temp_C, c.discharge_current_A, c.cutoff_voltage_V)
            == rep.conditions.group_key()
        )
        entry = next(e for e in cell.entries if e.series_id == rep.series_id)
        assert entry.slope == rep.fit.slope
        assert entry.soe_range == rep.fit.soe_range


def make_report(series_id="X01", classification=TrendCall.NO_TREND, conditions=DEFAULT_CONDITIONS):
    h = synth_history(series_id, n_cycles=8, noise=0.0, conditions=conditions)
    reports = analyze_history(h, AnalysisConfig())
    rep = reports[0]
    if classification is not rep.mk_diff.classification:
        mk = MKResult(
            s_stat=rep.mk_diff.s_stat, var_s=rep.mk_diff.var_s, z=rep.mk_diff.z,
            p_value=rep.mk_diff.p_value, n=rep.mk_diff.n,
            tie_groups=rep.mk_diff.tie_groups, classification=classification,
        )
        rep = BatteryReport(
            battery_id=rep.battery_id, segment_label=rep.segment_label,
            conditions=rep.conditions, series=rep.series, pcc_soe_soh=rep.pcc_soe_soh,
            mk_diff=mk, linear_verdict=classification is TrendCall.NO_TREND,
            fit=rep.fit, removed_cycles=rep.removed_cycles, retained_flags=rep.retained_flags,
        )
    return rep


class TestSummary:
    def test_single_battery_row(self):
        rep = make_report("S01")
        text = render_summary([rep])
        lines = text.splitlines()
        assert lines[0].split()[:2] == ["battery", "cycles"]
        assert len(lines) == 3  # header, rule, one row
        assert lines[2].startswith("S01")
        assert "linear" in lines[2]

    def test_inconclusive_prints_inconclusive(self):
        rep = make_report("S02", classification=TrendCall.INCONCLUSIVE)
        text = render_summary([rep])
        assert "inconclusive" in text

    def test_rows_sorted_by_id(self):
        reps = [make_report("B2"), make_report("A1")]
        text = render_summary(reps)
        lines = text.splitlines()
        assert lines[2].startswith("A1")
        assert lines[3].startswith("B2")


class TestPlotExports:
    def test_trajectory_row_count(self, two_battery_dir, tmp_path):
        result = analyze(two_battery_dir)
        (path,) = export_plot_series(result.reports, PlotKind.TRAJECTORY, tmp_path / "plots")
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "series_id,t,value"
        expected = sum(len(r.series) for r in result.reports)
        assert len(lines) - 1 == expected

    def test_fitted_trend_values(self, two_battery_dir, tmp_path):
        result = analyze(two_battery_dir)
        (path,) = export_plot_series(result.reports, PlotKind.FITTED_TREND, tmp_path / "plots")
        first = path.read_text().strip().splitlines()[1].split(",")
        rep = result.reports[0]
        assert first[0] == rep.series_id
        assert float(first[2]) == pytest.approx(rep.fit.value_at(1), rel=1e-15)

    def test_range_endpoint_arithmetic(self, tmp_path):
        t = np.arange(1.0, 101.0)
        fit = ols_fit(t, 0.9 - 0.001 * t)
        rep = make_report("R01")
        rep = BatteryReport(
            battery_id=rep.battery_id, segment_label=None, conditions=rep.conditions,
            series=rep.series, pcc_soe_soh=rep.pcc_soe_soh, mk_diff=rep.mk_diff,
            linear_verdict=rep.linear_verdict, fit=fit,
            removed_cycles=(), retained_flags=(),
        )
        (path,) = export_plot_series([rep], PlotKind.RANGE, tmp_path / "plots")
        _, low, high = path.read_text().strip().splitlines()[1].split(",")
        assert float(low) == pytest.approx(0.8, rel=1e-12)
        assert float(high) == pytest.approx(0.9, rel=1e-12)

    def test_factor_comparison_grouping(self, tmp_path):
        fast = OperatingConditions(
            ambient_temp_C=24.0, discharge_current_A=4.0, cutoff_voltage_V=2.7,
            charge_current_A=1.0,
        )
        reps = [
            make_report("C2A"),            # 24 C, 2 A, 2.7 V
            make_report("C4A", conditions=fast),  # 24 C, 4 A, 2.7 V
        ]
        paths = export_plot_series(reps, PlotKind.FACTOR_COMPARISON, tmp_path / "plots",
                                   factor=Factor.CURRENT)
        assert len(paths) == 1
        content = paths[0].read_text()
        assert "C2A" in content and "C4A" in content

    def test_factor_comparison_empty_group(self, two_battery_dir, tmp_path):
        # the two fixture batteries share no (temperature, cutoff) pair
        result = analyze(two_battery_dir)
        paths = export_plot_series(result.reports, PlotKind.FACTOR_COMPARISON,
                                   tmp_path / "plots", factor=Factor.CURRENT)
        assert len(paths) == 1
        assert paths[0].read_text() == "series_id,t,value\n"

    def test_comparison_requires_factor(self):
        with pytest.raises(ValueError, match="factor"):
            export_plot_series([make_report("F1")], PlotKind.FACTOR_COMPARISON, "/tmp/x")


class TestWriteAnalysis:
    def test_bundle_layout(self, two_battery_dir, tmp_path):
        result = analyze(two_battery_dir)
        out = tmp_path / "out"
        written = write_analysis(result, out)
        names = {p.relative_to(out).as_posix() for p in written}
        assert names == {
            "reports/SYN01.json", "reports/SYN02.json", "matrix.json", "summary.txt",
        }
        doc = json.loads((out / "reports" / "SYN01.json").read_text())
        assert doc["battery_id"] == "SYN01"
        assert doc["n_cycles"] == len(result.reports[0].series)
        assert doc["linear_trend"]["verdict"] == "linear"
        assert doc["mann_kendall_diff"]["p_value"] > 0.10

    def test_no_leftover_temp_files(self, two_battery_dir, tmp_path):
        result = analyze(two_battery_dir)
        out = tmp_path / "out"
        write_analysis(result, out)
        leftovers = [p for p in out.rglob("*") if p.name.endswith(".tmp")]
        assert leftovers == []

    def test_byte_identical_reruns(self, two_battery_dir, tmp_path):
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        write_analysis(analyze(two_battery_dir), out1)
        write_analysis(analyze(two_battery_dir), out2)
        files1 = sorted(p.relative_to(out1).as_posix() for p in out1.rglob("*") if p.is_file())
        files2 = sorted(p.relative_to(out2).as_posix() for p in out2.rglob("*") if p.is_file())
        assert files1 == files2
        for rel in files1:
            assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes()

    def test_failures_file(self, two_battery_dir, tmp_path):
        (two_battery_dir / "BAD01.csv").write_text("garbage\n")
        (two_battery_dir / "BAD01.json").write_text("{}")
        result = analyze(two_battery_dir)
        out = tmp_path / "out"
        write_analysis(result, out)
        failures = json.loads((out / "failures.json").read_text())
        assert failures[0]["source"] == "BAD01.csv"


def test_report_to_dict_handles_nan_pcc():
    rep = make_report("N01")
    rep = BatteryReport(
        battery_id=rep.battery_id, segment_label=None, conditions=rep.conditions,
        series=rep.series, pcc_soe_soh=math.nan, mk_diff=rep.mk_diff,
        linear_verdict=rep.linear_verdict, fit=rep.fit,
        removed_cycles=(), retained_flags=(),
    )
    doc = report_to_dict(rep)
    assert doc["pcc_soe_soh"] is None
    json.dumps(doc, allow_nan=False)  # must be strictly valid JSON
