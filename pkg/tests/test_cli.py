"""End-to-end CLI behavior through subprocess runs."""

import json
import math

import pytest

from conftest import run_cli
from hombench import load_config
from hombench.reporting import read_points_csv

BOOST = ["--eta", "0.2", "--pairs-per-pulse", "0.05"]


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def test_version_flag():
    proc = run_cli("--version")
    assert proc.returncode == 0
    assert "hombench" in proc.stdout


def test_no_arguments_is_a_usage_error():
    proc = run_cli()
    assert proc.returncode == 1


def test_unknown_flag_exits_nonzero():
    proc = run_cli("predict", "--no-such-flag")
    assert proc.returncode != 0


class TestPredict:
    def test_prints_the_analytic_summary(self, tmp_path):
        proc = run_cli("predict", "--out", str(tmp_path / "run"))
        assert proc.returncode == 0
        assert "visibility" in proc.stdout
        assert "car" in proc.stdout
        report = read_json(tmp_path / "run" / "report.json")
        assert report["schema_version"] == 1
        assert report["kind"] == "predict"
        analytic = report["analytic"]
        assert analytic["visibility_budget"] == pytest.approx(0.80, abs=1e-9)
        assert analytic["car"] == pytest.approx(29.52191036502193, rel=1e-9)
        assert analytic["sigma_ps"] == pytest.approx(1.6986436005760381, rel=1e-12)
        assert (tmp_path / "run" / "predict.csv").exists()

    def test_silent_setup_reports_no_accidentals(self, tmp_path):
        proc = run_cli(
            "predict",
            "--pairs-per-pulse", "0",
            "--dark-prob-a", "0", "--dark-prob-b", "0",
            "--out", str(tmp_path / "run"),
        )
        assert proc.returncode == 0
        report = read_json(tmp_path / "run" / "report.json")
        assert report["analytic"]["car"] is None
        assert "no accidentals" in report["analytic"]["car_note"]

    def test_flag_overrides_beat_config_file(self, tmp_path):
        cfg_path = tmp_path / "partial.json"
        cfg_path.write_text(json.dumps({"pairs_per_pulse": 0.01}))
        proc = run_cli(
            "predict",
            "--config", str(cfg_path),
            "--pairs-per-pulse", "0.07",
            "--out", str(tmp_path / "run"),
        )
        assert proc.returncode == 0
        report = read_json(tmp_path / "run" / "report.json")
        assert report["config"]["pairs_per_pulse"] == 0.07


class TestCalibrate:
    def test_writes_a_loadable_calibrated_config(self, tmp_path):
        proc = run_cli("calibrate", "--out", str(tmp_path / "run"))
        assert proc.returncode == 0
        cfg = load_config(tmp_path / "run" / "calibrated_config.json")
        assert cfg.channel_s.transmittance == pytest.approx(
            0.004356234096691836, rel=1e-6
        )
        assert cfg.channel_s.transmittance == cfg.channel_i.transmittance
        report = read_json(tmp_path / "run" / "report.json")
        assert report["data"]["achieved_visibility"] == pytest.approx(0.80, abs=1e-9)

    def test_custom_target(self, tmp_path):
        proc = run_cli(
            "calibrate", "--target-visibility", "0.85", "--out", str(tmp_path / "run")
        )
        assert proc.returncode == 0
        report = read_json(tmp_path / "run" / "report.json")
        assert report["data"]["achieved_visibility"] == pytest.approx(0.85, abs=1e-9)

    def test_infeasible_target_fails_validation(self):
        proc = run_cli("calibrate", "--target-visibility", "0.999")
        assert proc.returncode == 1
        assert "achievable maximum" in proc.stderr


class TestConfigHandling:
    def test_unknown_key_is_a_config_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"bogus": 1}')
        proc = run_cli("predict", "--config", str(bad))
        assert proc.returncode == 1
        assert "config error" in proc.stderr
        assert "bogus" in proc.stderr

    def test_malformed_json_is_a_config_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        proc = run_cli("predict", "--config", str(bad))
        assert proc.returncode == 1
        assert "config error" in proc.stderr

    def test_missing_file_is_an_io_error(self, tmp_path):
        proc = run_cli("predict", "--config", str(tmp_path / "absent.json"))
        assert proc.returncode == 2

    def test_width_must_not_be_given_twice(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"sigma_ps": 1.7, "fwhm_ps": 4.0}))
        proc = run_cli("predict", "--config", str(bad))
        assert proc.returncode == 1
        assert "config error" in proc.stderr


class TestDipScan:
    def test_writes_points_and_report(self, tmp_path):
        out = tmp_path / "run"
        proc = run_cli(
            "dip-scan", *BOOST,
            "--gates", "2e4", "--seed", "5", "--delay-steps", "9",
            "--out", str(out),
        )
        assert proc.returncode == 0
        points = read_points_csv(out / "points.csv")
        assert len(points) == 9
        assert points[0].delay_ps == -6.0
        assert points[-1].delay_ps == 6.0
        report = read_json(out / "report.json")
        assert report["kind"] == "dip-scan"
        assert report["seed"] == 5
        assert report["data"]["fit"]["converged"] is True
        header = (out / "points.csv").read_text().splitlines()[0]
        assert header == "delay_ps,gates,singles_a,singles_b,coincidences"

    def test_repeats_add_spread_columns(self, tmp_path):
        out = tmp_path / "run"
        proc = run_cli(
            "dip-scan", *BOOST,
            "--gates", "5e4", "--seed", "5", "--repeats", "3",
            "--delay-steps", "9", "--out", str(out),
        )
        assert proc.returncode == 0
        header = (out / "points.csv").read_text().splitlines()[0]
        assert header == "delay_ps,gates,singles_a,singles_b,coincidences,mean,stddev"
        report = read_json(out / "report.json")
        assert report["data"]["repeats"] == 3
        assert len(report["data"]["repeat_stats"]) == 9

    def test_unfittable_scan_exits_no_convergence(self, tmp_path):
        # The calibrated defaults yield an almost empty scan at 100 gates
        # per point; the report still carries the counts and the reason.
        out = tmp_path / "run"
        proc = run_cli(
            "dip-scan", "--gates", "100", "--seed", "1", "--out", str(out)
        )
        assert proc.returncode == 3
        report = read_json(out / "report.json")
        assert report["data"]["fit"] is None
        assert report["data"]["fit_error"]

    def test_format_selection(self, tmp_path):
        csv_only = tmp_path / "csv_only"
        proc = run_cli(
            "dip-scan", *BOOST, "--gates", "2e4", "--seed", "5",
            "--delay-steps", "9", "--format", "csv", "--out", str(csv_only),
        )
        assert proc.returncode == 0
        assert (csv_only / "points.csv").exists()
        assert not (csv_only / "report.json").exists()

        json_only = tmp_path / "json_only"
        proc = run_cli(
            "dip-scan", *BOOST, "--gates", "2e4", "--seed", "5",
            "--delay-steps", "9", "--format", "json", "--out", str(json_only),
        )
        assert proc.returncode == 0
        assert not (json_only / "points.csv").exists()
        assert (json_only / "report.json").exists()

    def test_step_count_floor(self):
        proc = run_cli("dip-scan", *BOOST, "--delay-steps", "3")
        assert proc.returncode == 1

    def test_rerun_is_byte_identical(self, tmp_path):
        args = (
            "dip-scan", *BOOST, "--gates", "2e4", "--seed", "6",
            "--delay-steps", "7",
        )
        run_cli(*args, "--out", str(tmp_path / "a"))
        run_cli(*args, "--out", str(tmp_path / "b"))
        csv_a = (tmp_path / "a" / "points.csv").read_bytes()
        csv_b = (tmp_path / "b" / "points.csv").read_bytes()
        assert csv_a == csv_b
        strip = lambda p: [
            line for line in p.read_text().splitlines() if "wall_seconds" not in line
        ]
        assert strip(tmp_path / "a" / "report.json") == strip(tmp_path / "b" / "report.json")


class TestFitSubcommand:
    def test_refits_emitted_points(self, tmp_path):
        scan_out = tmp_path / "scan"
        proc = run_cli(
            "dip-scan", *BOOST, "--gates", "5e4", "--seed", "8",
            "--out", str(scan_out),
        )
        assert proc.returncode == 0
        fit_out = tmp_path / "fit"
        proc = run_cli(
            "fit", str(scan_out / "points.csv"), *BOOST, "--out", str(fit_out),
        )
        assert proc.returncode == 0
        scan_fit = read_json(scan_out / "report.json")["data"]["fit"]
        refit = read_json(fit_out / "report.json")["data"]["fit"]
        assert refit["visibility"] == pytest.approx(scan_fit["visibility"], rel=1e-12)
        assert refit["sigma_ps"] == pytest.approx(scan_fit["sigma_ps"], rel=1e-12)
        lines = (fit_out / "fit.csv").read_text().splitlines()
        assert lines[0] == "parameter,estimate,std_error"
        assert any(line.startswith("visibility,") for line in lines)

    def test_rejects_malformed_csv(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("delay_ps,gates\n0.0,10\n")
        proc = run_cli("fit", str(bad))
        assert proc.returncode == 1
        assert "error" in proc.stderr


class TestCar:
    CAR_FLAGS = (
        "--eta", "0.1", "--pairs-per-pulse", "0.03",
        "--dark-prob-a", "1e-4", "--dark-prob-b", "1e-4",
    )

    def test_reports_car_and_pair_rate(self, tmp_path):
        out = tmp_path / "run"
        proc = run_cli(
            "car", *self.CAR_FLAGS, "--gates", "5e6", "--seed", "4",
            "--out", str(out),
        )
        assert proc.returncode == 0
        report = read_json(out / "report.json")
        data = report["data"]
        assert data["delay_auto_offset"] is True
        assert data["delay_ps_used"] >= 10.0 * report["analytic"]["sigma_ps"]
        assert data["p_estimate"] == pytest.approx(0.03, rel=0.2)
        assert data["car"] > 1.0
        lines = (out / "car_offsets.csv").read_text().splitlines()
        assert lines[0] == "offset_gates,coincidences"
        assert lines[1].startswith("0,")
        assert len(lines) == 12  # header + matched + 10 offsets

    def test_explicit_far_delay_is_kept(self, tmp_path):
        out = tmp_path / "run"
        proc = run_cli(
            "car", *self.CAR_FLAGS, "--delay-ps", "80", "--gates", "5e6",
            "--seed", "4", "--out", str(out),
        )
        assert proc.returncode == 0
        report = read_json(out / "report.json")
        assert report["data"]["delay_auto_offset"] is False
        assert report["data"]["delay_ps_used"] == 80.0

    def test_too_few_gates_is_a_statistics_error(self):
        proc = run_cli("car", *self.CAR_FLAGS, "--gates", "1e4")
        assert proc.returncode == 2
        assert "insufficient statistics" in proc.stderr

    def test_dark_only_car_is_near_one(self, tmp_path):
        proc = run_cli(
            "car",
            "--pairs-per-pulse", "0",
            "--eta", "0.1",
            "--dark-prob-a", "0.01", "--dark-prob-b", "0.01",
            "--gates", "4e8", "--seed", "13",
            "--out", str(tmp_path / "run"),
        )
        assert proc.returncode == 0
        report = read_json(tmp_path / "run" / "report.json")
        assert report["data"]["car"] == pytest.approx(1.0, abs=0.35)


class TestVisibilitySweep:
    def test_sweep_table_and_csv(self, tmp_path):
        out = tmp_path / "run"
        proc = run_cli(
            "visibility-sweep", "--eta", "0.2", "--pairs", "0.02,0.05",
            "--gates", "2e5", "--seed", "3", "--out", str(out),
        )
        assert proc.returncode == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0].startswith("pairs_per_pulse,visibility_fit")
        assert len(lines) == 3
        report = read_json(out / "report.json")
        rows = report["data"]["rows"]
        assert [row["pairs_per_pulse"] for row in rows] == [0.02, 0.05]
        for row in rows:
            assert row["fit"]["converged"] is True
            assert row["visibility_predicted"] is not None

    def test_empty_pair_list_is_a_usage_error(self):
        proc = run_cli("visibility-sweep", "--pairs", "")
        assert proc.returncode == 1

    def test_unfittable_rows_exit_no_convergence(self, tmp_path):
        proc = run_cli(
            "visibility-sweep", "--pairs", "0.03", "--gates", "100",
            "--seed", "1", "--out", str(tmp_path / "run"),
        )
        assert proc.returncode == 3
