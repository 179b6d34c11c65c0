import json
import math

import numpy as np
import pytest

from robustcbf import assemble_constraints, circle_init, zero_union
from robustcbf.cli import (
    EXIT_CHECK,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_RUNTIME,
    ConfigError,
    load_config,
    main,
    run_command,
    summarize,
    trace_command,
)

from .conftest import SCENARIO_DIR


def write_scenario(tmp_path, body, name="scenario.yaml"):
    path = tmp_path / name
    path.write_text(body)
    return path


MINIMAL = """
robots:
  count: 2
sim:
  duration: 0.2
"""

SMALL_RUN = """
robots:
  count: 2
barrier:
  delta: 0.12
  gamma: 150.0
disturbance:
  psi: 2.0
sim:
  dt: 0.005
  duration: 0.5
  radius: 0.6
  seed: 9
  iterations: 2
  plant_disturbance: uniform-convex
filter:
  u_max: 25.0
  fallback: slack
"""


class TestLoadConfig:
    def test_minimal_file_applies_testbed_defaults(self, tmp_path):
        cfg = load_config(write_scenario(tmp_path, MINIMAL))
        assert cfg.robot_count == 2
        assert cfg.sim_duration == 0.2
        assert cfg.geometry.wheel_radius == 0.016
        assert cfg.geometry.base_length == 0.105
        assert cfg.geometry.look_ahead == 0.03
        assert cfg.barrier.delta == 0.12
        assert cfg.barrier.gamma == 150.0
        assert cfg.u_max == 25.0
        assert cfg.dt == 0.005
        np.testing.assert_array_equal(
            cfg.disturbance.hulls[0].vertices,
            [[5.0, 5.0], [5.0, -5.0], [-5.0, 5.0], [-5.0, -5.0]],
        )

    def test_negative_psi_rejected_with_field_name(self, tmp_path):
        path = write_scenario(tmp_path, MINIMAL + "disturbance:\n  psi: -1\n")
        with pytest.raises(ConfigError, match="disturbance.psi"):
            load_config(path)

    def test_shipped_circle22_scenario(self):
        cfg = load_config(SCENARIO_DIR / "circle22.yaml")
        assert cfg.robot_count == 22
        assert cfg.barrier.gamma == 150.0
        assert cfg.barrier.delta == 0.12
        assert cfg.u_max == 25.0
        assert cfg.iterations == 20
        assert cfg.plant_disturbance == "worst-case"
        box = cfg.disturbance.hulls[0].vertices
        assert np.abs(box).max() == 5.0

    def test_unknown_section_and_key_are_errors(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown section"):
            load_config(write_scenario(tmp_path, MINIMAL + "turbo:\n  x: 1\n"))
        with pytest.raises(ConfigError, match="unknown key robots.color"):
            load_config(
                write_scenario(tmp_path, "robots:\n  count: 2\n  color: red\nsim:\n  duration: 1.0\n")
            )

    def test_parse_error_reports_position(self, tmp_path):
        path = write_scenario(tmp_path, "robots:\n  count: [unclosed\n")
        with pytest.raises(ConfigError, match="line"):
            load_config(path)

    def test_missing_required_keys(self, tmp_path):
        with pytest.raises(ConfigError, match="robots.count"):
            load_config(write_scenario(tmp_path, "sim:\n  duration: 1.0\n"))
        with pytest.raises(ConfigError, match="sim.duration"):
            load_config(write_scenario(tmp_path, "robots:\n  count: 2\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.yaml")

    def test_explicit_vertex_hulls(self, tmp_path):
        body = MINIMAL + (
            "disturbance:\n"
            "  hulls:\n"
            "    - vertices: [[1.0, 0.0], [0.0, 1.0]]\n"
            "    - vertices: [[2.0, 2.0]]\n"
        )
        cfg = load_config(write_scenario(tmp_path, body))
        assert cfg.disturbance.size == 2
        assert cfg.disturbance.hulls[0].size == 2
        assert cfg.disturbance.hulls[1].size == 1

    def test_psi_and_hulls_conflict(self, tmp_path):
        body = MINIMAL + "disturbance:\n  psi: 1.0\n  hulls:\n    - vertices: [[0, 0]]\n"
        with pytest.raises(ConfigError, match="either psi or hulls"):
            load_config(write_scenario(tmp_path, body))

    def test_invariant_violations_surface_field_names(self, tmp_path):
        with pytest.raises(ConfigError, match="gamma"):
            load_config(write_scenario(tmp_path, MINIMAL + "barrier:\n  gamma: -5\n"))
        with pytest.raises(ConfigError, match="circle_radius"):
            load_config(
                write_scenario(
                    tmp_path,
                    "robots:\n  count: 22\nsim:\n  duration: 1.0\n  radius: 0.1\n",
                )
            )

    def test_zero_look_ahead_rejected_at_load(self, tmp_path):
        body = "robots:\n  count: 2\n  look_ahead: 0.0\nsim:\n  duration: 1.0\n"
        with pytest.raises(ConfigError, match="look_ahead"):
            load_config(write_scenario(tmp_path, body))


class TestRunCommand:
    def test_run_writes_metrics_and_summary(self, tmp_path):
        scenario = write_scenario(tmp_path, SMALL_RUN)
        out = tmp_path / "out"
        assert run_command(scenario, out, mode="robust") == EXIT_OK
        files = sorted(p.name for p in out.iterdir())
        assert files == ["metrics_00.csv", "metrics_01.csv", "summary.json"]
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary) == {
            "avg_wct_ms",
            "var_wct_ms2",
            "avg_freq_hz",
            "violation_time_s",
            "goal_completion",
        }

    def test_summary_recomputable_from_records(self, tmp_path):
        scenario = write_scenario(tmp_path, SMALL_RUN)
        out = tmp_path / "out"
        assert run_command(scenario, out, mode="robust") == EXIT_OK
        wct, min_h = [], []
        for name in ("metrics_00.csv", "metrics_01.csv"):
            rows = (out / name).read_text().strip().splitlines()
            assert rows[0] == "t,min_h,wct_s,max_alter"
            body = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
            assert body.shape[0] == 100
            min_h.append(body[:, 1])
            wct.append(body[:, 2])
        wct = np.concatenate(wct)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["avg_wct_ms"] == pytest.approx(wct.mean() * 1e3, abs=1e-9)
        assert summary["var_wct_ms2"] == pytest.approx(wct.var() * 1e6, abs=1e-9)
        assert summary["avg_freq_hz"] == pytest.approx(1.0 / wct.mean(), rel=1e-9)
        violation = 0.005 * sum(int((m < 0).sum()) for m in min_h)
        assert summary["violation_time_s"] == pytest.approx(violation, abs=1e-12)

    def test_both_mode_writes_comparison(self, tmp_path):
        scenario = write_scenario(tmp_path, SMALL_RUN)
        out = tmp_path / "out"
        assert run_command(scenario, out, mode="both") == EXIT_OK
        assert (out / "robust" / "summary.json").is_file()
        assert (out / "non_robust" / "summary.json").is_file()
        compare = json.loads((out / "compare.json").read_text())
        assert set(compare) == {"robust", "non_robust", "delta"}
        assert "violation_time_s" in compare["delta"]

    def test_mode_honesty_rhs_differs_only_in_the_margin(self, tmp_path):
        # First-step constraint stacks: robust minus non-robust rhs equals
        # the (negated) support minima, and the matrices coincide.
        cfg = load_config(SCENARIO_DIR / "circle22.yaml")
        states = circle_init(cfg.robot_count, cfg.circle_radius, cfg.geometry, cfg.barrier)
        robust = assemble_constraints(
            states, cfg.geometry, cfg.barrier, cfg.disturbance, cfg.u_max
        )
        plain = assemble_constraints(
            states, cfg.geometry, cfg.barrier, zero_union(), cfg.u_max
        )
        np.testing.assert_array_equal(robust.A, plain.A)
        margins = robust.b - plain.b
        assert np.all(margins >= 0.0)
        assert margins.max() > 0.0

    def test_invalid_out_dir_fails_without_partial_files(self, tmp_path):
        scenario = write_scenario(tmp_path, SMALL_RUN)
        blocker = tmp_path / "blocked"
        blocker.write_text("file, not a directory")
        assert run_command(scenario, blocker, mode="robust") == EXIT_RUNTIME
        assert blocker.read_text() == "file, not a directory"

    def test_config_error_exit_code(self, tmp_path):
        bad = write_scenario(tmp_path, "robots:\n  count: 2\n")
        assert run_command(bad, tmp_path / "out", mode="robust") == EXIT_CONFIG
        assert not (tmp_path / "out").exists()

    def test_unknown_mode_is_config_error(self, tmp_path):
        scenario = write_scenario(tmp_path, SMALL_RUN)
        assert run_command(scenario, tmp_path / "out", mode="chaotic") == EXIT_CONFIG

    def test_check_flag_flags_missing_violations(self, tmp_path):
        # Non-robust mode expects violations; a disturbance-free plant
        # cannot produce them, so --check reports a breach.
        body = SMALL_RUN.replace("plant_disturbance: uniform-convex", "plant_disturbance: off")
        scenario = write_scenario(tmp_path, body)
        code = run_command(scenario, tmp_path / "out", mode="non-robust", check=True)
        assert code == EXIT_CHECK

    def test_check_flag_passes_benign_robust(self, tmp_path):
        scenario = write_scenario(tmp_path, SMALL_RUN)
        assert run_command(scenario, tmp_path / "out", mode="robust", check=True) == EXIT_OK

    def test_empty_duration_run_succeeds_with_header_only(self, tmp_path):
        body = SMALL_RUN.replace("duration: 0.5", "duration: 0.004").replace(
            "iterations: 2", "iterations: 1"
        )
        scenario = write_scenario(tmp_path, body)
        out = tmp_path / "out"
        assert run_command(scenario, out, mode="robust", check=True) == EXIT_OK
        assert (out / "metrics.csv").read_text() == "t,min_h,wct_s,max_alter\n"
        summary = json.loads((out / "summary.json").read_text())
        assert summary["avg_wct_ms"] is None
        assert summary["violation_time_s"] == 0.0

    def test_seed_override_changes_outputs(self, tmp_path):
        scenario = write_scenario(tmp_path, SMALL_RUN)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert run_command(scenario, out_a, mode="robust", seed=1) == EXIT_OK
        assert run_command(scenario, out_b, mode="robust", seed=2) == EXIT_OK
        a = (out_a / "metrics_00.csv").read_text()
        b = (out_b / "metrics_00.csv").read_text()
        assert a != b


class TestTraceCommand:
    def test_trace_writes_two_columns(self, tmp_path):
        scenario = write_scenario(tmp_path, SMALL_RUN)
        out = tmp_path / "trace.csv"
        assert trace_command(scenario, out) == EXIT_OK
        rows = out.read_text().strip().splitlines()
        assert rows[0] == "t,min_h"
        assert len(rows) == 1 + 100

    def test_first_row_matches_the_chord_value(self, tmp_path):
        scenario = write_scenario(tmp_path, SMALL_RUN)
        out = tmp_path / "trace.csv"
        assert trace_command(scenario, out) == EXIT_OK
        first = out.read_text().strip().splitlines()[1].split(",")
        assert float(first[0]) == 0.0
        chord = 2.0 * (0.6 - 0.03) * math.sin(math.pi / 2.0)
        assert float(first[1]) == pytest.approx(chord**2 - 0.12**2, rel=1e-12)

    def test_empty_duration_gives_header_only(self, tmp_path):
        body = SMALL_RUN.replace("duration: 0.5", "duration: 0.004")
        scenario = write_scenario(tmp_path, body)
        out = tmp_path / "trace.csv"
        assert trace_command(scenario, out) == EXIT_OK
        assert out.read_text() == "t,min_h\n"

    def test_trace_is_byte_identical_across_reruns(self, tmp_path):
        scenario = write_scenario(tmp_path, SMALL_RUN)
        out = tmp_path / "trace.csv"
        assert trace_command(scenario, out) == EXIT_OK
        first = out.read_bytes()
        assert trace_command(scenario, out) == EXIT_OK
        assert out.read_bytes() == first

    def test_metrics_deterministic_columns_idempotent(self, tmp_path):
        # Wall clock is measured, so only the deterministic columns repeat.
        scenario = write_scenario(tmp_path, SMALL_RUN)
        out = tmp_path / "out"
        run_command(scenario, out, mode="robust")
        first = (out / "metrics_00.csv").read_text().strip().splitlines()
        run_command(scenario, out, mode="robust")
        second = (out / "metrics_00.csv").read_text().strip().splitlines()
        for row_a, row_b in zip(first[1:], second[1:]):
            a = row_a.split(",")
            b = row_b.split(",")
            assert a[0] == b[0]
            assert a[1] == b[1]
            assert a[3] == b[3]

    def test_config_error_exit(self, tmp_path):
        assert trace_command(tmp_path / "missing.yaml", tmp_path / "t.csv") == EXIT_CONFIG


class TestMain:
    def test_run_subcommand(self, tmp_path):
        scenario = write_scenario(tmp_path, SMALL_RUN)
        code = main(["run", str(scenario), "--out", str(tmp_path / "out"), "--mode", "robust"])
        assert code == EXIT_OK

    def test_trace_subcommand(self, tmp_path):
        scenario = write_scenario(tmp_path, SMALL_RUN)
        code = main(["trace", str(scenario), "--out", str(tmp_path / "trace.csv")])
        assert code == EXIT_OK

    def test_jobs_flag_accepted(self, tmp_path):
        scenario = write_scenario(tmp_path, SMALL_RUN)
        code = main(
            ["run", str(scenario), "--out", str(tmp_path / "out"), "--jobs", "2"]
        )
        assert code == EXIT_OK


class TestSummarize:
    def test_empty_runs(self):
        summary = summarize([])
        assert summary["avg_wct_ms"] is None
        assert summary["violation_time_s"] == 0.0


class TestMetricExport:
    def test_record_count_and_consistency(self, tmp_path):
        from robustcbf import repeat_experiment
        from robustcbf.cli import MetricExport

        cfg = load_config(write_scenario(tmp_path, SMALL_RUN))
        runs = repeat_experiment(cfg)
        export = MetricExport.from_runs(runs, cfg.dt)
        assert export.records.shape == (cfg.iterations * cfg.steps(), 4)
        assert export.consistency_error() <= 1e-9

    def test_empty_export(self):
        from robustcbf.cli import MetricExport

        export = MetricExport.from_runs([], 0.005)
        assert export.records.shape == (0, 4)
        assert export.consistency_error() == 0.0
