"""End-to-end command-line tests covering every exit code."""

import csv
import json
import os
import textwrap

import pytest

from otlab.cli import main

PI2 = 6.283185307179586


def _write(path, text):
    path.write_text(textwrap.dedent(text))
    return str(path)


def _summary(out_dir):
    with open(os.path.join(str(out_dir), "run_summary.json")) as handle:
        return json.load(handle)


def _trace_rows(out_dir):
    with open(os.path.join(str(out_dir), "trace.csv"), newline="") as handle:
        return list(csv.DictReader(handle))


def _identity_2d(tmp_path, out_name="run"):
    return _write(tmp_path / "identity.toml", f"""\
        [manifold]
        kind = "torus"
        dimension = 2
        period = {PI2}
        resolution = 16

        [mu]
        family = "uniform"

        [nu]
        family = "uniform"

        [ledger]
        cbar = 1.0
        grad_budget = 0.0015

        [outputs]
        directory = "{tmp_path / out_name}"
        """)


def _small_1d(tmp_path, out_name="run", amplitude=5e-5, budget=1.5e-3,
              extra=""):
    return _write(tmp_path / f"{out_name}.toml", f"""\
        [manifold]
        kind = "torus"
        dimension = 1
        period = {PI2}
        resolution = 64

        [mu]
        family = "uniform"

        [nu]
        family = "harmonic"
        amplitude = {amplitude}
        wavevector = [1]
        phase = 0.3

        [ledger]
        cbar = 1.0
        grad_budget = {budget}

        [outputs]
        directory = "{tmp_path / out_name}"
        """ + textwrap.dedent(extra))


def _quadratic_ledger(tmp_path, budget, out_name="run", extra=""):
    """Explicit constants whose split polynomial is x/d^2 = 1 + x^2."""
    return _write(tmp_path / f"{out_name}.toml", f"""\
        [manifold]
        kind = "torus"
        dimension = 1
        period = {PI2}
        resolution = 16

        [mu]
        family = "uniform"

        [nu]
        family = "uniform"

        [ledger]
        cbar = 1.0
        grad_budget = {budget}
        mode = "explicit"
        poly_c1 = 1.0
        poly_c2 = 1.0

        [outputs]
        directory = "{tmp_path / out_name}"
        """ + textwrap.dedent(extra))


class TestSolve:
    def test_identity_exit0_single_trace_row(self, tmp_path):
        cfg = _identity_2d(tmp_path)
        assert main(["solve", cfg]) == 0
        out = tmp_path / "run"
        rows = _trace_rows(out)
        assert len(rows) == 1
        assert float(rows[0]["t"]) == 1.0
        assert float(rows[0]["residual_inf"]) == 0.0
        assert (out / "fields.csv").exists()
        assert (out / "heatmap.svg").exists()
        summary = _summary(out)
        assert summary["status"] == "ok"
        assert summary["exit_code"] == 0
        assert summary["trace"]["length"] == 2  # seed + one step

    def test_certificate_granted_for_small_target(self, tmp_path):
        cfg = _small_1d(tmp_path)
        assert main(["solve", cfg]) == 0
        summary = _summary(tmp_path / "run")
        cert = summary["certificate"]
        assert cert["granted"] is True
        assert cert["lambda_max"] <= cert["hessian_cap"]
        assert cert["grad_max"] <= cert["grad_budget"]
        assert len(_trace_rows(tmp_path / "run")) >= 1

    def test_budget_excess_is_advisory_not_fatal(self, tmp_path):
        cfg = _small_1d(tmp_path, budget=1e-9)
        assert main(["solve", cfg]) == 0
        summary = _summary(tmp_path / "run")
        cert = summary["certificate"]
        assert cert["granted"] is False
        assert "gradient budget exceeded" in cert["reason"]
        guard = summary["guard"]
        assert guard["precondition_met"] is False

    def test_identical_runs_are_byte_identical(self, tmp_path):
        cfg = _small_1d(tmp_path)
        dir_a = str(tmp_path / "a")
        dir_b = str(tmp_path / "b")
        assert main(["solve", cfg, "--set",
                     f"outputs.directory={dir_a}"]) == 0
        assert main(["solve", cfg, "--set",
                     f"outputs.directory={dir_b}"]) == 0
        for name in ("trace.csv", "fields.csv"):
            with open(os.path.join(dir_a, name), "rb") as fa, \
                    open(os.path.join(dir_b, name), "rb") as fb:
                assert fa.read() == fb.read()

    def test_solver_failure_exit3_keeps_artifacts(self, tmp_path):
        cfg = _small_1d(tmp_path, amplitude=0.3, extra="""
            [solver]
            dt_min = 0.4
            max_newton = 1
            """)
        assert main(["solve", cfg]) == 3
        out = tmp_path / "run"
        assert _trace_rows(out) == []  # failed before any accepted step
        assert (out / "fields.csv").exists()
        summary = _summary(out)
        assert summary["status"] == "solver-failure"
        assert summary["error"]["type"] == "StepUnderflow"
        assert summary["certificate"]["granted"] is False
        assert "solver failure" in summary["certificate"]["reason"]

    def test_3d_identity_writes_slice_tables(self, tmp_path):
        cfg = _write(tmp_path / "cube.toml", f"""\
            [manifold]
            kind = "torus"
            dimension = 3
            period = {PI2}
            resolution = 8

            [mu]
            family = "uniform"

            [nu]
            family = "uniform"

            [outputs]
            directory = "{tmp_path / "cube"}"
            """)
        assert main(["solve", cfg]) == 0
        slices = sorted(p.name for p in (tmp_path / "cube").glob(
            "heatmap_slice*.csv"))
        assert len(slices) == 8


class TestWasserstein:
    def test_exact_distance_ordering(self, tmp_path):
        cfg = _small_1d(tmp_path, amplitude=0.01, extra="""
            [wasserstein]
            method = "exact"
            """)
        assert main(["wasserstein", cfg]) == 0
        d = _summary(tmp_path / "run")["distances"]
        assert d["method"] == "exact"
        assert d["atoms"] == 64
        assert 0.0 < d["w1"] <= d["w2"] + 1e-12
        assert d["lp_gap_w2"] < 1e-8

    def test_quantize_coarsens_atoms(self, tmp_path):
        cfg = _identity_2d(tmp_path)
        assert main(["wasserstein", cfg, "--set",
                     "wasserstein.quantize=8"]) == 0
        d = _summary(tmp_path / "run")["distances"]
        assert d["atoms"] == 64
        assert d["w1"] == pytest.approx(0.0, abs=1e-9)

    def test_sinkhorn_flagged_approximate(self, tmp_path):
        cfg = _small_1d(tmp_path, amplitude=0.01, extra="""
            [wasserstein]
            method = "sinkhorn"
            epsilon = 0.05
            """)
        assert main(["wasserstein", cfg]) == 0
        d = _summary(tmp_path / "run")["distances"]
        assert d["approximate"] is True
        assert d["converged"] is True
        assert d["marginal_violation"] < 1e-5
        assert d["cost_debiased"] <= d["cost"]


class TestVerifySplit:
    def test_reproduces_quadratic_roots(self, tmp_path):
        cfg = _quadratic_ledger(tmp_path, budget=0.1)
        assert main(["verify", "split", cfg]) == 0
        verify = _summary(tmp_path / "run")["verify"]
        split = verify["split"]
        assert split["exists"] is True
        assert split["root_low"] == pytest.approx(
            0.010001000200050014, rel=1e-12)
        assert split["root_high"] == pytest.approx(
            99.98999899979995, rel=1e-12)
        assert split["delta0_star"] == pytest.approx(0.25 ** 0.25,
                                                     rel=1e-12)
        # root_high sits far below the Hessian cap: no straddle.
        assert verify["split_valid"] is False

    def test_straddling_budget_validates_split(self, tmp_path):
        cfg = _quadratic_ledger(tmp_path, budget=0.005)
        assert main(["verify", "split", cfg]) == 0
        verify = _summary(tmp_path / "run")["verify"]
        assert verify["split_valid"] is True
        assert verify["split"]["root_low"] < verify["hessian_cap"]
        assert verify["split"]["root_high"] > verify["hessian_cap"] + 1.0


class TestVerifyGuard:
    def test_all_ok_exit0(self, tmp_path):
        cfg = _quadratic_ledger(tmp_path, budget=0.005, extra="""
            [verify]
            lambdas = [1e-05, 1.0]
            """)
        assert main(["verify", "guard", cfg]) == 0
        reports = _summary(tmp_path / "run")["verify"]["guard"]
        assert [r["verdict"] for r in reports] == ["ok", "ok"]
        assert reports[0]["warning"] is False
        assert reports[1]["warning"] is True  # transitional band
        assert all(r["precondition_met"] for r in reports)

    def test_binding_violation_exit2(self, tmp_path):
        cfg = _quadratic_ledger(tmp_path, budget=0.005, extra="""
            [verify]
            lambdas = [38500.0, 50000.0]
            """)
        assert main(["verify", "guard", cfg]) == 2
        summary = _summary(tmp_path / "run")
        assert summary["status"] == "guard-violation"
        verdicts = [r["verdict"] for r in summary["verify"]["guard"]]
        assert verdicts == ["violated", "catastrophic"]

    def test_invalid_split_makes_guard_advisory(self, tmp_path):
        cfg = _quadratic_ledger(tmp_path, budget=0.1, extra="""
            [verify]
            lambdas = [38500.0]
            """)
        assert main(["verify", "guard", cfg]) == 0
        reports = _summary(tmp_path / "run")["verify"]["guard"]
        assert reports[0]["precondition_met"] is False

    def test_missing_lambdas_exit4(self, tmp_path, capsys):
        cfg = _quadratic_ledger(tmp_path, budget=0.005)
        assert main(["verify", "guard", cfg]) == 4
        assert "verify.lambdas" in capsys.readouterr().err


class TestVerifyEstimates:
    def test_bbbb_bound_holds(self, tmp_path):
        cfg = _small_1d(tmp_path)
        assert main(["verify", "bbbb", cfg]) == 0
        verify = _summary(tmp_path / "run")["verify"]
        assert verify["bound_holds"] is True
        assert verify["proof_constant"] > 0.0
        assert verify["gradient_l2"]["grad_sup"] >= 0.0

    def test_cl1_audit_runs(self, tmp_path):
        cfg = _small_1d(tmp_path)
        assert main(["verify", "cl1", cfg]) == 0
        verify = _summary(tmp_path / "run")["verify"]
        report = verify["cl1"]
        assert report["bound_holds"] is True
        assert report["assembly_mismatch"] >= 0.0
        assert verify["delta0"] == 1.5e-3


class TestConfigErrors:
    def test_unknown_key_exit4_names_it(self, tmp_path, capsys):
        cfg = _small_1d(tmp_path)
        assert main(["solve", cfg, "--set", "solver.newton_tolx=1"]) == 4
        assert "solver.newton_tolx" in capsys.readouterr().err

    def test_malformed_toml_exit4(self, tmp_path, capsys):
        path = tmp_path / "bad.toml"
        path.write_text("not = [valid\n")
        assert main(["solve", str(path)]) == 4
        assert "not valid TOML" in capsys.readouterr().err

    def test_missing_file_exit4(self, tmp_path, capsys):
        assert main(["solve", str(tmp_path / "absent.toml")]) == 4
        assert "not found" in capsys.readouterr().err

    def test_build_stage_error_writes_summary(self, tmp_path, capsys):
        # Validation that only fires after the output directory exists
        # must still leave a machine-readable summary behind.
        cfg = _small_1d(tmp_path, amplitude=0.9)
        assert main(["solve", cfg]) == 4
        assert "above the budget" in capsys.readouterr().err
        summary = _summary(tmp_path / "run")
        assert summary["status"] == "config-error"
        assert summary["exit_code"] == 4


class TestSweep:
    def test_serial_sweep_aggregates_worst_exit(self, tmp_path, capsys):
        ok_a = _small_1d(tmp_path, out_name="ok_a")
        ok_b = _small_1d(tmp_path, out_name="ok_b")
        bad = _small_1d(tmp_path, out_name="bad", amplitude=0.3, extra="""
            [solver]
            dt_min = 0.4
            max_newton = 1
            """)
        assert main(["sweep", ok_a, ok_b, bad, "--jobs", "1"]) == 3
        out_lines = capsys.readouterr().out.strip().splitlines()
        assert len(out_lines) == 3
        assert any("exit 0" in line for line in out_lines)
        assert any("exit 3" in line for line in out_lines)
        assert _summary(tmp_path / "ok_a")["status"] == "ok"
        assert _summary(tmp_path / "bad")["status"] == "solver-failure"

    def test_parallel_sweep_runs_both(self, tmp_path):
        cfg_a = _small_1d(tmp_path, out_name="pa")
        cfg_b = _small_1d(tmp_path, out_name="pb")
        assert main(["sweep", cfg_a, cfg_b, "--jobs", "2"]) == 0
        assert _summary(tmp_path / "pa")["status"] == "ok"
        assert _summary(tmp_path / "pb")["status"] == "ok"

    def test_shared_output_directory_rejected(self, tmp_path, capsys):
        cfg_a = _small_1d(tmp_path, out_name="shared")
        cfg_b = _write(tmp_path / "other.toml",
                       (tmp_path / "shared.toml").read_text())
        assert main(["sweep", cfg_a, cfg_b]) == 4
        assert "share the output directory" in capsys.readouterr().err


class TestReport:
    def test_report_ends_with_certificate_line(self, tmp_path, capsys):
        cfg = _small_1d(tmp_path)
        assert main(["solve", cfg]) == 0
        capsys.readouterr()
        assert main(["report", str(tmp_path / "run")]) == 0
        text = capsys.readouterr().out
        assert text.splitlines()[-1] == "CERTIFICATE: Λ_max ≤ C₃+1"

    def test_report_is_deterministic(self, tmp_path, capsys):
        cfg = _identity_2d(tmp_path)
        assert main(["solve", cfg]) == 0
        capsys.readouterr()
        assert main(["report", str(tmp_path / "run")]) == 0
        first = capsys.readouterr().out
        assert main(["report", str(tmp_path / "run")]) == 0
        assert capsys.readouterr().out == first

    def test_failed_run_reports_reason(self, tmp_path, capsys):
        cfg = _small_1d(tmp_path, amplitude=0.3, extra="""
            [solver]
            dt_min = 0.4
            max_newton = 1
            """)
        assert main(["solve", cfg]) == 3
        capsys.readouterr()
        assert main(["report", str(tmp_path / "run")]) == 0
        last = capsys.readouterr().out.splitlines()[-1]
        assert last.startswith("NO CERTIFICATE: solver failure")

    def test_missing_artifacts_exit4(self, tmp_path, capsys):
        assert main(["report", str(tmp_path)]) == 4
        assert "run_summary.json" in capsys.readouterr().err
