"""Unit tests for the command-line surface and logging setup."""
import logging

import pandas as pd
import pytest

from app.cli import cli_dispatch, setup_logging
from app.exceptions import EXIT_INVARIANT, EXIT_OK, EXIT_USAGE
from app.persistence import load_trajectory
from app.reporting import read_key_values
from utils.logging import NewtonIterationFilter, StepNoiseFilter


def _record(message: str, level: int = logging.DEBUG) -> logging.LogRecord:
    return logging.LogRecord("app.core.evolution", level, __file__, 1, message, None, None)


@pytest.mark.unit
class TestArguments:
    """Parsing and usage errors."""

    def test_help(self, capsys):
        assert cli_dispatch(["--help"]) == EXIT_OK

    @pytest.mark.parametrize(
        "argv",
        [
            [],
            ["unknown"],
            ["soliton", "--p", "1"],
            ["spectrum", "--p", "one", "--omega", "0"],
        ],
    )
    def test_usage_errors(self, argv, capsys):
        assert cli_dispatch(argv) == EXIT_USAGE

    def test_sonic_speed(self, tmp_path, capsys):
        assert cli_dispatch(["soliton", "--p", "1", "--omega", "1.0", "--out", str(tmp_path)]) == EXIT_USAGE
        assert "omega" in capsys.readouterr().out

    def test_evolve_needs_a_soliton(self, capsys):
        assert cli_dispatch(["evolve", "--t-end", "1"]) == EXIT_USAGE
        assert "--config" in capsys.readouterr().out

    def test_missing_manifest(self, tmp_path, capsys):
        assert cli_dispatch(["multisoliton", "--config", str(tmp_path / "nope.txt")]) == EXIT_USAGE


@pytest.mark.unit
class TestSubcommands:
    """Outputs of the fast subcommands."""

    def test_soliton(self, tmp_path, capsys):
        assert cli_dispatch(["soliton", "--p", "1", "--omega", "0.5", "--out", str(tmp_path)]) == EXIT_OK
        values = read_key_values(tmp_path / "soliton.txt")
        assert float(values["elliptic_residual"]) <= 1e-8
        profile = pd.read_csv(tmp_path / "profile.csv")
        assert list(profile.columns) == ["x", "u1", "u2"]
        assert profile["u1"].max() == pytest.approx((0.75**0.5) * 2**0.5, rel=1e-3)
        assert "elliptic_residual:" in capsys.readouterr().out

    def test_spectrum(self, tmp_path, capsys):
        assert cli_dispatch(["spectrum", "--p", "1", "--omega", "0", "--out", str(tmp_path)]) == EXIT_OK
        values = read_key_values(tmp_path / "spectrum.txt")
        assert values["certified"] == "yes"
        assert float(values["gamma0_correlation"]) > 1 - 1e-8
        assert float(values["negative_eigenvalues"]) == pytest.approx(-3.0, abs=1e-8)

    def test_spectrum_critical(self, capsys):
        assert cli_dispatch(["spectrum", "--p", "2", "--omega", "0"]) == EXIT_USAGE

    def test_spectrum_sweep(self, tmp_path, capsys):
        argv = ["spectrum", "--sweep", "--p-values", "1", "--omega-values", "0", "0.3", "--out", str(tmp_path)]
        assert cli_dispatch(argv) == EXIT_OK
        sweep = pd.read_csv(tmp_path / "sweep.csv")
        assert list(sweep["omega"]) == [0.0, 0.3]
        assert sweep["certified"].all()

    def test_evolve_modulate_report(self, tmp_path, capsys):
        """A short single-soliton run is conserved, modulates cleanly and reports PASS."""
        run = tmp_path / "single"
        argv = ["evolve", "--p", "1", "--omega", "0.5", "--t-end", "0.1", "--out", str(run)]
        assert cli_dispatch(argv) == EXIT_OK
        for name in ("manifest.txt", "conservation.csv", "trajectory.ckpt", "evolve.txt", "job_timings.csv"):
            assert (run / name).is_file()
        values = read_key_values(run / "evolve.txt")
        assert float(values["analytic_sup_error"]) <= 1e-6
        assert float(values["peak_speed"]) == pytest.approx(0.5, abs=1e-6)
        assert load_trajectory(run / "trajectory.ckpt")[-1].time == pytest.approx(0.1)

        argv = ["modulate", "--p", "1", "--omega", "0.5", "--checkpoint", str(run / "trajectory.ckpt"), "--all", "--out", str(run)]
        assert cli_dispatch(argv) == EXIT_OK
        modulation = pd.read_csv(run / "modulation.csv")
        assert len(modulation) == len(load_trajectory(run / "trajectory.ckpt"))
        assert modulation["omega_1"].sub(0.5).abs().max() < 1e-8

        capsys.readouterr()
        assert cli_dispatch(["report", str(run)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "OVERALL: PASS" in out
        assert (run / "summary.txt").is_file()

    def test_report_on_empty_directory(self, tmp_path, capsys):
        assert cli_dispatch(["report", str(tmp_path)]) == EXIT_INVARIANT


@pytest.mark.unit
class TestLogging:
    """Filters and configuration loading."""

    def test_step_filter(self, monkeypatch):
        step_filter = StepNoiseFilter()
        assert not step_filter.filter(_record("step 3/10 t=0.1"))
        assert step_filter.filter(_record("step 3/10 t=0.1", logging.INFO))
        assert step_filter.filter(_record("Evolving forward"))
        monkeypatch.setenv("BLAB_VERBOSE_STEPS", "1")
        assert step_filter.filter(_record("step 3/10 t=0.1"))

    def test_newton_filter(self):
        newton_filter = NewtonIterationFilter()
        assert not newton_filter.filter(_record("newton iteration 2: |F|=1e-3"))
        assert newton_filter.filter(_record("Modulated t=1"))

    def test_yaml_config(self, monkeypatch, request):
        """The shipped dictConfig installs both filters on the stderr handler."""
        monkeypatch.setenv("BLAB_LOG_CONFIG", str(request.config.rootpath / "logging_config.yml"))
        root = logging.getLogger()
        saved = root.handlers[:], root.level
        try:
            setup_logging()
            filters = [type(f).__name__ for h in root.handlers for f in h.filters]
            assert {"StepNoiseFilter", "NewtonIterationFilter"} <= set(filters)
            assert logging.getLogger("app.core.evolution").level == logging.INFO
        finally:
            root.handlers[:] = saved[0]
            root.setLevel(saved[1])
