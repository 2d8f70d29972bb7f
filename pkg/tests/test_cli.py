import json
import pytest

from app.cli import EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, build_parser, build_run_config, main
from app.models.schemas import StepScheme


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    """Run commands from a temporary directory."""
    monkeypatch.chdir(tmp_path)
    return tmp_path


def run_cli(*argv):
    return main(["--log-file", "cli.log", *argv])


class TestCurveCommands:
    """Tests for the curve-level subcommands."""

    def test_seed_writes_curve(self, workdir):
        """Test writing a seed curve file."""
        assert run_cli("seed", "--seed", "ellipse:1.2,0.8", "--samples", "32", "--out", "ellipse.json") == EXIT_OK
        data = json.loads((workdir / "ellipse.json").read_text())
        assert data["samples"] == 32
        assert data["dim"] == 2

    def test_energy_prints_json(self, workdir, capsys):
        """Test the energy report of the unit circle."""
        assert run_cli("energy", "--seed", "circle:1", "--samples", "32") == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["energy"] == pytest.approx(9.42477796076938)
        assert report["length"] == pytest.approx(6.283185307179586)

    def test_energy_of_curve_file(self, workdir, capsys):
        """Test reading the curve from a file and λ from the command line."""
        run_cli("seed", "--seed", "circle:2", "--samples", "32", "--out", "circle.json")
        capsys.readouterr()
        assert run_cli("energy", "--curve", "circle.json", "--lambda", "0.5") == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["energy"] == pytest.approx(7.853981633974483)

    def test_grad_check(self, workdir, capsys):
        """Test that the gradient check passes on an ellipse."""
        assert run_cli("grad-check", "--seed", "ellipse:1.2,0.8", "--samples", "64", "--fields", "3") == EXIT_OK
        assert json.loads(capsys.readouterr().out)["passed"] is True

    def test_fredholm_check(self, workdir, capsys):
        """Test the coercivity check on a figure-eight."""
        assert run_cli("fredholm-check", "--seed", "figure_eight:1", "--samples", "32") == EXIT_OK
        assert json.loads(capsys.readouterr().out)["min_eigenvalue"] >= 1.0 - 1e-6

    def test_hessian_dumps(self, workdir, capsys):
        """Test the Hessian dump and its split into leading and lower-order parts."""
        assert run_cli("hessian", "--seed", "circle:1", "--samples", "16", "--out", "op.bin", "--split") == EXIT_OK
        assert (workdir / "op.bin").stat().st_size == 8 + 8 * 16 * 16
        assert (workdir / "op.nabla4.bin").exists()
        assert (workdir / "op.lower.bin").exists()
        assert json.loads(capsys.readouterr().out)["size"] == 16

    def test_spectrum(self, workdir, capsys):
        """Test the spectrum of Id + (∇⊥)⁴ written to CSV."""
        argv = ("spectrum", "--seed", "circle:1", "--samples", "16", "--operator", "id_plus_nabla4", "--out", "spec.csv")
        assert run_cli(*argv) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["min_eigenvalue"] == pytest.approx(1.0, abs=1e-8)
        assert (workdir / "spec.csv").read_text().splitlines()[0] == "index,eigenvalue"

    def test_graph(self, workdir):
        """Test the normal graph of a concentric circle."""
        run_cli("seed", "--seed", "circle:1", "--samples", "32", "--out", "reference.json")
        run_cli("seed", "--seed", "circle:1.1", "--samples", "32", "--out", "sigma.json")
        assert run_cli("graph", "--reference", "reference.json", "--curve", "sigma.json", "--out", "Y.json") == EXIT_OK
        data = json.loads((workdir / "Y.json").read_text())
        assert len(data["values"]) == 32

    def test_invalid_seed(self, workdir):
        """Test that a malformed seed exits with an error status."""
        assert run_cli("energy", "--seed", "circle:-1") == EXIT_ERROR
        assert run_cli("energy", "--seed", "spiral:1") == EXIT_ERROR

    def test_missing_curve_file(self, workdir):
        """Test that a missing curve file exits with an error status."""
        assert run_cli("energy", "--curve", "missing.json") == EXIT_ERROR


class TestEvolveCommand:
    """Tests for flow runs from the command line."""

    def test_converging_run(self, workdir):
        """Test a run that converges, with its artifacts and exponent fit."""
        status = run_cli("evolve", "--seed", "circle:1", "--samples", "32", "--stop-grad", "1e-6",
                         "--out", "run", "--loja")
        assert status == EXIT_OK
        for name in ("manifest.json", "trace.csv", "final_curve.json", "summary.json", "fit.json", "plot_data.csv"):
            assert (workdir / "run" / name).exists()
        summary = json.loads((workdir / "run" / "summary.json").read_text())
        assert summary["converged"] is True
        assert summary["alpha"] == pytest.approx(0.5, abs=0.05)

    def test_t_max_exit_status(self, workdir):
        """Test that stopping at t_max exits with status 2."""
        status = run_cli("evolve", "--seed", "ellipse:1.2,0.8", "--samples", "32", "--t-max", "1e-3",
                         "--out", "run", "--snapshot-every", "5")
        assert status == EXIT_NOT_CONVERGED
        assert (workdir / "run" / "snapshots" / "curve_000000.json").exists()
        assert (workdir / "run" / "snapshots" / "curve_000005.json").exists()

    def test_resume_from_checkpoint(self, workdir):
        """Test continuing a run from its checkpoint directory."""
        run_cli("evolve", "--seed", "ellipse:1.2,0.8", "--samples", "32", "--t-max", "2e-3",
                "--checkpoint-every", "5", "--out", "first")
        state = json.loads((workdir / "first" / "checkpoint" / "state.json").read_text())
        status = run_cli("evolve", "--seed", "ellipse:1.2,0.8", "--samples", "32", "--t-max", "4e-3",
                         "--out", "second", "--resume", "first/checkpoint")
        assert status == EXIT_NOT_CONVERGED
        summary = json.loads((workdir / "second" / "summary.json").read_text())
        assert summary["steps"] > state["step_count"]
        assert summary["t"] >= 4e-3

    def test_checkpoint_under_relative_output(self, workdir):
        """Test that a relative --out puts the checkpoint directly under the output directory."""
        status = run_cli("evolve", "--seed", "circle:1", "--samples", "32", "--t-max", "1e-3",
                         "--checkpoint-every", "5", "--out", "first")
        assert status == EXIT_NOT_CONVERGED
        for name in ("state.json", "curve.json", "trace.csv"):
            assert (workdir / "first" / "checkpoint" / name).exists()
        assert not (workdir / "first" / "first").exists()

    def test_loja_fit_command(self, workdir):
        """Test fitting the exponent of a stored trace."""
        run_cli("evolve", "--seed", "circle:1", "--samples", "32", "--stop-grad", "1e-7", "--out", "run")
        status = run_cli("loja-fit", "--trace", "run/trace.csv", "--out", "fit.json",
                         "--plot-data", "plot.csv", "--e-ref", "8.885765876316732")
        assert status == EXIT_OK
        fit = json.loads((workdir / "fit.json").read_text())
        assert fit["alpha"] == pytest.approx(0.5, abs=0.05)
        assert (workdir / "plot.csv").exists()

    def test_config_file_with_overrides(self, workdir):
        """Test that command-line flags take precedence over the config file."""
        config = {
            "seed": {"kind": "circle", "params": [1.0], "samples": 32},
            "stepper": {"scheme": "explicit", "stop_t_max": 10.0},
            "energy": {"lambda": 2.0},
        }
        (workdir / "config.json").write_text(json.dumps(config))
        args = build_parser().parse_args(["evolve", "--config", "config.json", "--t-max", "1.5", "--out", "run"])
        run_config = build_run_config(args)
        assert run_config.stepper.scheme is StepScheme.EXPLICIT
        assert run_config.stepper.stop_t_max == 1.5
        assert run_config.energy.lam == 2.0
        assert str(run_config.output_dir) == "run"

    def test_invalid_config(self, workdir):
        """Test that an evolve run without a curve exits with an error status."""
        assert run_cli("evolve", "--out", "run") == EXIT_ERROR

    def test_sweep(self, workdir):
        """Test a sweep of two short runs on a process pool."""
        entries = [
            {"seed": {"kind": "circle", "params": [r], "samples": 32},
             "stepper": {"stop_t_max": 1e-3}, "output_dir": str(workdir / f"sweep_{i}")}
            for i, r in enumerate([1.0, 0.5])
        ]
        (workdir / "sweep.json").write_text(json.dumps(entries))
        assert run_cli("evolve", "--sweep", "sweep.json") == EXIT_NOT_CONVERGED
        assert (workdir / "sweep_0" / "trace.csv").exists()
        assert (workdir / "sweep_1" / "trace.csv").exists()

    def test_sweep_needs_distinct_directories(self, workdir):
        """Test that two sweep entries cannot share an output directory."""
        entry = {"seed": {"kind": "circle", "params": [1.0], "samples": 32}, "output_dir": "same"}
        (workdir / "sweep.json").write_text(json.dumps([entry, entry]))
        assert run_cli("evolve", "--sweep", "sweep.json") == EXIT_ERROR
