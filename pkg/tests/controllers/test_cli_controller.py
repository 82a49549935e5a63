import io
import json
from pathlib import Path
from types import SimpleNamespace

from src.controllers.cli_controller import EXIT_ERROR, EXIT_PASS, EXIT_TOLERANCE, create_cli
from src.domain.errors import ConfigurationError, ConvergenceError
from src.domain.models import RunOutcome


class StubService:
    def __init__(self, passed=True, error=None):
        self.passed = passed
        self.error = error
        self.run_args = None
        self.mesh_args = None

    def load(self, path):
        if self.error is not None:
            raise self.error
        return SimpleNamespace(
            path=path,
            experiment=SimpleNamespace(type="fgi"),
            manifold=SimpleNamespace(kind="torus"),
        )

    def run_scenario(self, cfg, out_dir=None, threads=None, seed_override=None):
        self.run_args = (cfg.path, out_dir, threads, seed_override)
        return RunOutcome(
            run_id="0123456789abcdef-4",
            passed=self.passed,
            artifacts=("fgi_ladder.csv", "run_manifest.json"),
            summary={"final_slack": 0.0},
        )

    def export_mesh(self, kind, out, **params):
        self.mesh_args = (kind, out, params)
        return out


def make_cli(service):
    stdout, stderr = io.StringIO(), io.StringIO()
    return create_cli(service, stdout=stdout, stderr=stderr), stdout, stderr


def test_run_pass_prints_outcome():
    service = StubService()
    main, stdout, _ = make_cli(service)

    code = main(["run", "--config", "s.json", "--out-dir", "runs", "--threads", "2", "--seed-override", "9"])

    assert code == EXIT_PASS
    data = json.loads(stdout.getvalue())
    assert data["run_id"] == "0123456789abcdef-4"
    assert data["artifacts"] == ["fgi_ladder.csv", "run_manifest.json"]
    assert service.run_args == (Path("s.json"), Path("runs"), 2, 9)


def test_run_tolerance_failure_exit_code():
    main, stdout, _ = make_cli(StubService(passed=False))

    assert main(["run", "--config", "s.json"]) == EXIT_TOLERANCE
    assert json.loads(stdout.getvalue())["passed"] is False


def test_validate_reports_experiment_and_manifold():
    main, stdout, _ = make_cli(StubService())

    assert main(["validate", "--config", "s.json"]) == EXIT_PASS
    assert json.loads(stdout.getvalue()) == {"valid": True, "experiment": "fgi", "manifold": "torus"}


def test_configuration_error_lists_violations():
    error = ConfigurationError(
        "Scenario config has 2 violation(s).",
        [("/experiment/eps", "0 is less than or equal to the minimum of 0"), ("/mu", "no density named 'x'")],
    )
    main, stdout, stderr = make_cli(StubService(error=error))

    code = main(["validate", "--config", "s.json"])

    assert code == EXIT_ERROR
    assert stdout.getvalue() == ""
    data = json.loads(stderr.getvalue())
    assert data["error"] == "Scenario config has 2 violation(s)."
    assert [item["path"] for item in data["violations"]] == ["/experiment/eps", "/mu"]


def test_missing_config_and_solver_failures_are_errors():
    main, _, stderr = make_cli(StubService(error=FileNotFoundError("s.json")))
    assert main(["run", "--config", "s.json"]) == EXIT_ERROR
    assert "s.json" in json.loads(stderr.getvalue())["error"]

    main, _, stderr = make_cli(StubService(error=ConvergenceError("Sinkhorn stalled.")))
    assert main(["run", "--config", "s.json"]) == EXIT_ERROR
    assert json.loads(stderr.getvalue())["error"] == "ConvergenceError"


def test_mesh_command_forwards_parameters():
    service = StubService()
    main, stdout, _ = make_cli(service)

    code = main(["mesh", "--kind", "torus", "--nx", "8", "--ny", "6", "--Lx", "2.0", "--out", "t.mesh"])

    assert code == EXIT_PASS
    kind, out, params = service.mesh_args
    assert (kind, out) == ("torus", Path("t.mesh"))
    assert params["nx"] == 8 and params["ny"] == 6 and params["Lx"] == 2.0
    assert json.loads(stdout.getvalue()) == {"mesh": "t.mesh"}


def test_bad_arguments_exit_with_error_and_help_passes(capsys):
    main, _, _ = make_cli(StubService())

    assert main(["run"]) == EXIT_ERROR
    assert main(["mesh", "--kind", "cube", "--out", "x"]) == EXIT_ERROR
    assert main(["--help"]) == EXIT_PASS
    capsys.readouterr()
