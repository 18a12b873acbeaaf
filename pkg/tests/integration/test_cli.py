"""
Integration tests for the command line: exit codes, output files and thread-count determinism.
"""
import json

import pytest

from wflab.main import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, main

SIMULATE = """
    [experiment]
    kind = "simulate"
    seed = 2024

    [model]
    n = 3
    theta = 1.0
    p = [0.2, 0.3, 0.5]
    gamma = 0.05

    [fitness]
    matrix = [[1.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.0]]

    [sim]
    dt = 0.01
    t_end = 0.2
    trajectories = 2500
    record_stride = 5
"""

MONTE_CARLO_SCAN = """
    [experiment]
    kind = "equilibrium-scan"
    seed = 7

    [model]
    n = 2
    theta = 1.0
    p = [0.5, 0.5]
    gammas = [0.2, 0.1]

    [event]
    lower = [0.7, 0.0]
    upper = [1.0, 1.0]

    [scan]
    mode = "monte-carlo"
    samples = 3000
    extrapolate = false
"""

STALLED_MINIMIZER = """
    [experiment]
    kind = "minimize-action"

    [model]
    n = 2
    theta = 1.0
    p = [0.5, 0.5]

    [minimize]
    start = [0.5, 0.5]
    end = [0.8, 0.2]
    horizon = 2.0
    knots = 16
    max_iters = 1
    grad_tol = 1e-14
    oracle = false
"""


def _run(command, config, out, *extra):
    return main([command, "--config", str(config), "--out", str(out), *extra])


def _summary(directory):
    return json.loads((directory / "summary.json").read_text())


@pytest.mark.integration
class TestCommandLine:
    def test_simulate_writes_results(self, write_config, tmp_path):
        out = tmp_path / "simulate"

        assert _run("simulate", write_config(SIMULATE), out) == EXIT_OK

        lines = (out / "results.csv").read_text().splitlines()
        assert lines[0].startswith("gamma,seed,trajectories,t,mean_x_1")
        assert len(lines) == 1 + 5
        assert (out / "flow.csv").exists()
        assert (out / "trajectory_0.csv").exists()
        summary = _summary(out)
        assert summary["status"] == "completed"
        assert summary["seed"] == 2024
        assert summary["artifacts"] == ["trajectory_0.csv", "flow.csv"]

    def test_seed_override(self, write_config, tmp_path):
        out = tmp_path / "override"

        assert _run("simulate", write_config(SIMULATE), out, "--seed", "99") == EXIT_OK

        assert _summary(out)["seed"] == 99
        assert (out / "results.csv").read_text().splitlines()[1].split(",")[1] == "99"

    @pytest.mark.parametrize("config", [SIMULATE, MONTE_CARLO_SCAN])
    def test_results_independent_of_thread_count(self, write_config, tmp_path, config):
        path = write_config(config)
        command = "simulate" if "simulate" in config else "equilibrium-scan"

        assert _run(command, path, tmp_path / "one", "--threads", "1") == EXIT_OK
        assert _run(command, path, tmp_path / "four", "--threads", "4") == EXIT_OK

        one = (tmp_path / "one" / "results.csv").read_bytes()
        four = (tmp_path / "four" / "results.csv").read_bytes()
        assert one == four

    def test_subcommand_must_match_kind(self, write_config, tmp_path):
        assert _run("equilibrium-scan", write_config(SIMULATE), tmp_path / "x") == EXIT_CONFIG
        assert not (tmp_path / "x").exists()

    def test_invalid_config(self, write_config, tmp_path):
        body = SIMULATE.replace("p = [0.2, 0.3, 0.5]", "p = [0.2, 0.3, 0.6]")
        assert _run("simulate", write_config(body), tmp_path / "x") == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert _run("simulate", tmp_path / "absent.toml", tmp_path / "x") == EXIT_CONFIG

    def test_bad_thread_count(self, write_config, tmp_path):
        assert _run("simulate", write_config(SIMULATE), tmp_path / "x", "--threads", "0") == EXIT_CONFIG

    def test_runtime_failure_keeps_partial_output(self, write_config, tmp_path):
        out = tmp_path / "stalled"

        assert _run("minimize-action", write_config(STALLED_MINIMIZER), out) == EXIT_FAILURE

        summary = _summary(out)
        assert summary["status"] == "failed"
        assert summary["error"]["type"] == "ConvergenceError"
        assert (out / "minimizer.csv").exists()
        assert (out / "results.csv").exists()

    def test_unwritable_artifact_fails_the_run(self, write_config, tmp_path):
        out = tmp_path / "blocked"
        (out / "flow.csv").mkdir(parents=True)

        assert _run("simulate", write_config(SIMULATE), out) == EXIT_FAILURE

        summary = _summary(out)
        assert summary["status"] == "failed"
        assert summary["error"]["type"] == "OutputError"
        assert "flow.csv" not in summary["artifacts"]

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["--version"])
        assert excinfo.value.code == 0
        assert capsys.readouterr().out.startswith("wflab ")
