"""Unit tests for cli.py."""

import json
import tempfile
from pathlib import Path
from unittest.mock import patch

import pandas as pd
import pytest

from dtmpc.cli import build_parser, effective_config, main
from dtmpc.doc import InnerSolveFailedError
from dtmpc.experiments import AgreementCheck, CampaignConfig, CampaignResult
from dtmpc.models import TrialOutcome, TrialResult


def write_config(tmpdir: str, data: dict) -> str:
    config_file = Path(tmpdir) / "config.json"
    with open(config_file, "w", encoding="utf-8") as f:
        json.dump(data, f)
    return str(config_file)


def run_main(argv: list[str]) -> int:
    with patch("sys.argv", ["dtmpc", *argv]), pytest.raises(SystemExit) as exc_info:
        main()
    return exc_info.value.code


def fake_campaign(cfg: CampaignConfig, error: str | None = None) -> CampaignResult:
    trials = [
        TrialResult(trial=0, seed=cfg.base_seed, outcome=TrialOutcome.SUCCESS, steps=3),
        TrialResult(
            trial=1,
            seed=cfg.base_seed + 1,
            outcome=TrialOutcome.DIVERGED if error else TrialOutcome.TIMEOUT,
            steps=0,
            error=error,
        ),
    ]
    return CampaignResult(config=cfg, trials=trials, version="test")


def trend_table() -> pd.DataFrame:
    return pd.DataFrame(
        {
            "system": ["dubins", "dubins"],
            "budget": [1, 20],
            "iterate_error": [1.0, 1e-6],
            "err_doc_full": [1.0, 0.01],
            "err_fd_floor": [1e-6, 1e-6],
        },
    )


class TestEffectiveConfig:
    """Tests for effective_config function."""

    def test_command_line_overrides(self):
        """Test that flags override config file values."""
        with tempfile.TemporaryDirectory() as tmpdir:
            config_file = write_config(tmpdir, {"system": "quadrotor", "trials": 10, "seed": 1})
            args = build_parser().parse_args(
                ["mpc", "--config", config_file, "--trials", "3", "--algo", "both"],
            )

            config = effective_config(args)

            assert config["system"] == "quadrotor"
            assert config["trials"] == 3
            assert config["seed"] == 1
            assert config["algorithm"] == "both"

    def test_without_config_file(self):
        """Test that only given flags appear without a config file."""
        args = build_parser().parse_args(["solve", "--system", "robot_arm"])
        assert effective_config(args) == {"system": "robot_arm"}


class TestCLIMain:
    """Tests for main() function."""

    def test_version(self):
        """Test that --version exits successfully."""
        with patch("dtmpc.cli.logger") as mock_logger:
            assert run_main(["--version"]) == 0
            mock_logger.info.assert_called_once()

    def test_missing_subcommand(self):
        """Test that a missing subcommand is a usage error."""
        assert run_main([]) == 2

    def test_missing_config_file(self):
        """Test that a missing config file is a configuration error."""
        with tempfile.TemporaryDirectory() as tmpdir:
            code = run_main(
                ["solve", "--config", str(Path(tmpdir) / "absent.json"), "--out", tmpdir],
            )
            assert code == 2

    def test_unknown_config_key(self):
        """Test that an unknown config key is a configuration error."""
        with tempfile.TemporaryDirectory() as tmpdir:
            config_file = write_config(tmpdir, {"solve": {"horizn": 10}})
            with patch("dtmpc.cli.logger") as mock_logger:
                code = run_main(["solve", "--config", config_file, "--out", tmpdir])
            assert code == 2
            assert "solve.horizn" in mock_logger.error.call_args[0][0]

    def test_unknown_system(self):
        """Test that an unknown system is a configuration error."""
        with tempfile.TemporaryDirectory() as tmpdir:
            assert run_main(["solve", "--system", "cartpole", "--out", tmpdir]) == 2

    def test_solve_writes_artifacts(self):
        """Test a small nominal solve and its output files."""
        with tempfile.TemporaryDirectory() as tmpdir:
            config_file = write_config(tmpdir, {"solve": {"horizon": 10, "budget": 20}})
            out_dir = Path(tmpdir) / "out"

            code = run_main(["solve", "--config", config_file, "--out", str(out_dir)])

            assert code == 0
            trajectory = pd.read_csv(out_dir / "trajectory.csv")
            assert list(trajectory.columns) == ["k", "x0", "x1", "x2", "u0", "u1", "b"]
            assert len(trajectory) == 11
            with open(out_dir / "solver_stats.json", encoding="utf-8") as f:
                stats = json.load(f)
            assert 1 <= stats["iterations"] <= 20
            with open(out_dir / "manifest.json", encoding="utf-8") as f:
                manifest = json.load(f)
            assert manifest["command"] == "solve"
            assert manifest["config"] == {"solve": {"horizon": 10, "budget": 20}}

    def test_mpc_both_algorithms(self):
        """Test that --algo both runs and writes the paired campaigns."""
        with tempfile.TemporaryDirectory() as tmpdir:
            with patch("dtmpc.cli.run_campaign", side_effect=fake_campaign) as mock_run:
                code = run_main(["mpc", "--algo", "both", "--trials", "2", "--out", tmpdir])

            assert code == 0
            algorithms = [call.args[0].algorithm for call in mock_run.call_args_list]
            assert algorithms == ["nt_mpc", "dt_mpc"]
            summary = pd.read_csv(Path(tmpdir) / "summary.csv")
            assert summary["algorithm"].tolist() == ["nt_mpc", "dt_mpc"]
            assert (Path(tmpdir) / "trials.jsonl").exists()

    def test_mpc_infrastructure_error(self):
        """Test that a crashed trial makes the campaign fail."""
        with tempfile.TemporaryDirectory() as tmpdir:
            with patch(
                "dtmpc.cli.run_campaign",
                side_effect=lambda cfg: fake_campaign(cfg, error="RuntimeError: crashed"),
            ):
                code = run_main(["mpc", "--out", tmpdir])

            assert code == 1
            assert (Path(tmpdir) / "campaign.json").exists()

    def test_mpc_unknown_algorithm(self):
        """Test that an unknown algorithm is a configuration error."""
        with tempfile.TemporaryDirectory() as tmpdir:
            assert run_main(["mpc", "--algo", "lqr", "--out", tmpdir]) == 2

    def test_gradcheck_passes(self):
        """Test a passing gradient check."""
        checks = [AgreementCheck("doc_full_vs_fd", "dubins", 1e-6, 1e-3)]
        with (
            tempfile.TemporaryDirectory() as tmpdir,
            patch("dtmpc.cli.route_agreement_checks", return_value=checks),
            patch("dtmpc.cli.grad_precision_campaign", return_value=trend_table()),
        ):
            code = run_main(["gradcheck", "--out", tmpdir])

            assert code == 0
            with open(Path(tmpdir) / "gradcheck_report.json", encoding="utf-8") as f:
                report = json.load(f)
            assert report["passed"] is True
            assert [c["name"] for c in report["checks"]] == ["doc_full_vs_fd", "jacobian_error_trend"]

    def test_gradcheck_failure(self):
        """Test that a failing check exits with status 1."""
        checks = [AgreementCheck("doc_full_vs_pdp", "dubins", 0.5, 1e-8)]
        with (
            tempfile.TemporaryDirectory() as tmpdir,
            patch("dtmpc.cli.route_agreement_checks", return_value=checks),
            patch("dtmpc.cli.grad_precision_campaign", return_value=trend_table()),
        ):
            assert run_main(["gradcheck", "--out", tmpdir]) == 1

    def test_gradcheck_inner_solve_failure(self):
        """Test that a failed perturbed solve exits with status 1."""
        with (
            tempfile.TemporaryDirectory() as tmpdir,
            patch(
                "dtmpc.cli.route_agreement_checks",
                side_effect=InnerSolveFailedError("no convergence"),
            ),
        ):
            assert run_main(["gradcheck", "--out", tmpdir]) == 1

    def test_bench(self):
        """Test the timing command."""
        table = pd.DataFrame({"route": ["pdp"], "mean_ms": [1.0], "std_ms": [0.1], "reps": [10]})
        with (
            tempfile.TemporaryDirectory() as tmpdir,
            patch("dtmpc.cli.timing_campaign", return_value=table) as mock_timing,
        ):
            code = run_main(["bench", "--system", "quadrotor", "--out", tmpdir])

            assert code == 0
            assert mock_timing.call_args.args[0] == "quadrotor"
            assert (Path(tmpdir) / "timing.csv").exists()

    def test_bench_unknown_route(self):
        """Test that an unknown route name is a configuration error."""
        with tempfile.TemporaryDirectory() as tmpdir:
            config_file = write_config(tmpdir, {"bench": {"routes": ["unrolling"]}})
            assert run_main(["bench", "--config", config_file, "--out", tmpdir]) == 2
