"""End-to-end tests for the complete tube MPC workflow."""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from dtmpc.config import mpc_settings, task_config
from dtmpc.ddp import SolverSettings, solve
from dtmpc.experiments import ALGORITHMS, CampaignConfig, run_campaign, safety_invariant_violations
from dtmpc.output_formatter import ArtifactWriter, SummaryFormatter
from dtmpc.tasks import build_task
from dtmpc.tube_mpc import build_nominal_problem


class TestEndToEnd:
    """End-to-end tests using the library and the CLI."""

    def test_e2e_nominal_solve(self):
        """Test building a task, solving it and writing the trajectory."""
        config = {"task": {"horizon": 10}}
        task = build_task(task_config("dubins", config))
        problem = build_nominal_problem(task, task.nominal_theta0(), task.x0)

        solution = solve(problem, settings=SolverSettings(budget=50, tol=1e-6))

        assert np.all(np.isfinite(solution.xs))
        assert np.all(solution.xs[:, -1] > 0)
        plant = solution.xs[:, : task.plant.n_x]
        assert all(task.safety.is_safe(x) for x in plant)
        with tempfile.TemporaryDirectory() as tmpdir:
            path = ArtifactWriter(tmpdir).write_trajectory(solution.trajectory, task.plant.n_x)
            frame = pd.read_csv(path)
            assert len(frame) == 11
            assert frame["u0"].iloc[:-1].notna().all()

    def test_e2e_paired_campaign(self):
        """Test a paired NT/DT campaign from configuration to artifacts."""
        config = {"trials": 1, "task": {"horizon": 10, "sim_steps": 5}}
        results = [
            run_campaign(
                CampaignConfig(
                    system="dubins",
                    algorithm=algorithm,
                    n_trials=config["trials"],
                    task=task_config("dubins", config),
                    mpc=mpc_settings(config),
                ),
            )
            for algorithm in ALGORITHMS
        ]

        for result in results:
            assert not result.infrastructure_errors
            assert safety_invariant_violations(result) == []
        first_nt = results[0].trials[0].log[0]
        first_dt = results[1].trials[0].log[0]
        np.testing.assert_allclose(first_nt.x_true, first_dt.x_true)
        assert "dubins / dt_mpc:" in SummaryFormatter.format_campaign_summary(results)

        with tempfile.TemporaryDirectory() as tmpdir:
            ArtifactWriter(tmpdir).write_campaign(results)
            with open(Path(tmpdir) / "campaign.json", encoding="utf-8") as f:
                campaign = json.load(f)
            assert [c["config"]["algorithm"] for c in campaign] == ["nt_mpc", "dt_mpc"]

    def test_e2e_cli_integration(self):
        """Test a solve through the CLI in a subprocess."""
        with tempfile.TemporaryDirectory() as tmpdir:
            config_file = Path(tmpdir) / "config.json"
            with open(config_file, "w", encoding="utf-8") as f:
                json.dump({"system": "dubins", "solve": {"horizon": 10, "budget": 30}}, f)
            out_dir = Path(tmpdir) / "out"

            result = subprocess.run(
                [
                    sys.executable,
                    "-m",
                    "dtmpc",
                    "solve",
                    "--config",
                    str(config_file),
                    "--out",
                    str(out_dir),
                ],
                capture_output=True,
                text=True,
                cwd=Path(__file__).parent.parent,
            )

            assert result.returncode == 0, result.stderr
            assert "dubins: cost" in result.stderr
            assert (out_dir / "trajectory.csv").exists()
            assert (out_dir / "manifest.json").exists()
