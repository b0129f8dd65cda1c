"""Unit tests for output_formatter.py."""

import json
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from dtmpc.experiments import AgreementCheck, CampaignConfig, CampaignResult
from dtmpc.models import Solution, StepRecord, Trajectory, TrialOutcome, TrialResult
from dtmpc.output_formatter import (
    ArtifactWriter,
    FileSavingError,
    SummaryFormatter,
    trajectory_frame,
)


def sample_results() -> list[CampaignResult]:
    record = StepRecord(
        t=0,
        u_applied=np.array([1.0, 0.0]),
        x_true=np.zeros(3),
        x_nominal=np.zeros(3),
        loss_value=0.1,
        grad_norms=(0.0, 1.0),
        nominal_stats={},
        ancillary_stats={},
        h_true=2.0,
        barrier_true=0.5,
        wall_time=0.004,
    )
    results = []
    for algorithm in ("nt_mpc", "dt_mpc"):
        trials = [
            TrialResult(trial=0, seed=0, outcome=TrialOutcome.SUCCESS, steps=1, log=[record]),
            TrialResult(
                trial=1,
                seed=1,
                outcome=TrialOutcome.DIVERGED,
                steps=0,
                error="RuntimeError: boom",
            ),
        ]
        config = CampaignConfig(system="dubins", algorithm=algorithm, n_trials=2)
        results.append(CampaignResult(config=config, trials=trials, version="0.1.0"))
    return results


class TestTrajectoryFrame:
    """Tests for trajectory_frame."""

    def test_embedded_trajectory(self):
        """Test columns and the barrier column of an embedded trajectory."""
        xs = np.arange(12, dtype=float).reshape(3, 4)
        us = np.ones((2, 2))
        frame = trajectory_frame(Trajectory(xs, us), n_plant=3)
        assert list(frame.columns) == ["k", "x0", "x1", "x2", "u0", "u1", "b"]
        assert frame["b"].tolist() == [3.0, 7.0, 11.0]
        assert np.isnan(frame["u0"].iloc[-1])

    def test_plain_trajectory(self):
        """Test that a trajectory without barrier state has an empty b column."""
        frame = trajectory_frame(Trajectory(np.zeros((2, 2)), np.zeros((1, 1))))
        assert list(frame.columns) == ["k", "x0", "x1", "u0", "b"]
        assert frame["b"].isna().all()


class TestArtifactWriter:
    """Tests for ArtifactWriter."""

    def test_manifest(self):
        """Test the run manifest."""
        with tempfile.TemporaryDirectory() as tmpdir:
            writer = ArtifactWriter(Path(tmpdir) / "run")
            path = writer.write_manifest("solve", {"system": "dubins"}, 3, "0.1.0")
            with open(path, encoding="utf-8") as f:
                manifest = json.load(f)
            assert manifest["command"] == "solve"
            assert manifest["config"] == {"system": "dubins"}
            assert manifest["seed"] == 3
            assert manifest["version"] == "0.1.0"
            assert "timestamp" in manifest

    def test_solver_stats(self):
        """Test the solver statistics file."""
        solution = Solution(
            xs=np.zeros((3, 1)),
            us=np.zeros((2, 1)),
            lambdas=np.zeros((3, 1)),
            cost=2.0,
            iterations=7,
            converged=True,
            kkt_residual=1e-8,
        )
        with tempfile.TemporaryDirectory() as tmpdir:
            path = ArtifactWriter(tmpdir).write_solver_stats(solution, 0.25)
            with open(path, encoding="utf-8") as f:
                stats = json.load(f)
            assert stats["iterations"] == 7
            assert stats["wall_time"] == 0.25

    def test_campaign_files(self):
        """Test campaign.json, summary.csv and trials.jsonl."""
        with tempfile.TemporaryDirectory() as tmpdir:
            paths = ArtifactWriter(tmpdir).write_campaign(sample_results())
            assert [p.name for p in paths] == ["campaign.json", "summary.csv", "trials.jsonl"]

            summary = pd.read_csv(Path(tmpdir) / "summary.csv")
            assert summary["algorithm"].tolist() == ["nt_mpc", "dt_mpc"]
            assert summary["success_rate"].tolist() == [0.5, 0.5]

            with open(Path(tmpdir) / "trials.jsonl", encoding="utf-8") as f:
                lines = [json.loads(line) for line in f]
            assert len(lines) == 4
            assert lines[0]["algorithm"] == "nt_mpc"
            assert lines[0]["log"][0]["barrier_true"] == 0.5
            assert lines[1]["error"] == "RuntimeError: boom"

    def test_gradcheck_report(self):
        """Test the gradient check report."""
        checks = [
            AgreementCheck("doc_full_vs_fd", "dubins", 1e-6, 1e-3),
            AgreementCheck("doc_full_vs_pdp", "dubins", 1.0, 1e-8),
        ]
        table = pd.DataFrame({"budget": [1], "err_doc_full": [0.1]})
        with tempfile.TemporaryDirectory() as tmpdir:
            ArtifactWriter(tmpdir).write_gradcheck(checks, table)
            with open(Path(tmpdir) / "gradcheck_report.json", encoding="utf-8") as f:
                report = json.load(f)
            assert report["passed"] is False
            assert [c["passed"] for c in report["checks"]] == [True, False]
            assert (Path(tmpdir) / "jacobian_error.csv").exists()

    def test_unwritable_directory(self):
        """Test that an output path below a file raises FileSavingError."""
        with tempfile.TemporaryDirectory() as tmpdir:
            blocker = Path(tmpdir) / "file"
            blocker.write_text("x", encoding="utf-8")
            with pytest.raises(FileSavingError):
                ArtifactWriter(blocker / "sub").write_timing(pd.DataFrame({"route": ["pdp"]}))


class TestSummaryFormatter:
    """Tests for SummaryFormatter."""

    def test_campaign_summary(self):
        """Test the campaign summary text."""
        summary = SummaryFormatter.format_campaign_summary(sample_results())
        assert "=== Tube MPC campaign summary ===" in summary
        assert "dubins / dt_mpc:" in summary
        assert "Success rate: 50.0%" in summary
        assert "Violation rate: 50.0%" in summary
        assert "trial 1: RuntimeError: boom" in summary

    def test_gradcheck_summary(self):
        """Test the gradient check text."""
        summary = SummaryFormatter.format_gradcheck(
            [AgreementCheck("doc_full_vs_fd", "quadrotor", 2e-4, 1e-3)],
        )
        assert "quadrotor doc_full_vs_fd" in summary
        assert "ok" in summary
