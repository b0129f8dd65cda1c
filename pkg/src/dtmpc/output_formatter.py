"""
Output artifacts: CSV tables, JSON reports and human-readable summaries.
"""

import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import pandas as pd

from .models import Solution, Trajectory

if TYPE_CHECKING:
    from .experiments import AgreementCheck, CampaignResult

logger = logging.getLogger(__name__)


class FileSavingError(Exception):
    """Exception raised when an output file cannot be written."""


def trajectory_frame(traj: Trajectory, n_plant: int | None = None) -> pd.DataFrame:
    """
    Tabulate a trajectory as columns k, x0.., u0.., b.

    States beyond ``n_plant`` are the barrier state. Controls are empty at the
    final step and ``b`` is empty when the trajectory has no barrier state.
    """
    n_state = traj.xs.shape[1]
    n_plant = n_state if n_plant is None else n_plant
    horizon = traj.horizon
    frame = pd.DataFrame({"k": np.arange(horizon + 1)})
    for i in range(n_plant):
        frame[f"x{i}"] = traj.xs[:, i]
    controls = np.vstack([traj.us, np.full((1, traj.us.shape[1]), np.nan)])
    for j in range(traj.us.shape[1]):
        frame[f"u{j}"] = controls[:, j]
    frame["b"] = traj.xs[:, n_plant] if n_plant < n_state else np.nan
    return frame


class ArtifactWriter:
    """Writes run artifacts into one output directory."""

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)

    def _path(self, name: str) -> Path:
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise FileSavingError(f"Cannot create output directory {self.out_dir}: {e}") from e
        return self.out_dir / name

    def write_json(self, name: str, data: Any) -> Path:
        path = self._path(name)
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(data, f, indent=2, ensure_ascii=False)
        except OSError as e:
            raise FileSavingError(f"Failed to write {path}: {e}") from e
        logger.info(f"Wrote {path}")
        return path

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        path = self._path(name)
        try:
            frame.to_csv(path, index=False)
        except OSError as e:
            raise FileSavingError(f"Failed to write {path}: {e}") from e
        logger.info(f"Wrote {path}")
        return path

    def write_manifest(
        self,
        command: str,
        config: dict[str, Any],
        seed: int | None,
        version: str,
    ) -> Path:
        return self.write_json(
            "manifest.json",
            {
                "command": command,
                "config": config,
                "seed": seed,
                "version": version,
                "timestamp": datetime.now(timezone.utc).isoformat(),
            },
        )

    def write_trajectory(self, traj: Trajectory, n_plant: int | None = None) -> Path:
        return self.write_csv("trajectory.csv", trajectory_frame(traj, n_plant))

    def write_solver_stats(self, solution: Solution, wall_time: float) -> Path:
        return self.write_json("solver_stats.json", {**solution.stats(), "wall_time": wall_time})

    def write_campaign(self, results: list["CampaignResult"]) -> list[Path]:
        """campaign.json, summary.csv (one row per system and algorithm) and trials.jsonl."""
        paths = [
            self.write_json("campaign.json", [result.to_dict() for result in results]),
            self.write_csv(
                "summary.csv",
                pd.DataFrame([result.summary_row() for result in results]),
            ),
        ]
        path = self._path("trials.jsonl")
        try:
            with open(path, "w", encoding="utf-8") as f:
                for result in results:
                    for trial in result.trials:
                        record = {"algorithm": result.config.algorithm, **trial.to_dict()}
                        f.write(json.dumps(record) + "\n")
        except OSError as e:
            raise FileSavingError(f"Failed to write {path}: {e}") from e
        logger.info(f"Wrote {path}")
        paths.append(path)
        return paths

    def write_gradcheck(
        self,
        checks: list["AgreementCheck"],
        jacobian_error: pd.DataFrame,
    ) -> list[Path]:
        report = {
            "passed": all(check.passed for check in checks),
            "checks": [check.to_dict() for check in checks],
        }
        return [
            self.write_json("gradcheck_report.json", report),
            self.write_csv("jacobian_error.csv", jacobian_error),
        ]

    def write_timing(self, timing: pd.DataFrame) -> Path:
        return self.write_csv("timing.csv", timing)


class SummaryFormatter:
    """Formats human-readable summaries."""

    @staticmethod
    def format_campaign_summary(results: list["CampaignResult"]) -> str:
        lines = ["=== Tube MPC campaign summary ==="]
        for result in results:
            mean, p95 = result.step_time_stats()
            counts = result.outcome_counts()
            lines.append(f"{result.config.system} / {result.config.algorithm}:")
            lines.append(f"  Trials: {result.n_trials}")
            lines.append(f"  Success rate: {result.success_rate:.1%}")
            lines.append(f"  Violation rate: {result.violation_rate:.1%}")
            lines.append(
                "  Outcomes: " + ", ".join(f"{name} {count}" for name, count in counts.items()),
            )
            lines.append(f"  Step time: mean {1e3 * mean:.1f} ms, p95 {1e3 * p95:.1f} ms")
            errors = result.infrastructure_errors
            if errors:
                lines.append(f"  Infrastructure errors: {len(errors)}")
                for trial in errors:
                    lines.append(f"    trial {trial.trial}: {trial.error}")
        return "\n".join(lines)

    @staticmethod
    def format_gradcheck(checks: list["AgreementCheck"]) -> str:
        lines = ["=== Gradient checks ==="]
        for check in checks:
            status = "ok" if check.passed else "FAILED"
            lines.append(
                f"  {check.system} {check.name}: {check.value:.3e} "
                f"(tolerance {check.tolerance:.1e}) {status}",
            )
        return "\n".join(lines)
