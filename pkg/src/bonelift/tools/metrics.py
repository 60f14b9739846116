"""Evaluation tools."""

from typing import Any

import numpy as np
from fastmcp import FastMCP

from ..metrics import evaluate_predictions
from ..session import LifterSession


def register_metric_tools(mcp: FastMCP, session: LifterSession) -> None:
    """Register metric tools with the MCP server.

    Args:
        mcp: FastMCP server instance.
        session: Session holding the stage-2 checkpoint (unused by pure metrics).
    """

    @mcp.tool()
    def evaluate_poses(
        predicted: list[list[list[list[float]]]],
        ground_truth: list[list[list[list[float]]]],
        actions: list[str] | None = None,
    ) -> dict[str, Any]:
        """Score predicted 3-D poses against ground truth.

        Args:
            predicted: Nested list of shape (sequences, frames, joints, 3), mm.
            ground_truth: Same shape as ``predicted``.
            actions: Optional action tag per sequence for a per-action breakdown.

        Returns:
            Dictionary with MPJPE, P-MPJPE, N-MPJPE, MPJVE, PCK, AUC and the
            per-action table.
        """
        report = evaluate_predictions(
            np.asarray(predicted, dtype=np.float64),
            np.asarray(ground_truth, dtype=np.float64),
            actions,
        )
        return report.model_dump()
