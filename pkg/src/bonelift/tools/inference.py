"""Pose lifting tools."""

from typing import Any

import numpy as np
from fastmcp import FastMCP

from ..pipeline import lift_sequence
from ..profiling import parameter_breakdown
from ..session import LifterSession


def register_inference_tools(mcp: FastMCP, session: LifterSession) -> None:
    """Register inference tools with the MCP server.

    Args:
        mcp: FastMCP server instance.
        session: Session holding the stage-2 checkpoint.
    """

    @mcp.tool()
    def lift_pose_sequence(poses_2d: list[list[list[float]]]) -> dict[str, Any]:
        """Lift a 2-D pose sequence to 3-D.

        Args:
            poses_2d: Nested list of shape (frames, joints, 2) in millimetres.
                Sequences of any length are cut into model-sized clips.

        Returns:
            Dictionary with the (frames, joints, 3) prediction and metadata.
        """
        model = session.get_model()
        manifest = session.get_manifest()
        poses_3d = lift_sequence(model, np.asarray(poses_2d, dtype=np.float32))
        return {
            "poses3d": poses_3d.tolist(),
            "frames": poses_3d.shape[0],
            "joints": poses_3d.shape[1],
            "units": "mm",
            "topologyHash": manifest.topology_hash,
            "checkpointDigest": manifest.digest,
        }

    @mcp.tool()
    def describe_model() -> dict[str, Any]:
        """Describe the loaded lifter.

        Returns:
            Dictionary with the model configuration, checkpoint digests and a
            per-block parameter count.
        """
        model = session.get_model()
        manifest = session.get_manifest()
        return {
            "config": manifest.model,
            "topology": manifest.topology_name,
            "topologyHash": manifest.topology_hash,
            "checkpointDigest": manifest.digest,
            "stage1Digest": manifest.stage1_digest,
            "parameters": parameter_breakdown(model),
        }
