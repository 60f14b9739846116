"""Dataset tools."""

from typing import Any

from fastmcp import FastMCP

from ..data import SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from ..session import LifterSession


def register_dataset_tools(mcp: FastMCP, session: LifterSession) -> None:
    """Register dataset tools with the MCP server.

    Args:
        mcp: FastMCP server instance.
        session: Session whose topology datasets are built and checked against.
    """

    @mcp.tool()
    def generate_dataset(
        out_dir: str,
        num_sequences: int = 200,
        frames: int = 243,
        noise_mm: float = 0.0,
        seed: int = 0,
    ) -> dict[str, Any]:
        """Generate a synthetic skeleton dataset and write it to disk.

        Args:
            out_dir: Directory to write manifest.json and arrays.npz into.
            num_sequences: Number of sequences.
            frames: Frames per sequence.
            noise_mm: Standard deviation of 2-D observation noise.
            seed: Generation seed; equal seeds give identical datasets.

        Returns:
            Dictionary with the written path and the dataset manifest.
        """
        spec = SyntheticSpec(
            num_sequences=num_sequences, frames=frames, noise_mm=noise_mm, seed=seed
        )
        dataset = generate_synthetic(spec, session.topology)
        path = save_dataset(dataset, out_dir)
        return {"path": str(path), "manifest": dataset.manifest.model_dump()}

    @mcp.tool()
    def inspect_dataset(path: str) -> dict[str, Any]:
        """Validate a dataset directory and return its manifest.

        Args:
            path: Dataset directory.

        Returns:
            Dictionary with the manifest and array shapes.
        """
        dataset = load_dataset(path, session.topology)
        return {
            "manifest": dataset.manifest.model_dump(),
            "poses2dShape": list(dataset.poses_2d.shape),
            "poses3dShape": list(dataset.poses_3d.shape),
        }
