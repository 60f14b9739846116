"""Static per-frame 3-D skeleton renderings (Agg backend, no interactive surface)."""

import hashlib
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from .errors import require  # noqa: E402
from .topology import SkeletonTopology  # noqa: E402

logger = logging.getLogger(__name__)

PRED_COLOR = "tab:red"
GT_COLOR = "tab:blue"


def render_frame(
    pose: np.ndarray,
    topo: SkeletonTopology,
    gt: np.ndarray | None = None,
    title: str | None = None,
    dpi: int = 80,
) -> Figure:
    """Draw one (j, 3) pose, optionally over its ground truth, on fixed equal axes."""
    require(pose.shape == (topo.num_joints, 3), f"expected ({topo.num_joints}, 3), got {pose.shape}")
    fig = plt.figure(figsize=(4, 4), dpi=dpi)
    ax = fig.add_subplot(projection="3d")
    poses = [(pose, PRED_COLOR)] + ([(gt, GT_COLOR)] if gt is not None else [])
    for joints, color in poses:
        for child, parent in topo.bones():
            # Plot depth on the vertical axis so the image plane reads naturally.
            segment = joints[[parent, child]]
            ax.plot(segment[:, 0], segment[:, 2], segment[:, 1], color=color, linewidth=2)
    extent = max(float(np.abs(np.stack([p for p, _ in poses])).max()), 1.0)
    ax.set_xlim(-extent, extent)
    ax.set_ylim(-extent, extent)
    ax.set_zlim(-extent, extent)
    ax.view_init(elev=15.0, azim=70.0)
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("z (mm)")
    ax.set_zlabel("y (mm)")
    if title:
        ax.set_title(title)
    return fig


def figure_digest(fig: Figure) -> str:
    """SHA-256 of the rendered RGBA pixels."""
    fig.canvas.draw()
    return hashlib.sha256(np.asarray(fig.canvas.buffer_rgba()).tobytes()).hexdigest()


def plot_sequence(
    poses: np.ndarray,
    topo: SkeletonTopology,
    out_dir: str | Path,
    gt: np.ndarray | None = None,
    frames: list[int] | None = None,
) -> dict[Path, str]:
    """Write one PNG per selected frame of an (f, j, 3) sequence.

    Returns:
        Mapping from written file to its pixel digest.
    """
    poses = np.asarray(poses, dtype=np.float64)
    require(poses.ndim == 3, f"expected (f, j, 3) poses, got {poses.shape}")
    if gt is not None:
        gt = np.asarray(gt, dtype=np.float64)
        require(gt.shape == poses.shape, f"ground truth {gt.shape} does not match {poses.shape}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    written: dict[Path, str] = {}
    for frame in frames if frames is not None else range(len(poses)):
        require(0 <= frame < len(poses), f"frame {frame} outside [0, {len(poses)})")
        fig = render_frame(poses[frame], topo, None if gt is None else gt[frame], f"frame {frame}")
        path = out_dir / f"frame_{frame:05d}.png"
        written[path] = figure_digest(fig)
        fig.savefig(path)
        plt.close(fig)
    logger.info("Wrote %d skeleton plots to %s", len(written), out_dir)
    return written
