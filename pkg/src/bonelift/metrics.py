"""Pose errors (MPJPE family, velocity, PCK, AUC), stage losses and the metric report.

Every metric takes poses of shape (..., j, 3) in millimetres and returns a
0-dim tensor, so the same functions serve as differentiable loss terms.
"""

import logging
from collections import defaultdict

import numpy as np
import torch
from pydantic import BaseModel, Field

from .errors import require

logger = logging.getLogger(__name__)

PCK_THRESHOLD_MM = 150.0
AUC_THRESHOLDS_MM = tuple(float(t) for t in range(5, 155, 5))
STAGE2_WEIGHTS = {"mpjpe": 1.0, "n_mpjpe": 0.5, "mpjve": 20.0}
PROB_FLOOR = 1e-12


def _check_pair(pred: torch.Tensor, gt: torch.Tensor) -> None:
    require(
        pred.shape == gt.shape,
        f"prediction {tuple(pred.shape)} and ground truth {tuple(gt.shape)} shapes differ",
    )
    require(pred.dim() >= 2 and pred.shape[-1] == 3, f"expected (..., j, 3), got {tuple(pred.shape)}")


def joint_distances(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Per-joint Euclidean distance, shape (..., j)."""
    _check_pair(pred, gt)
    return torch.linalg.vector_norm(pred - gt, dim=-1)


def mpjpe(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean per-joint position error."""
    return joint_distances(pred, gt).mean()


def procrustes_align(pred: torch.Tensor, gt: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Align every frame of ``pred`` to ``gt`` with the best similarity transform.

    Rotation excludes reflections. Frames where either pose collapses to a
    single point are returned unaligned.

    Returns:
        (aligned prediction with the input shape, boolean degenerate mask of
        shape ``pred.shape[:-2]``)
    """
    _check_pair(pred, gt)
    shape = pred.shape
    Y = pred.reshape(-1, *shape[-2:])
    X = gt.reshape(-1, *shape[-2:])

    mu_x = X.mean(dim=1, keepdim=True)
    mu_y = Y.mean(dim=1, keepdim=True)
    X0, Y0 = X - mu_x, Y - mu_y
    norm_x = torch.linalg.vector_norm(X0, dim=(1, 2), keepdim=True)
    norm_y = torch.linalg.vector_norm(Y0, dim=(1, 2), keepdim=True)
    degenerate = (norm_x == 0) | (norm_y == 0)
    ones = torch.ones_like(norm_x)
    X0 = X0 / torch.where(degenerate, ones, norm_x)
    Y0 = Y0 / torch.where(degenerate, ones, norm_y)

    U, s, Vh = torch.linalg.svd(X0.transpose(1, 2) @ Y0)
    V = Vh.transpose(1, 2)
    # Flip the weakest axis when the optimal orthogonal map is a reflection.
    sign = torch.sign(torch.linalg.det(V @ U.transpose(1, 2)))
    sign = torch.where(sign == 0, torch.ones_like(sign), sign)
    flip = torch.stack([torch.ones_like(sign), torch.ones_like(sign), sign], dim=-1)
    V = V * flip[:, None, :]
    R = V @ U.transpose(1, 2)
    trace = (s * flip).sum(dim=-1)[:, None, None]

    scale = trace * norm_x / torch.where(degenerate, ones, norm_y)
    t = mu_x - scale * (mu_y @ R)
    aligned = torch.where(degenerate, Y, scale * (Y @ R) + t)
    return aligned.reshape(shape), degenerate.reshape(shape[:-2])


def p_mpjpe(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """MPJPE after per-frame similarity (Procrustes) alignment."""
    aligned, _ = procrustes_align(pred, gt)
    return mpjpe(aligned, gt)


def n_mpjpe(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """MPJPE after per-frame optimal scaling of the prediction."""
    _check_pair(pred, gt)
    pred_sq = (pred * pred).sum(dim=(-2, -1), keepdim=True)
    cross = (pred * gt).sum(dim=(-2, -1), keepdim=True)
    zero = pred_sq == 0
    scale = torch.where(zero, torch.ones_like(cross), cross / torch.where(zero, torch.ones_like(pred_sq), pred_sq))
    return mpjpe(scale * pred, gt)


def mpjve(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """MPJPE of first differences along the frame axis, poses (..., f, j, 3)."""
    _check_pair(pred, gt)
    require(pred.dim() >= 3, "velocity error needs a frame axis")
    require(pred.shape[-3] >= 2, f"velocity error needs at least 2 frames, got {pred.shape[-3]}")
    return mpjpe(torch.diff(pred, dim=-3), torch.diff(gt, dim=-3))


def pck(pred: torch.Tensor, gt: torch.Tensor, threshold_mm: float = PCK_THRESHOLD_MM) -> torch.Tensor:
    """Percentage of joints closer than ``threshold_mm``."""
    return (joint_distances(pred, gt) < threshold_mm).double().mean() * 100.0


def auc(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean PCK fraction over the 5..150 mm threshold grid."""
    dist = joint_distances(pred, gt)
    grid = torch.tensor(AUC_THRESHOLDS_MM, dtype=dist.dtype, device=dist.device)
    return (dist.unsqueeze(-1) < grid).double().mean()


def stage2_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Weighted sum of MPJPE, N-MPJPE and MPJVE."""
    return (
        STAGE2_WEIGHTS["mpjpe"] * mpjpe(pred, gt)
        + STAGE2_WEIGHTS["n_mpjpe"] * n_mpjpe(pred, gt)
        + STAGE2_WEIGHTS["mpjve"] * mpjve(pred, gt)
    )


def stage1_loss(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of category probabilities (..., n) against integer labels (...)."""
    require(
        probs.shape[:-1] == labels.shape,
        f"probabilities {tuple(probs.shape)} do not match labels {tuple(labels.shape)}",
    )
    picked = probs.gather(-1, labels.long().unsqueeze(-1)).squeeze(-1)
    return -torch.log(picked.clamp_min(PROB_FLOOR)).mean()


def category_accuracy(probs: torch.Tensor, labels: torch.Tensor) -> float:
    """Fraction of positions whose argmax category equals the label (ties to the lowest index)."""
    return float((probs.argmax(dim=-1) == labels).double().mean())


class MetricScores(BaseModel):
    mpjpe_mm: float = Field(..., ge=0)
    p_mpjpe_mm: float = Field(..., ge=0)
    n_mpjpe_mm: float = Field(..., ge=0)
    mpjve_mm: float | None = Field(default=None, ge=0, description="None for single-frame input")
    pck_percent: float = Field(..., ge=0, le=100)
    auc: float = Field(..., ge=0, le=1)
    degenerate_frames: int = Field(default=0, ge=0)
    num_frames: int = Field(..., ge=0)


class MetricReport(MetricScores):
    """Metric suite over a whole evaluation set, optionally broken down by action."""

    per_action: dict[str, MetricScores] = Field(default_factory=dict)

    def to_text(self) -> str:
        """Flat ``key = value`` lines, then one ``[action.<name>]`` table per action."""
        lines = [_format_scores(self)]
        for action in sorted(self.per_action):
            lines.append(f"\n[action.{action}]\n{_format_scores(self.per_action[action])}")
        return "\n".join(lines) + "\n"


def _format_scores(scores: MetricScores) -> str:
    rows = []
    for key in MetricScores.model_fields:
        value = getattr(scores, key)
        if value is None:
            rows.append(f"{key} = nan")
        elif isinstance(value, float):
            rows.append(f"{key} = {value:.6f}")
        else:
            rows.append(f"{key} = {value}")
    return "\n".join(rows)


def _as_tensor(poses: np.ndarray | torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(np.asarray(poses) if not isinstance(poses, torch.Tensor) else poses).double()


@torch.no_grad()
def score_poses(pred: np.ndarray | torch.Tensor, gt: np.ndarray | torch.Tensor) -> MetricScores:
    """Every metric for poses of shape (..., f, j, 3)."""
    p, g = _as_tensor(pred), _as_tensor(gt)
    _check_pair(p, g)
    _, degenerate = procrustes_align(p, g)
    frames = p.shape[-3] if p.dim() >= 3 else 1
    return MetricScores(
        mpjpe_mm=float(mpjpe(p, g)),
        p_mpjpe_mm=float(p_mpjpe(p, g)),
        n_mpjpe_mm=float(n_mpjpe(p, g)),
        mpjve_mm=float(mpjve(p, g)) if frames >= 2 else None,
        pck_percent=float(pck(p, g)),
        auc=float(auc(p, g)),
        degenerate_frames=int(degenerate.sum()),
        num_frames=int(np.prod(p.shape[:-2])),
    )


def evaluate_predictions(
    pred: np.ndarray | torch.Tensor,
    gt: np.ndarray | torch.Tensor,
    actions: list[str] | None = None,
) -> MetricReport:
    """Score (S, f, j, 3) predictions; ``actions`` tags each sequence."""
    p, g = _as_tensor(pred), _as_tensor(gt)
    overall = score_poses(p, g)
    if overall.degenerate_frames:
        logger.warning("%d degenerate frames were scored without alignment", overall.degenerate_frames)
    per_action: dict[str, MetricScores] = {}
    if actions is not None:
        require(len(actions) == len(p), f"{len(actions)} action tags for {len(p)} sequences")
        groups: dict[str, list[int]] = defaultdict(list)
        for index, action in enumerate(actions):
            groups[action].append(index)
        for action, index in groups.items():
            per_action[action] = score_poses(p[index], g[index])
    return MetricReport(**overall.model_dump(), per_action=per_action)
