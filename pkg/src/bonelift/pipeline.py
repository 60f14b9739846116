"""Stage 2: bone-joint fusion embedding, spatiotemporal refinement and 3-D regression.

Tensors use the (batch, frames, joints, features) layout throughout; spatial
blocks run over the joint axis and temporal blocks over the frame axis.
"""

import logging

import numpy as np
import torch
import torch.nn as nn

from .blocks import build_encoder, over_frames, over_joints
from .bone_aware import BoneAwareModule, classify
from .config import ModelConfig
from .errors import ConfigurationError, require
from .geometry import assemble_bone_spherical, build_adjacency, spherical_to_cart
from .topology import SkeletonTopology

logger = logging.getLogger(__name__)


def _spatial_encoder(cfg: ModelConfig, topo: SkeletonTopology) -> nn.Module:
    adjacency = {}
    if cfg.spatial_block == "gem":
        adjacency = {
            "adjacency_f": build_adjacency(topo, "forward"),
            "adjacency_b": build_adjacency(topo, "backward"),
            "gcn_position": cfg.gcn_position,
        }
    return build_encoder(cfg.spatial_block, cfg.dim, **cfg.encoder_kwargs(cfg.dim), **adjacency)


def _temporal_encoder(cfg: ModelConfig) -> nn.Module:
    return build_encoder("vim", cfg.dim, **cfg.encoder_kwargs(cfg.dim))


class FusionEmbedding(nn.Module):
    """Embed the 2-D joints and the assembled bones, then fuse them adaptively.

    Joint branch: GEM over joints with a joint embedding, VIM over frames with a
    frame embedding. Bone branch: VIM over joints then VIM over frames, no
    positional embedding. A pointwise softmax over two logits weighs the branches.
    With ``use_bones`` off only the joint branch is built.
    """

    def __init__(self, cfg: ModelConfig, topo: SkeletonTopology):
        super().__init__()
        self.frames = cfg.frames
        self.num_joints = topo.num_joints
        self.mode = cfg.fusion if cfg.use_bones else "joints"
        dim = cfg.dim

        if self.mode == "concat":
            self.project = nn.Linear(5, dim)
            return
        self.joint_embed = nn.Linear(2, dim, bias=False)
        self.pos_joint = nn.Parameter(torch.zeros(topo.num_joints, dim))
        self.pos_frame = nn.Parameter(torch.zeros(cfg.frames, dim))
        self.joint_spatial = _spatial_encoder(cfg, topo)
        self.joint_temporal = _temporal_encoder(cfg)
        if self.mode == "joints":
            return
        self.bone_embed = nn.Linear(3, dim, bias=False)
        self.bone_spatial = build_encoder("vim", dim, **cfg.encoder_kwargs(dim))
        self.bone_temporal = build_encoder("vim", dim, **cfg.encoder_kwargs(dim))
        self.fuse = nn.Linear(2 * dim, 2)

    def weights(self, s_t: torch.Tensor, b_t: torch.Tensor) -> torch.Tensor:
        """(alpha_S, alpha_B) stacked on the last axis."""
        return torch.softmax(self.fuse(torch.cat([s_t, b_t], dim=-1)), dim=-1)

    def forward(self, joints: torch.Tensor, bones: torch.Tensor | None = None) -> torch.Tensor:
        f, j = joints.shape[1], joints.shape[2]
        if (f, j) != (self.frames, self.num_joints):
            raise ConfigurationError(
                f"input has {f} frames x {j} joints; embeddings are bound to "
                f"{self.frames} x {self.num_joints}"
            )
        require(self.mode == "joints" or bones is not None, f"{self.mode} fusion needs bone features")
        if self.mode == "concat":
            return self.project(torch.cat([joints, bones], dim=-1))

        s_s = over_joints(self.joint_spatial, self.joint_embed(joints) + self.pos_joint)
        s_t = over_frames(self.joint_temporal, s_s + self.pos_frame[:, None, :])
        if self.mode == "joints":
            return s_t
        b_t = over_frames(self.bone_temporal, over_joints(self.bone_spatial, self.bone_embed(bones)))
        alpha = self.weights(s_t, b_t)
        return alpha[..., :1] * s_t + alpha[..., 1:] * b_t


class RefinementStack(nn.Module):
    """L alternating (spatial over joints, temporal over frames) encoder pairs."""

    def __init__(self, cfg: ModelConfig, topo: SkeletonTopology):
        super().__init__()
        self.spatial = nn.ModuleList(_spatial_encoder(cfg, topo) for _ in range(cfg.depth))
        self.temporal = nn.ModuleList(_temporal_encoder(cfg) for _ in range(cfg.depth))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for spatial, temporal in zip(self.spatial, self.temporal):
            x = over_frames(temporal, over_joints(spatial, x))
        return x


class PoseLifter(nn.Module):
    """End-to-end 2-D to 3-D lifter around a frozen bone-aware classifier.

    Inputs and outputs are millimetres; internally coordinates are divided by
    ``coord_scale_mm``.
    """

    def __init__(
        self,
        cfg: ModelConfig,
        topo: SkeletonTopology,
        bone_aware: BoneAwareModule | None = None,
    ):
        super().__init__()
        if topo.num_joints != cfg.num_joints:
            raise ConfigurationError(
                f"model.num_joints={cfg.num_joints} but topology has {topo.num_joints} joints"
            )
        self.cfg = cfg
        self.topo = topo
        if cfg.use_bones:
            self.bone_aware = bone_aware or BoneAwareModule(cfg, topo)
        else:
            # Joint-only lifter: no stage 1 and no bone features.
            self.bone_aware = nn.Identity()
        self.bone_aware.requires_grad_(False)
        self.bone_aware.eval()
        self.fusion = FusionEmbedding(cfg, topo)
        self.refine = RefinementStack(cfg, topo)
        self.head = nn.Linear(cfg.dim, 3)

    def train(self, mode: bool = True) -> "PoseLifter":
        super().train(mode)
        self.bone_aware.eval()
        return self

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for name, p in self.named_parameters() if not name.startswith("bone_aware.")]

    @torch.no_grad()
    def infer_bones(self, s2d: torch.Tensor) -> torch.Tensor:
        """Bone features from the frozen stage-1 categories, scaled to network units."""
        cats = classify(self.bone_aware(s2d))
        bones = assemble_bone_spherical(s2d, cats, self.topo, self.cfg.num_categories)
        if self.cfg.bone_coords == "cartesian":
            return spherical_to_cart(bones) / self.cfg.coord_scale_mm
        r, theta, phi = bones.unbind(-1)
        return torch.stack([r / self.cfg.coord_scale_mm, theta, phi], dim=-1)

    def forward(self, s2d: torch.Tensor) -> torch.Tensor:
        require(
            s2d.dim() == 4 and s2d.shape[-2:] == (self.topo.num_joints, 2),
            f"expected (b, f, {self.topo.num_joints}, 2) poses, got {tuple(s2d.shape)}",
        )
        bones = self.infer_bones(s2d) if self.cfg.use_bones else None
        x0 = self.fusion(s2d / self.cfg.coord_scale_mm, bones)
        return self.head(self.refine(x0)) * self.cfg.coord_scale_mm


def build_model(cfg: ModelConfig, topo: SkeletonTopology | None = None) -> PoseLifter:
    """Seeded construction of the full model from its configuration."""
    topo = topo or SkeletonTopology.default()
    torch.manual_seed(cfg.seed)
    model = PoseLifter(cfg, topo)
    logger.debug(
        "Built %s model: L=%d D=%d, %d trainable parameters",
        cfg.variant, cfg.depth, cfg.dim, sum(p.numel() for p in model.trainable_parameters()),
    )
    return model


def clip_starts(num_frames: int, clip_len: int, stride: int | None = None) -> list[int]:
    """Start frames of every whole ``clip_len`` clip inside a sequence."""
    if num_frames < clip_len:
        raise ConfigurationError(
            f"sequences of {num_frames} frames are shorter than the {clip_len}-frame clip"
        )
    return list(range(0, num_frames - clip_len + 1, stride or clip_len))


@torch.no_grad()
def lift_sequence(model: PoseLifter, poses_2d: np.ndarray | torch.Tensor, batch_size: int = 8) -> np.ndarray:
    """Lift a (frames, joints, 2) sequence of any length to (frames, joints, 3).

    The sequence is cut into non-overlapping clips of the model's frame count;
    the last clip is padded by repeating its final frame and trimmed afterwards.
    """
    param = next(model.parameters())
    s2d = torch.as_tensor(np.asarray(poses_2d), dtype=param.dtype).to(param.device)
    require(s2d.dim() == 3 and s2d.shape[-1] == 2, f"expected (f, j, 2), got {tuple(s2d.shape)}")
    f, clip = s2d.shape[0], model.cfg.frames
    pad = -f % clip
    if pad:
        s2d = torch.cat([s2d, s2d[-1:].expand(pad, -1, -1)], dim=0)
    clips = s2d.reshape(-1, clip, *s2d.shape[1:])
    was_training = model.training
    model.eval()
    try:
        out = torch.cat([model(batch) for batch in clips.split(batch_size)], dim=0)
    finally:
        model.train(was_training)
    return out.reshape(-1, *out.shape[2:])[:f].cpu().numpy()
