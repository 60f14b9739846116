"""Stage 1: pyramid classifier predicting a polar-angle bin for every bone and frame."""

import torch
import torch.nn as nn

from .blocks import build_encoder, over_frames, over_joints
from .config import ModelConfig
from .errors import ConfigurationError, require
from .geometry import cart_to_spherical, compute_bone_vectors, quantize_polar
from .topology import SkeletonTopology


class BoneAwareLayer(nn.Module):
    """Spatial VIM over joints, temporal VIM over frames, then halve the width."""

    def __init__(self, cfg: ModelConfig, dim: int, final: bool):
        super().__init__()
        self.spatial = build_encoder("vim", dim, **cfg.encoder_kwargs(dim))
        self.temporal = build_encoder("vim", dim, **cfg.encoder_kwargs(dim))
        self.attenuate = None if final else nn.Linear(dim, dim // 2, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = over_frames(self.temporal, over_joints(self.spatial, x))
        return x if self.attenuate is None else self.attenuate(x)


class BoneAwareModule(nn.Module):
    """Maps (b, f, j, 2) poses in mm to (b, f, j, n) category probabilities."""

    def __init__(self, cfg: ModelConfig, topo: SkeletonTopology):
        super().__init__()
        if cfg.bone_dim % 2 ** (cfg.bone_depth - 1):
            raise ConfigurationError(
                f"bone_dim {cfg.bone_dim} not divisible by 2^{cfg.bone_depth - 1}"
            )
        self.num_joints = topo.num_joints
        self.num_categories = cfg.num_categories
        self.coord_scale = cfg.coord_scale_mm
        dims = [cfg.bone_dim // 2**i for i in range(cfg.bone_depth)]

        self.embed = nn.Linear(2, cfg.bone_dim, bias=False)
        self.layers = nn.ModuleList(
            BoneAwareLayer(cfg, dim, final=i == len(dims) - 1) for i, dim in enumerate(dims)
        )
        self.head = nn.Linear(dims[-1], cfg.num_categories)
        nn.init.trunc_normal_(self.head.weight, std=0.02)
        nn.init.zeros_(self.head.bias)

    @property
    def layer_dims(self) -> list[int]:
        return [layer.spatial.norm1.normalized_shape[0] for layer in self.layers]

    def logits(self, s2d: torch.Tensor) -> torch.Tensor:
        require(
            s2d.dim() == 4 and s2d.shape[-2:] == (self.num_joints, 2),
            f"expected (b, f, {self.num_joints}, 2) poses, got {tuple(s2d.shape)}",
        )
        x = self.embed(s2d / self.coord_scale)
        for layer in self.layers:
            x = layer(x)
        return self.head(x)

    def forward(self, s2d: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(s2d), dim=-1)


def classify(probs: torch.Tensor) -> torch.Tensor:
    """Most probable category per position; ties go to the lowest index."""
    return torch.argmax(probs, dim=-1)


def ground_truth_categories(pose3d: torch.Tensor, topo: SkeletonTopology, n: int) -> torch.Tensor:
    """Polar bins of the true bones; the root gets the bin holding pi/2."""
    spherical = cart_to_spherical(compute_bone_vectors(pose3d, topo))
    cats = quantize_polar(spherical[..., 1], n)
    cats[..., topo.root_index] = quantize_polar(torch.pi / 2, n)
    return cats
