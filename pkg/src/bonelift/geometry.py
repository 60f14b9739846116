"""Non-learned skeletal math: bones, spherical coordinates, polar bins, depth, adjacency.

All functions are pure and operate on torch tensors whose trailing axes are
``(joints, coords)``; any number of leading axes (batch, frames) is allowed.
Scalar helpers also accept plain Python numbers and return Python numbers.
"""

import math
from typing import Literal

import torch

from .errors import require
from .topology import SkeletonTopology

Direction = Literal["forward", "backward"]

# Polar angle used for zero-length bones and the padded root row.
DEGENERATE_THETA = math.pi / 2
TWO_PI = 2 * math.pi


def _as_tensor(value: torch.Tensor | float | int, dtype=None) -> tuple[torch.Tensor, bool]:
    if isinstance(value, torch.Tensor):
        return value, False
    return torch.tensor(value, dtype=dtype or torch.float64), True


def _parent_index(topo: SkeletonTopology) -> torch.Tensor:
    # Root maps onto itself so its bone row is exactly zero.
    return torch.tensor([p if p != -1 else i for i, p in enumerate(topo.parents)], dtype=torch.long)


def compute_bone_vectors(pose: torch.Tensor, topo: SkeletonTopology) -> torch.Tensor:
    """Child minus parent position for every joint; the root row is zero.

    Args:
        pose: Joint positions of shape (..., j, c), c = 2 or 3.
        topo: Skeleton the joints follow.

    Returns:
        Bone vectors with the same shape as ``pose``.
    """
    require(pose.dim() >= 2, f"pose must have at least 2 dims, got shape {tuple(pose.shape)}")
    require(
        pose.shape[-2] == topo.num_joints,
        f"pose has {pose.shape[-2]} joints, topology {topo.name} has {topo.num_joints}",
    )
    return pose - pose[..., _parent_index(topo).to(pose.device), :]


def cart_to_spherical(v: torch.Tensor) -> torch.Tensor:
    """Convert (x, y, z) to (r, theta, phi) with quadrant-aware arctangents.

    theta is measured from +z in [0, pi] and phi wraps into [0, 2 pi).
    Zero-length bones map to (0, pi/2, 0); bones on the z axis get phi = 0.
    """
    require(v.shape[-1] == 3, f"expected trailing dim 3, got {v.shape[-1]}")
    require(bool(torch.isfinite(v).all()), "bone vectors contain non-finite values")
    x, y, z = v.unbind(-1)
    rho = torch.hypot(x, y)
    r = torch.sqrt(x * x + y * y + z * z)
    theta = torch.atan2(rho, z)
    phi = torch.remainder(torch.atan2(y, x), TWO_PI)
    # remainder can round a tiny negative angle up to exactly 2 pi
    phi = torch.where(phi >= TWO_PI, torch.zeros_like(phi), phi)
    phi = torch.where(rho == 0, torch.zeros_like(phi), phi)
    theta = torch.where(r == 0, torch.full_like(theta, DEGENERATE_THETA), theta)
    return torch.stack([r, theta, phi], dim=-1)


def spherical_to_cart(s: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`cart_to_spherical`."""
    require(s.shape[-1] == 3, f"expected trailing dim 3, got {s.shape[-1]}")
    r, theta, phi = s.unbind(-1)
    sin_theta = torch.sin(theta)
    return torch.stack(
        [r * sin_theta * torch.cos(phi), r * sin_theta * torch.sin(phi), r * torch.cos(theta)],
        dim=-1,
    )


def quantize_polar(theta: torch.Tensor | float, n: int) -> torch.Tensor | int:
    """Bin a polar angle into one of ``n`` half-open bins of width pi/n.

    theta = pi falls into the last bin.
    """
    require(n >= 2, f"category count must be >= 2, got {n}")
    t, scalar = _as_tensor(theta)
    require(
        bool(((t >= 0) & (t <= math.pi)).all()),
        "polar angle outside [0, pi]",
    )
    category = torch.clamp(torch.floor(t / math.pi * n), max=n - 1).to(torch.long)
    return int(category) if scalar else category


def dequantize_polar(
    category: torch.Tensor | int, n: int, dtype: torch.dtype | None = None
) -> torch.Tensor | float:
    """Midpoint angle (2c + 1) pi / (2n) of a polar bin."""
    require(n >= 2, f"category count must be >= 2, got {n}")
    c, scalar = _as_tensor(category, dtype=torch.long)
    require(bool(((c >= 0) & (c < n)).all()), f"category outside [0, {n})")
    dtype = torch.float64 if scalar else dtype or torch.get_default_dtype()
    theta = (2 * c.to(dtype) + 1) * math.pi / (2 * n)
    return float(theta) if scalar else theta


def recover_depth(
    x: torch.Tensor | float, y: torch.Tensor | float, theta: torch.Tensor | float
) -> torch.Tensor | float:
    """Depth of a bone from its image-plane extent and polar angle: rho / tan(theta).

    Returns exactly 0 at theta = pi/2.
    """
    tx, scalar = _as_tensor(x)
    ty, _ = _as_tensor(y)
    tt, _ = _as_tensor(theta)
    require(
        bool(((tt > 0) & (tt < math.pi)).all()),
        "polar angle must lie strictly inside (0, pi) to recover depth",
    )
    rho = torch.hypot(tx, ty)
    z = rho / torch.tan(tt)
    z = torch.where(torch.abs(tt - DEGENERATE_THETA) < 1e-12, torch.zeros_like(z), z)
    return float(z) if scalar else z


def build_adjacency(
    topo: SkeletonTopology,
    direction: Direction = "forward",
    dtype: torch.dtype | None = None,
) -> torch.Tensor:
    """Symmetric normalised adjacency D^-1/2 (A + I) D^-1/2 of the skeleton.

    The backward adjacency indexes joints in reversed sequence order
    (i -> j-1-i) so it matches a flipped joint sequence.
    """
    require(
        direction in ("forward", "backward"),
        f"direction must be 'forward' or 'backward', got {direction!r}",
    )
    j = topo.num_joints
    A = torch.zeros(j, j, dtype=dtype or torch.get_default_dtype())
    for child, parent in topo.bones():
        A[child, parent] = 1.0
        A[parent, child] = 1.0
    if direction == "backward":
        A = torch.flip(A, dims=(0, 1))
    A_tilde = A + torch.eye(j, dtype=A.dtype)
    d_inv_sqrt = A_tilde.sum(dim=1).rsqrt()
    return d_inv_sqrt[:, None] * A_tilde * d_inv_sqrt[None, :]


def assemble_bone_spherical(
    s2d: torch.Tensor, cats: torch.Tensor, topo: SkeletonTopology, n: int
) -> torch.Tensor:
    """Spherical bone coordinates from 2-D joints and predicted polar bins.

    Args:
        s2d: 2-D poses of shape (..., j, 2).
        cats: Polar categories of shape (..., j).
        topo: Skeleton.
        n: Category count.

    Returns:
        (r, theta, phi) per joint, shape (..., j, 3); the root and zero-length
        bones carry (0, pi/2, 0).
    """
    require(s2d.shape[-1] == 2, f"expected 2-D joints, got trailing dim {s2d.shape[-1]}")
    require(
        cats.shape == s2d.shape[:-1],
        f"categories shape {tuple(cats.shape)} does not match poses {tuple(s2d.shape[:-1])}",
    )
    bones_2d = compute_bone_vectors(s2d, topo)
    x, y = bones_2d.unbind(-1)
    theta = dequantize_polar(cats, n, dtype=s2d.dtype)
    z = recover_depth(x, y, theta)
    r = torch.sqrt(x * x + y * y + z * z)
    phi = torch.remainder(torch.atan2(y, x), TWO_PI)
    phi = torch.where(phi >= TWO_PI, torch.zeros_like(phi), phi)
    degenerate = r == 0
    theta = torch.where(degenerate, torch.full_like(theta, DEGENERATE_THETA), theta)
    phi = torch.where(degenerate | (torch.hypot(x, y) == 0), torch.zeros_like(phi), phi)
    return torch.stack([r, theta, phi], dim=-1)


def bones_to_pose(bones: torch.Tensor, topo: SkeletonTopology) -> torch.Tensor:
    """Sum bone vectors down the tree; the root is placed at the origin."""
    pose = torch.zeros_like(bones)
    for joint in topo.traversal_order():
        parent = topo.parents[joint]
        if parent != -1:
            pose[..., joint, :] = pose[..., parent, :] + bones[..., joint, :]
    return pose


def root_relative(pose: torch.Tensor, topo: SkeletonTopology) -> torch.Tensor:
    """Translate every frame so the root joint sits at the origin."""
    return pose - pose[..., topo.root_index : topo.root_index + 1, :]
