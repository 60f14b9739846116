"""Synthetic articulated-skeleton sequences via forward kinematics and pinhole projection."""

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from pydantic import BaseModel, Field, field_validator
from scipy.signal import butter, filtfilt
from scipy.spatial.transform import Rotation

from ..errors import ConfigurationError
from ..topology import SkeletonTopology
from .dataset import DatasetManifest, PoseDataset, split_indices

logger = logging.getLogger(__name__)

# Action tags cycle over sequences; each scales the joint-angle amplitude.
ACTION_AMPLITUDE = {"calm": 0.5, "moderate": 1.0, "vigorous": 1.5}


class SyntheticSpec(BaseModel):
    """Recipe for a deterministic synthetic dataset."""

    num_sequences: int = Field(default=200, gt=0)
    frames: int = Field(default=243, gt=0)
    topology: str | None = Field(default=None, description="Topology file path, default h36m17")
    bone_lengths_mm: list[float] | None = Field(
        default=None, description="Per-joint bone length, root entry ignored; default rest pose"
    )
    cutoff: float = Field(default=0.05, gt=0, le=0.5, description="Low-pass cutoff, cycles/frame")
    amplitude: float = Field(default=0.6, ge=0, description="Joint-angle amplitude (rad)")
    noise_mm: float = Field(default=0.0, ge=0, description="2-D observation noise sigma")
    camera_depth_mm: float = Field(default=4000.0, gt=0, description="Subject distance")
    val_fraction: float = Field(default=0.2, ge=0, lt=1)
    seed: int = 0
    workers: int = Field(default=1, gt=0, description="Threads generating sequences")

    @field_validator("bone_lengths_mm")
    @classmethod
    def validate_lengths(cls, value: list[float] | None) -> list[float] | None:
        """Bone lengths must be positive (the root entry is ignored)."""
        if value is not None and any(length <= 0 for length in value[1:]):
            raise ValueError("bone lengths must be positive")
        return value


def bone_offsets(spec: SyntheticSpec, topo: SkeletonTopology) -> np.ndarray:
    """Rest offsets (j, 3) in mm: rest directions scaled to the requested lengths."""
    if topo.rest_offsets_mm is not None:
        rest = np.asarray(topo.rest_offsets_mm, dtype=np.float64)
    else:
        rest = np.tile([0.0, -100.0, 0.0], (topo.num_joints, 1))
    rest[topo.root_index] = 0.0
    if spec.bone_lengths_mm is None:
        return rest
    if len(spec.bone_lengths_mm) != topo.num_joints:
        raise ConfigurationError(
            f"data.bone_lengths_mm has {len(spec.bone_lengths_mm)} entries, expected {topo.num_joints}"
        )
    norms = np.linalg.norm(rest, axis=1, keepdims=True)
    directions = np.divide(rest, norms, out=np.zeros_like(rest), where=norms > 0)
    offsets = directions * np.asarray(spec.bone_lengths_mm, dtype=np.float64)[:, None]
    offsets[topo.root_index] = 0.0
    return offsets


def smooth_noise(rng: np.random.Generator, frames: int, width: int, cutoff: float) -> np.ndarray:
    """Low-pass filtered white noise of shape (frames, width), unit standard deviation."""
    noise = rng.standard_normal((frames, width))
    if cutoff < 0.5 and frames > 1:
        b, a = butter(2, 2 * cutoff)
        noise = filtfilt(b, a, noise, axis=0, padlen=min(3 * max(len(a), len(b)), frames - 1))
    std = noise.std()
    return noise / std if std > 0 else noise


def forward_kinematics(
    local_rotations: np.ndarray, offsets: np.ndarray, topo: SkeletonTopology
) -> np.ndarray:
    """Compose local joint rotations (f, j, 3, 3) down the tree; root at the origin."""
    frames = local_rotations.shape[0]
    positions = np.zeros((frames, topo.num_joints, 3))
    global_rot = np.zeros_like(local_rotations)
    for joint in topo.traversal_order():
        parent = topo.parents[joint]
        if parent == -1:
            global_rot[:, joint] = local_rotations[:, joint]
            continue
        global_rot[:, joint] = global_rot[:, parent] @ local_rotations[:, joint]
        positions[:, joint] = positions[:, parent] + global_rot[:, parent] @ offsets[joint]
    return positions


def project(poses_3d: np.ndarray, camera_depth_mm: float) -> np.ndarray:
    """Pinhole projection expressed in millimetres on the subject plane."""
    scale = camera_depth_mm / (camera_depth_mm + poses_3d[..., 2:3])
    return poses_3d[..., :2] * scale


def _generate_sequence(
    spec: SyntheticSpec, topo: SkeletonTopology, offsets: np.ndarray, seed: np.random.SeedSequence, action: str
) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    j, f = topo.num_joints, spec.frames
    amplitude = spec.amplitude * ACTION_AMPLITUDE[action]
    rotvecs = amplitude * smooth_noise(rng, f, j * 3, spec.cutoff).reshape(f * j, 3)
    local = Rotation.from_rotvec(rotvecs).as_matrix().reshape(f, j, 3, 3)
    # Random heading so bones point both towards and away from the camera.
    heading = Rotation.from_euler("y", rng.uniform(0.0, 2 * np.pi)).as_matrix()
    local[:, topo.root_index] = heading @ local[:, topo.root_index]

    poses_3d = forward_kinematics(local, offsets, topo)
    poses_2d = project(poses_3d, spec.camera_depth_mm)
    if spec.noise_mm > 0:
        poses_2d = poses_2d + rng.normal(0.0, spec.noise_mm, size=poses_2d.shape)
    return poses_2d, poses_3d


def generate_synthetic(spec: SyntheticSpec, topo: SkeletonTopology | None = None) -> PoseDataset:
    """Generate a dataset that is a pure function of ``spec``.

    Each sequence draws from its own child seed, so the result does not depend
    on ``spec.workers``.
    """
    topo = topo or (
        SkeletonTopology.from_toml(spec.topology) if spec.topology else SkeletonTopology.default()
    )
    offsets = bone_offsets(spec, topo)
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.num_sequences)
    tags = list(ACTION_AMPLITUDE)
    actions = [tags[i % len(tags)] for i in range(spec.num_sequences)]

    with ThreadPoolExecutor(max_workers=spec.workers) as pool:
        sequences = list(
            pool.map(lambda args: _generate_sequence(spec, topo, offsets, *args), zip(seeds, actions))
        )
    poses_2d = np.stack([s[0] for s in sequences])
    poses_3d = np.stack([s[1] for s in sequences])
    train, val = split_indices(spec.num_sequences, spec.val_fraction, spec.seed)
    logger.info(
        "Generated %d synthetic sequences of %d frames (train=%d, val=%d)",
        spec.num_sequences, spec.frames, len(train), len(val),
    )
    return PoseDataset(
        poses_2d=poses_2d,
        poses_3d=poses_3d,
        train_indices=train,
        val_indices=val,
        manifest=DatasetManifest(
            topology_hash=topo.topology_hash,
            topology_name=topo.name,
            num_sequences=spec.num_sequences,
            frames=spec.frames,
            num_joints=topo.num_joints,
            split_sizes={"train": len(train), "val": len(val)},
            actions=actions,
            seed=spec.seed,
            precision="float64",
        ),
    )
