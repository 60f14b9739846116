"""Pose dataset container: manifest + named-array archive, plus external ingestion."""

import json
import logging
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from ..errors import ContractViolation, DataError, IngestionError
from ..topology import SkeletonTopology

logger = logging.getLogger(__name__)

DATASET_SCHEMA = "bonelift.dataset/1"
MANIFEST_NAME = "manifest.json"
ARRAYS_NAME = "arrays.npz"
DTYPES = {"float32": "<f4", "float64": "<f8"}


class DatasetManifest(BaseModel):
    """Metadata stored next to the arrays of a dataset directory."""

    schema_version: str = DATASET_SCHEMA
    topology_hash: str
    topology_name: str
    units: str = "mm"
    units_2d: str = "mm"
    num_sequences: int = Field(..., ge=0)
    frames: int = Field(..., gt=0)
    num_joints: int = Field(..., gt=0)
    split_sizes: dict[str, int]
    actions: list[str] | None = Field(default=None, description="Optional per-sequence action tag")
    seed: int | None = None
    precision: Literal["float32", "float64"] = "float32"
    source: Literal["synthetic", "external"] = "synthetic"


class IngestManifest(BaseModel):
    """Declared layout of an externally preprocessed pose archive."""

    units: Literal["mm", "m"] = Field(default="mm", description="Units of the 3-D poses")
    units_2d: Literal["mm", "m", "normalized"] = Field(default="mm", description="2-D units")
    num_joints: int = Field(default=17, gt=0)
    seed: int = 0
    val_fraction: float = Field(default=0.2, ge=0, lt=1)


@dataclass
class PoseDataset:
    """Paired 2-D / 3-D sequences of shape (S, f, j, 2|3), millimetres unless declared."""

    poses_2d: np.ndarray
    poses_3d: np.ndarray
    train_indices: np.ndarray
    val_indices: np.ndarray
    manifest: DatasetManifest

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray, list[str] | None]:
        """Return (poses_2d, poses_3d, actions) of ``train``, ``val`` or ``all``."""
        if name == "all":
            index = np.arange(len(self.poses_2d))
        elif name == "train":
            index = self.train_indices
        elif name == "val":
            index = self.val_indices
        else:
            raise ContractViolation(f"Unknown split {name!r}; choose train, val or all")
        actions = self.manifest.actions
        return (
            self.poses_2d[index],
            self.poses_3d[index],
            [actions[i] for i in index] if actions is not None else None,
        )


def split_indices(num_sequences: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded split by sequence; returns sorted (train, val) indices."""
    order = np.random.default_rng(seed).permutation(num_sequences)
    num_val = int(round(num_sequences * val_fraction)) if num_sequences > 1 else 0
    return np.sort(order[num_val:]), np.sort(order[:num_val])


def save_dataset(dataset: PoseDataset, path: str | Path, precision: str | None = None) -> Path:
    """Write ``dataset`` as a directory with manifest.json and arrays.npz.

    Args:
        dataset: Dataset to write.
        path: Target directory, created if needed.
        precision: float32 or float64; defaults to the manifest's precision.

    Returns:
        The dataset directory.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    precision = precision or dataset.manifest.precision
    if precision not in DTYPES:
        raise DataError(f"precision must be float32 or float64, got {precision!r}")
    dtype = DTYPES[precision]
    manifest = dataset.manifest.model_copy(update={"precision": precision})

    np.savez(
        path / ARRAYS_NAME,
        poses_2d=dataset.poses_2d.astype(dtype),
        poses_3d=dataset.poses_3d.astype(dtype),
        train_indices=dataset.train_indices.astype("<i8"),
        val_indices=dataset.val_indices.astype("<i8"),
    )
    (path / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2))
    logger.info("Saved %d sequences to %s (%s)", manifest.num_sequences, path, precision)
    return path


def load_dataset(path: str | Path, topo: SkeletonTopology | None = None) -> PoseDataset:
    """Read and validate a dataset directory.

    Raises:
        DataError: On a missing or truncated archive, a schema or topology-hash
            mismatch, or arrays that disagree with the manifest.
    """
    path = Path(path)
    topo = topo or SkeletonTopology.default()
    try:
        manifest = DatasetManifest(**json.loads((path / MANIFEST_NAME).read_text()))
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise DataError(f"Failed to read dataset manifest in {path}: {e}") from e
    if manifest.schema_version != DATASET_SCHEMA:
        raise DataError(
            f"Dataset schema {manifest.schema_version!r} is not supported (expected {DATASET_SCHEMA!r})"
        )
    if manifest.topology_hash != topo.topology_hash:
        raise DataError(
            f"Dataset topology hash {manifest.topology_hash} does not match topology "
            f"{topo.name} ({topo.topology_hash})"
        )

    try:
        with np.load(path / ARRAYS_NAME) as archive:
            arrays = {key: archive[key] for key in archive.files}
    except (OSError, EOFError, ValueError, zipfile.BadZipFile) as e:
        raise DataError(f"Partial read of {path / ARRAYS_NAME}: {e}") from e

    missing = {"poses_2d", "poses_3d", "train_indices", "val_indices"} - arrays.keys()
    if missing:
        raise DataError(f"Dataset archive is missing arrays: {sorted(missing)}")
    expected = (manifest.num_sequences, manifest.frames, manifest.num_joints)
    if arrays["poses_2d"].shape != (*expected, 2) or arrays["poses_3d"].shape != (*expected, 3):
        raise DataError(
            f"Array shapes {arrays['poses_2d'].shape} / {arrays['poses_3d'].shape} "
            f"disagree with manifest {expected}"
        )
    return PoseDataset(
        poses_2d=arrays["poses_2d"],
        poses_3d=arrays["poses_3d"],
        train_indices=arrays["train_indices"],
        val_indices=arrays["val_indices"],
        manifest=manifest,
    )


def ingest_external(
    path: str | Path, manifest: IngestManifest, topo: SkeletonTopology | None = None
) -> PoseDataset:
    """Normalise a preprocessed archive (e.g. detector outputs) into a dataset.

    The archive holds ``poses_2d`` (f, j, 2) or (S, f, j, 2), ``poses_3d`` with
    a trailing 3, and optionally ``actions``. Metres are scaled to millimetres
    and 3-D poses are re-rooted.

    Raises:
        IngestionError: On unreadable files, unit or shape mismatch.
    """
    topo = topo or SkeletonTopology.default()
    try:
        with np.load(path, allow_pickle=False) as archive:
            poses_2d = np.asarray(archive["poses_2d"], dtype=np.float64)
            poses_3d = np.asarray(archive["poses_3d"], dtype=np.float64)
            actions = [str(a) for a in archive["actions"]] if "actions" in archive.files else None
    except (OSError, EOFError, ValueError, KeyError, zipfile.BadZipFile) as e:
        raise IngestionError(f"Failed to read external poses from {path}: {e}") from e

    if poses_2d.ndim == 3:
        poses_2d, poses_3d = poses_2d[None], poses_3d[None]
    if poses_2d.ndim != 4 or poses_2d.shape[-1] != 2 or poses_3d.shape[-1] != 3:
        raise IngestionError(
            f"Expected (S, f, j, 2) and (S, f, j, 3), got {poses_2d.shape} and {poses_3d.shape}"
        )
    if poses_2d.shape[:-1] != poses_3d.shape[:-1]:
        raise IngestionError(f"2-D {poses_2d.shape} and 3-D {poses_3d.shape} shapes disagree")
    j = poses_2d.shape[2]
    if j != topo.num_joints or j != manifest.num_joints:
        raise IngestionError(
            f"Archive has {j} joints; manifest declares {manifest.num_joints}, "
            f"topology {topo.name} has {topo.num_joints}"
        )
    if not (np.isfinite(poses_2d).all() and np.isfinite(poses_3d).all()):
        raise IngestionError("External poses contain non-finite values")
    if actions is not None and len(actions) != len(poses_2d):
        raise IngestionError(f"{len(actions)} action tags for {len(poses_2d)} sequences")

    if manifest.units == "m":
        poses_3d = poses_3d * 1000.0
    if manifest.units_2d == "m":
        poses_2d = poses_2d * 1000.0
    poses_3d = poses_3d - poses_3d[:, :, topo.root_index : topo.root_index + 1, :]

    train, val = split_indices(len(poses_2d), manifest.val_fraction, manifest.seed)
    logger.info("Ingested %d external sequences from %s", len(poses_2d), path)
    return PoseDataset(
        poses_2d=poses_2d,
        poses_3d=poses_3d,
        train_indices=train,
        val_indices=val,
        manifest=DatasetManifest(
            topology_hash=topo.topology_hash,
            topology_name=topo.name,
            units="mm",
            units_2d="normalized" if manifest.units_2d == "normalized" else "mm",
            num_sequences=len(poses_2d),
            frames=poses_2d.shape[1],
            num_joints=j,
            split_sizes={"train": len(train), "val": len(val)},
            actions=actions,
            seed=manifest.seed,
            precision="float64",
            source="external",
        ),
    )
