"""Checkpoint archives: named arrays plus a manifest with a content digest.

A checkpoint directory holds ``arrays.npz`` (one array per state-dict entry)
and ``manifest.json`` (kind, entries in sorted order, SHA-256 digest, model
config and topology hash). Stage-2 manifests record the digest of the
stage-1 weights they were trained on.
"""

import hashlib
import json
import logging
import zipfile
from collections.abc import Mapping
from pathlib import Path
from typing import Any, Literal

import numpy as np
import torch
import torch.nn as nn
from pydantic import BaseModel, Field, ValidationError

from .bone_aware import BoneAwareModule
from .config import ModelConfig
from .errors import ConfigurationError, DataError
from .pipeline import PoseLifter
from .topology import SkeletonTopology

logger = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = "bonelift.checkpoint/1"
MANIFEST_NAME = "manifest.json"
ARRAYS_NAME = "arrays.npz"
STAGE1_PREFIX = "bone_aware."


class ArrayEntry(BaseModel):
    name: str
    shape: list[int]
    dtype: str


class CheckpointManifest(BaseModel):
    """Metadata written next to the arrays of a checkpoint."""

    schema_version: str = CHECKPOINT_SCHEMA
    kind: Literal["stage1", "stage2"]
    digest: str
    entries: list[ArrayEntry]
    model: dict[str, Any]
    topology_hash: str
    topology_name: str
    stage1_digest: str | None = Field(default=None, description="Frozen stage-1 weights (stage 2)")
    epochs: int | None = None
    steps: int | None = None


def _to_numpy(tensor: torch.Tensor) -> np.ndarray:
    array = tensor.detach().cpu().contiguous().numpy()
    return array.astype(array.dtype.newbyteorder("<"), copy=False)


def state_digest(state: Mapping[str, torch.Tensor | np.ndarray]) -> str:
    """SHA-256 over every entry name and its little-endian bytes, in sorted name order."""
    h = hashlib.sha256()
    for name in sorted(state):
        value = state[name]
        array = _to_numpy(value) if isinstance(value, torch.Tensor) else np.asarray(value)
        array = np.ascontiguousarray(array.astype(array.dtype.newbyteorder("<"), copy=False))
        h.update(name.encode())
        h.update(str(array.dtype).encode())
        h.update(str(array.shape).encode())
        h.update(array.tobytes())
    return h.hexdigest()


def module_digest(module: nn.Module) -> str:
    return state_digest(module.state_dict())


def save_checkpoint(
    module: nn.Module,
    path: str | Path,
    kind: Literal["stage1", "stage2"],
    cfg: ModelConfig,
    topo: SkeletonTopology,
    stage1_digest: str | None = None,
    **extra: Any,
) -> CheckpointManifest:
    """Write ``module``'s state dict and manifest to the directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {name: _to_numpy(t) for name, t in sorted(module.state_dict().items())}
    manifest = CheckpointManifest(
        kind=kind,
        digest=state_digest(arrays),
        entries=[ArrayEntry(name=n, shape=list(a.shape), dtype=a.dtype.str) for n, a in arrays.items()],
        model=cfg.model_dump(),
        topology_hash=topo.topology_hash,
        topology_name=topo.name,
        stage1_digest=stage1_digest,
        **extra,
    )
    np.savez(path / ARRAYS_NAME, **arrays)
    (path / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2))
    logger.info("Saved %s checkpoint to %s (digest %s)", kind, path, manifest.digest[:12])
    return manifest


def read_checkpoint(path: str | Path) -> tuple[CheckpointManifest, dict[str, torch.Tensor]]:
    """Read a checkpoint directory and verify its arrays against the manifest.

    Raises:
        DataError: Missing or truncated files.
        ConfigurationError: Schema, entry or digest mismatch.
    """
    path = Path(path)
    try:
        manifest = CheckpointManifest(**json.loads((path / MANIFEST_NAME).read_text()))
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"Failed to read checkpoint manifest in {path}: {e}") from e
    except ValidationError as e:
        raise ConfigurationError(f"Malformed checkpoint manifest in {path}: {e}") from e
    if manifest.schema_version != CHECKPOINT_SCHEMA:
        raise ConfigurationError(
            f"Checkpoint schema {manifest.schema_version!r} is not supported (expected {CHECKPOINT_SCHEMA!r})"
        )
    try:
        with np.load(path / ARRAYS_NAME) as archive:
            arrays = {key: archive[key] for key in archive.files}
    except (OSError, EOFError, ValueError, zipfile.BadZipFile) as e:
        raise DataError(f"Partial read of {path / ARRAYS_NAME}: {e}") from e

    expected = {e.name: (tuple(e.shape), e.dtype) for e in manifest.entries}
    found = {name: (a.shape, a.dtype.str) for name, a in arrays.items()}
    if expected != found:
        raise ConfigurationError(f"Checkpoint arrays in {path} disagree with its manifest")
    if state_digest(arrays) != manifest.digest:
        raise ConfigurationError(f"Checkpoint digest mismatch in {path}")
    return manifest, {name: torch.from_numpy(a.copy()) for name, a in arrays.items()}


def _check_topology(manifest: CheckpointManifest, topo: SkeletonTopology, path: Path) -> None:
    if manifest.topology_hash != topo.topology_hash:
        raise ConfigurationError(
            f"Checkpoint {path} was trained on topology {manifest.topology_name} "
            f"({manifest.topology_hash}); current topology is {topo.name} ({topo.topology_hash})"
        )


def _load_state(module: nn.Module, state: dict[str, torch.Tensor], path: Path) -> None:
    try:
        module.load_state_dict(state, strict=True)
    except RuntimeError as e:
        raise ConfigurationError(f"Checkpoint {path} does not fit the configured model: {e}") from e


def load_bone_aware(
    path: str | Path, topo: SkeletonTopology, cfg: ModelConfig | None = None
) -> tuple[BoneAwareModule, CheckpointManifest]:
    """Rebuild a stage-1 module; ``cfg`` (if given) must agree on the stage-1 shape."""
    path = Path(path)
    manifest, state = read_checkpoint(path)
    if manifest.kind != "stage1":
        raise ConfigurationError(f"{path} holds a {manifest.kind} checkpoint, expected stage1")
    _check_topology(manifest, topo, path)
    saved = ModelConfig(**manifest.model)
    if cfg is not None:
        for key in ("num_categories", "bone_dim", "bone_depth", "num_joints"):
            if getattr(cfg, key) != getattr(saved, key):
                raise ConfigurationError(
                    f"stage-1 checkpoint has {key}={getattr(saved, key)}, config has {getattr(cfg, key)}"
                )
    module = BoneAwareModule(saved, topo)
    _load_state(module, state, path)
    module.eval()
    return module, manifest


def load_lifter(path: str | Path, topo: SkeletonTopology) -> tuple[PoseLifter, CheckpointManifest]:
    """Rebuild a stage-2 model and check its embedded stage-1 weights against the recorded digest."""
    path = Path(path)
    manifest, state = read_checkpoint(path)
    if manifest.kind != "stage2":
        raise ConfigurationError(f"{path} holds a {manifest.kind} checkpoint, expected stage2")
    _check_topology(manifest, topo, path)
    stage1 = {k[len(STAGE1_PREFIX):]: v for k, v in state.items() if k.startswith(STAGE1_PREFIX)}
    if manifest.stage1_digest is not None and state_digest(stage1) != manifest.stage1_digest:
        raise ConfigurationError(f"Stage-1 weights inside {path} do not match the recorded digest")
    model = PoseLifter(ModelConfig(**manifest.model), topo)
    _load_state(model, state, path)
    model.eval()
    return model, manifest
