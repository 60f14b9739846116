"""Lazily loaded lifter shared by the tool server."""

import json
import logging
from pathlib import Path

from .checkpoint import MANIFEST_NAME, CheckpointManifest, load_lifter
from .config import RuntimeSettings
from .errors import ConfigurationError, DataError
from .pipeline import PoseLifter
from .topology import SkeletonTopology

logger = logging.getLogger(__name__)


class LifterSession:
    """Holds the stage-2 model named in the runtime settings."""

    def __init__(self, settings: RuntimeSettings | None = None, topology: SkeletonTopology | None = None):
        """Initialize the session.

        Args:
            settings: Runtime settings. If None, loads from environment.
            topology: Skeleton the checkpoint must match. Defaults to h36m17.
        """
        self.settings = settings or RuntimeSettings.from_env()
        self.topology = topology or SkeletonTopology.default()
        self._model: PoseLifter | None = None
        self._manifest: CheckpointManifest | None = None

    def _checkpoint_path(self) -> Path:
        if self.settings.stage2_checkpoint is None:
            raise ConfigurationError("No stage-2 checkpoint configured (BONELIFT_STAGE2_CHECKPOINT)")
        return Path(self.settings.stage2_checkpoint)

    def _digest_on_disk(self, path: Path) -> str:
        try:
            return json.loads((path / MANIFEST_NAME).read_text())["digest"]
        except (OSError, json.JSONDecodeError, KeyError) as e:
            raise DataError(f"Failed to read checkpoint manifest in {path}: {e}") from e

    def _ensure_loaded(self) -> None:
        """Load the checkpoint, or reload it when its digest changed on disk."""
        path = self._checkpoint_path()
        digest = self._digest_on_disk(path)
        if self._model is None or self._manifest is None or self._manifest.digest != digest:
            self._model, self._manifest = load_lifter(path, self.topology)
            self._model.to(self.settings.device)
            logger.info("Loaded stage-2 checkpoint %s (digest %s)", path, digest[:12])

    def get_model(self) -> PoseLifter:
        """Get the loaded lifter in evaluation mode."""
        self._ensure_loaded()
        return self._model

    def get_manifest(self) -> CheckpointManifest:
        """Get the manifest of the loaded checkpoint."""
        self._ensure_loaded()
        return self._manifest
