"""Configuration management: runtime settings, model config and layered experiment files."""

import tomllib
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings

from .data.synthetic import SyntheticSpec
from .errors import ConfigurationError
from .topology import SkeletonTopology

VARIANT_PRESETS: dict[str, dict[str, int]] = {
    "tiny": {"depth": 8, "dim": 64},
    "large": {"depth": 12, "dim": 128},
}


class RuntimeSettings(BaseSettings):
    """Process-level settings read from BONELIFT_* environment variables."""

    output_root: Path = Field(default=Path("./runs"), description="Default root for outputs")
    log_level: str = Field(default="INFO", description="Logging level name")
    device: str = Field(default="cpu", description="torch device for training and inference")
    deterministic: bool = Field(default=False, description="Force deterministic algorithms")
    stage1_checkpoint: Path | None = Field(default=None, description="Stage-1 checkpoint dir")
    stage2_checkpoint: Path | None = Field(default=None, description="Stage-2 checkpoint dir")

    model_config = {"env_prefix": "BONELIFT_", "case_sensitive": False}

    @classmethod
    def from_env(cls) -> "RuntimeSettings":
        """Load settings from environment variables."""
        try:
            return cls()
        except ValidationError as e:
            raise ConfigurationError(f"Invalid BONELIFT_* environment: {e}") from e


class ModelConfig(BaseModel):
    """Every architectural constant of both stages."""

    variant: Literal["tiny", "large", "custom"] = "tiny"
    depth: int = Field(default=8, ge=0, description="Refinement layers L")
    dim: int = Field(default=64, gt=0, description="Stage-2 hidden dim D")
    bone_dim: int = Field(default=64, gt=0, description="Stage-1 base dim d0")
    bone_depth: int = Field(default=4, gt=0, description="Stage-1 pyramid depth")
    num_categories: int = Field(default=6, ge=2, description="Polar angle categories n")
    frames: int = Field(default=243, gt=0, description="Clip length f")
    num_joints: int = Field(default=17, gt=0, description="Joint count j")
    state_dim: int = Field(default=16, gt=0, description="SSM state size N")
    conv_kernel: int = Field(default=4, ge=1, description="Causal conv taps k")
    expand: int = Field(default=1, gt=0, description="Expanded dim e as a multiple of d")
    mlp_ratio: float = Field(default=4.0, gt=0, description="Encoder MLP expansion rho")
    dropout: float = Field(default=0.1, ge=0, lt=1)
    proj_bias: bool = Field(default=False, description="Bias on the W_x / W_z projections")
    seed: int = 0

    # Ablation switches.
    bidirectional: bool = True
    spatial_block: Literal["gem", "vim"] = "gem"
    gcn_position: Literal["inner", "parallel", "gcn_first", "mamba_first"] = "inner"
    fusion: Literal["adaptive", "concat"] = "adaptive"
    use_bones: bool = Field(
        default=True, description="False drops stage 1 and the bone branch; fusion is then unused"
    )
    bone_coords: Literal["spherical", "cartesian"] = "spherical"
    coord_scale_mm: float = Field(default=1000.0, gt=0, description="mm per network input unit")

    @model_validator(mode="after")
    def validate_dims(self) -> "ModelConfig":
        """Check variant presets and the bone-aware pyramid divisibility."""
        preset = VARIANT_PRESETS.get(self.variant)
        if preset and (self.depth, self.dim) != (preset["depth"], preset["dim"]):
            raise ValueError(
                f"variant {self.variant} requires depth={preset['depth']}, dim={preset['dim']}; "
                "use variant='custom' for other sizes"
            )
        if self.bone_dim % 2 ** (self.bone_depth - 1):
            raise ValueError(
                f"bone_dim {self.bone_dim} is not divisible by 2^(bone_depth-1)"
                f" = {2 ** (self.bone_depth - 1)}"
            )
        return self

    @classmethod
    def for_variant(cls, variant: str, **overrides: Any) -> "ModelConfig":
        """Build the tiny or large preset, optionally with extra overrides."""
        if variant not in VARIANT_PRESETS:
            raise ConfigurationError(f"Unknown variant {variant!r}; choose tiny or large")
        return cls(variant=variant, **{**VARIANT_PRESETS[variant], **overrides})

    @property
    def expanded_dim(self) -> int:
        return self.dim * self.expand

    def encoder_kwargs(self, dim: int) -> dict[str, Any]:
        """Keyword arguments of :func:`bonelift.blocks.build_encoder` at width ``dim``."""
        return {
            "expanded_dim": dim * self.expand,
            "state_dim": self.state_dim,
            "conv_kernel": self.conv_kernel,
            "mlp_ratio": self.mlp_ratio,
            "dropout": self.dropout,
            "bidirectional": self.bidirectional,
            "proj_bias": self.proj_bias,
        }


class TrainSchedule(BaseModel):
    """Optimiser and loop settings of one training stage."""

    stage: Literal[1, 2]
    epochs: int = Field(..., gt=0)
    batch_size: int = Field(..., gt=0)
    lr: float = Field(..., gt=0)
    lr_decay: float = Field(default=0.99, gt=0, le=1, description="Per-epoch multiplicative decay")
    weight_decay: float = Field(default=0.01, ge=0)
    dropout: float = Field(default=0.1, ge=0, lt=1)
    clip_norm: float = Field(default=1.0, gt=0, description="Global gradient norm clip")
    max_steps: int | None = Field(default=None, gt=0, description="Stop after this many steps")
    clip_stride: int | None = Field(default=None, gt=0, description="Clip stride, default f")
    num_workers: int = Field(default=0, ge=0)
    seed: int = 0

    @classmethod
    def for_stage(cls, stage: int, **overrides: Any) -> "TrainSchedule":
        """Defaults of stage 1 (bone aware) or stage 2 (refinement)."""
        defaults = {
            1: {"epochs": 60, "batch_size": 128, "lr": 2e-3},
            2: {"epochs": 120, "batch_size": 16, "lr": 5e-4},
        }
        if stage not in defaults:
            raise ConfigurationError(f"stage must be 1 or 2, got {stage}")
        return cls(stage=stage, **{**defaults[stage], **overrides})


class ExperimentConfig(BaseModel):
    """Everything a CLI run needs, assembled from layered documents."""

    model: ModelConfig = Field(default_factory=ModelConfig)
    stage1: TrainSchedule = Field(default_factory=lambda: TrainSchedule.for_stage(1))
    stage2: TrainSchedule = Field(default_factory=lambda: TrainSchedule.for_stage(2))
    data: SyntheticSpec = Field(default_factory=SyntheticSpec)
    topology: Path | None = Field(default=None, description="Topology file, default h36m17")

    def load_topology(self) -> SkeletonTopology:
        """Resolve the configured topology and check it against the model joint count."""
        topo = (
            SkeletonTopology.from_toml(self.topology) if self.topology else SkeletonTopology.default()
        )
        if topo.num_joints != self.model.num_joints:
            raise ConfigurationError(
                f"model.num_joints={self.model.num_joints} but topology {topo.name} "
                f"has {topo.num_joints} joints"
            )
        return topo


def _deep_merge(base: dict[str, Any], update: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _resolve_relative_paths(document: dict[str, Any], base: Path) -> dict[str, Any]:
    """Make topology paths in a config file relative to that file's directory."""
    sections = [document, document.get("data")]
    for section in sections:
        if isinstance(section, dict) and isinstance(section.get("topology"), str):
            topology = Path(section["topology"])
            if not topology.is_absolute():
                section["topology"] = str(base / topology)
    return document


def parse_override(assignment: str) -> dict[str, Any]:
    """Turn ``section.key=value`` into a nested dict; values are parsed as TOML."""
    if "=" not in assignment:
        raise ConfigurationError(f"Override {assignment!r} is not of the form key=value")
    dotted, raw = assignment.split("=", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    nested: dict[str, Any] = {}
    cursor = nested
    keys = dotted.strip().split(".")
    for key in keys[:-1]:
        cursor = cursor.setdefault(key, {})
    cursor[keys[-1]] = value
    return nested


def load_config(
    paths: list[Path] | None = None,
    overrides: list[str] | None = None,
) -> ExperimentConfig:
    """Layer field defaults, the variant preset, TOML files and command-line overrides.

    Args:
        paths: TOML documents merged in order, later files winning. Relative
            topology paths inside a document resolve against its directory.
        overrides: ``section.key=value`` strings applied last; their paths stay
            relative to the working directory.

    Returns:
        Validated experiment configuration.

    Raises:
        ConfigurationError: If a file cannot be read or the result does not validate.
    """
    layered: dict[str, Any] = {}
    for path in paths or []:
        try:
            with open(path, "rb") as f:
                document = _resolve_relative_paths(tomllib.load(f), Path(path).parent)
            layered = _deep_merge(layered, document)
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise ConfigurationError(f"Failed to read config {path}: {e}") from e
    for assignment in overrides or []:
        layered = _deep_merge(layered, parse_override(assignment))

    model = layered.get("model", {})
    variant = model.get("variant", "tiny")
    if variant in VARIANT_PRESETS:
        layered["model"] = {**VARIANT_PRESETS[variant], **model}
    try:
        for stage in (1, 2):
            section = {k: v for k, v in layered.get(f"stage{stage}", {}).items() if k != "stage"}
            layered[f"stage{stage}"] = TrainSchedule.for_stage(stage, **section)
        return ExperimentConfig(**layered)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e
