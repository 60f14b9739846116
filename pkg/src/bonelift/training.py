"""Two-stage training: bone-aware classifier first, then the frozen-stage-1 lifter."""

import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from .bone_aware import BoneAwareModule, ground_truth_categories
from .checkpoint import CheckpointManifest, load_bone_aware, module_digest, save_checkpoint
from .config import ExperimentConfig, ModelConfig, TrainSchedule
from .data import PoseDataset
from .errors import ConfigurationError, DataError, NumericFailure
from .metrics import MetricReport, evaluate_predictions, mpjpe, stage1_loss, stage2_loss
from .pipeline import PoseLifter, clip_starts, lift_sequence
from .topology import SkeletonTopology

logger = logging.getLogger(__name__)


def seed_everything(seed: int, deterministic: bool = False) -> None:
    """Seed python, numpy and torch; optionally force deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(deterministic, warn_only=False)


class ClipDataset(Dataset):
    """Fixed-length (2-D, 3-D) clips cut from every sequence of a split."""

    def __init__(self, poses_2d: np.ndarray, poses_3d: np.ndarray, clip_len: int, stride: int | None = None):
        if len(poses_2d) == 0:
            raise DataError("split holds no sequences")
        starts = clip_starts(poses_2d.shape[1], clip_len, stride)
        self.index = [(s, t) for s in range(len(poses_2d)) for t in starts]
        self.poses_2d = torch.as_tensor(poses_2d, dtype=torch.float32)
        self.poses_3d = torch.as_tensor(poses_3d, dtype=torch.float32)
        self.clip_len = clip_len

    def __len__(self) -> int:
        return len(self.index)

    def __getitem__(self, i: int) -> tuple[torch.Tensor, torch.Tensor]:
        seq, start = self.index[i]
        window = slice(start, start + self.clip_len)
        return self.poses_2d[seq, window], self.poses_3d[seq, window]


@dataclass
class TrainResult:
    """Per-epoch history of one training stage."""

    manifest: CheckpointManifest
    epoch_losses: list[float] = field(default_factory=list)
    epoch_scores: list[float] = field(default_factory=list)
    epoch_lrs: list[float] = field(default_factory=list)
    first_loss: float | None = None
    steps: int = 0

    @property
    def final_loss(self) -> float | None:
        return self.epoch_losses[-1] if self.epoch_losses else None


def _stage_config(model: ModelConfig, schedule: TrainSchedule) -> ModelConfig:
    return model.model_copy(update={"dropout": schedule.dropout})


def _loader(dataset: PoseDataset, split: str, cfg: ModelConfig, schedule: TrainSchedule) -> DataLoader:
    poses_2d, poses_3d, _ = dataset.split(split)
    clips = ClipDataset(poses_2d, poses_3d, cfg.frames, schedule.clip_stride)
    return DataLoader(
        clips,
        batch_size=schedule.batch_size,
        shuffle=True,
        num_workers=schedule.num_workers,
        generator=torch.Generator().manual_seed(schedule.seed),
    )


def _check_finite(loss: torch.Tensor, stage: int, step: int) -> None:
    if not torch.isfinite(loss):
        logger.error("Stage %d loss became %s at step %d", stage, loss.item(), step)
        raise NumericFailure(f"non-finite stage-{stage} loss {loss.item()} at step {step}")


def _optimiser(params, schedule: TrainSchedule):
    optimiser = torch.optim.AdamW(params, lr=schedule.lr, weight_decay=schedule.weight_decay)
    scheduler = torch.optim.lr_scheduler.ExponentialLR(optimiser, gamma=schedule.lr_decay)
    return optimiser, scheduler


@torch.no_grad()
def bone_accuracy(
    model: BoneAwareModule, poses_2d: np.ndarray, poses_3d: np.ndarray, topo: SkeletonTopology, clip_len: int
) -> float:
    """Category accuracy over every non-root bone of whole clips."""
    clips = ClipDataset(poses_2d, poses_3d, clip_len)
    was_training = model.training
    model.eval()
    correct = total = 0
    bones = [j for j in range(topo.num_joints) if j != topo.root_index]
    device = next(model.parameters()).device
    for s2d, s3d in DataLoader(clips, batch_size=32):
        pred = model(s2d.to(device)).argmax(dim=-1).cpu()[..., bones]
        labels = ground_truth_categories(s3d.double(), topo, model.num_categories)[..., bones]
        correct += int((pred == labels).sum())
        total += labels.numel()
    model.train(was_training)
    return correct / total


def train_stage1(
    config: ExperimentConfig,
    dataset: PoseDataset,
    out_dir: str | Path,
    topo: SkeletonTopology | None = None,
    deterministic: bool = False,
    device: str = "cpu",
) -> tuple[BoneAwareModule, TrainResult]:
    """Train the bone-aware classifier with cross-entropy and write its checkpoint."""
    topo = topo or config.load_topology()
    schedule = config.stage1
    cfg = _stage_config(config.model, schedule)
    seed_everything(schedule.seed, deterministic)

    model = BoneAwareModule(cfg, topo).to(device)
    optimiser, scheduler = _optimiser(model.parameters(), schedule)
    loader = _loader(dataset, "train", cfg, schedule)
    eval_split = "val" if len(dataset.val_indices) else "train"
    eval_2d, eval_3d, _ = dataset.split(eval_split)
    losses, accuracies, lrs, first, steps = [], [], [], None, 0

    for epoch in range(schedule.epochs):
        model.train()
        lrs.append(optimiser.param_groups[0]["lr"])
        total, batches = 0.0, 0
        for s2d, s3d in loader:
            s2d, s3d = s2d.to(device), s3d.to(device)
            labels = ground_truth_categories(s3d.double(), topo, cfg.num_categories)
            loss = stage1_loss(model(s2d), labels)
            _check_finite(loss, 1, steps)
            optimiser.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), schedule.clip_norm)
            optimiser.step()
            first = loss.item() if first is None else first
            total, batches, steps = total + loss.item(), batches + 1, steps + 1
            if schedule.max_steps and steps >= schedule.max_steps:
                break
        scheduler.step()
        losses.append(total / max(batches, 1))
        accuracies.append(bone_accuracy(model, eval_2d, eval_3d, topo, cfg.frames))
        logger.info(
            "stage1 epoch %d/%d loss=%.4f %s_acc=%.3f lr=%.2e",
            epoch + 1, schedule.epochs, losses[-1], eval_split, accuracies[-1], lrs[-1],
        )
        if schedule.max_steps and steps >= schedule.max_steps:
            break

    model.eval()
    manifest = save_checkpoint(model, out_dir, "stage1", cfg, topo, epochs=len(losses), steps=steps)
    return model, TrainResult(manifest, losses, accuracies, lrs, first, steps)


def train_stage2(
    config: ExperimentConfig,
    dataset: PoseDataset,
    stage1_path: str | Path | None,
    out_dir: str | Path,
    topo: SkeletonTopology | None = None,
    deterministic: bool = False,
    device: str = "cpu",
) -> tuple[PoseLifter, TrainResult]:
    """Train fusion, refinement and head on top of a frozen stage-1 checkpoint.

    With ``model.use_bones`` off there is no stage 1 and ``stage1_path`` is ignored.

    Raises:
        ConfigurationError: If the stage-1 checkpoint is missing or does not fit the config.
        NumericFailure: On a non-finite loss or if the stage-1 weights changed.
    """
    topo = topo or config.load_topology()
    schedule = config.stage2
    cfg = _stage_config(config.model, schedule)
    seed_everything(schedule.seed, deterministic)

    bone_aware, stage1_digest = None, None
    if cfg.use_bones:
        if stage1_path is None:
            raise ConfigurationError("stage 2 needs a stage-1 checkpoint unless model.use_bones=false")
        bone_aware, stage1_manifest = load_bone_aware(stage1_path, topo, cfg)
        stage1_digest = stage1_manifest.digest
    else:
        logger.info("model.use_bones is off; training the joint-only lifter")
    frozen_digest = module_digest(bone_aware) if bone_aware is not None else None
    model = PoseLifter(cfg, topo, bone_aware).to(device)
    optimiser, scheduler = _optimiser(model.trainable_parameters(), schedule)
    loader = _loader(dataset, "train", cfg, schedule)
    eval_split = "val" if len(dataset.val_indices) else "train"
    eval_2d, eval_3d, _ = dataset.split(eval_split)
    losses, errors, lrs, first, steps = [], [], [], None, 0

    for epoch in range(schedule.epochs):
        model.train()
        lrs.append(optimiser.param_groups[0]["lr"])
        total, batches = 0.0, 0
        for s2d, s3d in loader:
            s2d, s3d = s2d.to(device), s3d.to(device)
            loss = stage2_loss(model(s2d), s3d)
            _check_finite(loss, 2, steps)
            optimiser.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.trainable_parameters(), schedule.clip_norm)
            optimiser.step()
            first = loss.item() if first is None else first
            total, batches, steps = total + loss.item(), batches + 1, steps + 1
            if schedule.max_steps and steps >= schedule.max_steps:
                break
        scheduler.step()
        losses.append(total / max(batches, 1))
        errors.append(float(mpjpe(torch.as_tensor(predict_sequences(model, eval_2d)), torch.as_tensor(eval_3d))))
        logger.info(
            "stage2 epoch %d/%d loss=%.4f %s_mpjpe=%.2fmm lr=%.2e",
            epoch + 1, schedule.epochs, losses[-1], eval_split, errors[-1], lrs[-1],
        )
        if schedule.max_steps and steps >= schedule.max_steps:
            break

    if frozen_digest is not None and module_digest(model.bone_aware) != frozen_digest:
        raise NumericFailure("stage-1 weights changed during stage-2 training")
    model.eval()
    manifest = save_checkpoint(
        model, out_dir, "stage2", cfg, topo,
        stage1_digest=stage1_digest, epochs=len(losses), steps=steps,
    )
    return model, TrainResult(manifest, losses, errors, lrs, first, steps)


def predict_sequences(model: PoseLifter, poses_2d: np.ndarray) -> np.ndarray:
    """Lift every (f, j, 2) sequence of an (S, f, j, 2) array."""
    return np.stack([lift_sequence(model, seq) for seq in poses_2d])


def evaluate_model(model: PoseLifter, dataset: PoseDataset, split: str = "val") -> MetricReport:
    """Predict a dataset split and score it, per action when tags are present."""
    poses_2d, poses_3d, actions = dataset.split(split)
    if len(poses_2d) == 0:
        raise DataError(f"split {split!r} holds no sequences")
    return evaluate_predictions(predict_sequences(model, poses_2d), poses_3d, actions)
