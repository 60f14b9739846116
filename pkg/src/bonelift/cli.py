"""Command-line entry point: data generation, two-stage training, evaluation, inference, plots."""

import argparse
import json
import logging
import sys
import zipfile
from pathlib import Path

import numpy as np
from dotenv import load_dotenv

from . import __version__
from .checkpoint import load_lifter
from .config import ExperimentConfig, RuntimeSettings, load_config
from .data import IngestManifest, generate_synthetic, ingest_external, load_dataset, save_dataset
from .errors import BoneliftError, ConfigurationError, DataError
from .metrics import evaluate_predictions
from .pipeline import lift_sequence
from .plotting import plot_sequence
from .training import evaluate_model, train_stage1, train_stage2

logger = logging.getLogger("bonelift")

PREDICTION_SCHEMA = "bonelift.prediction/1"


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _load_experiment(args: argparse.Namespace) -> ExperimentConfig:
    overrides = list(args.set or [])
    if args.seed is not None:
        for section in ("model", "stage1", "stage2", "data"):
            overrides.append(f"{section}.seed={args.seed}")
    return load_config(args.config, overrides)


def _out_dir(args: argparse.Namespace, settings: RuntimeSettings, name: str) -> Path:
    return Path(args.out) if args.out else settings.output_root / name


def cmd_generate(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    config = _load_experiment(args)
    topo = config.load_topology()
    dataset = generate_synthetic(config.data, topo)
    save_dataset(dataset, _out_dir(args, settings, "data"), args.precision)
    return 0


def cmd_ingest(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    config = _load_experiment(args)
    topo = config.load_topology()
    manifest = IngestManifest(
        units=args.units, units_2d=args.units_2d, num_joints=topo.num_joints, seed=config.data.seed
    )
    dataset = ingest_external(args.archive, manifest, topo)
    save_dataset(dataset, _out_dir(args, settings, "data"), args.precision)
    return 0


def cmd_train_stage1(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    config = _load_experiment(args)
    topo = config.load_topology()
    dataset = load_dataset(args.data, topo)
    train_stage1(
        config, dataset, _out_dir(args, settings, "stage1"), topo,
        deterministic=args.deterministic or settings.deterministic, device=settings.device,
    )
    return 0


def cmd_train_stage2(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    config = _load_experiment(args)
    topo = config.load_topology()
    dataset = load_dataset(args.data, topo)
    train_stage2(
        config, dataset, args.stage1, _out_dir(args, settings, "stage2"), topo,
        deterministic=args.deterministic or settings.deterministic, device=settings.device,
    )
    return 0


def cmd_eval(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    config = _load_experiment(args)
    topo = config.load_topology()
    dataset = load_dataset(args.data, topo)
    if args.predictions:
        _, poses_3d, actions = dataset.split(args.split)
        predicted = _read_array(args.predictions, "poses_3d")
        if predicted.shape != poses_3d.shape:
            raise DataError(f"predictions {predicted.shape} do not match the {args.split} split {poses_3d.shape}")
        report = evaluate_predictions(predicted, poses_3d, actions)
    else:
        model, _ = load_lifter(args.checkpoint, topo)
        model.to(settings.device)
        report = evaluate_model(model, dataset, args.split)
    out = Path(args.out) if args.out else settings.output_root / "eval" / "report.toml"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_text())
    logger.info("MPJPE %.2f mm, P-MPJPE %.2f mm; report written to %s", report.mpjpe_mm, report.p_mpjpe_mm, out)
    return 0


def _read_array(path: str | Path, key: str) -> np.ndarray:
    try:
        with np.load(path, allow_pickle=False) as archive:
            return np.asarray(archive[key])
    except (OSError, EOFError, ValueError, KeyError, zipfile.BadZipFile) as e:
        raise DataError(f"Failed to read {key!r} from {path}: {e}") from e


def cmd_infer(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    config = _load_experiment(args)
    topo = config.load_topology()
    model, manifest = load_lifter(args.checkpoint, topo)
    model.to(settings.device)
    poses_2d = _read_array(args.input, "poses_2d")
    if poses_2d.ndim == 3:
        poses_2d = poses_2d[None]
    if poses_2d.ndim != 4 or poses_2d.shape[-2:] != (topo.num_joints, 2):
        raise DataError(f"poses_2d must be (b, f, {topo.num_joints}, 2), got {poses_2d.shape}")
    poses_3d = np.stack([lift_sequence(model, seq) for seq in poses_2d])

    metadata = {
        "schema_version": PREDICTION_SCHEMA,
        "units": "mm",
        "topology_hash": topo.topology_hash,
        "checkpoint_digest": manifest.digest,
        "model": manifest.model,
    }
    out = Path(args.out) if args.out else settings.output_root / "predictions.npz"
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez(out, poses_3d=poses_3d.astype("<f4"), metadata=np.array(json.dumps(metadata)))
    logger.info("Wrote %s predictions to %s", poses_3d.shape, out)
    return 0


def _parse_frames(raw: str | None) -> list[int] | None:
    if not raw:
        return None
    try:
        return [int(f) for f in raw.split(",")]
    except ValueError as e:
        raise ConfigurationError(f"--frames must be comma separated integers, got {raw!r}") from e


def cmd_plot(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    frames = _parse_frames(args.frames)
    config = _load_experiment(args)
    topo = config.load_topology()
    poses = _read_array(args.predictions, "poses_3d")
    if poses.ndim == 3:
        poses = poses[None]
    if not 0 <= args.sequence < len(poses):
        raise DataError(f"sequence {args.sequence} outside [0, {len(poses)})")
    gt = None
    if args.ground_truth:
        gt = _read_array(args.ground_truth, "poses_3d")
        gt = (gt[None] if gt.ndim == 3 else gt)[args.sequence]
    plot_sequence(poses[args.sequence], topo, _out_dir(args, settings, "plots"), gt, frames)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bonelift", description=__doc__)
    parser.add_argument("--version", action="version", version=f"bonelift {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", action="append", type=Path, default=[], help="TOML config, repeatable")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override, e.g. model.depth=2")
    common.add_argument("--seed", type=int, default=None, help="Seed for data, model and both stages")
    common.add_argument("--deterministic", action="store_true", help="Force deterministic kernels")
    common.add_argument("--out", default=None, help="Output path (default under BONELIFT_OUTPUT_ROOT)")
    common.add_argument("--log-level", default=None, help="Logging level (default BONELIFT_LOG_LEVEL)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", parents=[common], help="Generate a synthetic dataset")
    p.add_argument("--precision", choices=["float32", "float64"], default=None)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("ingest", parents=[common], help="Normalise an external pose archive")
    p.add_argument("archive", help=".npz with poses_2d, poses_3d and optional actions")
    p.add_argument("--units", choices=["mm", "m"], default="mm")
    p.add_argument("--units-2d", choices=["mm", "m", "normalized"], default="mm")
    p.add_argument("--precision", choices=["float32", "float64"], default=None)
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("train-stage1", parents=[common], help="Train the bone-aware classifier")
    p.add_argument("--data", required=True, help="Dataset directory")
    p.set_defaults(handler=cmd_train_stage1)

    p = sub.add_parser("train-stage2", parents=[common], help="Train the lifter on a frozen stage 1")
    p.add_argument("--data", required=True, help="Dataset directory")
    p.add_argument("--stage1", default=None, help="Stage-1 checkpoint directory (not used when model.use_bones=false)")
    p.set_defaults(handler=cmd_train_stage2)

    p = sub.add_parser("eval", parents=[common], help="Score a checkpoint or a prediction file")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--checkpoint", help="Stage-2 checkpoint directory")
    source.add_argument("--predictions", help=".npz holding poses_3d for the chosen split")
    p.add_argument("--data", required=True, help="Dataset directory")
    p.add_argument("--split", choices=["train", "val", "all"], default="val")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("infer", parents=[common], help="Lift 2-D poses from an .npz file")
    p.add_argument("--checkpoint", required=True, help="Stage-2 checkpoint directory")
    p.add_argument("--input", required=True, help=".npz holding poses_2d (f, j, 2) or (b, f, j, 2)")
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("plot", parents=[common], help="Render per-frame skeleton images")
    p.add_argument("--predictions", required=True, help=".npz holding poses_3d")
    p.add_argument("--ground-truth", default=None, help=".npz holding matching poses_3d")
    p.add_argument("--sequence", type=int, default=0)
    p.add_argument("--frames", default=None, help="Comma separated frame indices (default all)")
    p.set_defaults(handler=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        settings = RuntimeSettings.from_env()
        configure_logging(args.log_level or settings.log_level)
        return args.handler(args, settings)
    except BoneliftError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
