"""End-to-end tests for the bonelift command line on the micro configuration."""

import json

import numpy as np
import pytest

from bonelift.checkpoint import read_checkpoint
from bonelift.cli import PREDICTION_SCHEMA, build_parser, main
from bonelift.data import load_dataset

from .conftest import ROOT

MICRO = ["--config", "configs/micro.toml"]


def _report(path):
    values = {}
    for line in path.read_text().splitlines():
        if line.startswith("["):
            break
        if " = " in line:
            key, value = line.split(" = ")
            values[key] = float(value)
    return values


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """Generate data and train both stages once for the whole module."""
    root = tmp_path_factory.mktemp("cli")
    with pytest.MonkeyPatch.context() as mp:
        mp.chdir(ROOT)
        mp.setenv("BONELIFT_OUTPUT_ROOT", str(root / "runs"))
        assert main(["generate-data", *MICRO, "--out", str(root / "data")]) == 0
        assert main(["train-stage1", *MICRO, "--data", str(root / "data"), "--out", str(root / "stage1")]) == 0
        assert (
            main(
                [
                    "train-stage2", *MICRO,
                    "--data", str(root / "data"),
                    "--stage1", str(root / "stage1"),
                    "--out", str(root / "stage2"),
                ]
            )
            == 0
        )
    return root


@pytest.fixture
def in_root(monkeypatch, run):
    monkeypatch.chdir(ROOT)
    monkeypatch.setenv("BONELIFT_OUTPUT_ROOT", str(run / "runs"))
    return run


def test_generate_writes_a_loadable_dataset(in_root, micro_topo):
    dataset = load_dataset(in_root / "data", micro_topo)
    assert dataset.poses_3d.shape == (16, 16, 5, 3)
    assert dataset.manifest.precision == "float64"


def test_generate_is_reproducible(in_root, micro_topo, tmp_path):
    """Test the same seed writes identical arrays."""
    assert main(["generate-data", *MICRO, "--out", str(tmp_path / "again")]) == 0
    again = load_dataset(tmp_path / "again", micro_topo)
    first = load_dataset(in_root / "data", micro_topo)
    np.testing.assert_array_equal(again.poses_2d, first.poses_2d)
    np.testing.assert_array_equal(again.poses_3d, first.poses_3d)


def test_training_writes_linked_checkpoints(in_root):
    stage1, _ = read_checkpoint(in_root / "stage1")
    stage2, _ = read_checkpoint(in_root / "stage2")
    assert stage1.kind == "stage1" and stage2.kind == "stage2"
    assert stage2.stage1_digest == stage1.digest
    assert stage2.epochs == 2


def test_eval_checkpoint(in_root):
    """Test a checkpoint evaluation writes the flat report with per-action tables."""
    out = in_root / "eval.toml"
    assert main(["eval", *MICRO, "--checkpoint", str(in_root / "stage2"), "--data", str(in_root / "data"), "--out", str(out)]) == 0
    report = _report(out)
    assert report["mpjpe_mm"] > 0
    assert 0 <= report["pck_percent"] <= 100
    assert report["num_frames"] == 3 * 16
    assert "[action." in out.read_text()


def test_eval_ground_truth_as_predictions_scores_zero(in_root, micro_topo, tmp_path):
    """Test scoring the ground truth against itself gives zero errors."""
    dataset = load_dataset(in_root / "data", micro_topo)
    _, poses_3d, _ = dataset.split("val")
    np.savez(tmp_path / "gt.npz", poses_3d=poses_3d)
    out = tmp_path / "report.toml"
    assert main(["eval", *MICRO, "--predictions", str(tmp_path / "gt.npz"), "--data", str(in_root / "data"), "--out", str(out)]) == 0
    report = _report(out)
    assert report["mpjpe_mm"] == 0.0
    assert report["pck_percent"] == 100.0
    assert report["auc"] == 1.0


def test_eval_rejects_mismatched_predictions(in_root, tmp_path):
    np.savez(tmp_path / "short.npz", poses_3d=np.zeros((1, 16, 5, 3)))
    code = main(["eval", *MICRO, "--predictions", str(tmp_path / "short.npz"), "--data", str(in_root / "data")])
    assert code == 3


def test_infer_then_eval_predictions(in_root, micro_topo, tmp_path):
    """Test inference writes millimetre predictions that score like the checkpoint."""
    dataset = load_dataset(in_root / "data", micro_topo)
    poses_2d, _, _ = dataset.split("val")
    np.savez(tmp_path / "input.npz", poses_2d=poses_2d)
    predictions = tmp_path / "pred.npz"
    assert main(["infer", *MICRO, "--checkpoint", str(in_root / "stage2"), "--input", str(tmp_path / "input.npz"), "--out", str(predictions)]) == 0

    with np.load(predictions) as archive:
        poses_3d = archive["poses_3d"]
        metadata = json.loads(str(archive["metadata"]))
    assert poses_3d.shape == (3, 16, 5, 3)
    assert metadata["schema_version"] == PREDICTION_SCHEMA
    assert metadata["units"] == "mm"
    assert metadata["checkpoint_digest"] == read_checkpoint(in_root / "stage2")[0].digest

    from_file, from_model = tmp_path / "a.toml", tmp_path / "b.toml"
    assert main(["eval", *MICRO, "--predictions", str(predictions), "--data", str(in_root / "data"), "--out", str(from_file)]) == 0
    assert main(["eval", *MICRO, "--checkpoint", str(in_root / "stage2"), "--data", str(in_root / "data"), "--out", str(from_model)]) == 0
    assert _report(from_file)["mpjpe_mm"] == pytest.approx(_report(from_model)["mpjpe_mm"], abs=1e-5)


def test_infer_single_sequence(in_root, tmp_path):
    """Test an (f, j, 2) input of arbitrary length is lifted as one sequence."""
    np.savez(tmp_path / "one.npz", poses_2d=np.random.default_rng(0).normal(0, 300, (11, 5, 2)))
    out = tmp_path / "one_pred.npz"
    assert main(["infer", *MICRO, "--checkpoint", str(in_root / "stage2"), "--input", str(tmp_path / "one.npz"), "--out", str(out)]) == 0
    with np.load(out) as archive:
        assert archive["poses_3d"].shape == (1, 11, 5, 3)


def test_infer_rejects_wrong_joint_count(in_root, tmp_path):
    np.savez(tmp_path / "bad.npz", poses_2d=np.zeros((8, 17, 2)))
    code = main(["infer", *MICRO, "--checkpoint", str(in_root / "stage2"), "--input", str(tmp_path / "bad.npz")])
    assert code == 3


def test_plot(in_root, micro_topo, tmp_path):
    """Test selected frames are rendered to PNG files."""
    dataset = load_dataset(in_root / "data", micro_topo)
    np.savez(tmp_path / "poses.npz", poses_3d=dataset.poses_3d[:2])
    out = tmp_path / "plots"
    args = ["plot", *MICRO, "--predictions", str(tmp_path / "poses.npz"), "--ground-truth", str(tmp_path / "poses.npz")]
    assert main([*args, "--sequence", "1", "--frames", "0,3", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["frame_00000.png", "frame_00003.png"]
    assert main([*args, "--sequence", "5", "--out", str(out)]) == 3


def test_exit_codes(in_root, tmp_path):
    """Test configuration problems exit 2 and data problems exit 3."""
    assert main(["train-stage1", "--config", str(tmp_path / "missing.toml"), "--data", str(in_root / "data")]) == 2
    assert main(["train-stage1", *MICRO, "--set", "model.dropout=1.5", "--data", str(in_root / "data")]) == 2
    assert main(["train-stage1", *MICRO, "--data", str(tmp_path / "nowhere")]) == 3
    # The tiny default model against the micro dataset is a topology mismatch.
    assert main(["train-stage1", "--data", str(in_root / "data")]) == 3
    assert main(["infer", *MICRO, "--checkpoint", str(in_root / "stage1"), "--input", str(tmp_path / "x.npz")]) == 2


def test_malformed_values_are_configuration_errors(in_root, tmp_path, caplog):
    """Test bad --frames and mismatched bone lengths exit 2 with a named diagnostic."""
    code = main(["plot", *MICRO, "--predictions", str(tmp_path / "p.npz"), "--frames", "0,abc"])
    assert code == 2
    assert "--frames must be comma separated integers, got '0,abc'" in caplog.text

    caplog.clear()
    code = main(
        ["generate-data", *MICRO, "--set", "data.bone_lengths_mm=[0.0, 100.0]", "--out", str(tmp_path / "d")]
    )
    assert code == 2
    assert "bone_lengths_mm has 2 entries, expected 5" in caplog.text


def test_joint_only_stage2_from_the_command_line(in_root, tmp_path):
    """Test stage 2 runs without --stage1 only when bones are switched off."""
    data = str(in_root / "data")
    assert main(["train-stage2", *MICRO, "--data", data, "--out", str(tmp_path / "s2")]) == 2
    assert (
        main(["train-stage2", *MICRO, "--set", "model.use_bones=false", "--data", data, "--out", str(tmp_path / "s2")])
        == 0
    )
    manifest, _ = read_checkpoint(tmp_path / "s2")
    assert manifest.stage1_digest is None
    assert manifest.model["use_bones"] is False


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["eval", "--data", "d"])

