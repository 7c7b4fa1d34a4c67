import json
import os
import subprocess

import numpy as np
import pytest

import aniformer as af

TINY_DATA = {
    "seed": 5,
    "synth": {"bone_count": 2, "rings_per_bone": 1, "ring_resolution": 11},
    "seen_motions": 4,
    "unseen_motions": 2,
    "seen_subjects": 2,
    "unseen_subjects": 1,
    "train_shapes": 2,
    "test_shapes": 2,
    "pairs_per_epoch": 6,
}

TINY_TRAIN = {
    "learning_rate": 1e-3,
    "milestones": [2],
    "epochs": 2,
    "pairs_per_epoch": 6,
    "model": {"extractor_widths": [8, 8, 8], "encoder_widths": [8, 8, 4, 4]},
}


@pytest.fixture(scope="module")
def pair():
    return af.make_pair(1, 2, 3, 4, frames=7)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    af.generate_dataset(json.dumps(TINY_DATA), out)
    return out


def test_version():
    assert af.__version__.count(".") == 2


def test_pair_shapes(pair):
    t, v = 7, 4 * 6 * 12 + 2
    assert pair["driving"].shape == (t, v, 3)
    assert pair["ground_truth"].shape == (t, v, 3)
    assert pair["target"].shape == (v, 3)
    assert pair["faces"].dtype == np.uint32
    assert sorted(pair["permutation"]) == list(range(v))


def test_obj_round_trip(tmp_path, pair):
    path = tmp_path / "target.obj"
    af.save_obj(path, pair["target"], pair["faces"])
    vertices, faces = af.load_obj(path)
    np.testing.assert_array_equal(faces, pair["faces"])
    np.testing.assert_array_equal(vertices, pair["target"])


def test_sequence_round_trip(tmp_path, pair):
    af.save_sequence(tmp_path / "gt", pair["ground_truth"], pair["faces"], role="ground_truth")
    frames, faces, role = af.load_sequence(tmp_path / "gt")
    assert role == "ground_truth"
    np.testing.assert_array_equal(frames, pair["ground_truth"])
    np.testing.assert_array_equal(faces, pair["faces"])


def test_metric_and_loss_identities(pair):
    g, faces = pair["ground_truth"], pair["faces"]
    assert af.pmd(g, g, faces) == 0.0
    assert af.reconstruction_loss(g, g, faces) == 0.0
    assert af.motion_loss(g, g, faces) == 0.0
    assert af.appearance_loss(np.repeat(pair["target"][None], 3, axis=0), pair["target"], faces) == 0.0

    shifted = g + np.array([0.3, 0.0, -0.4])
    assert af.pmd(shifted, g, faces) == pytest.approx(0.25, rel=1e-12)
    per_frame = af.pmd_per_frame(shifted, g, faces)
    assert np.mean(per_frame) == pytest.approx(af.pmd(shifted, g, faces), abs=1e-12)
    assert af.motion_loss(1.7 * g, g, faces) < 1e-9


def test_model_animates_every_frame(tmp_path, pair):
    model = af.Model(json.dumps({"extractor_widths": [8, 8, 8], "encoder_widths": [8, 8, 4, 4]}), seed=3)
    assert model.parameter_count > 0
    out = model.animate(pair["driving"], pair["faces"], pair["target"], pair["faces"])
    assert out.shape == pair["driving"].shape
    assert np.all(np.abs(out) < 1.0)

    model.save(tmp_path / "model.ckpt")
    loaded = af.Model.load(tmp_path / "model.ckpt")
    assert json.loads(loaded.config_json) == json.loads(model.config_json)
    np.testing.assert_array_equal(loaded.animate(pair["driving"], pair["faces"], pair["target"], pair["faces"]), out)


def test_errors_are_typed(tmp_path, pair):
    with pytest.raises(af.IoError):
        af.load_obj(tmp_path / "missing.obj")
    with pytest.raises(af.ContractError):
        af.pmd(pair["driving"], pair["driving"][:3], pair["faces"])
    with pytest.raises(af.Error):
        af.Model('{"encoder_widths": []}')
    with pytest.raises(ValueError):
        af.pmd(np.zeros((3, 4)), np.zeros((3, 4)), pair["faces"])


def test_train_and_cli(tmp_path, dataset):
    summary = af.train(dataset, json.dumps(TINY_TRAIN), tmp_path / "run")
    assert summary["steps"] == 6
    assert summary["final"]["seen_pmd"] < summary["baseline"]["seen_pmd"]
    with open(tmp_path / "run" / "log.jsonl") as f:
        assert len(f.readlines()) == 6

    pair_dir = dataset / "eval" / "seen_000"
    code, out, _ = af.run_cli(
        ["animate", "--checkpoint", str(tmp_path / "run" / "model.ckpt"), "--driving", str(pair_dir / "driving"),
         "--target", str(pair_dir / "target.obj"), "--out", str(tmp_path / "generated")])
    assert code == 0
    frames, _, role = af.load_sequence(tmp_path / "generated")
    assert role == "generated"
    assert frames.shape[0] == 30

    code, _, err = af.run_cli(["train", "--data", str(dataset), "--out", str(tmp_path / "x"), "--bogus"])
    assert code == 2
    assert "bogus" in err


def test_gradcheck():
    report = af.toy_gradcheck()
    assert report["passed"]
    assert report["max_relative_error"] < 1e-4
    assert report["vertex_count"] == 24


@pytest.mark.skipif("ANIFORMER_CLI" not in os.environ, reason="CLI binary path not provided")
def test_cli_binary_exit_codes(tmp_path):
    cli = os.environ["ANIFORMER_CLI"]
    assert subprocess.run([cli, "--version"], capture_output=True).returncode == 0
    missing = subprocess.run([cli, "train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")],
                             capture_output=True)
    assert missing.returncode == 2
