import math

import numpy as np
import pytest

import dalign


def peaked(cls, p):
    row = np.full(8, (1.0 - p) / 7.0)
    row[cls] = p
    return row


def test_class_names():
    assert dalign.CLASS_NAMES[0] == "Reaching"
    assert dalign.CLASS_NAMES[7] == "Nothing"
    assert len(dalign.CLASS_NAMES) == 8


def test_projection_round_trip():
    cam = dalign.CameraIntrinsics(fx=500.0, fy=480.0, cx=320.0, cy=240.0, width=640, height=480)
    p = dalign.backproject_pixel(100.25, 37.5, 2.5, cam)
    status, u, v = dalign.project(p, cam)
    assert status == "in_frame"
    assert u == pytest.approx(100.25, abs=1e-9)
    assert v == pytest.approx(37.5, abs=1e-9)
    assert dalign.backproject_pixel(320.0, 240.0, 3.0, cam) == [0.0, 0.0, 3.0]
    assert dalign.project([0.0, 0.0, -1.0], cam)[0] == "behind_camera"


def test_backproject_skips_zero_depth():
    cam = dalign.CameraIntrinsics(fx=10.0, fy=10.0, cx=2.0, cy=1.0, width=5, height=3)
    depth = np.zeros((3, 5), dtype=np.float32)
    assert dalign.backproject(depth, cam).shape == (0, 3)
    depth[1, 2] = 4.0
    assert np.array_equal(dalign.backproject(depth, cam), [[0.0, 0.0, 4.0]])


def test_voxelize_shapes_and_counts():
    rng = np.random.default_rng(0)
    pts = rng.uniform([-60, -60, 40], [60, 60, 160], size=(500, 3))
    cols = rng.uniform(0, 1, size=(500, 3)).astype(np.float32)
    g = dalign.voxelize(pts, cols)
    assert g["features"].shape == (21, 21, 21, 7)
    assert g["tokens"].shape == (9261, 10)
    assert g["in_bounds"] + g["discarded"] == 500
    assert sum(g["counts"]) == g["in_bounds"]
    occ = g["features"][..., -1]
    assert int(occ.sum()) == g["occupied"]
    assert np.all(g["features"][occ == 0] == 0)


def test_alignment_worked_case():
    human = np.stack([peaked(2, 0.8), peaked(4, 0.9)])
    robot = np.stack([peaked(2, 0.5), peaked(3, 0.6)])
    r = dalign.alignment_score(human, robot)
    assert r["score"] == pytest.approx(0.2, abs=1e-15)
    assert r["per_class_agreement"]["Lifting"] == 1.0
    assert r["per_class_agreement"]["Reaching"] is None
    onehot = np.eye(8)
    assert dalign.alignment_score(onehot, onehot)["score"] == 1.0
    assert dalign.soft_alignment_loss(onehot, onehot) == 0.0
    with pytest.raises(dalign.DimensionError):
        dalign.alignment_score(onehot, onehot[:3])


def test_split_and_weights():
    train, val, test = dalign.split_dataset(70)
    assert (len(train), len(val), len(test)) == (49, 14, 7)
    assert sorted(train + val + test) == list(range(70))
    labels = [0] * 10 + [1] * 30 + list(range(2, 8)) * 5
    w = dalign.class_weights(labels)
    assert sum(w[c] * labels.count(c) for c in range(8)) == len(labels)
    with pytest.raises(dalign.MissingClassError):
        dalign.class_weights([0, 1, 2])


def test_synthetic_episode():
    ep = dalign.synthetic_episode(seed=3, frames=16)
    assert ep["rgb"].shape == (16, 48, 64, 3)
    assert ep["depth"].shape == (16, 48, 64)
    assert ep["labels"] == sorted(ep["labels"])
    assert set(ep["labels"]) == set(range(8))


def test_train_predict_round_trip(tmp_path):
    dalign.generate_corpus(tmp_path / "data", 10, frames=8, seed=1)
    config = "\n".join([
        "branch = human",
        "epochs = 2",
        "batch_size = 2",
        "human.input_size = 16",
        "human.stage_widths = 4,4,4,16",
        "human.lstm_hidden = 8",
        "human.mlp_hidden = 8",
    ])
    result = dalign.train(config, tmp_path / "data", tmp_path / "best.ckpt")
    assert len(result["curve"]) == 3
    assert abs(result["curve"][0]["train_loss"] - math.log(8)) < 0.3
    model = dalign.Model.load(tmp_path / "best.ckpt")
    assert model.branch == "human"
    probs = model.predict(tmp_path / "data" / "ep_0000")
    assert probs.shape == (8, 8)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOPE" + (tmp_path / "best.ckpt").read_bytes()[4:])
    with pytest.raises(dalign.FormatError):
        dalign.Model.load(bad)


def test_gradient_suite_autodiff():
    rows = dalign.gradient_suite("autodiff")
    assert rows and all(r["passed"] and r["max_relative_error"] <= 1e-5 for r in rows)
    with pytest.raises(dalign.ContractError):
        dalign.gradient_suite("nope")
