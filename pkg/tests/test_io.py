import json

import cv2
import numpy as np
import pytest
import torch

from fwnet.io import (
    FLO_MAGIC,
    CheckpointError,
    ingest_video,
    load_frame,
    load_mask,
    load_checkpoint,
    load_dataset,
    read_flo,
    read_png,
    save_checkpoint,
    write_flo,
    write_frame_png,
    write_mask_png,
    write_sequence,
)
from fwnet.io import sample_indices
from fwnet.model import fwnet_init, predict_proba
from fwnet.segnet import SegNetConfig
from fwnet.warp import FlowField


def test_flo_roundtrip(tmp_path, rng):
    flow = rng.normal(size=(5, 7, 2)).astype(np.float32)
    write_flo(tmp_path / "a.flo", flow)
    assert np.array_equal(read_flo(tmp_path / "a.flo"), flow)
    write_flo(tmp_path / "b.flo", FlowField(flow.astype(np.float64)))
    assert np.array_equal(read_flo(tmp_path / "b.flo"), flow)


def test_flo_header_layout(tmp_path):
    flow = np.zeros((2, 3, 2), np.float32)
    flow[0, 1] = (1.5, -2.0)
    write_flo(tmp_path / "a.flo", flow)
    raw = (tmp_path / "a.flo").read_bytes()
    assert raw[:4] == FLO_MAGIC
    assert np.frombuffer(raw[4:12], "<i4").tolist() == [3, 2]
    assert np.frombuffer(raw[12:], "<f4").tolist()[2:4] == [1.5, -2.0]
    assert len(raw) == 12 + 2 * 3 * 2 * 4


def test_flo_bad_magic(tmp_path):
    (tmp_path / "x.flo").write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(ValueError):
        read_flo(tmp_path / "x.flo")


def test_png_roundtrip(tmp_path, rng):
    f = rng.random((16, 16)).astype(np.float32)
    write_frame_png(tmp_path / "f.png", f)
    back = load_frame(tmp_path / "f.png")
    assert np.abs(back - f).max() <= 0.5 / 255 + 1e-6
    m = (rng.random((16, 16)) < 0.5).astype(np.uint8)
    write_mask_png(tmp_path / "m.png", m)
    assert np.array_equal(load_mask(tmp_path / "m.png"), m)


def test_dataset_layout(tmp_path, rng):
    frames = [rng.random((8, 8)).astype(np.float32) for _ in range(3)]
    masks = [(f > 0.5).astype(np.uint8) for f in frames]
    write_sequence(tmp_path, "s0", frames, clean_masks=masks)
    data = load_dataset(tmp_path, masks="masks_clean")
    assert len(data) == 1 and len(data[0]) == 3
    for (f, m), g in zip(data[0], masks):
        assert np.array_equal(m, g)
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path, masks="masks_raw")
    assert load_dataset(tmp_path, masks="masks_raw", require_masks=False)[0][0][1] is None


@pytest.fixture(scope="module")
def model():
    return fwnet_init(3)


def test_checkpoint_roundtrip_bitwise(tmp_path, model, rng):
    save_checkpoint(tmp_path / "c.pt", model, {"lam": 0.4})
    back, payload = load_checkpoint(tmp_path / "c.pt")
    assert payload["train_config"] == {"lam": 0.4}
    frames = [rng.random((256, 256)).astype(np.float32)]
    model.eval()
    assert np.array_equal(predict_proba(model.segnet, frames), predict_proba(back.segnet, frames))
    for (k, a), b in zip(model.state_dict().items(), back.state_dict().values()):
        assert torch.equal(a, b), k


def test_checkpoint_shape_mismatch(tmp_path, model):
    save_checkpoint(tmp_path / "c.pt", model)
    payload = torch.load(tmp_path / "c.pt", weights_only=True)
    key = next(k for k in payload["tensors"] if k.startswith("segnet."))
    payload["tensors"][key] = torch.zeros(1)
    torch.save(payload, tmp_path / "bad.pt")
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(tmp_path / "bad.pt")


def test_checkpoint_architecture_mismatch(tmp_path, model):
    save_checkpoint(tmp_path / "c.pt", model)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c.pt", expected_config=SegNetConfig(in_channels=1))


def test_checkpoint_garbage(tmp_path):
    (tmp_path / "x.pt").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.pt")


def test_sample_indices():
    assert sample_indices(300, 30.0, 8.0) == [int(np.floor(k * 30 / 8)) for k in range(80)]
    assert sample_indices(5, 8.0, 8.0) == [0, 1, 2, 3, 4]
    with pytest.raises(ValueError):
        sample_indices(5, 0.0, 8.0)


@pytest.fixture(scope="module")
def video(tmp_path_factory):
    path = tmp_path_factory.mktemp("vid") / "clip.avi"
    w = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"), 30.0, (320, 240))
    assert w.isOpened()
    for k in range(300):
        img = np.full((240, 320, 3), 200, np.uint8)
        cv2.line(img, (10 + k % 100, 20), (300, 220), (40, 40, 40), 3)
        w.write(img)
    w.release()
    return path


def test_ingest_video_counts_and_size(tmp_path, video):
    seq = ingest_video(video, tmp_path / "a", fps=8)
    files = sorted((seq / "frames").glob("*.png"))
    assert len(files) == 80
    assert read_png(files[0]).shape == (256, 256)
    manifest = json.loads((seq / "manifest.json").read_text())
    assert manifest["count"] == 80 and manifest["source_fps"] == pytest.approx(30.0)


def test_ingest_is_idempotent(tmp_path, video):
    a = ingest_video(video, tmp_path / "a", fps=8)
    b = ingest_video(video, tmp_path / "b", fps=8)
    fa = sorted((a / "frames").glob("*.png"))
    fb = sorted((b / "frames").glob("*.png"))
    assert [p.name for p in fa] == [p.name for p in fb]
    assert all(p.read_bytes() == q.read_bytes() for p, q in zip(fa, fb))


def test_ingest_unreadable(tmp_path):
    (tmp_path / "junk.mp4").write_bytes(b"junk")
    with pytest.raises((OSError, ValueError)):
        ingest_video(tmp_path / "junk.mp4", tmp_path / "out")
