"""File formats: Middlebury .flo, PNG frames/masks, checkpoints, dataset trees.

Dataset layout::

    <root>/<sequence_id>/frames/000000.png
    <root>/<sequence_id>/masks_clean/000000.png
    <root>/<sequence_id>/masks_raw/000000.png
    <root>/manifest.json

Checkpoints are ``torch.save`` dictionaries (loadable with
``weights_only=True``)::

    {"format": "fwnet-checkpoint", "version": 1,
     "segnet_config": {...}, "flownet_config": {...}, "train_config": {...},
     "tensors": {"segnet.<name>": Tensor, "flownet.<name>": Tensor}}
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .flownet import FLOW_CHANNELS, FLOW_KERNELS, FlowNet
from .model import FWNet
from .segnet import SegNet, SegNetConfig
from .warp import FlowField

__all__ = [
    "FLO_MAGIC",
    "read_flo",
    "write_flo",
    "read_png",
    "write_frame_png",
    "write_mask_png",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "write_sequence",
    "load_dataset",
    "list_sequences",
    "write_json",
    "ingest_video",
]

FLO_MAGIC = b"PIEH"
CHECKPOINT_FORMAT = "fwnet-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def write_flo(path, flow) -> None:
    data = flow.data if isinstance(flow, FlowField) else np.asarray(flow)
    if data.ndim != 3 or data.shape[2] != 2:
        raise ValueError(f"flow must be (H, W, 2), got {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(FLO_MAGIC)
        f.write(np.array([w, h], dtype="<i4").tobytes())
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_flo(path) -> np.ndarray:
    """Read a Middlebury flow file into a float32 ``(H, W, 2)`` array."""
    with open(path, "rb") as f:
        if f.read(4) != FLO_MAGIC:
            raise ValueError(f"{path}: not a .flo file (bad magic tag)")
        w, h = np.frombuffer(f.read(8), dtype="<i4")
        if w <= 0 or h <= 0:
            raise ValueError(f"{path}: invalid size {w}x{h}")
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != 2 * w * h:
        raise ValueError(f"{path}: expected {2 * w * h} floats, found {data.size}")
    return data.reshape(h, w, 2).copy()


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im)


def write_frame_png(path, frame) -> None:
    a = np.asarray(frame, dtype=np.float64)
    if a.ndim == 3:
        a = a[0] if a.shape[0] == 1 else np.moveaxis(a, 0, 2)
    Image.fromarray(np.round(np.clip(a, 0, 1) * 255).astype(np.uint8)).save(path, optimize=False)


def write_mask_png(path, mask) -> None:
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).save(path, optimize=False)


def load_frame(path) -> np.ndarray:
    a = read_png(path).astype(np.float32) / 255.0
    if a.ndim == 3:
        a = np.moveaxis(a[..., :3], 2, 0)
    return a


def load_mask(path) -> np.ndarray:
    a = read_png(path)
    if a.ndim == 3:
        a = a[..., 0]
    return (a > 127).astype(np.uint8)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# checkpoints


def save_checkpoint(path, model: FWNet, train_config: dict | None = None, extra: dict | None = None) -> None:
    tensors = {f"segnet.{k}": v.detach().clone() for k, v in model.segnet.state_dict().items()}
    tensors.update({f"flownet.{k}": v.detach().clone() for k, v in model.flownet.state_dict().items()})
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "segnet_config": model.segnet.config.to_dict(),
        "flownet_config": {
            "in_channels": model.flownet.in_channels,
            "channels": [c.out_channels for c in model.flownet.convs],
            "kernels": [c.kernel_size[0] for c in model.flownet.convs],
        },
        "train_config": dict(train_config or {}),
        "extra": dict(extra or {}),
        "tensors": tensors,
    }
    torch.save(payload, path)


def load_checkpoint(path, expected_config: SegNetConfig | None = None):
    """Rebuild the model from a checkpoint, validating every tensor shape.

    Returns ``(model, payload)``.
    """
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not an fwnet checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {payload.get('version')}")
    seg_cfg = SegNetConfig(**payload["segnet_config"])
    if expected_config is not None and expected_config != seg_cfg:
        raise CheckpointError(f"{path}: architecture {seg_cfg} does not match {expected_config}")
    fc = payload["flownet_config"]
    model = FWNet(SegNet(seg_cfg), FlowNet(fc["in_channels"], tuple(fc["channels"]), tuple(fc["kernels"])))
    tensors = payload["tensors"]
    for prefix, module in (("segnet.", model.segnet), ("flownet.", model.flownet)):
        state = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
        own = module.state_dict()
        if set(state) != set(own):
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            raise CheckpointError(f"{path}: tensor names mismatch; missing={missing} unexpected={unexpected}")
        for k, v in state.items():
            if tuple(v.shape) != tuple(own[k].shape):
                raise CheckpointError(f"{path}: {prefix}{k} has shape {tuple(v.shape)}, expected {tuple(own[k].shape)}")
        module.load_state_dict(state)
    model.eval()
    return model, payload


# dataset trees


def write_sequence(root, seq_id: str, frames, clean_masks=None, raw_masks=None) -> Path:
    d = Path(root) / seq_id
    for sub, items, writer in (
        ("frames", frames, write_frame_png),
        ("masks_clean", clean_masks, write_mask_png),
        ("masks_raw", raw_masks, write_mask_png),
    ):
        if items is None:
            continue
        (d / sub).mkdir(parents=True, exist_ok=True)
        for k, item in enumerate(items):
            writer(d / sub / f"{k:06d}.png", item)
    return d


def list_sequences(root) -> list:
    root = Path(root)
    return sorted(p.name for p in root.iterdir() if (p / "frames").is_dir())


def load_dataset(root, masks: str = "masks_raw", sequences=None, require_masks: bool = True):
    """Load sequences as lists of ``(frame, mask)``; mask is None when absent."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    out = []
    for sid in sequences or list_sequences(root):
        frame_files = sorted((root / sid / "frames").glob("*.png"))
        seq = []
        for fp in frame_files:
            mp = root / sid / masks / fp.name
            if not mp.exists() and require_masks:
                raise FileNotFoundError(f"missing {masks} label for {sid}/{fp.name}")
            seq.append((load_frame(fp), load_mask(mp) if mp.exists() else None))
        out.append(seq)
    return out


def _read_source(path):
    """Yield ``(source_fps, frames)`` for a video file or a directory of images."""
    import cv2

    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"})
        return None, [np.asarray(Image.open(p).convert("RGB")) for p in files]
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise OSError(f"cannot read video {path}")
    fps = cap.get(cv2.CAP_PROP_FPS) or None
    frames = []
    while True:
        ok, img = cap.read()
        if not ok:
            break
        frames.append(cv2.cvtColor(img, cv2.COLOR_BGR2RGB))
    cap.release()
    return fps, frames


def sample_indices(n_frames: int, source_fps: float, fps: float) -> list:
    """Indices of source frames nearest to the instants ``k / fps``."""
    if fps <= 0 or source_fps <= 0:
        raise ValueError("frame rates must be positive")
    duration = n_frames / source_fps
    count = int(np.floor(duration * fps + 1e-9))
    return [min(int(np.floor(k * source_fps / fps + 1e-9)), n_frames - 1) for k in range(count)]


def ingest_video(path, out_dir, fps: float = 8.0, size: int = 256, source_fps: float | None = None,
                 sequence_id: str | None = None) -> Path:
    """Resample a video (or image directory) to ``fps`` and ``size`` x ``size``.

    Image directories have no timing; ``source_fps`` defaults to ``fps`` for
    them (every image kept). Frames are written as grayscale PNGs.
    """
    if size < 1:
        raise ValueError("size must be positive")
    detected, raw = _read_source(path)
    src_fps = source_fps or detected or fps
    if not raw:
        raise ValueError(f"no frames could be extracted from {path}")
    idx = sample_indices(len(raw), src_fps, fps)
    if not idx:
        raise ValueError(f"{path} is too short to yield a frame at {fps} fps")
    frames = []
    for i in idx:
        im = Image.fromarray(raw[i]).convert("L").resize((size, size), Image.BILINEAR)
        frames.append(np.asarray(im, dtype=np.float32) / 255.0)
    sid = sequence_id or Path(path).stem
    seq_dir = write_sequence(out_dir, sid, frames)
    write_json(seq_dir / "manifest.json", {
        "source": str(path),
        "source_fps": src_fps,
        "fps": fps,
        "size": size,
        "count": len(frames),
    })
    return seq_dir
