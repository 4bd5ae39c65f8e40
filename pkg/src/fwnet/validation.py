"""Input checks and array/tensor conversion shared by the estimators."""
from __future__ import annotations

import numpy as np
import torch

FRAME_SIZE = 256


def check_frame(frame, size: int | None = FRAME_SIZE) -> np.ndarray:
    """Return ``frame`` as float32 ``(C, H, W)`` with C in {1, 3}.

    Accepts ``(H, W)``, ``(C, H, W)`` or ``(H, W, C)`` arrays; values must lie
    in [0, 1]. ``size`` enforces a square spatial size (None skips the check).
    """
    a = np.asarray(frame)
    if a.ndim == 2:
        a = a[None]
    elif a.ndim == 3 and a.shape[0] not in (1, 3) and a.shape[2] in (1, 3):
        a = np.moveaxis(a, 2, 0)
    if a.ndim != 3 or a.shape[0] not in (1, 3):
        raise ValueError(f"frame must be (H, W), (C, H, W) or (H, W, C) with C in {{1, 3}}, got {np.shape(frame)}")
    a = a.astype(np.float32, copy=False)
    if size is not None and a.shape[1:] != (size, size):
        raise ValueError(f"frame must be {size}x{size}, got {a.shape[1]}x{a.shape[2]}")
    if not np.all(np.isfinite(a)) or a.min(initial=0) < 0 or a.max(initial=0) > 1:
        raise ValueError("frame intensities must be finite and within [0, 1]")
    return a


def to_gray(frame) -> np.ndarray:
    """Luminance ``(H, W)`` of a frame (ITU-R 601 weights for RGB)."""
    a = check_frame(frame, size=None)
    if a.shape[0] == 1:
        return a[0]
    return (0.299 * a[0] + 0.587 * a[1] + 0.114 * a[2]).astype(np.float32)


def as_mask(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {m.shape}")
    if m.dtype != bool and not np.isin(m, (0, 1)).all():
        raise ValueError("mask values must be binary (0/1)")
    return m.astype(np.uint8)


def frames_to_tensor(frames, in_channels: int, size: int | None = None) -> torch.Tensor:
    """Stack frames into a float32 ``(B, in_channels, H, W)`` tensor.

    Grayscale frames are replicated to fill ``in_channels``.
    """
    batch = []
    for f in frames:
        a = check_frame(f, size=size)
        if a.shape[0] != in_channels:
            if a.shape[0] == 1:
                a = np.repeat(a, in_channels, axis=0)
            elif in_channels == 1:
                a = to_gray(a)[None]
            else:
                raise ValueError(f"cannot map {a.shape[0]} channels to {in_channels}")
        batch.append(a)
    if not batch:
        raise ValueError("no frames given")
    return torch.from_numpy(np.ascontiguousarray(np.stack(batch)))
