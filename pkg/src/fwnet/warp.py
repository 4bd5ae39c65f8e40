"""Flow-guided bilinear warping of feature maps.

The output at pixel ``p`` samples the source at ``p + flow(p)`` with the
separable tent kernel ``K(q, r) = max(0, 1-|qx-rx|) * max(0, 1-|qy-ry|)``.
Samples that land outside the grid read zeros. The backward pass is written
out by hand rather than left to autograd, with the kernel derivative taken as
zero at integer alignment.

Array conventions for the public numpy helpers:

* feature maps are ``(channels, height, width)``
* flow fields are ``(height, width, 2)`` ordered ``(dx, dy)``, x = column

The torch entry points (:func:`warp`, :class:`BilinearWarp`) use batched
channel-first tensors: features ``(B, C, H, W)`` and flow ``(B, 2, H, W)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
import torch.nn.functional as F

__all__ = [
    "BorderPolicy",
    "FlowField",
    "BilinearWarp",
    "warp",
    "warp_features",
    "warp_backward",
    "resize_flow",
    "upsample_flow",
]


class BorderPolicy(str, Enum):
    ZERO_PAD = "zero_pad"


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement grid.

    ``data`` has shape ``(height, width, 2)`` with channels ``(dx, dy)``.
    ``resolution_scale`` is the number of reference pixels spanned by one grid
    cell in which the displacement values are expressed. A flow predicted on a
    4x4 grid but measured in 256x256 pixels has ``resolution_scale == 64``;
    a flow measured in its own grid pixels has ``resolution_scale == 1``.
    """

    data: np.ndarray
    resolution_scale: float = 1.0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] != 2:
            raise ValueError(f"flow must have shape (H, W, 2), got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("flow must be at least 1x1")
        if not np.all(np.isfinite(data)):
            raise ValueError("flow contains non-finite values")
        if not self.resolution_scale > 0:
            raise ValueError("resolution_scale must be positive")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]


def _corners(flow: torch.Tensor):
    """Integer corner coordinates and fractional offsets of the sample points."""
    b, _, h, w = flow.shape
    ys = torch.arange(h, dtype=flow.dtype, device=flow.device).view(1, h, 1)
    xs = torch.arange(w, dtype=flow.dtype, device=flow.device).view(1, 1, w)
    x = xs + flow[:, 0]
    y = ys + flow[:, 1]
    x0 = torch.floor(x)
    y0 = torch.floor(y)
    return x0.long(), y0.long(), x - x0, y - y0


def _taps(x0, y0, fx, fy, h, w):
    """The four kernel taps as (flat index, weight, in-bounds mask, sx, sy).

    ``sx``/``sy`` are the signs of dK/dx and dK/dy for that tap away from kinks.
    """
    taps = []
    for dy_, dx_ in ((0, 0), (0, 1), (1, 0), (1, 1)):
        xi = x0 + dx_
        yi = y0 + dy_
        wx = fx if dx_ else 1 - fx
        wy = fy if dy_ else 1 - fy
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        idx = yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)
        taps.append((idx, wx, wy, valid, 1.0 if dx_ else -1.0, 1.0 if dy_ else -1.0))
    return taps


def _forward(source: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    b, c, h, w = source.shape
    x0, y0, fx, fy = _corners(flow)
    flat = source.reshape(b, c, h * w)
    out = torch.zeros_like(source)
    for idx, wx, wy, valid, _, _ in _taps(x0, y0, fx, fy, h, w):
        vals = torch.gather(flat, 2, idx.view(b, 1, h * w).expand(b, c, h * w)).view(b, c, h, w)
        out = out + (wx * wy * valid).unsqueeze(1) * vals
    return out


def _backward(grad_out: torch.Tensor, source: torch.Tensor, flow: torch.Tensor):
    b, c, h, w = source.shape
    x0, y0, fx, fy = _corners(flow)
    # dK/d(flow) vanishes on an axis whose sample coordinate is an integer.
    kink_x = (fx == 0).unsqueeze(1)
    kink_y = (fy == 0).unsqueeze(1)
    flat = source.reshape(b, c, h * w)
    grad_src = torch.zeros(b, c, h * w, dtype=source.dtype, device=source.device)
    grad_fx = torch.zeros_like(grad_out)
    grad_fy = torch.zeros_like(grad_out)
    for idx, wx, wy, valid, sx, sy in _taps(x0, y0, fx, fy, h, w):
        vmask = valid.unsqueeze(1).to(source.dtype)
        gidx = idx.view(b, 1, h * w).expand(b, c, h * w)
        weight = (wx * wy).unsqueeze(1) * vmask
        grad_src.scatter_add_(2, gidx, (grad_out * weight).reshape(b, c, h * w))
        vals = torch.gather(flat, 2, gidx).view(b, c, h, w) * vmask
        gv = grad_out * vals
        grad_fx = grad_fx + sx * wy.unsqueeze(1) * gv
        grad_fy = grad_fy + sy * wx.unsqueeze(1) * gv
    grad_fx = grad_fx.masked_fill(kink_x, 0.0).sum(1)
    grad_fy = grad_fy.masked_fill(kink_y, 0.0).sum(1)
    return grad_src.view(b, c, h, w), torch.stack([grad_fx, grad_fy], dim=1)


class BilinearWarp(torch.autograd.Function):
    """Backward bilinear warp with an explicit, hand-derived gradient."""

    @staticmethod
    def forward(ctx, source, flow):
        ctx.save_for_backward(source, flow)
        return _forward(source, flow)

    @staticmethod
    def backward(ctx, grad_out):
        source, flow = ctx.saved_tensors
        grad_src, grad_flow = _backward(grad_out.contiguous(), source, flow)
        return (
            grad_src if ctx.needs_input_grad[0] else None,
            grad_flow if ctx.needs_input_grad[1] else None,
        )


def _check_pair(source: torch.Tensor, flow: torch.Tensor) -> None:
    if source.dim() != 4 or flow.dim() != 4 or flow.shape[1] != 2:
        raise ValueError(
            f"expected source (B, C, H, W) and flow (B, 2, H, W), got "
            f"{tuple(source.shape)} and {tuple(flow.shape)}"
        )
    if source.shape[0] != flow.shape[0] or source.shape[2:] != flow.shape[2:]:
        raise ValueError(
            f"flow grid {tuple(flow.shape[2:])} does not match source grid "
            f"{tuple(source.shape[2:])}; resize the flow first"
        )
    if not torch.isfinite(flow).all():
        raise ValueError("flow contains non-finite values")


def warp(source: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Warp batched features ``(B, C, H, W)`` by a pixel flow ``(B, 2, H, W)``."""
    _check_pair(source, flow)
    return BilinearWarp.apply(source, flow)


def _as_tensors(source, flow):
    if isinstance(flow, FlowField):
        flow = flow.data
    src = np.asarray(source, dtype=np.float64)
    if src.ndim != 3 or src.shape[0] < 1:
        raise ValueError(f"feature map must have shape (C, H, W), got {src.shape}")
    fl = np.asarray(flow, dtype=np.float64)
    if fl.ndim != 3 or fl.shape[2] != 2:
        raise ValueError(f"flow must have shape (H, W, 2), got {fl.shape}")
    if fl.shape[:2] != src.shape[1:]:
        raise ValueError(
            f"flow grid {fl.shape[:2]} does not match source grid {src.shape[1:]}"
        )
    if not np.all(np.isfinite(fl)):
        raise ValueError("flow contains non-finite values")
    if not np.all(np.isfinite(src)):
        raise ValueError("feature map contains non-finite values")
    return (
        torch.from_numpy(src).unsqueeze(0),
        torch.from_numpy(np.ascontiguousarray(fl.transpose(2, 0, 1))).unsqueeze(0),
    )


def warp_features(source, flow, border=BorderPolicy.ZERO_PAD) -> np.ndarray:
    """Warp a ``(C, H, W)`` feature map by an ``(H, W, 2)`` flow (float64)."""
    BorderPolicy(border)
    src, fl = _as_tensors(source, flow)
    return _forward(src, fl)[0].numpy()


def warp_backward(grad_output, source, flow, border=BorderPolicy.ZERO_PAD):
    """Gradients of ``sum(grad_output * warp_features(source, flow))``.

    Returns ``(grad_source, grad_flow)`` shaped like ``source`` and ``flow``.
    """
    BorderPolicy(border)
    src, fl = _as_tensors(source, flow)
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != src.shape[1:]:
        raise ValueError(f"grad_output shape {g.shape} != source shape {src.shape[1:]}")
    gs, gf = _backward(torch.from_numpy(g).unsqueeze(0), src, fl)
    return gs[0].numpy(), gf[0].permute(1, 2, 0).numpy()


def upsample_flow(flow: torch.Tensor, height: int, width: int, factor_x=None, factor_y=None):
    """Bilinear (corner-aligned) resize of a ``(B, 2, h, w)`` flow tensor.

    Displacements are multiplied by ``factor_x``/``factor_y``; by default these
    are the grid ratios ``width / w`` and ``height / h``.
    """
    _, _, h, w = flow.shape
    if (h, w) == (height, width):
        out = flow
    else:
        out = F.interpolate(flow, size=(height, width), mode="bilinear", align_corners=True)
    fx = width / w if factor_x is None else factor_x
    fy = height / h if factor_y is None else factor_y
    if fx == 1 and fy == 1:
        return out
    scale = torch.tensor([fx, fy], dtype=flow.dtype, device=flow.device).view(1, 2, 1, 1)
    return out * scale


def resize_flow(flow: FlowField, target_height: int, target_width: int) -> FlowField:
    """Resize a flow to a new grid, keeping displacements in target-grid pixels.

    The result always has ``resolution_scale == 1``. For a flow in its own grid
    units the displacements are multiplied by ``target / source`` per axis.
    """
    if not isinstance(flow, FlowField):
        flow = FlowField(np.asarray(flow, dtype=np.float64))
    if int(target_height) < 1 or int(target_width) < 1:
        raise ValueError("target dimensions must be positive")
    h, w = flow.shape
    s = flow.resolution_scale
    t = torch.from_numpy(np.ascontiguousarray(flow.data.transpose(2, 0, 1), dtype=np.float64))
    out = upsample_flow(
        t.unsqueeze(0),
        int(target_height),
        int(target_width),
        factor_x=target_width / (w * s),
        factor_y=target_height / (h * s),
    )
    return FlowField(out[0].permute(1, 2, 0).numpy(), 1.0)
