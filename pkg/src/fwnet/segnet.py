"""Encoder-decoder segmentation network and the class-balanced loss."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

__all__ = [
    "SegNetConfig",
    "SegNet",
    "segnet_init",
    "init_fan_in_uniform",
    "fg_weight",
    "weighted_ce_loss",
    "PROB_EPS",
    "MIN_FG_WEIGHT",
]

PROB_EPS = 1e-7
MIN_FG_WEIGHT = 1e-4


@dataclass(frozen=True)
class SegNetConfig:
    in_channels: int = 3
    encoder_channels: tuple[int, ...] = (32, 64, 128, 256, 256)
    first_kernel: int = 7
    kernel: int = 3
    feature_channels: int = 16
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        if self.in_channels < 1 or self.feature_channels < 1 or self.num_classes != 2:
            raise ValueError(f"invalid segmentation network config: {self}")
        if not self.encoder_channels or min(self.encoder_channels) < 1:
            raise ValueError("encoder_channels must be non-empty and positive")
        for k in (self.first_kernel, self.kernel):
            if k < 1 or k % 2 == 0:
                raise ValueError(f"kernel sizes must be odd and positive, got {k}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d


class ResBlock(nn.Module):
    """Strided residual block: conv(stride 2) - ReLU - conv, plus a projected skip."""

    def __init__(self, cin: int, cout: int, kernel: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, kernel, stride=2, padding=kernel // 2)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.proj = nn.Conv2d(cin, cout, 1, stride=2)

    def forward(self, x):
        y = self.conv2(F.relu(self.conv1(x)))
        return F.relu(y + self.proj(x))


class UpBlock(nn.Module):
    """4x4 stride-2 deconvolution, concatenation with the skip feature, 3x3 conv."""

    def __init__(self, cin: int, cskip: int, cout: int):
        super().__init__()
        self.up = nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1)
        self.fuse = nn.Conv2d(cout + cskip, cout, 3, padding=1)

    def forward(self, x, skip):
        x = F.relu(self.up(x))
        return F.relu(self.fuse(torch.cat([x, skip], dim=1)))


class SegNet(nn.Module):
    """U-Net-style encoder-decoder with residual strided encoder blocks.

    ``forward`` returns ``(logits, features)`` where ``features`` is the
    full-resolution decoder output that feeds the 1x1 classifier head. The
    head is exposed as :meth:`classify` so that warped features can be scored
    with the same weights.
    """

    def __init__(self, config: SegNetConfig | None = None):
        super().__init__()
        self.config = cfg = config or SegNetConfig()
        chans = cfg.encoder_channels
        blocks, cin = [], cfg.in_channels
        for i, c in enumerate(chans):
            blocks.append(ResBlock(cin, c, cfg.first_kernel if i == 0 else cfg.kernel))
            cin = c
        self.encoder = nn.ModuleList(blocks)
        ups = []
        skips = list(chans[:-1])[::-1] + [cfg.in_channels]
        outs = list(chans[:-1])[::-1] + [cfg.feature_channels]
        for cskip, cout in zip(skips, outs):
            ups.append(UpBlock(cin, cskip, cout))
            cin = cout
        self.decoder = nn.ModuleList(ups)
        self.head = nn.Conv2d(cfg.feature_channels, cfg.num_classes, 1)

    @property
    def stride(self) -> int:
        return 2 ** len(self.encoder)

    def encode(self, x):
        feats = []
        for block in self.encoder:
            x = block(x)
            feats.append(x)
        return feats

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected input (B, {self.config.in_channels}, H, W), got {tuple(x.shape)}"
            )
        if x.shape[2] % self.stride or x.shape[3] % self.stride:
            raise ValueError(f"input size {tuple(x.shape[2:])} not divisible by {self.stride}")
        feats = self.encode(x)
        skips = feats[:-1][::-1] + [x]
        y = feats[-1]
        for up, skip in zip(self.decoder, skips):
            y = up(y, skip)
        return self.classify(y), y

    def classify(self, features):
        return self.head(features)


def init_fan_in_uniform(module: nn.Module, generator: torch.Generator, gain: float = 1.0) -> None:
    """He-uniform init: U(-b, b) with b = gain * sqrt(6 / fan_in); zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            w = m.weight
            if isinstance(m, nn.ConvTranspose2d):
                # Each output pixel of a stride-2 4x4 deconv sees a quarter of the taps.
                fan_in = w.shape[0] * w.shape[2] * w.shape[3] / (m.stride[0] * m.stride[1])
            else:
                fan_in = w.shape[1] * w.shape[2] * w.shape[3]
            bound = gain * math.sqrt(6.0 / fan_in)
            with torch.no_grad():
                w.copy_(torch.rand(w.shape, generator=generator, dtype=w.dtype) * 2 * bound - bound)
                if m.bias is not None:
                    m.bias.zero_()


def segnet_init(seed: int, config: SegNetConfig | None = None) -> SegNet:
    net = SegNet(config)
    gen = torch.Generator().manual_seed(int(seed))
    init_fan_in_uniform(net, gen)
    # Residual sums double the activation variance; halve the second branch.
    for block in net.encoder:
        with torch.no_grad():
            block.conv2.weight.mul_(math.sqrt(0.5))
            block.proj.weight.mul_(math.sqrt(0.5))
    init_fan_in_uniform(net.head, gen, gain=1.0 / math.sqrt(3.0))
    return net


def fg_weight(mask) -> float:
    """Foreground fraction |fg| / (|fg| + |bg|), clamped to [1e-4, 1 - 1e-4]."""
    m = np.asarray(mask.detach().cpu() if torch.is_tensor(mask) else mask)
    w = float(np.count_nonzero(m)) / max(m.size, 1)
    return min(max(w, MIN_FG_WEIGHT), 1.0 - MIN_FG_WEIGHT)


def weighted_ce_loss(probs: torch.Tensor, mask, normalize: bool = False) -> torch.Tensor:
    """Class-balanced pixel-wise cross-entropy, summed over pixels.

    ``probs`` holds class probabilities shaped ``(2, H, W)`` or
    ``(B, 2, H, W)``; ``mask`` the matching binary labels ``(H, W)`` or
    ``(B, H, W)``. Each image gets its own weight ``w = fg_weight(mask)``:
    foreground pixels are weighted ``1 - w`` and background pixels ``w``.
    Batched input returns the mean of the per-image sums.

    With ``normalize`` each image's sum is divided by its pixel count
    ``H * W``, so the loss scale does not depend on image size.
    """
    probs = torch.as_tensor(probs)
    mask = torch.as_tensor(np.asarray(mask) if not torch.is_tensor(mask) else mask)
    single = probs.dim() == 3
    if single:
        probs, mask = probs.unsqueeze(0), mask.unsqueeze(0)
    if probs.dim() != 4 or probs.shape[1] != 2 or mask.shape != (probs.shape[0], *probs.shape[2:]):
        raise ValueError(
            f"probabilities {tuple(probs.shape)} and mask {tuple(mask.shape)} are not aligned"
        )
    fg = (mask > 0).to(probs.dtype)
    n = fg[0].numel()
    w = (fg.flatten(1).sum(1) / n).clamp(MIN_FG_WEIGHT, 1 - MIN_FG_WEIGHT).view(-1, 1, 1)
    p = probs.clamp(PROB_EPS, 1 - PROB_EPS)
    loss_fg = -((1 - w) * fg * torch.log(p[:, 1])).flatten(1).sum(1)
    loss_bg = -(w * (1 - fg) * torch.log(p[:, 0])).flatten(1).sum(1)
    total = loss_fg + loss_bg
    if normalize:
        total = total / n
    return total.mean()
