"""Compact flow network: six stride-2 convolutions and a 2-channel flow head."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .segnet import init_fan_in_uniform

__all__ = [
    "FLOW_CHANNELS",
    "FLOW_KERNELS",
    "FlowNet",
    "flownet_init",
    "conv_stack_param_count",
]

FLOW_CHANNELS = (32, 64, 128, 128, 256, 256)
FLOW_KERNELS = (7, 5, 5, 3, 3, 3)
HEAD_INIT_SCALE = 1e-3


def conv_stack_param_count(in_channels: int, channels, kernels, bias: bool = True) -> int:
    """Weights (and biases) of a plain conv stack with the given schedule."""
    total, cin = 0, in_channels
    for c, k in zip(channels, kernels):
        total += cin * c * k * k + (c if bias else 0)
        cin = c
    return total


class FlowNet(nn.Module):
    """Stacked-pair flow regressor.

    Input is the channel concatenation of two frames. The output flow lives on
    a grid 64x coarser than the input and is expressed in input-resolution
    pixels, channel order ``(dx, dy)``.
    """

    def __init__(self, in_channels: int = 3, channels=FLOW_CHANNELS, kernels=FLOW_KERNELS):
        super().__init__()
        if len(channels) != len(kernels):
            raise ValueError("channels and kernels must have the same length")
        self.in_channels = in_channels
        layers, cin = [], 2 * in_channels
        for c, k in zip(channels, kernels):
            layers.append(nn.Conv2d(cin, c, k, stride=2, padding=k // 2))
            cin = c
        self.convs = nn.ModuleList(layers)
        self.head = nn.Conv2d(cin, 2, 3, padding=1)

    @property
    def stride(self) -> int:
        return 2 ** len(self.convs)

    def forward(self, frame_i, frame_j):
        if frame_i.shape != frame_j.shape:
            raise ValueError(f"frame shapes differ: {tuple(frame_i.shape)} vs {tuple(frame_j.shape)}")
        if frame_i.dim() != 4 or frame_i.shape[1] != self.in_channels:
            raise ValueError(
                f"expected frames (B, {self.in_channels}, H, W), got {tuple(frame_i.shape)}"
            )
        if frame_i.shape[2] % self.stride or frame_i.shape[3] % self.stride:
            raise ValueError(f"frame size {tuple(frame_i.shape[2:])} not divisible by {self.stride}")
        x = torch.cat([frame_i, frame_j], dim=1)
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
        return self.head(x)

    def conv_stack_params(self) -> int:
        return sum(p.numel() for p in self.convs.parameters())


def flownet_init(seed: int, in_channels: int = 3) -> FlowNet:
    """Deterministic init; the flow head starts near zero so initial flow is ~0."""
    net = FlowNet(in_channels)
    gen = torch.Generator().manual_seed(int(seed))
    init_fan_in_uniform(net, gen)
    with torch.no_grad():
        net.head.weight.mul_(HEAD_INIT_SCALE)
    return net
