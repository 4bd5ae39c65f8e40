"""FW-Net: segmentation network + flow network joined by the bilinear warp.

Training couples a pair of nearby frames ``(I_i, I_j)``. Frame ``i`` is
segmented directly; its full-resolution decoder features are then warped by the
estimated flow ``F(I_i, I_j)`` and scored by the shared classifier head to
predict frame ``j``. The objective is ``L_s + lambda * L_w`` with both terms
the class-balanced cross-entropy. Inference uses the segmentation network
alone, frame by frame.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .flownet import FlowNet, flownet_init
from .segnet import SegNet, SegNetConfig, segnet_init, weighted_ce_loss
from .validation import as_mask, frames_to_tensor
from .warp import FlowField, upsample_flow, warp

__all__ = [
    "TrainConfig",
    "FramePair",
    "FWNet",
    "TrainingDiverged",
    "TrainResult",
    "sample_pair",
    "total_loss",
    "fwnet_init",
    "train",
    "predict_proba",
    "infer_sequence",
    "estimate_flow",
    "segment",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    lam: float = 0.4
    max_pair_offset: int = 6
    batch_size: int = 1
    iterations: int = 5000
    seed: int = 0
    log_every: int = 50
    normalize_loss: bool = False
    # Per sub-network L2 gradient-norm bound; None disables.
    grad_clip_norm: float | None = 10.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.max_pair_offset < 0:
            raise ValueError("max_pair_offset must be >= 0")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.grad_clip_norm is not None and not self.grad_clip_norm > 0:
            raise ValueError("grad_clip_norm must be > 0 or None")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FramePair:
    frame_i: np.ndarray
    frame_j: np.ndarray
    mask_i: np.ndarray
    mask_j: np.ndarray
    offset: int
    index_i: int = 0


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"non-finite training loss {value!r} at iteration {iteration}")
        self.iteration = iteration
        self.value = value


def sample_pair(sequence, max_offset: int, rng: np.random.Generator) -> FramePair:
    """Draw ``(I_i, I_j)`` with ``0 <= j - i <= max_offset``.

    ``i`` is uniform over the sequence, then the offset is uniform over the
    offsets that stay inside it. ``sequence`` is a list of ``(frame, mask)``.
    """
    n = len(sequence)
    if n == 0:
        raise ValueError("cannot sample a pair from an empty sequence")
    if max_offset < 0:
        raise ValueError("max_offset must be >= 0")
    i = int(rng.integers(n))
    off = int(rng.integers(min(max_offset, n - 1 - i) + 1))
    (fi, mi), (fj, mj) = sequence[i], sequence[i + off]
    return FramePair(fi, fj, mi, mj, off, i)


def total_loss(seg_i, seg_j, mask_i, mask_j, lam: float) -> torch.Tensor:
    """``L_s(seg_i, mask_i) + lam * L_w(seg_j, mask_j)`` on probability maps."""
    return weighted_ce_loss(seg_i, mask_i) + lam * weighted_ce_loss(seg_j, mask_j)


class FWNet(nn.Module):
    def __init__(self, segnet: SegNet, flownet: FlowNet):
        super().__init__()
        self.segnet = segnet
        self.flownet = flownet

    @property
    def config(self) -> SegNetConfig:
        return self.segnet.config

    def flow(self, x_i, x_j):
        """Flow at input resolution, ``(B, 2, H, W)`` in pixels."""
        coarse = self.flownet(x_i, x_j)
        h, w = x_i.shape[2:]
        # Coarse flow is already in input pixels: resample without rescaling.
        return upsample_flow(coarse, h, w, factor_x=1.0, factor_y=1.0)

    def forward(self, x_i, x_j):
        """Return ``(logits_i, logits_j, flow)`` for batched frame tensors."""
        logits_i, feats = self.segnet(x_i)
        flow = self.flow(x_i, x_j)
        logits_j = self.segnet.classify(warp(feats, flow))
        return logits_i, logits_j, flow


def fwnet_init(seed: int, config: SegNetConfig | None = None) -> FWNet:
    """Both sub-networks from independent streams of one root seed."""
    seg_seed, flow_seed = np.random.SeedSequence(seed).generate_state(2)
    config = config or SegNetConfig()
    return FWNet(segnet_init(int(seg_seed), config), flownet_init(int(flow_seed), config.in_channels))


def _pair_stream(dataset, config: TrainConfig):
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    while True:
        seq = dataset[int(rng.integers(len(dataset)))]
        yield sample_pair(seq, config.max_pair_offset, rng)


def _batch(pairs, in_channels):
    x_i = frames_to_tensor([p.frame_i for p in pairs], in_channels)
    x_j = frames_to_tensor([p.frame_j for p in pairs], in_channels)
    m_i = torch.from_numpy(np.stack([as_mask(p.mask_i) for p in pairs]))
    m_j = torch.from_numpy(np.stack([as_mask(p.mask_j) for p in pairs]))
    return x_i, x_j, m_i, m_j


@dataclass
class TrainResult:
    model: FWNet
    config: TrainConfig
    history: list = field(default_factory=list)

    @property
    def losses(self) -> np.ndarray:
        return np.array([h["loss"] for h in self.history])


def _check_dataset(dataset):
    if not dataset:
        raise ValueError("dataset is empty")
    for k, seq in enumerate(dataset):
        if not seq:
            raise ValueError(f"sequence {k} is empty")
        for t, item in enumerate(seq):
            if len(item) != 2 or item[1] is None:
                raise ValueError(f"sequence {k} frame {t} has no mask")


def train(
    dataset,
    config: TrainConfig = TrainConfig(),
    model: FWNet | None = None,
    segmentation_only: bool = False,
    callback: Callable[[int, dict, FWNet], None] | None = None,
    seg_config: SegNetConfig | None = None,
) -> TrainResult:
    """End-to-end SGD with momentum on ``L_s + lam * L_w``.

    Gradients of each sub-network are norm-clipped to
    ``config.grad_clip_norm`` before the update.

    ``dataset`` is a list of sequences, each a list of ``(frame, mask)``.
    With ``segmentation_only`` the flow and warp branch is skipped entirely and
    only ``L_s`` on frame ``i`` is optimised (the single-frame baseline). The
    pair stream and initial weights depend only on ``config.seed``, so a
    baseline run and a ``lam == 0`` FW-Net run see identical data.
    """
    _check_dataset(dataset)
    model = model or fwnet_init(config.seed, seg_config)
    in_ch = model.config.in_channels
    params = list(model.segnet.parameters()) if segmentation_only else list(model.parameters())
    opt = torch.optim.SGD(params, lr=config.learning_rate, momentum=config.momentum)
    stream = _pair_stream(dataset, config)
    history = []
    model.train()
    for it in range(config.iterations):
        pairs = [next(stream) for _ in range(config.batch_size)]
        x_i, x_j, m_i, m_j = _batch(pairs, in_ch)
        opt.zero_grad(set_to_none=True)
        if segmentation_only:
            logits_i, _ = model.segnet(x_i)
            loss_s = weighted_ce_loss(F.softmax(logits_i, 1), m_i, config.normalize_loss)
            loss_w = torch.zeros((), dtype=loss_s.dtype)
            loss = loss_s
        else:
            logits_i, logits_j, _ = model(x_i, x_j)
            loss_s = weighted_ce_loss(F.softmax(logits_i, 1), m_i, config.normalize_loss)
            loss_w = weighted_ce_loss(F.softmax(logits_j, 1), m_j, config.normalize_loss)
            loss = loss_s + config.lam * loss_w
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDiverged(it, value)
        loss.backward()
        if config.grad_clip_norm is not None:
            # Clipped separately so a lam == 0 run clips the segnet exactly as the baseline does.
            for module in (model.segnet,) if segmentation_only else (model.segnet, model.flownet):
                torch.nn.utils.clip_grad_norm_(module.parameters(), config.grad_clip_norm)
        opt.step()
        rec = {"iteration": it, "loss_s": float(loss_s.detach()), "loss_w": float(loss_w.detach()), "loss": value}
        history.append(rec)
        if config.log_every and it % config.log_every == 0:
            log.info("iter %d L_s %.4f L_w %.4f L %.4f", it, rec["loss_s"], rec["loss_w"], value)
        if callback is not None:
            callback(it, rec, model)
    model.eval()
    return TrainResult(model, config, history)


@torch.no_grad()
def predict_proba(segnet: SegNet, frames, batch_size: int = 4) -> np.ndarray:
    """Foreground probability per pixel, ``(N, H, W)`` float32."""
    segnet.eval()
    out = []
    for k in range(0, len(frames), batch_size):
        x = frames_to_tensor(frames[k : k + batch_size], segnet.config.in_channels)
        logits, _ = segnet(x)
        out.append(F.softmax(logits, 1)[:, 1].numpy())
    if not out:
        return np.zeros((0, 0, 0), dtype=np.float32)
    return np.concatenate(out).astype(np.float32)


def segment(segnet: SegNet, frame):
    """Probabilities ``(2, H, W)`` and features ``(C, H, W)`` for one frame."""
    segnet.eval()
    with torch.no_grad():
        logits, feats = segnet(frames_to_tensor([frame], segnet.config.in_channels))
    return F.softmax(logits, 1)[0].numpy(), feats[0].numpy()


def infer_sequence(frames, model) -> list:
    """Per-frame argmax masks from the segmentation network only."""
    segnet = model.segnet if isinstance(model, FWNet) else model
    if len(frames) == 0:
        return []
    probs = predict_proba(segnet, list(frames))
    # argmax over two classes; ties go to background.
    return [(p > 0.5).astype(np.uint8) for p in probs]


def estimate_flow(frame_i, frame_j, flownet: FlowNet) -> FlowField:
    """Coarse flow for a frame pair, in input-resolution pixels."""
    flownet.eval()
    with torch.no_grad():
        x_i = frames_to_tensor([frame_i], flownet.in_channels)
        x_j = frames_to_tensor([frame_j], flownet.in_channels)
        coarse = flownet(x_i, x_j)[0]
    return FlowField(coarse.permute(1, 2, 0).double().numpy(), float(flownet.stride))
