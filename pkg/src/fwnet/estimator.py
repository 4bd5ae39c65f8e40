"""scikit-learn style front end for FW-Net training and inference."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import io as fio
from .evaluation import dice
from .model import TrainConfig, estimate_flow, predict_proba, train
from .segnet import SegNetConfig
from .validation import FRAME_SIZE, as_mask, check_frame

__all__ = ["FWNetSegmenter", "check_sequences"]


def check_sequences(X, y=None, size: int | None = FRAME_SIZE):
    """Validate ``X`` (sequences of frames) and ``y`` (matching mask sequences).

    Returns a list of sequences of ``(frame, mask)`` (mask None when ``y`` is
    None).
    """
    if len(X) == 0:
        raise ValueError("X must contain at least one sequence")
    if y is not None and len(y) != len(X):
        raise ValueError(f"X has {len(X)} sequences but y has {len(y)}")
    out = []
    for s, frames in enumerate(X):
        masks = y[s] if y is not None else [None] * len(frames)
        if len(masks) != len(frames):
            raise ValueError(f"sequence {s}: {len(frames)} frames but {len(masks)} masks")
        seq = []
        for f, m in zip(frames, masks):
            f = check_frame(f, size)
            if m is not None:
                m = as_mask(m)
                if m.shape != f.shape[1:]:
                    raise ValueError(f"sequence {s}: mask shape {m.shape} != frame shape {f.shape[1:]}")
            seq.append((f, m))
        out.append(seq)
    return out


class FWNetSegmenter(BaseEstimator):
    """Binary curvilinear-instrument segmenter trained with flow-guided warping.

    ``fit(X, y)`` takes ``X`` as a list of frame sequences and ``y`` as the
    matching list of (possibly noisy) mask sequences. Pairs of nearby frames
    are drawn from each sequence and the network is trained end to end on
    ``L_s + lam * L_w``. ``predict`` segments frames independently with the
    segmentation branch only.

    ``segmentation_only=True`` trains the same segmentation network on
    ``L_s`` alone, i.e. the single-frame baseline.
    """

    def __init__(
        self,
        lam=0.4,
        learning_rate=0.001,
        momentum=0.9,
        max_pair_offset=6,
        batch_size=1,
        iterations=5000,
        seed=0,
        normalize_loss=False,
        grad_clip_norm=10.0,
        segmentation_only=False,
        in_channels=3,
        encoder_channels=(32, 64, 128, 256, 256),
        feature_channels=16,
        frame_size=FRAME_SIZE,
        log_every=50,
    ):
        self.lam = lam
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.max_pair_offset = max_pair_offset
        self.batch_size = batch_size
        self.iterations = iterations
        self.seed = seed
        self.normalize_loss = normalize_loss
        self.grad_clip_norm = grad_clip_norm
        self.segmentation_only = segmentation_only
        self.in_channels = in_channels
        self.encoder_channels = encoder_channels
        self.feature_channels = feature_channels
        self.frame_size = frame_size
        self.log_every = log_every

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            lam=self.lam,
            max_pair_offset=self.max_pair_offset,
            batch_size=self.batch_size,
            iterations=self.iterations,
            seed=self.seed,
            log_every=self.log_every,
            normalize_loss=self.normalize_loss,
            grad_clip_norm=self.grad_clip_norm or None,
        )

    def seg_config(self) -> SegNetConfig:
        return SegNetConfig(
            in_channels=self.in_channels,
            encoder_channels=tuple(self.encoder_channels),
            feature_channels=self.feature_channels,
        )

    def fit(self, X, y, callback=None):
        dataset = check_sequences(X, y, self.frame_size)
        result = train(
            dataset,
            self.train_config(),
            segmentation_only=self.segmentation_only,
            callback=callback,
            seg_config=self.seg_config(),
        )
        self.model_ = result.model
        self.history_ = result.history
        self.n_iter_ = len(result.history)
        return self

    def _frames(self, frames):
        return [check_frame(f, self.frame_size) for f in frames]

    def predict_proba(self, frames) -> np.ndarray:
        """Foreground probability maps, ``(N, H, W)``."""
        check_is_fitted(self, "model_")
        return predict_proba(self.model_.segnet, self._frames(frames))

    def predict(self, frames) -> np.ndarray:
        """Binary masks ``(N, H, W)``: per-pixel argmax of the two classes."""
        probs = self.predict_proba(frames)
        return (probs > 0.5).astype(np.uint8)

    def score(self, frames, masks) -> float:
        """Mean per-frame Dice against ``masks``."""
        preds = self.predict(frames)
        return float(np.mean([dice(p, m) for p, m in zip(preds, masks)]))

    def estimate_flow(self, frame_i, frame_j):
        check_is_fitted(self, "model_")
        return estimate_flow(check_frame(frame_i, self.frame_size), check_frame(frame_j, self.frame_size),
                             self.model_.flownet)

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        fio.save_checkpoint(path, self.model_, train_config=self.train_config().to_dict(),
                            extra={"params": _jsonable(self.get_params())})

    @classmethod
    def load(cls, path) -> "FWNetSegmenter":
        model, payload = fio.load_checkpoint(path)
        params = dict(payload.get("extra", {}).get("params", {}))
        valid = cls().get_params()
        est = cls(**{k: v for k, v in params.items() if k in valid})
        cfg = model.segnet.config
        est.in_channels = cfg.in_channels
        est.encoder_channels = cfg.encoder_channels
        est.feature_channels = cfg.feature_channels
        est.model_ = model
        est.history_ = []
        est.n_iter_ = 0
        return est


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        out[k] = list(v) if isinstance(v, tuple) else v
    return out
