"""Automatic raw labels: multiscale Hessian vesselness + adaptive binarisation."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import to_gray

__all__ = [
    "VesselnessConfig",
    "hessian_eigenvalues",
    "vesselness",
    "adaptive_binarize",
    "generate_raw_labels",
    "VesselnessLabeler",
]


@dataclass(frozen=True)
class VesselnessConfig:
    scales: tuple[float, ...] = (1.0, 2.0, 3.0)
    beta: float = 0.5
    c: float | None = None
    polarity: str = "dark_on_bright"
    window: int = 31
    # Stricter than adaptive_binarize's own 0.02 so faint distractor ridges
    # are not all labelled.
    offset: float = 0.2
    min_area: int = 20

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if not self.scales or min(self.scales) <= 0:
            raise ValueError("scales must be non-empty and strictly positive")
        if self.beta <= 0 or (self.c is not None and self.c <= 0):
            raise ValueError("beta and c must be positive")
        if self.polarity != "dark_on_bright":
            raise ValueError(f"unsupported polarity {self.polarity!r}")
        _check_window(self.window)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scales"] = list(self.scales)
        return d


def _check_window(window: int) -> None:
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")


def hessian_eigenvalues(image: np.ndarray, sigma: float):
    """Scale-normalised Hessian eigenvalues ordered so that |l1| <= |l2|."""
    hxx = ndimage.gaussian_filter(image, sigma, order=(0, 2), mode="nearest")
    hyy = ndimage.gaussian_filter(image, sigma, order=(2, 0), mode="nearest")
    hxy = ndimage.gaussian_filter(image, sigma, order=(1, 1), mode="nearest")
    s2 = sigma * sigma
    hxx, hyy, hxy = hxx * s2, hyy * s2, hxy * s2
    mean = 0.5 * (hxx + hyy)
    root = np.sqrt(0.25 * (hxx - hyy) ** 2 + hxy * hxy)
    a, b = mean + root, mean - root
    swap = np.abs(a) < np.abs(b)
    l1 = np.where(swap, a, b)
    l2 = np.where(swap, b, a)
    return l1, l2


def vesselness(frame, config: VesselnessConfig = VesselnessConfig(), normalize: bool = True) -> np.ndarray:
    """Ridge response in [0, 1] for dark curvilinear structures.

    Per scale the Frangi measure
    ``exp(-Rb^2 / 2 beta^2) * (1 - exp(-S^2 / 2 c^2))`` is evaluated with
    ``Rb = l1 / l2`` and ``S = sqrt(l1^2 + l2^2)``; pixels whose larger
    eigenvalue is negative (bright ridges) are zeroed. ``c`` defaults to half
    the maximum of ``S`` at that scale. The maximum over scales is divided by
    its image maximum unless ``normalize`` is False.
    """
    img = to_gray(frame).astype(np.float64)
    out = np.zeros_like(img)
    for sigma in config.scales:
        l1, l2 = hessian_eigenvalues(img, sigma)
        s = np.sqrt(l1 * l1 + l2 * l2)
        c = config.c if config.c is not None else 0.5 * s.max()
        if c <= 0:
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            rb = np.where(l2 != 0, l1 / l2, 0.0)
        v = np.exp(-(rb**2) / (2 * config.beta**2)) * (1 - np.exp(-(s**2) / (2 * c * c)))
        v[l2 <= 0] = 0.0
        np.maximum(out, v, out=out)
    peak = out.max() if normalize else 1.0
    return (out / peak if peak > 0 else out).astype(np.float32)


def adaptive_binarize(response, window: int = 31, offset: float = 0.02, min_area: int = 20) -> np.ndarray:
    """Foreground where the response beats its local window mean by ``offset``.

    Connected components (8-connected) smaller than ``min_area`` are dropped.
    """
    _check_window(window)
    r = np.asarray(response, dtype=np.float64)
    local = ndimage.uniform_filter(r, size=window, mode="reflect")
    mask = r > local + offset
    if min_area > 1 and mask.any():
        labels, n = ndimage.label(mask, structure=np.ones((3, 3)))
        sizes = np.bincount(labels.ravel())
        keep = sizes >= min_area
        keep[0] = False
        mask = keep[labels]
    return mask.astype(np.uint8)


def generate_raw_labels(frames, config: VesselnessConfig = VesselnessConfig()) -> list:
    """Independent per-frame pseudo-labels; no temporal information is used."""
    return [
        adaptive_binarize(vesselness(f, config), config.window, config.offset, config.min_area)
        for f in frames
    ]


class VesselnessLabeler(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping frames to raw binary labels.

    ``fit`` is a no-op kept for pipeline compatibility.
    """

    def __init__(self, scales=(1.0, 2.0, 3.0), beta=0.5, c=None, window=31, offset=0.2, min_area=20):
        self.scales = scales
        self.beta = beta
        self.c = c
        self.window = window
        self.offset = offset
        self.min_area = min_area

    def _config(self) -> VesselnessConfig:
        return VesselnessConfig(
            scales=tuple(self.scales),
            beta=self.beta,
            c=self.c,
            window=self.window,
            offset=self.offset,
            min_area=self.min_area,
        )

    def fit(self, X, y=None):
        self.config_ = self._config()
        return self

    def transform(self, X):
        config = getattr(self, "config_", None) or self._config()
        labels = generate_raw_labels(list(X), config)
        if not labels:
            return np.zeros((0, 0, 0), dtype=np.uint8)
        return np.stack(labels)
