"""Synthetic fluoroscopy-like sequences with exact masks, and label corruption.

A dark Catmull-Rom "catheter" advances along a fixed path over a bright,
smoothly textured background that also holds static distractor curves
(faint vessel-like ridges). The clean mask is the set of pixels whose centre
lies within half the catheter width of the visible part of the spline.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

__all__ = [
    "SynthConfig",
    "NoiseConfig",
    "catmull_rom",
    "generate_sequence",
    "corrupt_labels",
    "curve_distance",
]


@dataclass(frozen=True)
class SynthConfig:
    num_frames: int = 20
    size: int = 256
    curve_control_points: int = 6
    curve_width_px: tuple[float, float] = (2.0, 4.0)
    tip_advance_px_per_frame: tuple[float, float] = (2.0, 8.0)
    jitter_px: float = 0.4
    noise_sigma: float = 0.03
    vessel_phantom_count: int = 3
    contrast: tuple[float, float] = (0.25, 0.45)
    seed: int = 0

    def __post_init__(self):
        for name in ("curve_width_px", "tip_advance_px_per_frame", "contrast"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 2 or v[0] > v[1]:
                raise ValueError(f"{name} must be a (low, high) range, got {v}")
            object.__setattr__(self, name, v)
        if self.num_frames < 1:
            raise ValueError("num_frames must be >= 1")
        if self.curve_width_px[0] <= 0:
            raise ValueError("curve widths must be positive")
        if self.tip_advance_px_per_frame[0] < 0:
            raise ValueError("tip advance must be non-negative")
        if self.curve_control_points < 2 or self.size < 16:
            raise ValueError("need at least 2 control points and size >= 16")
        if self.noise_sigma < 0 or self.jitter_px < 0 or self.vessel_phantom_count < 0:
            raise ValueError("noise_sigma, jitter_px and vessel_phantom_count must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass(frozen=True)
class NoiseConfig:
    dilation_px: int = 0
    erosion_px: int = 0
    dropout_fraction: float = 0.0
    false_positive_blobs: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_fraction <= 1.0:
            raise ValueError("dropout_fraction must lie in [0, 1]")
        if min(self.dilation_px, self.erosion_px, self.false_positive_blobs) < 0:
            raise ValueError("dilation, erosion and blob counts must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def catmull_rom(points, samples_per_segment: int = 64) -> np.ndarray:
    """Uniform Catmull-Rom spline through ``points`` (n, 2), endpoints included."""
    p = np.asarray(points, dtype=np.float64)
    if len(p) < 2:
        raise ValueError("need at least two control points")
    ext = np.vstack([2 * p[0] - p[1], p, 2 * p[-1] - p[-2]])
    t = np.linspace(0.0, 1.0, samples_per_segment, endpoint=False)[:, None]
    t2, t3 = t * t, t * t * t
    out = []
    for i in range(len(p) - 1):
        p0, p1, p2, p3 = ext[i : i + 4]
        out.append(
            0.5
            * (
                2 * p1
                + (-p0 + p2) * t
                + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t2
                + (-p0 + 3 * p1 - 3 * p2 + p3) * t3
            )
        )
    out.append(p[-1:])
    return np.vstack(out)


def _resample(curve: np.ndarray, step: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    seg = np.linalg.norm(np.diff(curve, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    n = max(int(np.ceil(s[-1] / step)) + 1, 2)
    u = np.linspace(0.0, s[-1], n)
    return np.column_stack([np.interp(u, s, curve[:, 0]), np.interp(u, s, curve[:, 1])]), u


def _pixel_centres(size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return np.column_stack([xx.ravel(), yy.ravel()]).astype(np.float64)


def curve_distance(curve: np.ndarray, size: int) -> np.ndarray:
    """Distance from every pixel centre to a densely sampled polyline (x, y)."""
    dense, _ = _resample(curve, 0.25)
    d, _ = cKDTree(dense).query(_pixel_centres(size))
    return d.reshape(size, size)


def _random_path(rng, n_points: int, size: int, margin: float) -> np.ndarray:
    """Control points entering from a random edge and wandering inward."""
    side = rng.integers(4)
    a = rng.uniform(0.25, 0.75) * size
    start = {0: (0.0, a), 1: (size - 1.0, a), 2: (a, 0.0), 3: (a, size - 1.0)}[int(side)]
    heading = {0: 0.0, 1: np.pi, 2: np.pi / 2, 3: -np.pi / 2}[int(side)]
    step = (size - 2 * margin) / max(n_points - 1, 1) * 1.5
    pts = [np.array(start)]
    for _ in range(n_points - 1):
        for _attempt in range(20):
            h = heading + rng.uniform(-0.7, 0.7)
            cand = pts[-1] + step * np.array([np.cos(h), np.sin(h)])
            if margin <= cand[0] <= size - 1 - margin and margin <= cand[1] <= size - 1 - margin:
                break
            # Turn back towards the image centre.
            c = np.array([size / 2, size / 2]) - pts[-1]
            heading = np.arctan2(c[1], c[0])
        cand = np.clip(cand, margin, size - 1 - margin)
        heading = h
        pts.append(cand)
    return np.array(pts)


def _smooth_texture(rng, size: int, sigma: float, amplitude: float) -> np.ndarray:
    t = ndimage.gaussian_filter(rng.normal(size=(size, size)), sigma, mode="wrap")
    t /= max(np.abs(t).max(), 1e-12)
    return amplitude * t


def _profile(dist: np.ndarray, half_width: float) -> np.ndarray:
    """Anti-aliased coverage of a tube of the given half width."""
    return np.clip(half_width + 0.5 - dist, 0.0, 1.0)


def generate_sequence(config: SynthConfig):
    """Render ``config.num_frames`` frames and their exact masks.

    Returns ``(frames, masks, meta)``: frames are float32 ``(size, size)`` in
    [0, 1], masks are uint8 ``(size, size)`` in {0, 1}, and ``meta`` holds the
    per-frame visible centreline and half width for distance checks.
    """
    rng = np.random.default_rng(config.seed)
    size = config.size
    margin = 0.08 * size
    base = _random_path(rng, config.curve_control_points, size, margin)
    width = rng.uniform(*config.curve_width_px)
    half = width / 2.0
    contrast = rng.uniform(*config.contrast)
    advance = rng.uniform(*config.tip_advance_px_per_frame)

    background = 0.7 + _smooth_texture(rng, size, size / 12, 0.12)
    for _ in range(config.vessel_phantom_count):
        ctrl = _random_path(rng, rng.integers(3, 6), size, 0.0)
        d = curve_distance(catmull_rom(ctrl, 32), size)
        vw = rng.uniform(2.0, 5.0)
        background -= rng.uniform(0.04, 0.12) * ndimage.gaussian_filter(_profile(d, vw), 0.7)

    full = catmull_rom(base)
    _, s = _resample(full, 0.25)
    total = s[-1]
    lo = min(max(0.4 * total, 4 * width), total)
    span = max(total - lo, 1e-6)

    frames, masks, centrelines = [], [], []
    offsets = np.zeros_like(base)
    pix = _pixel_centres(size)
    for t in range(config.num_frames):
        if t:
            # Slow random-walk deformation of the interior control points.
            offsets[1:] += rng.normal(scale=config.jitter_px, size=offsets[1:].shape)
        ctrl = base + offsets
        curve, arc = _resample(catmull_rom(ctrl), 0.25)
        # Tip advances then retracts (triangle wave) along the path.
        phase = (t * advance) % (2 * span)
        tip = lo + (phase if phase <= span else 2 * span - phase)
        visible = curve[arc <= tip * arc[-1] / total]
        if len(visible) < 2:
            visible = curve[:2]
        d, _ = cKDTree(visible).query(pix)
        d = d.reshape(size, size)
        mask = (d <= half).astype(np.uint8)
        img = background - contrast * _profile(d, half)
        img = img + rng.normal(scale=config.noise_sigma, size=img.shape)
        frames.append(np.clip(img, 0.0, 1.0).astype(np.float32))
        masks.append(mask)
        centrelines.append(visible)
    meta = {"half_width": half, "centrelines": centrelines, "advance": advance}
    return frames, masks, meta


def _disk(r: int) -> np.ndarray:
    y, x = np.ogrid[-r : r + 1, -r : r + 1]
    return x * x + y * y <= r * r


def corrupt_labels(masks, noise: NoiseConfig):
    """Emulate automatic-label defects frame by frame.

    Applies dilation, erosion, disk-shaped dropouts removing about
    ``dropout_fraction`` of the foreground, and random false-positive blobs.
    Frame ``k`` uses its own stream seeded by ``(noise.seed, k)``.
    """
    out = []
    for k, m in enumerate(masks):
        rng = np.random.default_rng([noise.seed, k])
        m = np.asarray(m).astype(bool)
        if noise.dilation_px:
            m = ndimage.binary_dilation(m, structure=_disk(noise.dilation_px))
        if noise.erosion_px:
            m = ndimage.binary_erosion(m, structure=_disk(noise.erosion_px))
        if noise.dropout_fraction > 0 and m.any():
            target = noise.dropout_fraction * m.sum()
            removed = np.zeros_like(m)
            ys, xs = np.nonzero(m)
            while (m & removed).sum() < target:
                i = rng.integers(len(ys))
                r = int(rng.integers(4, 9))
                y0, x0 = ys[i], xs[i]
                h, w = m.shape
                sl = (slice(max(y0 - r, 0), min(y0 + r + 1, h)), slice(max(x0 - r, 0), min(x0 + r + 1, w)))
                yy, xx = np.ogrid[sl[0], sl[1]]
                removed[sl] |= (yy - y0) ** 2 + (xx - x0) ** 2 <= r * r
            m = m & ~removed
        if noise.false_positive_blobs:
            h, w = m.shape
            for _ in range(noise.false_positive_blobs):
                r = int(rng.integers(2, 6))
                cy, cx = rng.integers(0, h), rng.integers(0, w)
                yy, xx = np.ogrid[0:h, 0:w]
                ay, ax = rng.uniform(0.5, 1.5, size=2)
                m |= ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= r * r
        out.append(m.astype(np.uint8))
    return out
