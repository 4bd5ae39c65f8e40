import numpy as np
import pytest

from fwnet.evaluation import dice
from fwnet.labelgen import (
    VesselnessConfig,
    VesselnessLabeler,
    adaptive_binarize,
    generate_raw_labels,
    vesselness,
)
from fwnet.synth import SynthConfig, generate_sequence


@pytest.fixture(scope="module")
def line_image():
    img = np.full((256, 256), 0.8, dtype=np.float32)
    img[127:129, 20:236] = 0.3
    return img


def test_constant_image_has_no_response():
    assert not vesselness(np.full((64, 64), 0.5)).any()


def test_dark_line_response(line_image):
    v = vesselness(line_image)
    assert 0 <= v.min() and v.max() == pytest.approx(1.0)
    on = v[127:129, 40:216].mean()
    off = np.mean([v[122, 40:216].mean(), v[133, 40:216].mean()])
    assert on >= 10 * max(off, 1e-12)


def test_bright_line_is_ignored():
    img = np.full((64, 64), 0.3)
    img[31:33, 5:60] = 0.8
    assert vesselness(img)[31:33, 10:55].max() < 1e-6 or vesselness(img).max() == 0


def test_multiscale_dominates_each_scale(line_image, rng):
    img = np.clip(line_image + rng.normal(scale=0.05, size=line_image.shape), 0, 1)
    multi = vesselness(img, VesselnessConfig(scales=(1, 2, 3), c=0.05), normalize=False)
    for s in (1, 2, 3):
        single = vesselness(img, VesselnessConfig(scales=(s,), c=0.05), normalize=False)
        assert np.all(multi >= single)


def test_binarize_zero_response_is_empty():
    assert not adaptive_binarize(np.zeros((64, 64))).any()


def test_binarize_covers_ridge(line_image):
    m = adaptive_binarize(vesselness(line_image))
    assert m[127:129, 20:236].mean() >= 0.8


def test_binarize_removes_small_speckle():
    r = np.zeros((64, 64))
    r[30, 30:33] = 1.0
    r[31, 31:33] = 1.0
    assert r.sum() == 5
    assert not adaptive_binarize(r).any()


@pytest.mark.parametrize("window", [2, 1, 30])
def test_binarize_rejects_bad_window(window):
    with pytest.raises(ValueError):
        adaptive_binarize(np.zeros((8, 8)), window=window)


def test_generate_raw_labels_contract():
    assert generate_raw_labels([]) == []
    frames, clean, _ = generate_sequence(SynthConfig(num_frames=3, seed=2))
    a = generate_raw_labels(frames)
    b = generate_raw_labels(frames)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    # Permuting frames permutes labels.
    c = generate_raw_labels(frames[::-1])
    assert all(np.array_equal(x, y) for x, y in zip(a, c[::-1]))


def test_raw_labels_are_noisy_but_informative():
    scores = []
    for seed in range(6):
        frames, clean, _ = generate_sequence(SynthConfig(num_frames=2, seed=seed))
        scores += [dice(r, m) for r, m in zip(generate_raw_labels(frames), clean)]
    assert 0.5 <= np.mean(scores) <= 0.95
    assert max(scores) < 1.0


def test_labeler_estimator_roundtrip():
    frames, _, _ = generate_sequence(SynthConfig(num_frames=2, seed=1))
    lab = VesselnessLabeler()
    out = lab.fit_transform(frames)
    assert out.shape == (2, 256, 256)
    assert lab.get_params()["window"] == 31
    assert np.array_equal(out, np.stack(generate_raw_labels(frames)))


def test_rgb_frames_are_accepted(line_image):
    rgb = np.repeat(line_image[None], 3, axis=0)
    np.testing.assert_allclose(vesselness(rgb), vesselness(line_image), atol=1e-5)
