"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 6 and 7 train full-size networks on CPU and are marked ``slow``.
Run only the fast ones with ``pytest tests/test_acceptance.py -m "not slow"``.
"""
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from fwnet.evaluation import benchmark_fps, confusion_counts, dice
from fwnet.flownet import FLOW_CHANNELS, FLOW_KERNELS, conv_stack_param_count, flownet_init
from fwnet.io import load_checkpoint, save_checkpoint
from fwnet.model import TrainConfig, infer_sequence, predict_proba, train
from fwnet.segnet import segnet_init, weighted_ce_loss
from fwnet.synth import NoiseConfig, SynthConfig, corrupt_labels, generate_sequence
from fwnet.warp import warp_backward, warp_features
from oracles import central_diff, confusion, rel_err

OVERFIT_MAX_ITERATIONS = 5000
OVERFIT_EVAL_EVERY = 250
SMOOTHING_WINDOW = 100

TEMPORAL_SEEDS = (0, 1, 2)
TEMPORAL_TRAIN_SEQUENCES = 10
TEMPORAL_HELDOUT_SEQUENCES = 2
TEMPORAL_ITERATIONS = 1000
TEMPORAL_NOISE = dict(dilation_px=1, dropout_fraction=0.3, false_positive_blobs=6)


def test_c1_warp_identity_and_linearity(criterion, rng):
    worst_id, worst_lin = 0.0, 0.0
    for _ in range(20):
        c, h, w = rng.integers(1, 4), rng.integers(2, 12), rng.integers(2, 12)
        f, g = rng.normal(size=(2, c, h, w))
        flow = rng.uniform(-3, 3, size=(h, w, 2))
        a, b = rng.normal(size=2)
        worst_id = max(worst_id, np.abs(warp_features(f, np.zeros((h, w, 2))) - f).max())
        lhs = warp_features(a * f + b * g, flow)
        rhs = a * warp_features(f, flow) + b * warp_features(g, flow)
        worst_lin = max(worst_lin, np.abs(lhs - rhs).max())
    ok = worst_id <= 1e-6 and worst_lin <= 1e-6
    criterion(1, "warp identity & linearity", ok, f"identity err {worst_id:.2e}, linearity err {worst_lin:.2e}")
    assert ok


def test_c2_warp_gradient_oracle(criterion, rng):
    worst_s, worst_f = 0.0, 0.0
    for _ in range(100):
        src = rng.normal(size=(1, 5, 5))
        g = rng.normal(size=(1, 5, 5))
        whole = rng.integers(-2, 3, size=(5, 5, 2))
        flow = whole + rng.uniform(0.1, 0.9, size=(5, 5, 2))
        gs, gf = warp_backward(g, src, flow)
        num_s = central_diff(lambda s: float(np.sum(g * warp_features(s, flow))), src, 1e-4)
        num_f = central_diff(lambda f: float(np.sum(g * warp_features(src, f))), flow, 1e-4)
        worst_s = max(worst_s, rel_err(gs, num_s))
        worst_f = max(worst_f, rel_err(gf, num_f))
    ok = worst_s < 1e-3 and worst_f < 1e-3
    criterion(2, "warp gradient oracle (100 cases)", ok, f"max rel err source {worst_s:.2e}, flow {worst_f:.2e}")
    assert ok


def test_c3_loss_correctness(criterion, rng):
    probs = torch.full((2, 2, 2), 0.5, dtype=torch.float64)
    value = weighted_ce_loss(probs, np.array([[1, 0], [0, 0]])).item()
    hand = 1.5 * math.log(2)
    worst = 0.0
    for _ in range(10):
        mask = (rng.random((8, 8)) < 0.3).astype(np.uint8)
        logits = rng.normal(size=(2, 8, 8))
        z = torch.tensor(logits, requires_grad=True)
        weighted_ce_loss(F.softmax(z, 0), mask).backward()
        num = central_diff(lambda x: weighted_ce_loss(F.softmax(torch.from_numpy(x), 0), mask).item(), logits)
        worst = max(worst, rel_err(z.grad.numpy(), num))
    ok = abs(value - hand) <= 1e-6 and worst < 1e-3
    criterion(3, "loss correctness", ok, f"2x2 loss {value:.6f} vs {hand:.6f}, max grad rel err {worst:.2e}")
    assert ok


def test_c4_dice_oracle(criterion, rng):
    exact = True
    for _ in range(10):
        p = (rng.random((64, 64)) < rng.uniform(0.05, 0.6)).astype(np.uint8)
        g = (rng.random((64, 64)) < rng.uniform(0.05, 0.6)).astype(np.uint8)
        tp, fp, fn, _ = confusion(p, g)
        exact &= dice(p, g) == 2 * tp / (2 * tp + fp + fn)
        exact &= dice(p, g) == dice(g, p)
    a = np.array([[1, 1, 0], [0, 0, 0]])
    b = np.array([[0, 0, 0], [0, 0, 1]])
    trivial = [dice(a, a), dice(a, b), dice(np.array([[1, 1, 1, 0, 0]]), np.array([[1, 1, 0, 1, 0]]))]
    c = confusion_counts(np.array([[1, 1, 1, 0, 0]]), np.array([[1, 1, 0, 1, 0]]))
    ok = exact and trivial[:2] == [1.0, 0.0] and round(trivial[2], 4) == 0.6667 and (c.tp, c.fp, c.fn) == (2, 1, 1)
    criterion(4, "Dice oracle equivalence", ok, f"oracle exact={exact}, trivial={[round(t, 4) for t in trivial]}")
    assert ok


def test_c5_shapes_and_complexity(criterion):
    seg = segnet_init(0)
    with torch.no_grad():
        sizes = [f.shape[-1] for f in seg.encode(torch.zeros(1, 3, 256, 256))]
        flow = flownet_init(0)(torch.zeros(1, 3, 256, 256), torch.zeros(1, 3, 256, 256))
    flow_shape = tuple(flow[0].permute(1, 2, 0).shape)
    halved = conv_stack_param_count(6, FLOW_CHANNELS, FLOW_KERNELS)
    full = conv_stack_param_count(6, tuple(2 * c for c in FLOW_CHANNELS), FLOW_KERNELS)
    ratio = halved / full
    ok_sizes = sizes == [128, 64, 32, 16, 8]
    ok_flow = flow_shape == (4, 4, 2)
    ok_ratio = ratio < 0.25
    ok = ok_sizes and ok_flow and ok_ratio
    criterion(
        5,
        "shape & complexity checks",
        ok,
        f"encoder {sizes}, flow {flow_shape}, halved/unhalved conv params {halved}/{full} = {ratio:.5f} (< 0.25 required)",
    )
    assert ok_sizes and ok_flow
    assert ok_ratio, f"halved conv stack ratio {ratio:.5f} is not below 1/4"


def _synthetic(seeds, num_frames):
    out = []
    for s in seeds:
        frames, masks, _ = generate_sequence(SynthConfig(num_frames=num_frames, seed=int(s)))
        out.append((frames, masks))
    return out


def _mean_dice(model, frames, masks):
    return float(np.mean([dice(p, m) for p, m in zip(infer_sequence(frames, model), masks)]))


def _block_means(losses, window):
    n = len(losses) // window
    return np.asarray(losses[: n * window]).reshape(n, window).mean(axis=1)


@pytest.mark.slow
def test_c6_overfit(criterion):
    data = _synthetic((100, 101), 50)
    dataset = [list(zip(f, m)) for f, m in data]
    frames = [f for f, _ in data for f in f]
    masks = [m for _, m in data for m in m]
    trace = []

    class Reached(Exception):
        pass

    def on_step(it, rec, model):
        if (it + 1) % OVERFIT_EVAL_EVERY == 0:
            score = _mean_dice(model, frames, masks)
            model.train()
            trace.append((it + 1, score))
            print(f"overfit iteration {it + 1}: training Dice {score:.3f}", flush=True)
            if score >= 0.85:
                raise Reached

    history = []
    try:
        train(dataset, TrainConfig(iterations=OVERFIT_MAX_ITERATIONS, log_every=0),
              callback=lambda it, rec, m: (history.append(rec["loss"]), on_step(it, rec, m)))
    except Reached:
        pass
    best = max(s for _, s in trace)
    smooth = _block_means(history, SMOOTHING_WINDOW)
    monotone = bool(np.all(np.diff(smooth) <= 0))
    ok = best >= 0.85 and monotone
    bumps = int(np.sum(np.diff(smooth) > 0))
    criterion(
        6,
        "overfit on 2 synthetic sequences",
        ok,
        f"best training Dice {best:.3f} after {trace[-1][0]} iterations (>= 0.85 required); "
        f"smoothed loss {smooth[0]:.4f} -> {smooth[-1]:.4f}, {bumps} increases over {len(smooth)} windows",
    )
    assert best >= 0.85, f"training Dice trace {trace}"
    assert monotone, f"smoothed loss {np.round(smooth, 4).tolist()}"


@pytest.mark.slow
def test_c7_temporal_benefit(criterion):
    gains = []
    for seed in TEMPORAL_SEEDS:
        base = 1000 * (seed + 1)
        train_seqs = _synthetic(range(base, base + TEMPORAL_TRAIN_SEQUENCES), 20)
        held = _synthetic(range(base + 500, base + 500 + TEMPORAL_HELDOUT_SEQUENCES), 20)
        dataset = []
        for k, (frames, clean) in enumerate(train_seqs):
            noisy = corrupt_labels(clean, NoiseConfig(seed=base + k, **TEMPORAL_NOISE))
            dataset.append(list(zip(frames, noisy)))
        frames = [f for fs, _ in held for f in fs]
        masks = [m for _, ms in held for m in ms]
        scores = {}
        for name, lam, seg_only in (("fwnet", 0.4, False), ("baseline", 0.0, True)):
            cfg = TrainConfig(iterations=TEMPORAL_ITERATIONS, lam=lam, seed=seed, log_every=0)
            model = train(dataset, cfg, segmentation_only=seg_only).model
            scores[name] = _mean_dice(model, frames, masks)
        gains.append((scores["fwnet"], scores["baseline"]))
    fw = float(np.mean([a for a, _ in gains]))
    bl = float(np.mean([b for _, b in gains]))
    ok = fw >= bl + 0.02
    per_seed = ", ".join(f"{a:.3f}/{b:.3f}" for a, b in gains)
    criterion(7, "temporal benefit over lambda=0 baseline", ok,
              f"held-out Dice FW-Net {fw:.3f} vs baseline {bl:.3f} (margin {fw - bl:+.3f}, >= +0.02 required; per seed {per_seed})")
    assert ok


def test_c8_lambda_zero_equivalence(criterion):
    data = _synthetic((7,), 10)
    dataset = [list(zip(*data[0]))]
    trajectories = {}
    for name, lam, seg_only in (("fwnet", 0.0, False), ("baseline", 0.0, True)):
        snaps = []
        train(dataset, TrainConfig(iterations=100, lam=lam, seed=3, log_every=0), segmentation_only=seg_only,
              callback=lambda it, rec, m: snaps.append(torch.cat([p.detach().flatten() for p in m.segnet.parameters()])))
        trajectories[name] = snaps
    same = all(torch.equal(a, b) for a, b in zip(trajectories["fwnet"], trajectories["baseline"]))
    same &= len(trajectories["fwnet"]) == len(trajectories["baseline"]) == 100
    criterion(8, "lambda=0 equivalence (100 iterations, bitwise)", same, f"identical segnet parameters at every step: {same}")
    assert same


def test_c9_determinism_and_checkpoint(criterion, tmp_path):
    data = _synthetic((8,), 10)
    dataset = [list(zip(*data[0]))]
    cfg = TrainConfig(iterations=20, seed=5, log_every=0)
    a = train(dataset, cfg)
    b = train(dataset, cfg)
    same_curve = np.array_equal(a.losses, b.losses)
    save_checkpoint(tmp_path / "c.pt", a.model)
    back, _ = load_checkpoint(tmp_path / "c.pt")
    frames = list(data[0][0][:4])
    same_pred = np.array_equal(predict_proba(a.model.segnet, frames), predict_proba(back.segnet, frames))
    ok = same_curve and same_pred
    criterion(9, "determinism & checkpoint roundtrip", ok, f"identical loss curves {same_curve}, bitwise predictions {same_pred}")
    assert ok


def test_c10_throughput(criterion):
    frames, _, _ = generate_sequence(SynthConfig(num_frames=8, seed=9))
    model = segnet_init(0)
    rep = benchmark_fps(lambda fs: infer_sequence(fs, model), list(frames), warmup=2, reps=5)
    spread = max(abs(f - rep.mean_fps) / rep.mean_fps for f in rep.per_rep_fps)
    ok = rep.mean_fps > 0 and spread <= 0.2
    criterion(10, "throughput report", ok,
              f"{rep.mean_fps:.2f} FPS at 256x256, max deviation {100 * spread:.1f}% across reps (reference {rep.reference_fps:g} FPS, context only)")
    assert ok
