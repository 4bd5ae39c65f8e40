"""Command-line entry point: ``fwnet <subcommand> [--config FILE] [flags]``.

Exit status: 0 on success, 1 on user error (bad flags, config or inputs),
2 on internal error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import io as fio
from .config import ConfigError, derive_seed, resolve
from .estimator import FWNetSegmenter
from .evaluation import benchmark_fps, evaluate, render_overlay
from .labelgen import VesselnessConfig, generate_raw_labels
from .synth import NoiseConfig, SynthConfig, corrupt_labels, generate_sequence

log = logging.getLogger("fwnet")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage().strip()}")


def _common(p, out_required=True):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seed", type=int, help="root seed for every random stream")
    if out_required:
        p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fwnet", description="Flow-guided warping segmentation toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--num-sequences", type=int, dest="synth.num_sequences")
    p.add_argument("--num-frames", type=int, dest="synth.num_frames")
    p.add_argument("--dropout-fraction", type=float, dest="noise.dropout_fraction")
    p.add_argument("--false-positive-blobs", type=int, dest="noise.false_positive_blobs")

    p = sub.add_parser("ingest", help="resample a video or image folder into a sequence")
    _common(p)
    p.add_argument("source")
    p.add_argument("--fps", type=float, dest="ingest.fps")
    p.add_argument("--size", type=int, dest="ingest.size")
    p.add_argument("--source-fps", type=float, dest="ingest.source_fps")
    p.add_argument("--sequence-id")

    p = sub.add_parser("label", help="write vesselness pseudo-labels for a dataset")
    _common(p, out_required=False)
    p.add_argument("--data", required=True)
    p.add_argument("--into", default="masks_raw", help="mask subfolder to write")
    p.add_argument("--window", type=int, dest="label.window")
    p.add_argument("--offset", type=float, dest="label.offset")

    p = sub.add_parser("train", help="train FW-Net on a dataset")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--iterations", type=int, dest="train.iterations")
    p.add_argument("--lambda", type=float, dest="train.lambda")
    p.add_argument("--learning-rate", type=float, dest="train.learning_rate")
    p.add_argument("--batch-size", type=int, dest="train.batch_size")
    p.add_argument("--grad-clip-norm", type=float, dest="train.grad_clip_norm", help="0 disables clipping")
    p.add_argument("--labels", dest="train.labels")
    p.add_argument("--segmentation-only", action="store_const", const=True, dest="train.segmentation_only")

    p = sub.add_parser("eval", help="Dice evaluation of a checkpoint")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--labels", dest="eval.labels")
    p.add_argument("--overlays", type=int, dest="eval.overlays")

    p = sub.add_parser("infer", help="predict masks for every frame")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dump-flow", action="store_true", help="also write .flo files for consecutive pairs")

    p = sub.add_parser("bench", help="per-frame inference throughput")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--reps", type=int, dest="bench.reps")
    p.add_argument("--warmup", type=int, dest="bench.warmup")
    return parser


def _overrides(args) -> dict:
    out = {k: v for k, v in vars(args).items() if "." in k}
    if args.seed is not None:
        out["seed"] = args.seed
    return out


def _staged(out: Path):
    """Write into a temporary sibling and move into place only on success."""
    out.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))


def _commit(tmp: Path, out: Path) -> None:
    if out.exists():
        shutil.rmtree(out)
    tmp.rename(out)


def cmd_synth(args, cfg):
    s, n = cfg["synth"], cfg["noise"]
    out = Path(args.out)
    tmp = _staged(out)
    try:
        seeds = []
        for k in range(s["num_sequences"]):
            sid = f"seq_{k:03d}"
            seed = derive_seed(cfg["seed"], "synth", k)
            noise_seed = derive_seed(cfg["seed"], "noise", k)
            sc = SynthConfig(
                num_frames=s["num_frames"], size=s["size"], curve_control_points=s["curve_control_points"],
                curve_width_px=tuple(s["curve_width_px"]),
                tip_advance_px_per_frame=tuple(s["tip_advance_px_per_frame"]), jitter_px=s["jitter_px"],
                noise_sigma=s["noise_sigma"], vessel_phantom_count=s["vessel_phantom_count"],
                contrast=tuple(s["contrast"]), seed=seed,
            )
            frames, clean, _ = generate_sequence(sc)
            raw = corrupt_labels(clean, NoiseConfig(seed=noise_seed, **n))
            fio.write_sequence(tmp, sid, frames, clean, raw)
            seeds.append({"sequence_id": sid, "synth_seed": seed, "noise_seed": noise_seed, "frames": len(frames)})
        fio.write_json(tmp / "manifest.json", {
            "kind": "synthetic", "config": cfg, "sequences": seeds,
            "counts": {"sequences": len(seeds), "frames": sum(x["frames"] for x in seeds)},
        })
        fio.write_json(tmp / "resolved_config.json", cfg)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    _commit(tmp, out)
    print(f"wrote {len(seeds)} sequences to {out}")


def cmd_ingest(args, cfg):
    c = cfg["ingest"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seq_dir = fio.ingest_video(args.source, out, fps=c["fps"], size=c["size"],
                               source_fps=c["source_fps"] or None, sequence_id=args.sequence_id)
    fio.write_json(seq_dir / "resolved_config.json", cfg)
    print(f"wrote {seq_dir}")


def cmd_label(args, cfg):
    c = cfg["label"]
    vc = VesselnessConfig(scales=tuple(c["scales"]), beta=c["beta"], c=c["c"] or None,
                          window=c["window"], offset=c["offset"], min_area=c["min_area"])
    root = Path(args.data)
    rows = []
    for sid in fio.list_sequences(root):
        files = sorted((root / sid / "frames").glob("*.png"))
        labels = generate_raw_labels([fio.load_frame(f) for f in files], vc)
        (root / sid / args.into).mkdir(exist_ok=True)
        for f, m in zip(files, labels):
            mp = root / sid / args.into / f.name
            fio.write_mask_png(mp, m)
            rows.append((str(f.relative_to(root)), str(mp.relative_to(root)), "raw_pseudo_label"))
    with open(root / "labels_manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_path", "mask_path", "provenance"])
        w.writerows(rows)
    fio.write_json(root / "label_config.json", cfg)
    print(f"labelled {len(rows)} frames")


def cmd_train(args, cfg):
    t = cfg["train"]
    data = fio.load_dataset(args.data, masks=t["labels"])
    est = FWNetSegmenter(
        lam=t["lambda"], learning_rate=t["learning_rate"], momentum=t["momentum"],
        max_pair_offset=t["max_pair_offset"], batch_size=t["batch_size"], iterations=t["iterations"],
        seed=derive_seed(cfg["seed"], "train"), normalize_loss=t["normalize_loss"],
        grad_clip_norm=t["grad_clip_norm"] or None,
        segmentation_only=t["segmentation_only"], log_every=t["log_every"],
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    logf = open(out / "train_log.txt", "w")

    def on_step(it, rec, model):
        if t["log_every"] and (it % t["log_every"] == 0 or it == t["iterations"] - 1):
            logf.write(f"iteration={it} L_s={rec['loss_s']:.6f} L_w={rec['loss_w']:.6f} L={rec['loss']:.6f}\n")
            logf.flush()

    try:
        est.fit([[f for f, _ in s] for s in data], [[m for _, m in s] for s in data], callback=on_step)
    finally:
        logf.close()
    with open(out / "loss_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss_s", "loss_w", "loss"])
        for r in est.history_:
            w.writerow([r["iteration"], f"{r['loss_s']:.8g}", f"{r['loss_w']:.8g}", f"{r['loss']:.8g}"])
    est.save(out / "checkpoint.pt")
    fio.write_json(out / "resolved_config.json", cfg)
    print(f"final loss {est.history_[-1]['loss']:.4f}" if est.history_ else "no iterations run")


def cmd_eval(args, cfg):
    c = cfg["eval"]
    est = FWNetSegmenter.load(args.checkpoint)
    data = fio.load_dataset(args.data, masks=c["labels"])
    report = evaluate(est, data, model_id=str(args.checkpoint), dataset_id=str(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(indent=2) + "\n")
    (out / "per_frame_dice.csv").write_text(report.to_csv())
    if c["overlays"]:
        from PIL import Image

        (out / "overlays").mkdir(exist_ok=True)
        flat = [(s, t, f, m) for s, seq in enumerate(data) for t, (f, m) in enumerate(seq)]
        for s, t, f, m in flat[: c["overlays"]]:
            img = render_overlay(f, est.predict([f])[0], m)
            Image.fromarray(img).save(out / "overlays" / f"{s:03d}_{t:06d}.png")
    fio.write_json(out / "resolved_config.json", cfg)
    print(f"mean Dice {report.mean_dice:.4f} over {len(report.per_frame_dice)} frames")


def cmd_infer(args, cfg):
    est = FWNetSegmenter.load(args.checkpoint)
    root = Path(args.data)
    out = Path(args.out)
    n = 0
    for sid in fio.list_sequences(root):
        files = sorted((root / sid / "frames").glob("*.png"))
        frames = [fio.load_frame(f) for f in files]
        (out / sid).mkdir(parents=True, exist_ok=True)
        for f, m in zip(files, est.predict(frames) if frames else []):
            fio.write_mask_png(out / sid / f.name, m)
            n += 1
        if args.dump_flow:
            (out / sid / "flow").mkdir(exist_ok=True)
            for k in range(len(frames) - 1):
                fio.write_flo(out / sid / "flow" / f"{k:06d}.flo", est.estimate_flow(frames[k], frames[k + 1]))
    fio.write_json(out / "resolved_config.json", cfg)
    print(f"wrote {n} masks")


def cmd_bench(args, cfg):
    c = cfg["bench"]
    est = FWNetSegmenter.load(args.checkpoint)
    if args.data:
        frames = [f for seq in fio.load_dataset(args.data, require_masks=False) for f, _ in seq][: c["frames"]]
    else:
        rng = np.random.default_rng(derive_seed(cfg["seed"], "bench"))
        frames = [rng.random((est.frame_size, est.frame_size), dtype=np.float32) for _ in range(c["frames"])]
    rep = benchmark_fps(est, frames, warmup=c["warmup"], reps=c["reps"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fio.write_json(out / "fps.json", rep.__dict__)
    fio.write_json(out / "resolved_config.json", cfg)
    print(f"{rep.mean_fps:.2f} +/- {rep.std_fps:.2f} FPS (reference {rep.reference_fps} FPS)")


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "label": cmd_label,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve(args.config, _overrides(args))
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USER
    except (ConfigError, ValueError, FileNotFoundError, OSError) as exc:
        print(f"fwnet: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001
        print(f"fwnet: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
