"""Command-line entry points.

Every command reads the flat experiment config (YAML or JSON file via
``--config``, then per-key flag overrides), writes its artifacts under the
output directory and echoes the resolved config into each JSON report.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import experiments as ex
from .checkpoint import CheckpointError, load_into, read_checkpoint, save_checkpoint
from .deblurnet import DeblurNet
from .imaging import PatchLocation, crop_patch, save_png
from .meta import deblur_frames, meta_test
from .reblurnet import Discriminator, ReblurConfig, ReblurNet
from .sharpness import score_frames, self_shift_score
from .synthblur import (FAMILY_A, FAMILY_B, VideoFormatError, load_dataset, load_video_dir, read_frame_dir,
                        save_dataset)

log = logging.getLogger("reblurmeta")

OUTPUT_ENV = "REBLURMETA_OUTPUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
COMMANDS = ("synth-data", "pretrain-reblur", "pretrain-deblur", "meta-train", "meta-test", "evaluate", "score",
            "ablate-losses", "sweep-M")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# config

def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        values = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise UsageError(f"malformed config {path}: {exc}") from exc
    if values is None:
        return {}
    if not isinstance(values, dict):
        raise UsageError(f"config {path} must be a flat key-value mapping")
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise UsageError(f"config {path} must be flat; nested keys: {nested}")
    return values


def resolve_config(args) -> ex.ExperimentConfig:
    values = load_config_file(args.config) if args.config else {}
    for f in dataclasses.fields(ex.ExperimentConfig):
        flag = getattr(args, f"cfg_{f.name}", None)
        if flag is not None:
            values[f.name] = flag
    try:
        return ex.ExperimentConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from exc


def output_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "runs")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_report(path: Path, report: dict, runtime: float | None = None) -> Path:
    """JSON report plus a ``*.timing.json`` sidecar, so the report itself is reproducible byte for byte."""
    path.write_text(ex.dumps_report(report) + "\n")
    if runtime is not None:
        path.with_suffix(".timing.json").write_text(json.dumps({"runtime_seconds": runtime}) + "\n")
    return path


# ---------------------------------------------------------------------------
# checkpoints

def save_reblur(path, models, cfg: ex.ExperimentConfig):
    return save_checkpoint(path, {"reblur": models.reblur, "critic": models.critic},
                           config={"reblur": models.reblur.cfg.to_dict(), "experiment": cfg.to_dict()},
                           seed=cfg.seed, epoch=cfg.reblur_epochs)


def save_deblur(path, net, cfg: ex.ExperimentConfig, epoch: int):
    return save_checkpoint(path, {"deblur": net}, config={"deblur": net.config(), "experiment": cfg.to_dict()},
                           seed=cfg.seed, epoch=epoch)


def load_reblur(path):
    meta, groups = read_checkpoint(path)
    for g in ("reblur", "critic"):
        if g not in groups:
            raise CheckpointError(f"{path} has no '{g}' group")
    net = load_into(ReblurNet(ReblurConfig(**meta["config"]["reblur"])), groups["reblur"])
    critic = load_into(Discriminator(), groups["critic"])
    return net, critic


def load_deblur(path):
    meta, groups = read_checkpoint(path)
    if "deblur" not in groups:
        raise CheckpointError(f"{path} has no 'deblur' group")
    return load_into(DeblurNet(**meta["config"]["deblur"]), groups["deblur"])


def load_meta(path):
    meta, groups = read_checkpoint(path)
    for g in ("reblur", "deblur"):
        if g not in groups:
            raise CheckpointError(f"{path} has no '{g}' group")
    reblur = load_into(ReblurNet(ReblurConfig(**meta["config"]["reblur"])), groups["reblur"])
    deblur = load_into(DeblurNet(**meta["config"]["deblur"]), groups["deblur"])
    return reblur, deblur


def _pretrained(args) -> ex.Models:
    reblur, critic = load_reblur(args.reblur)
    return ex.Models(reblur, critic, load_deblur(args.deblur))


def _require_gt(clips, path):
    missing = [c.id for c in clips if not c.has_gt]
    if missing:
        raise ValueError(f"videos in {path} lack sharp ground truth: {missing}")


# ---------------------------------------------------------------------------
# frame directories for evaluate

def _frame_dir(path: Path, prefer: str) -> Path | None:
    if any(path.glob("frame_*.png")):
        return path
    for sub in (prefer, "sharp", "blur"):
        if (path / sub).is_dir():
            return path / sub
    return None


def collect_videos(root, prefer: str) -> dict:
    """``{video id: frames}`` for a single frame folder, a video folder, or a root of video folders."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"directory not found: {root}")
    single = _frame_dir(root, prefer)
    if single is not None:
        return {root.name: read_frame_dir(single)}
    videos = {}
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        d = _frame_dir(sub, prefer)
        if d is not None:
            videos[sub.name] = read_frame_dir(d)
    if not videos:
        raise VideoFormatError(f"no frames found under {root}")
    return videos


def evaluate_dirs(pred_dir, gt_dir) -> dict:
    pred = collect_videos(pred_dir, prefer="sharp")
    gt = collect_videos(gt_dir, prefer="sharp")
    if len(pred) == 1 and len(gt) == 1:
        gt = {next(iter(pred)): next(iter(gt.values()))}
    missing = sorted(set(pred) ^ set(gt))
    if missing:
        raise ValueError(f"prediction and ground-truth videos differ: {missing}")
    videos = {}
    for vid in sorted(pred):
        if pred[vid].shape != gt[vid].shape:
            raise ValueError(f"{vid}: prediction {pred[vid].shape} vs ground truth {gt[vid].shape}")
        videos[vid] = ex.frame_metrics(pred[vid], gt[vid])
    frames_p = [p for v in videos.values() for p in v["frame_psnr"]]
    frames_s = [s for v in videos.values() for s in v["frame_ssim"]]
    corpus = {"psnr": float(np.mean(frames_p)), "ssim": float(np.mean(frames_s)),
              "video_mean_psnr": float(np.mean([v["psnr"] for v in videos.values()])),
              "video_mean_ssim": float(np.mean([v["ssim"] for v in videos.values()]))}
    return {"videos": videos, "corpus": corpus}


# ---------------------------------------------------------------------------
# commands

def cmd_synth_data(args, cfg, out):
    train, test = ex.build_datasets(cfg)
    root = out / "data"
    save_dataset(train, root / "train", FAMILY_A, {"seed": cfg.seed})
    save_dataset(test, root / "test", FAMILY_B, {"seed": cfg.seed})
    print(f"wrote {len(train)} training and {len(test)} test videos under {root}")
    return {"kind": "synth-data", "config": cfg.to_dict(), "train": [c.id for c in train],
            "test": [c.id for c in test]}


def cmd_pretrain_reblur(args, cfg, out):
    clips = load_dataset(args.train)
    _require_gt(clips, args.train)
    init = ex.init_models(cfg)
    from .reblurnet import pretrain_reblur
    net, critic, history = pretrain_reblur(clips, cfg.reblur_train(), net=init.reblur, critic=init.critic)
    path = save_reblur(out / "reblur.npz", ex.Models(net, critic, None), cfg)
    print(f"wrote {path}")
    return {"kind": "pretrain-reblur", "config": cfg.to_dict(), "log": history, "checkpoint": str(path)}


def cmd_pretrain_deblur(args, cfg, out):
    clips = load_dataset(args.train)
    _require_gt(clips, args.train)
    from .deblurnet import DeblurLossSpec, pretrain_deblur
    net, history = pretrain_deblur(clips, cfg.deblur_train(), net=ex.init_models(cfg).deblur,
                                   loss=DeblurLossSpec(eps=cfg.loss_eps))
    path = save_deblur(out / "deblur.npz", net, cfg, cfg.deblur_epochs)
    print(f"wrote {path}")
    return {"kind": "pretrain-deblur", "config": cfg.to_dict(), "log": history, "checkpoint": str(path)}


def cmd_meta_train(args, cfg, out):
    clips = load_dataset(args.train)
    _require_gt(clips, args.train)
    trained = ex.run_meta_train(cfg, _pretrained(args), clips)
    path = save_checkpoint(out / "meta.npz", {"reblur": trained.reblur, "deblur": trained.deblur},
                           config={"reblur": trained.reblur.cfg.to_dict(), "deblur": trained.deblur.config(),
                                   "experiment": cfg.to_dict()},
                           seed=cfg.seed, epoch=cfg.meta_epochs)
    print(f"wrote {path}")
    return {"kind": "meta-train", "config": cfg.to_dict(), "log": trained.logs["meta"], "checkpoint": str(path)}


def cmd_meta_test(args, cfg, out):
    clips = load_dataset(args.test)
    meta_reblur, meta_deblur = load_meta(args.meta)
    reblur, critic = load_reblur(args.reblur)
    baseline = load_deblur(args.deblur) if args.deblur else None
    mcfg = cfg.meta()
    root = out / "meta-test"
    per_video, logs = {}, {}
    for clip in clips:
        res = meta_test(clip, meta_reblur, meta_deblur, critic, mcfg, ex.derive_rng(cfg.seed, f"select/{clip.id}"))
        vdir = root / clip.id
        vdir.mkdir(parents=True, exist_ok=True)
        for k, frame in enumerate(res.frames):
            save_png(frame, vdir / f"frame_{k:04d}.png")
        with open(vdir / "adaptation.jsonl", "w") as fh:
            for entry in res.log:
                fh.write(json.dumps(entry) + "\n")
        logs[clip.id] = {"steps": len(res.log), "provenance": res.state.provenance}
        if clip.has_gt and baseline is not None:
            per_video[clip.id] = {"baseline": ex.frame_metrics(deblur_frames(baseline, clip.blurred), clip.sharp),
                                  "meta": ex.frame_metrics(res.frames, clip.sharp)}
    print(f"wrote deblurred frames for {len(clips)} videos under {root}")
    report = {"kind": "meta-test", "config": cfg.to_dict(), "adaptation": logs}
    if per_video:
        report.update(ex.metrics_report("meta-test", cfg.to_dict(), per_video))
        report["adaptation"] = logs
        print(f"meta gain {report['gain']['meta']['psnr']:+.4f} dB")
    return report


def cmd_evaluate(args, cfg, out):
    report = {"kind": "evaluate", "config": cfg.to_dict(), **evaluate_dirs(args.pred, args.gt)}
    c = report["corpus"]
    print(f"PSNR {c['psnr']:.4f} dB, SSIM {c['ssim']:.4f}")
    return report


def cmd_score(args, cfg, out):
    path = Path(args.clip)
    clip = load_video_dir(path) if (path / "blur").is_dir() else None
    frames = clip.blurred if clip is not None else read_frame_dir(path)
    n, h, w = frames.shape[:3]
    size = cfg.patch_size
    if size > min(h, w) or size < 8:
        raise ValueError(f"patch size {size} invalid for {h}x{w} frames")
    stride = args.stride or size
    ys, xs = list(range(0, h - size + 1, stride)), list(range(0, w - size + 1, stride))
    patches = np.array([[[self_shift_score(crop_patch(f, PatchLocation(x, y, size))) for x in xs] for y in ys]
                        for f in frames])
    report = {"kind": "score", "config": cfg.to_dict(), "source": str(path), "patch_size": size, "stride": stride,
              "frames": {str(i): s for i, s in enumerate(score_frames(frames))},
              "patches": {"rows": ys, "cols": xs, "scores": patches.tolist(),
                          "sharpest_frame": patches.argmin(axis=0).tolist()}}
    if args.heatmaps:
        hdir = out / "score-heatmaps"
        hdir.mkdir(parents=True, exist_ok=True)
        lo, hi = float(patches.min()), float(patches.max())
        for i, grid in enumerate(patches):
            norm = (grid - lo) / (hi - lo) if hi > lo else np.zeros_like(grid)
            img = np.kron(norm, np.ones((size, size)))[..., None].repeat(3, axis=-1)
            save_png(img, hdir / f"frame_{i:04d}.png")
    return report


def cmd_ablate_losses(args, cfg, out):
    train, test = load_dataset(args.train), load_dataset(args.test)
    _require_gt(train, args.train)
    _require_gt(test, args.test)
    report = ex.ablation_report(cfg, train, test, _pretrained(args))
    for arm, g in report["gain"].items():
        print(f"{arm:>10}: {g['psnr']:+.4f} dB")
    return report


def cmd_sweep_m(args, cfg, out):
    test = load_dataset(args.test)
    _require_gt(test, args.test)
    pre = _pretrained(args)
    meta_reblur, meta_deblur = load_meta(args.meta)
    report = ex.sweep_report(cfg, test, pre, ex.Models(meta_reblur, pre.critic, meta_deblur))
    for arm, curve in report["curves"].items():
        print(f"{arm:>10}: " + ", ".join(f"M={m}: {g:+.4f}" for m, g in zip(report["M"], curve)))
    return report


HANDLERS = {
    "synth-data": (cmd_synth_data, "synth-data.json"),
    "pretrain-reblur": (cmd_pretrain_reblur, "pretrain-reblur.json"),
    "pretrain-deblur": (cmd_pretrain_deblur, "pretrain-deblur.json"),
    "meta-train": (cmd_meta_train, "meta-train.json"),
    "meta-test": (cmd_meta_test, "meta-test.json"),
    "evaluate": (cmd_evaluate, "evaluate.json"),
    "score": (cmd_score, "score.json"),
    "ablate-losses": (cmd_ablate_losses, "ablate-losses.json"),
    "sweep-M": (cmd_sweep_m, "sweep-M.json"),
}


# ---------------------------------------------------------------------------
# parser

def _add_common(p):
    p.add_argument("--config", help="flat YAML/JSON config file")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./runs)")
    p.add_argument("-v", "--verbose", action="store_true")
    group = p.add_argument_group("config overrides (take precedence over --config)")
    for f in dataclasses.fields(ex.ExperimentConfig):
        kind = str if isinstance(f.default, tuple) else type(f.default)
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", type=kind, default=None,
                           metavar=kind.__name__.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reblurmeta", description="Reblur-deblur meta-transfer for test-time deblurring.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    specs = {
        "synth-data": ("generate family-A training and family-B test videos", []),
        "pretrain-reblur": ("pre-train the reblurring network and critic", ["train"]),
        "pretrain-deblur": ("pre-train the reference deblurrer", ["train"]),
        "meta-train": ("meta-train reblur and deblur weights", ["train", "reblur", "deblur"]),
        "meta-test": ("adapt to each test video and deblur it", ["test", "meta", "reblur"]),
        "evaluate": ("PSNR/SSIM of predicted frames against ground truth", ["pred", "gt"]),
        "score": ("self-shift scores of a video's frames and patches", ["clip"]),
        "ablate-losses": ("GAN-only / cycle-only / GAN+cycle gain table", ["train", "test", "reblur", "deblur"]),
        "sweep-M": ("meta vs fine-tune gains over support-set sizes", ["test", "meta", "reblur", "deblur"]),
    }
    helps = {"train": "training dataset root", "test": "test dataset root", "reblur": "reblur checkpoint",
             "deblur": "pre-trained deblur checkpoint", "meta": "meta-trained checkpoint",
             "pred": "predicted frames", "gt": "ground-truth frames", "clip": "video or frame directory"}
    for name, (help_text, required) in specs.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        for key in required:
            p.add_argument(f"--{key}", required=True, help=helps[key])
        if name == "meta-test":
            p.add_argument("--deblur", help="pre-trained deblur checkpoint, for the baseline arm")
        if name == "score":
            p.add_argument("--stride", type=int, default=None)
            p.add_argument("--heatmaps", action="store_true", help="write per-frame score heat-map PNGs")
        _add_common(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command; choose one of " + ", ".join(COMMANDS))
        cfg = resolve_config(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    handler, report_name = HANDLERS[args.command]
    start = time.perf_counter()
    try:
        out = output_dir(args)
        report = handler(args, cfg, out)
        write_report(out / report_name, report, time.perf_counter() - start)
    except (ValueError, OSError, CheckpointError, VideoFormatError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
