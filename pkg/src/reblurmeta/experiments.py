"""Desk-scale experiment protocols: gain report, meta vs fine-tune sweep, loss ablation.

Every random stream is derived from one root seed and a purpose string, so
two arms that ask for the same purpose (for example the patch selection of
one test video) see identical randomness.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from .deblurnet import DeblurLossSpec, DeblurTrainConfig, build_deblur, pretrain_deblur
from .imaging import psnr, ssim
from .meta import MetaConfig, deblur_frames, fine_tune, meta_test, meta_train
from .reblurnet import ReblurConfig, ReblurTrainConfig, build_discriminator, build_reblur, pretrain_reblur
from .synthblur import FAMILY_A, FAMILY_B, SceneTemplate, make_dataset

log = logging.getLogger(__name__)

ARMS = ("baseline", "fine_tune", "meta")


def derive_seed(root: int, purpose: str) -> int:
    ss = np.random.SeedSequence([int(root), zlib.crc32(purpose.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def derive_rng(root: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, purpose))


@dataclass
class ExperimentConfig:
    """Flat settings for the whole desk-scale pipeline; keys double as config-file keys."""

    seed: int = 0
    # data
    height: int = 64
    width: int = 64
    frames: int = 12
    n_train: int = 8
    n_test: int = 4
    # shared Charbonnier constant for every training loss in the pipeline
    loss_eps: float = 0.1
    # networks
    reblur_channels: int = 16
    reblur_r: int = 2
    reblur_blocks: int = 4
    deblur_channels: int = 32
    deblur_blocks: int = 6
    # pre-training
    reblur_epochs: int = 15
    reblur_steps: int = 40
    reblur_lr: float = 1e-3
    critic_lr: float = 1e-4
    adv_weight: float = 1e-3
    deblur_epochs: int = 10
    deblur_steps: int = 50
    deblur_lr: float = 1e-3
    batch_size: int = 8
    train_patch: int = 32
    # meta-transfer
    meta_epochs: int = 3
    alpha: float = 1e-4
    beta: float = 0.1
    lam: float = 0.01
    M: int = 10
    patch_size: int = 32
    inner_iters: int = 1
    outer_frames: int = 8
    outer_patch: int = 64
    gp_weight: float = 10.0
    reblur_losses: str = "gan+cycle"
    # protocols
    sweep_M: tuple = (1, 5, 10)

    def __post_init__(self):
        self.sweep_M = tuple(int(m) for m in self.sweep_M)
        if not self.sweep_M:
            raise ValueError("sweep_M must list at least one support-set size")

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        kwargs = {}
        for key, value in values.items():
            default = known[key].default
            if isinstance(default, tuple):
                if isinstance(value, str):
                    value = [v for v in value.replace(",", " ").split()]
                kwargs[key] = tuple(int(v) for v in value)
            elif isinstance(default, bool):
                kwargs[key] = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
            else:
                kwargs[key] = type(default)(value)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["sweep_M"] = list(self.sweep_M)
        return d

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # component configs -------------------------------------------------
    def template(self) -> SceneTemplate:
        return SceneTemplate(height=self.height, width=self.width, frames=self.frames)

    def reblur_net(self) -> ReblurConfig:
        return ReblurConfig(C=self.reblur_channels, r=self.reblur_r, n_blocks=self.reblur_blocks)

    def reblur_train(self) -> ReblurTrainConfig:
        return ReblurTrainConfig(epochs=self.reblur_epochs, steps_per_epoch=self.reblur_steps,
                                 batch_size=self.batch_size, patch_size=self.train_patch, lr=self.reblur_lr,
                                 critic_lr=self.critic_lr, adv_weight=self.adv_weight, gp_weight=self.gp_weight,
                                 eps=self.loss_eps, seed=derive_seed(self.seed, "train/reblur"))

    def deblur_train(self) -> DeblurTrainConfig:
        return DeblurTrainConfig(epochs=self.deblur_epochs, steps_per_epoch=self.deblur_steps,
                                 batch_size=self.batch_size, patch_size=self.train_patch, lr=self.deblur_lr,
                                 seed=derive_seed(self.seed, "train/deblur"))

    def meta(self, **changes) -> MetaConfig:
        values = dict(alpha=self.alpha, beta=self.beta, lam=self.lam, M=self.M, patch_size=self.patch_size,
                      inner_iters=self.inner_iters, outer_frames=self.outer_frames, outer_patch=self.outer_patch,
                      gp_weight=self.gp_weight, reblur_losses=self.reblur_losses, eps=self.loss_eps,
                      seed=derive_seed(self.seed, "meta"))
        values.update(changes)
        return MetaConfig(**values)


@dataclass
class Models:
    reblur: object
    critic: object
    deblur: object
    logs: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# pipeline stages

def build_datasets(cfg: ExperimentConfig):
    """Family-A training videos and held-out family-B test videos."""
    train = make_dataset(FAMILY_A, cfg.n_train, cfg.template(), derive_rng(cfg.seed, "data/train"))
    test = make_dataset(FAMILY_B, cfg.n_test, cfg.template(), derive_rng(cfg.seed, "data/test"))
    return train, test


def init_models(cfg: ExperimentConfig) -> Models:
    return Models(build_reblur(cfg.reblur_net(), seed=derive_seed(cfg.seed, "init/reblur")),
                  build_discriminator(seed=derive_seed(cfg.seed, "init/critic")),
                  build_deblur(cfg.deblur_channels, cfg.deblur_blocks, seed=derive_seed(cfg.seed, "init/deblur")))


def pretrain_models(cfg: ExperimentConfig, train_clips) -> Models:
    init = init_models(cfg)
    reblur, critic, rb_log = pretrain_reblur(train_clips, cfg.reblur_train(), net=init.reblur, critic=init.critic)
    deblur, db_log = pretrain_deblur(train_clips, cfg.deblur_train(), net=init.deblur,
                                     loss=DeblurLossSpec(eps=cfg.loss_eps))
    return Models(reblur, critic, deblur, {"reblur": rb_log, "deblur": db_log})


def run_meta_train(cfg: ExperimentConfig, models: Models, train_clips, **meta_changes) -> Models:
    mcfg = cfg.meta(**meta_changes)
    purpose = f"meta-train/{mcfg.reblur_losses}"
    reblur, deblur, history = meta_train(train_clips, models.reblur, models.critic, models.deblur, mcfg,
                                         epochs=cfg.meta_epochs, rng=derive_rng(cfg.seed, purpose))
    return Models(reblur, models.critic, deblur, {"meta": history})


# ---------------------------------------------------------------------------
# metrics

def frame_metrics(pred, gt) -> dict:
    """Per-frame PSNR/SSIM lists plus their means for one video."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    p = [psnr(a, b) for a, b in zip(pred, gt)]
    s = [ssim(a, b) for a, b in zip(pred, gt)]
    return {"psnr": float(np.mean(p)), "ssim": float(np.mean(s)), "frame_psnr": p, "frame_ssim": s}


def metrics_report(kind: str, config: dict, per_video: dict, baseline: str = "baseline", extra: dict | None = None) -> dict:
    """Assemble ``{config, videos, aggregate, gain}`` from ``{video: {arm: frame_metrics}}``.

    Aggregates are means over videos of the per-video means; each gain is the
    arm's aggregate minus the baseline aggregate.
    """
    arms = list(next(iter(per_video.values())))
    aggregate = {arm: {m: float(np.mean([per_video[v][arm][m] for v in per_video])) for m in ("psnr", "ssim")}
                 for arm in arms}
    gain = {arm: {m: aggregate[arm][m] - aggregate[baseline][m] for m in ("psnr", "ssim")}
            for arm in arms if arm != baseline}
    report = {"kind": kind, "config": config, "videos": per_video, "aggregate": aggregate, "gain": gain}
    if extra:
        report.update(extra)
    return report


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# protocols

def _selection_rng(cfg: ExperimentConfig, clip, tag: str = "") -> np.random.Generator:
    return derive_rng(cfg.seed, f"select/{clip.id}{tag}")


def evaluate_clips(cfg: ExperimentConfig, clips, pretrained: Models, meta_models: Models, M: int | None = None,
                   with_fine_tune: bool = True, **meta_changes) -> dict:
    """Per-video metrics for the baseline, meta and (optionally) fine-tune arms.

    The fine-tune arm adapts the pre-trained deblurrer on exactly the support
    set the meta arm generated, so the two arms differ only in initialization.
    """
    mcfg = cfg.meta(**({"M": M} if M is not None else {}), **meta_changes)
    per_video = {}
    for clip in clips:
        if not clip.has_gt:
            raise ValueError(f"clip {clip.id} has no ground truth to evaluate against")
        row = {"baseline": frame_metrics(deblur_frames(pretrained.deblur, clip.blurred), clip.sharp)}
        meta_res = meta_test(clip, meta_models.reblur, meta_models.deblur, pretrained.critic, mcfg,
                             _selection_rng(cfg, clip))
        if with_fine_tune:
            ft = fine_tune(clip, pretrained.reblur, pretrained.deblur, pretrained.critic, mcfg,
                           support=meta_res.support)
            row["fine_tune"] = frame_metrics(ft.frames, clip.sharp)
        row["meta"] = frame_metrics(meta_res.frames, clip.sharp)
        per_video[clip.id] = row
        log.info("%s M=%d: %s", clip.id, mcfg.M, {a: round(r["psnr"], 4) for a, r in row.items()})
    return per_video


def gain_report(cfg: ExperimentConfig, test_clips, pretrained: Models, meta_models: Models) -> dict:
    per_video = evaluate_clips(cfg, test_clips, pretrained, meta_models)
    return metrics_report("gain", cfg.to_dict(), per_video)


def sweep_report(cfg: ExperimentConfig, test_clips, pretrained: Models, meta_models: Models) -> dict:
    """Meta and fine-tune gain curves over ``cfg.sweep_M``."""
    curves = {"meta": [], "fine_tune": []}
    runs = {}
    for M in cfg.sweep_M:
        per_video = evaluate_clips(cfg, test_clips, pretrained, meta_models, M=M)
        rep = metrics_report("gain", cfg.to_dict(), per_video)
        runs[str(M)] = {"videos": per_video, "aggregate": rep["aggregate"], "gain": rep["gain"]}
        for arm in curves:
            curves[arm].append(rep["gain"][arm]["psnr"])
    mean_gain = {arm: float(np.mean(v)) for arm, v in curves.items()}
    return {"kind": "sweep-M", "config": cfg.to_dict(), "M": list(cfg.sweep_M), "runs": runs,
            "curves": curves, "mean_gain": mean_gain}


def ablation_report(cfg: ExperimentConfig, train_clips, test_clips, pretrained: Models,
                    trained: dict | None = None) -> dict:
    """Meta-train and meta-test once per reblur-loss arm; one gain column per arm.

    ``trained`` maps an arm to already meta-trained models for that arm, which
    are used instead of training again.
    """
    trained = trained or {}
    columns, runs = {}, {}
    for arm in ("gan", "cycle", "gan+cycle"):
        meta_models = trained.get(arm) or run_meta_train(cfg, pretrained, train_clips, reblur_losses=arm)
        per_video = evaluate_clips(cfg, test_clips, pretrained, meta_models, with_fine_tune=False,
                                   reblur_losses=arm)
        rep = metrics_report("gain", cfg.to_dict(), per_video)
        runs[arm] = {"videos": per_video, "aggregate": rep["aggregate"]}
        columns[arm] = rep["gain"]["meta"]
    return {"kind": "ablate-losses", "config": cfg.to_dict(), "runs": runs, "gain": columns}


def run_pipeline(cfg: ExperimentConfig) -> dict:
    """Everything: data, pre-training, meta-training, then the three reports.

    ``models`` and ``data`` are returned for further inspection and are not
    part of any report.
    """
    train, test = build_datasets(cfg)
    pretrained = pretrain_models(cfg, train)
    meta_models = run_meta_train(cfg, pretrained, train)
    return {
        "gain": gain_report(cfg, test, pretrained, meta_models),
        "sweep": sweep_report(cfg, test, pretrained, meta_models),
        "ablation": ablation_report(cfg, train, test, pretrained, {cfg.reblur_losses: meta_models}),
        "training": {"pretrain": pretrained.logs, "meta": meta_models.logs["meta"]},
        "models": {"pretrained": pretrained, "meta": meta_models},
        "data": {"train": train, "test": test},
    }
