"""Reblur-deblur meta-transfer for test-time adaptation of deblurring models."""

from .deblurnet import DeblurLossSpec, DeblurNet, build_deblur, deblur_forward, pretrain_deblur
from .imaging import PatchLocation, ShiftVector, psnr, shift_image, ssim
from .meta import AdaptedState, MetaConfig, PseudoPair, fine_tune, meta_test, meta_train
from .reblurnet import Discriminator, ReblurConfig, ReblurNet, build_discriminator, build_reblur, reblur_forward
from .sharpness import colocated_stack, select_pseudo_sharp, select_real_blurred, self_shift_score
from .synthblur import FAMILY_A, FAMILY_B, VideoClip, load_video_dir, make_dataset, save_video_clip

__version__ = "0.1.0"

__all__ = [
    "AdaptedState",
    "DeblurLossSpec",
    "DeblurNet",
    "Discriminator",
    "FAMILY_A",
    "FAMILY_B",
    "MetaConfig",
    "PatchLocation",
    "PseudoPair",
    "ReblurConfig",
    "ReblurNet",
    "ShiftVector",
    "VideoClip",
    "build_deblur",
    "build_discriminator",
    "build_reblur",
    "colocated_stack",
    "deblur_forward",
    "fine_tune",
    "load_video_dir",
    "make_dataset",
    "meta_test",
    "meta_train",
    "pretrain_deblur",
    "psnr",
    "reblur_forward",
    "save_video_clip",
    "select_pseudo_sharp",
    "select_real_blurred",
    "self_shift_score",
    "shift_image",
    "ssim",
]
