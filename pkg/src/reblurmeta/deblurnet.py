"""Reference single-image deblurrer and its supervised pre-training.

Any ``nn.Module`` mapping (B, 3, H, W) blurred images to (B, 3, H, W)
restorations can stand in for :class:`DeblurNet` in the meta-learning loop;
only ``forward`` and ``parameters()`` are used.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .losses import CHARBONNIER_EPS, charbonnier
from .torchutils import seeded_init, to_numpy, to_tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeblurLossSpec:
    name: str = "charbonnier"
    eps: float = CHARBONNIER_EPS

    def __call__(self, x, y):
        if self.name != "charbonnier":
            raise ValueError(f"unsupported deblur loss {self.name!r}")
        return charbonnier(x, y, self.eps)


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(torch.relu(self.conv1(x)))


class DeblurNet(nn.Module):
    """3 -> C conv, residual blocks, C -> 3 conv, added back to the input and clamped."""

    def __init__(self, channels: int = 32, n_blocks: int = 6, zero_init_residual: bool = True):
        super().__init__()
        self.channels, self.n_blocks = channels, n_blocks
        self.head = nn.Conv2d(3, channels, 3, padding=1)
        self.body = nn.Sequential(*[ResBlock(channels) for _ in range(n_blocks)])
        self.tail = nn.Conv2d(channels, 3, 3, padding=1)
        if zero_init_residual:
            nn.init.zeros_(self.tail.weight)
            nn.init.zeros_(self.tail.bias)

    def forward(self, x):
        return (x + self.tail(self.body(torch.relu(self.head(x))))).clamp(0.0, 1.0)

    def config(self) -> dict:
        return {"channels": self.channels, "n_blocks": self.n_blocks}


def build_deblur(channels: int = 32, n_blocks: int = 6, seed: int = 0, zero_init_residual: bool = True) -> DeblurNet:
    return seeded_init(lambda: DeblurNet(channels, n_blocks, zero_init_residual), seed)


def deblur_forward(image, net: nn.Module) -> np.ndarray:
    """Deblur one (H, W, 3) image or a stack (N, H, W, 3)."""
    arr = np.asarray(image)
    single = arr.ndim == 3
    with torch.no_grad():
        out = net(to_tensor(arr[None] if single else arr))
    out = to_numpy(out)
    return out[0] if single else out


@dataclass
class DeblurTrainConfig:
    epochs: int = 10
    steps_per_epoch: int = 40
    batch_size: int = 8
    patch_size: int = 32
    lr: float = 5e-4
    seed: int = 0
    augment: bool = True


def sample_pair_batch(clips, batch_size: int, patch_size: int, rng, augment: bool = True):
    blurred, sharp = [], []
    for _ in range(batch_size):
        clip = clips[int(rng.integers(len(clips)))]
        h, w = clip.frame_shape
        t = int(rng.integers(len(clip)))
        y = int(rng.integers(h - patch_size + 1))
        x = int(rng.integers(w - patch_size + 1))
        b = clip.blurred[t, y:y + patch_size, x:x + patch_size]
        s = clip.sharp[t, y:y + patch_size, x:x + patch_size]
        if augment:
            # flips only: rotations would turn horizontal motion blur vertical
            if rng.integers(2):
                b, s = b[:, ::-1], s[:, ::-1]
            if rng.integers(2):
                b, s = b[::-1], s[::-1]
        blurred.append(np.ascontiguousarray(b))
        sharp.append(np.ascontiguousarray(s))
    return to_tensor(np.stack(blurred)), to_tensor(np.stack(sharp))


def pretrain_deblur(train_clips, cfg: DeblurTrainConfig | None = None, net: nn.Module | None = None,
                    loss: DeblurLossSpec | None = None, channels: int = 32, n_blocks: int = 6):
    """Supervised training on random blurred/sharp crops with Adam and cosine decay.

    Returns ``(net, log)``; ``log`` has one entry of mean loss per epoch.
    """
    cfg = cfg or DeblurTrainConfig()
    loss = loss or DeblurLossSpec()
    if not train_clips:
        raise ValueError("training needs at least one clip")
    missing = [c.id for c in train_clips if not c.has_gt]
    if missing:
        raise ValueError(f"clips without sharp ground truth: {missing}")
    net = net if net is not None else build_deblur(channels, n_blocks, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    total = max(cfg.epochs * cfg.steps_per_epoch, 1)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=total, eta_min=cfg.lr * 0.05)
    history = []
    for epoch in range(cfg.epochs):
        running = 0.0
        for _ in range(cfg.steps_per_epoch):
            b, s = sample_pair_batch(train_clips, cfg.batch_size, cfg.patch_size, rng, cfg.augment)
            value = loss(net(b), s)
            opt.zero_grad()
            value.backward()
            opt.step()
            sched.step()
            running += value.item()
        history.append({"epoch": epoch + 1, "loss": running / cfg.steps_per_epoch})
        log.info("deblur pretrain epoch %d: loss %.5f", epoch + 1, history[-1]["loss"])
    return net, history
