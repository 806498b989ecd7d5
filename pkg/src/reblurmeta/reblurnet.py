"""Video reblurring network with cross-frame fusion blocks, its WGAN critic, and pre-training.

Shapes used throughout (B = batch of stacks, T = 5 colocated frames):

    stack      (B, T, 3, H, W)
    features   (B, T, H', W', C)         H' = H / downsample
    tokens     (B, T, N, D')             N = H'W' / r^2, D' = 2C

The network encodes each frame, splits the features into r x r regional
tokens, runs ``n_blocks`` fusion blocks (regional self-attention, centre-frame
cross attention, local attention over the initial features), keeps the centre
frame, decodes it and adds the result to the centre input patch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .losses import CHARBONNIER_EPS, charbonnier, critic_loss, generator_loss
from .sharpness import stack_indices
from .torchutils import frozen, seeded_init, to_numpy, to_tensor, torch_generator

log = logging.getLogger(__name__)


@dataclass
class ReblurConfig:
    T: int = 5
    C: int = 16
    r: int = 2
    n_blocks: int = 4
    n_down: int = 2  # stride-2 encoder convs, downsample factor 2 ** n_down
    heads: int = 4
    mlp_ratio: int = 2
    zero_init_residual: bool = True

    def __post_init__(self):
        if self.T != 5:
            raise ValueError(f"the reblurring network fuses exactly 5 frames, got T={self.T}")
        if self.D_embed % self.heads:
            raise ValueError(f"embedded dim {self.D_embed} not divisible by {self.heads} heads")

    @property
    def downsample(self) -> int:
        return 2 ** self.n_down

    @property
    def D(self) -> int:
        return self.C * self.r * self.r

    @property
    def D_embed(self) -> int:
        return 2 * self.C

    def check_patch(self, height: int, width: int) -> None:
        unit = self.downsample * self.r
        if height % unit or width % unit:
            raise ValueError(f"patch {height}x{width} must be divisible by downsample*r = {unit}")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# regional tokens
# ---------------------------------------------------------------------------

def partition_windows(f: torch.Tensor, r: int) -> torch.Tensor:
    """(B, T, H', W', C) -> (B, T, N, r*r*C), windows in row-major order."""
    b, t, h, w, c = f.shape
    if h % r or w % r:
        raise ValueError(f"feature map {h}x{w} not divisible by window size {r}")
    x = f.reshape(b, t, h // r, r, w // r, r, c).permute(0, 1, 2, 4, 3, 5, 6)
    return x.reshape(b, t, (h // r) * (w // r), r * r * c)


def merge_windows(tokens: torch.Tensor, r: int, height: int, width: int) -> torch.Tensor:
    """Exact inverse of :func:`partition_windows`."""
    b, t, n, d = tokens.shape
    c = d // (r * r)
    if n != (height // r) * (width // r) or d != r * r * c:
        raise ValueError(f"tokens {tuple(tokens.shape)} do not fold into {height}x{width} with r={r}")
    x = tokens.reshape(b, t, height // r, width // r, r, r, c).permute(0, 1, 2, 4, 3, 5, 6)
    return x.reshape(b, t, height, width, c)


def attend(q, k, v):
    """Scaled dot-product attention; returns (output, probabilities)."""
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    probs = scores.softmax(dim=-1)
    return probs @ v, probs


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.last_probs = None
        self.keep_probs = False

    def forward(self, x):
        *lead, n, d = x.shape
        qkv = self.qkv(x).reshape(*lead, n, 3, self.heads, d // self.heads)
        qkv = qkv.movedim(-3, 0).transpose(-3, -2)  # 3, ..., heads, n, hd
        out, probs = attend(qkv[0], qkv[1], qkv[2])
        if self.keep_probs:
            self.last_probs = probs.detach()
        out = out.transpose(-3, -2).reshape(*lead, n, d)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, ratio: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * ratio)
        self.fc2 = nn.Linear(dim * ratio, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class RegionalSelfAttention(nn.Module):
    """Self-attention among one frame's regional tokens; frames act as batch entries."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)

    def forward(self, tokens):
        return tokens + self.attn(self.norm(tokens))


class CrossSelfAttention(nn.Module):
    """Centre-frame queries against each frame's keys/values, merged by a 5D' -> D' linear.

    Only the centre frame's tokens are replaced; the other frames pass through.
    """

    def __init__(self, dim: int, T: int = 5):
        super().__init__()
        self.T = T
        self.wq = nn.Linear(dim, dim, bias=False)
        self.wk = nn.Linear(dim, dim, bias=False)
        self.wv = nn.Linear(dim, dim, bias=False)
        self.merge = nn.Linear(T * dim, dim)
        self.last_probs = None
        self.keep_probs = False

    def fuse(self, tokens, center: int):
        """The merged centre-frame tokens, shape (B, N, D')."""
        if tokens.shape[1] != self.T:
            raise ValueError(f"cross attention expects {self.T} frames, got {tokens.shape[1]}")
        q = self.wq(tokens[:, center]).unsqueeze(1)  # B, 1, N, D'
        per_frame, probs = attend(q, self.wk(tokens), self.wv(tokens))  # B, T, N, D'
        if self.keep_probs:
            self.last_probs = probs.detach()
        b, t, n, d = per_frame.shape
        concat = per_frame.permute(0, 2, 1, 3).reshape(b, n, t * d)
        return self.merge(concat)

    def forward(self, tokens, center: int):
        fused = self.fuse(tokens, center)
        return torch.cat([tokens[:, :center], fused.unsqueeze(1), tokens[:, center + 1:]], dim=1)


class LocalSelfAttention(nn.Module):
    """Per-window attention over the regional token plus the window's r*r initial-feature pixels.

    Pixel features (C channels) are projected to D' and given a learned
    in-window position embedding; the regional token's output row becomes the
    updated regional token.
    """

    def __init__(self, dim: int, channels: int, r: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.r = r
        self.local_proj = nn.Linear(channels, dim)
        self.pos = nn.Parameter(torch.zeros(r * r, dim))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.norm = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def local_tokens(self, features):
        b, t, h, w, c = features.shape
        pix = partition_windows(features, self.r).reshape(b, t, -1, self.r * self.r, c)
        return self.local_proj(pix) + self.pos  # B, T, N, r*r, D'

    def forward(self, tokens, features):
        local = self.local_tokens(features)
        if local.shape[:3] != tokens.shape[:3]:
            raise ValueError(f"features give {tuple(local.shape[:3])} windows, tokens {tuple(tokens.shape[:3])}")
        seq = torch.cat([tokens.unsqueeze(-2), local], dim=-2)
        mixed = self.attn(self.norm(seq))[..., 0, :]
        tokens = tokens + mixed
        return tokens + self.mlp(self.norm_mlp(tokens))


class CrossFrameFusionBlock(nn.Module):
    def __init__(self, cfg: ReblurConfig):
        super().__init__()
        d = cfg.D_embed
        self.rsa = RegionalSelfAttention(d, cfg.heads)
        self.csa = CrossSelfAttention(d, cfg.T)
        self.lsa = LocalSelfAttention(d, cfg.C, cfg.r, cfg.heads, cfg.mlp_ratio)

    def forward(self, tokens, features, center: int):
        tokens = self.rsa(tokens)
        tokens = self.csa(tokens, center)
        return self.lsa(tokens, features)


class Encoder(nn.Module):
    """3 -> C at full resolution followed by ``n_down`` stride-2 C -> C convs, applied per frame."""

    def __init__(self, channels: int, n_down: int):
        super().__init__()
        layers = [nn.Conv2d(3, channels, 3, padding=1), nn.GELU()]
        for _ in range(n_down):
            layers += [nn.Conv2d(channels, channels, 3, stride=2, padding=1), nn.GELU()]
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)


class Decoder(nn.Module):
    """Nearest upsample + conv per encoder level, fused with a full-resolution view of the stack.

    The token path only exists at 1/4 resolution, so a conv projection of the
    raw T input frames is added after upsampling; two more convs then feed a
    C -> 3 residual head.
    """

    def __init__(self, channels: int, n_down: int, zero_init: bool, skip_channels: int = 15):
        super().__init__()
        layers = []
        for _ in range(n_down):
            layers += [nn.Upsample(scale_factor=2, mode="nearest"),
                       nn.Conv2d(channels, channels, 3, padding=1), nn.GELU()]
        self.body = nn.Sequential(*layers)
        self.skip = nn.Conv2d(skip_channels, channels, 3, padding=1)
        self.fuse = nn.Sequential(nn.GELU(), nn.Conv2d(channels, channels, 3, padding=1), nn.GELU(),
                                  nn.Conv2d(channels, channels, 3, padding=1), nn.GELU())
        self.head = nn.Conv2d(channels, 3, 3, padding=1)
        if zero_init:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, x, skip):
        return self.head(self.fuse(self.body(x) + self.skip(skip)))


class ReblurNet(nn.Module):
    def __init__(self, cfg: ReblurConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ReblurConfig()
        self.encoder = Encoder(cfg.C, cfg.n_down)
        self.embed = nn.Linear(cfg.D, cfg.D_embed)
        self.blocks = nn.ModuleList(CrossFrameFusionBlock(cfg) for _ in range(cfg.n_blocks))
        self.unembed = nn.Linear(cfg.D_embed, cfg.D)
        self.decoder = Decoder(cfg.C, cfg.n_down, cfg.zero_init_residual, skip_channels=3 * cfg.T)

    def encode(self, stack: torch.Tensor) -> torch.Tensor:
        """(B, T, 3, H, W) -> (B, T, H', W', C); frames share the encoder."""
        b, t, _, h, w = stack.shape
        self.cfg.check_patch(h, w)
        f = self.encoder(stack.reshape(b * t, 3, h, w))
        return f.reshape(b, t, *f.shape[1:]).permute(0, 1, 3, 4, 2)

    def tokenize(self, features: torch.Tensor) -> torch.Tensor:
        return self.embed(partition_windows(features, self.cfg.r))

    def detokenize(self, tokens: torch.Tensor, height: int, width: int) -> torch.Tensor:
        return merge_windows(self.unembed(tokens), self.cfg.r, height, width)

    def forward(self, stack: torch.Tensor, center: int | None = None) -> torch.Tensor:
        """Pseudo-blurred centre patch, (B, 3, H, W) in [0, 1]."""
        center = self.cfg.T // 2 if center is None else center
        if stack.dim() == 4:
            stack = stack.unsqueeze(0)
        features = self.encode(stack)
        hf, wf = features.shape[2:4]
        tokens = self.tokenize(features)
        for block in self.blocks:
            tokens = block(tokens, features, center)
        out = self.detokenize(tokens[:, center:center + 1], hf, wf)[:, 0]  # B, H', W', C
        residual = self.decoder(out.permute(0, 3, 1, 2), stack.flatten(1, 2))
        return (stack[:, center] + residual).clamp(0.0, 1.0)

    def attention_modules(self):
        for block in self.blocks:
            yield block.rsa.attn
            yield block.csa
            yield block.lsa.attn


class Discriminator(nn.Module):
    """Strided conv critic ending in one unbounded score per patch."""

    MIN_SIZE = 8

    def __init__(self, channels: int = 16, n_layers: int = 3):
        super().__init__()
        layers, c_in = [], 3
        for i in range(n_layers):
            c_out = channels * 2 ** i
            layers += [nn.Conv2d(c_in, c_out, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            c_in = c_out
        self.body = nn.Sequential(*layers)
        self.fc = nn.Linear(c_in, 1)

    def forward(self, x):
        if x.dim() == 3:
            x = x.unsqueeze(0)
        if min(x.shape[-2:]) < self.MIN_SIZE:
            raise ValueError(f"critic needs patches of at least {self.MIN_SIZE}x{self.MIN_SIZE}")
        return self.fc(self.body(x).mean(dim=(-2, -1))).squeeze(-1)


def build_reblur(cfg: ReblurConfig | None = None, seed: int = 0) -> ReblurNet:
    return seeded_init(lambda: ReblurNet(cfg), seed)


def build_discriminator(seed: int = 0, **kwargs) -> Discriminator:
    return seeded_init(lambda: Discriminator(**kwargs), seed)


def reblur_forward(stack, net: ReblurNet) -> np.ndarray:
    """Reblur one colocated stack (list of T patches or a ColocatedStack) to an (H, W, 3) array."""
    patches = stack.as_array() if hasattr(stack, "as_array") else np.asarray(stack)
    center = getattr(stack, "center_index", None)
    with torch.no_grad():
        out = net(to_tensor(patches).unsqueeze(0), center)
    return to_numpy(out[0])


def discriminate(patches, critic: Discriminator) -> np.ndarray:
    """Critic scores for one (H, W, 3) patch or a batch (K, H, W, 3)."""
    arr = np.asarray(patches)
    with torch.no_grad():
        return critic(to_tensor(arr)).numpy().astype(np.float64).reshape(arr.shape[:-3] or ())


# ---------------------------------------------------------------------------
# pre-training
# ---------------------------------------------------------------------------

@dataclass
class ReblurTrainConfig:
    epochs: int = 10
    steps_per_epoch: int = 40
    batch_size: int = 8
    patch_size: int = 32
    lr: float = 5e-4
    critic_lr: float = 1e-4
    adv_weight: float = 1e-3
    gp_weight: float = 10.0
    eps: float = CHARBONNIER_EPS
    seed: int = 0
    augment: bool = True


def _augment(arrays, rng):
    """Apply the same random flips to every array (each with H, W on axes -3, -2).

    No rotations: they would turn the training set's horizontal motion vertical.
    """
    flip_w, flip_h = bool(rng.integers(2)), bool(rng.integers(2))
    out = []
    for a in arrays:
        if flip_w:
            a = a[..., ::-1, :]
        if flip_h:
            a = a[..., ::-1, :, :]
        out.append(np.ascontiguousarray(a))
    return out


def sample_reblur_batch(clips, batch_size: int, patch_size: int, rng, augment: bool = True):
    """Sharp 5-frame stacks and the centre frame's blurred crop, from clips with ground truth."""
    stacks, targets = [], []
    for _ in range(batch_size):
        clip = clips[int(rng.integers(len(clips)))]
        n, (h, w) = len(clip), clip.frame_shape
        t = int(rng.integers(n))
        y = int(rng.integers(h - patch_size + 1))
        x = int(rng.integers(w - patch_size + 1))
        idx = stack_indices(t, n)
        stack = clip.sharp[idx, y:y + patch_size, x:x + patch_size]
        target = clip.blurred[t, y:y + patch_size, x:x + patch_size]
        if augment:
            stack, target = _augment([stack, target], rng)
        stacks.append(stack)
        targets.append(target)
    return to_tensor(np.stack(stacks)), to_tensor(np.stack(targets))


def _require_gt(clips):
    if not clips:
        raise ValueError("training needs at least one clip")
    missing = [c.id for c in clips if not c.has_gt]
    if missing:
        raise ValueError(f"clips without sharp ground truth: {missing}")


def pretrain_reblur(train_clips, cfg: ReblurTrainConfig | None = None, net_cfg: ReblurConfig | None = None,
                    net: ReblurNet | None = None, critic: Discriminator | None = None):
    """Supervised reblur pre-training: sharp 5-frame stacks -> blurred centre frame.

    Each step updates the critic with the WGAN-GP loss and then the reblurring
    network with Charbonnier plus ``adv_weight`` times the generator loss.
    Returns ``(net, critic, log)`` where ``log`` holds per-epoch mean losses.
    """
    cfg = cfg or ReblurTrainConfig()
    _require_gt(train_clips)
    net = net if net is not None else build_reblur(net_cfg, seed=cfg.seed)
    critic = critic if critic is not None else build_discriminator(seed=cfg.seed + 1)
    rng = np.random.default_rng(cfg.seed)
    tgen = torch_generator(rng)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    opt_d = torch.optim.Adam(critic.parameters(), lr=cfg.critic_lr, betas=(0.5, 0.9))
    total = max(cfg.epochs * cfg.steps_per_epoch, 1)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=total, eta_min=cfg.lr * 0.05)
    history = []
    for epoch in range(cfg.epochs):
        sums = {"charbonnier": 0.0, "generator": 0.0, "critic": 0.0}
        for _ in range(cfg.steps_per_epoch):
            stacks, targets = sample_reblur_batch(train_clips, cfg.batch_size, cfg.patch_size, rng, cfg.augment)
            fake = net(stacks)
            if cfg.adv_weight:
                d_loss, _ = critic_loss(critic, targets, fake, cfg.gp_weight, tgen)
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()
                sums["critic"] += d_loss.item()
            rec = charbonnier(fake, targets, cfg.eps)
            loss = rec
            if cfg.adv_weight:
                with frozen(critic):
                    g_loss = generator_loss(critic, fake)
                loss = rec + cfg.adv_weight * g_loss
                sums["generator"] += g_loss.item()
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            sums["charbonnier"] += rec.item()
        entry = {"epoch": epoch + 1, **{k: v / cfg.steps_per_epoch for k, v in sums.items()}}
        history.append(entry)
        log.info("reblur pretrain epoch %d: %s", epoch + 1, entry)
    return net, critic, history
