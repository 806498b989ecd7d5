"""Reblur-deblur meta-transfer: per-video inner adaptation and first-order outer updates.

One video is one task.  Inner loop, given only the blurred frames:

1. pick ``M`` pseudo-sharp patches (lowest self-shift score among colocated
   patches) and ``M`` real blurred patches (highest score);
2. for each pick, reblur its 5-frame stack, take a WGAN-GP critic step, then
   a reblur step on ``generator_loss + lam * cycle_loss`` (rate ``alpha``);
3. regenerate the pseudo-blurred patches with the adapted reblurrer and take
   one deblur step per pair (rate ``beta``).

Meta-training then evaluates the adapted reblur/deblur weights on ground-truth
query frames and applies those gradients directly to the meta weights.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .deblurnet import DeblurLossSpec
from .imaging import InvalidImageError, PatchLocation
from .losses import CHARBONNIER_EPS, adversarial_losses, charbonnier, critic_loss, generator_loss
from .sharpness import (
    ColocatedStack,
    colocated_stack,
    random_locations,
    select_pseudo_sharp,
    select_real_blurred,
    stack_indices,
)
from .torchutils import (
    clone_module,
    frozen,
    grads_of,
    sgd_step,
    state_digest,
    to_numpy,
    to_tensor,
    torch_generator,
)

log = logging.getLogger(__name__)

REBLUR_LOSS_ARMS = ("gan+cycle", "gan", "cycle")

__all__ = [
    "MetaConfig", "PseudoPair", "AdaptedState", "AdaptationResult", "adversarial_losses",
    "cycle_loss", "adapt_reblur", "build_support_set", "adapt_deblur", "first_order_update",
    "outer_update", "meta_train", "meta_test", "fine_tune", "deblur_frames",
]


@dataclass
class MetaConfig:
    alpha: float = 1e-6      # reblur and critic step size
    beta: float = 2.5e-6     # deblur step size
    lam: float = 0.01        # cycle-loss weight
    M: int = 10              # support-set size
    patch_size: int = 32
    inner_iters: int = 1     # passes over the M pairs
    outer_frames: int = 8
    outer_patch: int = 64
    gp_weight: float = 10.0
    reblur_losses: str = "gan+cycle"
    eps: float = CHARBONNIER_EPS
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.lam < 0:
            raise ValueError("alpha, beta and lam must be nonnegative")
        if self.M < 1:
            raise ValueError(f"support-set size M must be at least 1, got {self.M}")
        if self.reblur_losses not in REBLUR_LOSS_ARMS:
            raise ValueError(f"reblur_losses must be one of {REBLUR_LOSS_ARMS}, got {self.reblur_losses!r}")

    @property
    def use_gan(self) -> bool:
        return self.reblur_losses in ("gan+cycle", "gan")

    @property
    def use_cycle(self) -> bool:
        return self.reblur_losses in ("gan+cycle", "cycle") and self.lam > 0

    @property
    def loss(self) -> DeblurLossSpec:
        return DeblurLossSpec(eps=self.eps)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PseudoPair:
    sharp: np.ndarray
    blurred: np.ndarray
    location: PatchLocation
    stack: ColocatedStack
    frame_index: int


@dataclass
class AdaptedState:
    """Per-video working copies of the reblur, critic and deblur weights.

    The adaptation functions update these modules in place.
    """

    reblur: torch.nn.Module
    critic: torch.nn.Module
    deblur: torch.nn.Module
    provenance: dict = field(default_factory=dict)
    picks: list = field(default_factory=list)
    log: list = field(default_factory=list)

    @classmethod
    def from_meta(cls, reblur, critic, deblur, video_id: str = "") -> "AdaptedState":
        provenance = {
            "video": video_id,
            "reblur": state_digest(reblur),
            "critic": state_digest(critic),
            "deblur": state_digest(deblur),
        }
        return cls(clone_module(reblur), clone_module(critic), clone_module(deblur), provenance)

    def record(self, name: str, value: float) -> None:
        self.log.append({"step": len(self.log), "loss": name, "value": float(value)})


@dataclass
class AdaptationResult:
    deblur: torch.nn.Module
    frames: np.ndarray
    support: list
    state: AdaptedState

    @property
    def log(self) -> list:
        return self.state.log


def _stack_tensor(stacks) -> torch.Tensor:
    return to_tensor(np.stack([s.as_array() for s in stacks]))


def cycle_loss(blurred: torch.Tensor, sharp: torch.Tensor, deblur, loss: DeblurLossSpec | None = None) -> torch.Tensor:
    """Deblurring the pseudo-blurred patch should give back its pseudo-sharp source.

    The deblur weights are frozen, so gradients reach only whatever produced
    ``blurred``.
    """
    loss = loss or DeblurLossSpec()
    with frozen(deblur):
        return loss(deblur(blurred), sharp)


def _reblur_picks(clip, cfg: MetaConfig, rng):
    picks = select_pseudo_sharp(clip, cfg.M, cfg.patch_size, rng)
    real = select_real_blurred(clip, cfg.M, cfg.patch_size, rng) if cfg.use_gan else []
    return picks, real


def adapt_reblur(clip, state: AdaptedState, cfg: MetaConfig, rng: np.random.Generator, picks=None, real=None):
    """Adapt the critic and reblurrer of ``state`` to ``clip`` using M pseudo-sharp picks.

    ``picks``/``real`` override the self-shift selection (used for paired runs).
    """
    h, w = clip.frame_shape
    if cfg.patch_size > min(h, w):
        raise InvalidImageError(f"patch size {cfg.patch_size} too large for {h}x{w} frames")
    if picks is None:
        picks, real = _reblur_picks(clip, cfg, rng)
    elif real is None and cfg.use_gan:
        real = select_real_blurred(clip, len(picks), cfg.patch_size, rng)
    state.picks = list(picks)
    tgen = torch_generator(rng)
    stacks = [colocated_stack(clip, p) for p in picks]
    reblur_params = [p for p in state.reblur.parameters()]
    critic_params = [p for p in state.critic.parameters()]
    for _ in range(cfg.inner_iters):
        for m, stack in enumerate(stacks):
            x = _stack_tensor([stack])
            sharp = x[:, stack.center_index]
            fake = state.reblur(x)
            total = fake.new_zeros(())
            if cfg.use_gan:
                real_t = to_tensor(real[m][None])
                d_loss, _ = critic_loss(state.critic, real_t, fake, cfg.gp_weight, tgen)
                d_grads = torch.autograd.grad(d_loss, critic_params)
                sgd_step(critic_params, d_grads, cfg.alpha)
                state.record("critic", d_loss.item())
                with frozen(state.critic):
                    g_loss = generator_loss(state.critic, fake)
                total = total + g_loss
                state.record("generator", g_loss.item())
            if cfg.use_cycle:
                c_loss = cycle_loss(fake, sharp, state.deblur, cfg.loss)
                total = total + cfg.lam * c_loss
                state.record("cycle", c_loss.item())
            if total.requires_grad:
                grads = torch.autograd.grad(total, reblur_params, allow_unused=True)
                sgd_step(reblur_params, grads, cfg.alpha)
            state.record("reblur_total", total.item())
    return state


def build_support_set(clip, reblur, cfg: MetaConfig, rng: np.random.Generator | None = None, picks=None):
    """Pseudo pairs from the (adapted) reblurrer; blurred patches are detached arrays."""
    if picks is None:
        if rng is None:
            raise ValueError("either picks or rng is required")
        picks = select_pseudo_sharp(clip, cfg.M, cfg.patch_size, rng)
    stacks = [colocated_stack(clip, p) for p in picks]
    with torch.no_grad():
        blurred = to_numpy(reblur(_stack_tensor(stacks)))
    return [PseudoPair(sharp=s.center, blurred=b, location=p.location, stack=s, frame_index=p.frame_index)
            for p, s, b in zip(picks, stacks, blurred)]


def adapt_deblur(support, state: AdaptedState, cfg: MetaConfig) -> AdaptedState:
    """Sequential SGD on the support pairs, one step of rate ``beta`` per pair per pass."""
    if not support:
        raise ValueError("support set is empty")
    params = list(state.deblur.parameters())
    loss = cfg.loss
    for _ in range(cfg.inner_iters):
        for pair in support:
            value = loss(state.deblur(to_tensor(pair.blurred[None])), to_tensor(pair.sharp[None]))
            grads = torch.autograd.grad(value, params)
            sgd_step(params, grads, cfg.beta)
            state.record("deblur", value.item())
    return state


def first_order_update(meta_module, adapted_module, loss: torch.Tensor, rate: float) -> None:
    """Step the meta weights along the gradient of ``loss`` taken at the adapted weights."""
    params, grads = grads_of(loss, adapted_module)
    meta_params = [p for p in meta_module.parameters() if p.requires_grad]
    if len(meta_params) != len(params):
        raise ValueError("meta and adapted modules have different parameter sets")
    sgd_step(meta_params, grads, rate)


def query_crops(clip, cfg: MetaConfig, rng: np.random.Generator, unit: int = 8):
    """Frame indices and square crop locations for the outer update."""
    h, w = clip.frame_shape
    size = min(cfg.outer_patch, h, w) // unit * unit
    if size < unit:
        raise InvalidImageError(f"frames {h}x{w} too small for query crops")
    n = len(clip)
    frames = np.sort(rng.choice(n, size=min(cfg.outer_frames, n), replace=False))
    locs = random_locations(h, w, len(frames), size, rng)
    return [int(f) for f in frames], locs


def outer_update(clip, adapted: AdaptedState, meta_reblur, meta_deblur, cfg: MetaConfig,
                 rng: np.random.Generator) -> dict:
    """First-order meta-update of ``meta_reblur``/``meta_deblur`` (in place) from GT query crops.

    The critic's meta weights are never touched.  Returns the two query losses.
    """
    if not clip.has_gt:
        raise ValueError(f"clip {clip.id} has no ground truth for the query set")
    frames, locs = query_crops(clip, cfg, rng, unit=adapted.reblur.cfg.downsample * adapted.reblur.cfg.r)
    n = len(clip)
    stacks, blurred, sharp = [], [], []
    for t, loc in zip(frames, locs):
        ys, xs = slice(loc.y, loc.y + loc.size), slice(loc.x, loc.x + loc.size)
        stacks.append(clip.sharp[stack_indices(t, n), ys, xs])
        blurred.append(clip.blurred[t, ys, xs])
        sharp.append(clip.sharp[t, ys, xs])
    stacks, blurred, sharp = to_tensor(np.stack(stacks)), to_tensor(np.stack(blurred)), to_tensor(np.stack(sharp))

    reblur_loss = charbonnier(adapted.reblur(stacks), blurred, cfg.eps)
    first_order_update(meta_reblur, adapted.reblur, reblur_loss, cfg.alpha)
    deblur_loss = cfg.loss(adapted.deblur(blurred), sharp)
    first_order_update(meta_deblur, adapted.deblur, deblur_loss, cfg.beta)
    return {"query_reblur": reblur_loss.item(), "query_deblur": deblur_loss.item()}


def deblur_frames(net, frames) -> np.ndarray:
    with torch.no_grad():
        return to_numpy(net(to_tensor(np.asarray(frames))))


def _adapt(clip, reblur, critic, deblur, cfg: MetaConfig, rng):
    state = AdaptedState.from_meta(reblur, critic, deblur, clip.id)
    adapt_reblur(clip, state, cfg, rng)
    support = build_support_set(clip, state.reblur, cfg, picks=state.picks)
    adapt_deblur(support, state, cfg)
    return state, support


def meta_train(train_clips, reblur, critic, deblur, cfg: MetaConfig, epochs: int = 1,
               rng: np.random.Generator | None = None):
    """Meta-train copies of the pre-trained reblur/deblur weights; the critic stays fixed.

    Returns ``(meta_reblur, meta_deblur, log)`` with one log entry per video visit.
    """
    if not train_clips:
        raise ValueError("meta-training needs at least one video")
    missing = [c.id for c in train_clips if not c.has_gt]
    if missing:
        raise ValueError(f"clips without sharp ground truth: {missing}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    meta_reblur, meta_deblur = clone_module(reblur), clone_module(deblur)
    history = []
    for epoch in range(epochs):
        for i in rng.permutation(len(train_clips)):
            clip = train_clips[int(i)]
            state, support = _adapt(clip, meta_reblur, critic, meta_deblur, cfg, rng)
            losses = outer_update(clip, state, meta_reblur, meta_deblur, cfg, rng)
            entry = {"epoch": epoch + 1, "video": clip.id, **losses,
                     "inner_deblur_last": state.log[-1]["value"] if state.log else None}
            history.append(entry)
            log.info("meta-train %s", entry)
    return meta_reblur, meta_deblur, history


def meta_test(clip, reblur, deblur, critic, cfg: MetaConfig, rng: np.random.Generator) -> AdaptationResult:
    """Adapt copies of the meta weights to one video and deblur all of its frames."""
    state, support = _adapt(clip, reblur, critic, deblur, cfg, rng)
    return AdaptationResult(state.deblur, deblur_frames(state.deblur, clip.blurred), support, state)


def fine_tune(clip, reblur, deblur, critic, cfg: MetaConfig, rng: np.random.Generator | None = None,
              support=None) -> AdaptationResult:
    """Same adaptation as :func:`meta_test` but from pre-trained weights.

    With ``support`` given, the reblur stage is skipped and the deblurrer is
    adapted on exactly those pairs, which makes paired comparisons share one
    support set.
    """
    if support is None:
        if rng is None:
            raise ValueError("either support or rng is required")
        return meta_test(clip, reblur, deblur, critic, cfg, rng)
    state = AdaptedState.from_meta(reblur, critic, deblur, clip.id)
    adapt_deblur(support, state, cfg)
    return AdaptationResult(state.deblur, deblur_frames(state.deblur, clip.blurred), support, state)
