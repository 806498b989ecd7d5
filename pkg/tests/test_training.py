"""Properties measured on the desk-scale pipeline's trained networks."""

import numpy as np
import pytest
import torch

from reblurmeta.deblurnet import deblur_forward
from reblurmeta.experiments import derive_rng
from reblurmeta.imaging import psnr
from reblurmeta.losses import charbonnier
from reblurmeta.meta import build_support_set, meta_test
from reblurmeta.sharpness import random_locations, select_real_blurred, self_shift_score, stack_indices
from reblurmeta.synthblur import FAMILY_A, make_dataset
from reblurmeta.torchutils import to_tensor


@pytest.fixture(scope="module")
def heldout(desk_run):
    cfg, _ = desk_run
    return make_dataset(FAMILY_A, 4, cfg.template(), derive_rng(cfg.seed, "data/heldout"))


@pytest.fixture(scope="module")
def pretrained(desk_run):
    return desk_run[1]["models"]["pretrained"]


def test_reblur_beats_identity_on_heldout_patches(desk_run, heldout, pretrained):
    cfg, _ = desk_run
    rng = np.random.default_rng(0)
    wins = total = 0
    for clip in heldout:
        n = len(clip)
        for t in range(n):
            for loc in random_locations(cfg.height, cfg.width, 3, 32, rng):
                ys, xs = slice(loc.y, loc.y + 32), slice(loc.x, loc.x + 32)
                stack = to_tensor(clip.sharp[stack_indices(t, n), ys, xs][None])
                target = to_tensor(clip.blurred[t, ys, xs][None])
                with torch.no_grad():
                    fake = pretrained.reblur(stack)
                # the Charbonnier constant the reblurrer was trained with
                wins += charbonnier(fake, target, cfg.loss_eps) < charbonnier(stack[:, 2], target, cfg.loss_eps)
                total += 1
    assert wins / total >= 0.8, f"reblurrer beats identity on {wins}/{total} patches"


def test_deblur_beats_identity_on_heldout_frames(heldout, pretrained):
    out = [psnr(deblur_forward(f, pretrained.deblur), s) for c in heldout for f, s in zip(c.blurred, c.sharp)]
    base = [psnr(f, s) for c in heldout for f, s in zip(c.blurred, c.sharp)]
    assert np.mean(out) > np.mean(base)


def test_training_losses_fall(pretrained):
    rb, db = pretrained.logs["reblur"], pretrained.logs["deblur"]
    assert rb[-1]["charbonnier"] < rb[0]["charbonnier"]
    assert db[-1]["loss"] < db[0]["loss"]


def test_support_set_is_blurrier_than_sources(desk_run, pretrained):
    cfg, result = desk_run
    blurred, sharp = [], []
    for clip in result["data"]["test"]:
        for pair in build_support_set(clip, pretrained.reblur, cfg.meta(), derive_rng(cfg.seed, f"support/{clip.id}")):
            blurred.append(self_shift_score(pair.blurred))
            sharp.append(self_shift_score(pair.sharp))
    assert np.mean(blurred) > np.mean(sharp)


def _adversarial_state(reblur, critic, stacks, real):
    with torch.no_grad():
        fake_scores = critic(reblur(stacks))
        real_scores = critic(real)
    return abs(fake_scores.mean() - real_scores.mean()).item(), -fake_scores.mean().item()


def test_adversarial_adaptation_moves_the_right_way(desk_run):
    """Over the M inner steps the critic gap or the generator loss goes down, measured on the same patches."""
    cfg, result = desk_run
    meta = result["models"]["meta"]
    gap_before, gap_after, gen_before, gen_after = [], [], [], []
    for clip in result["data"]["test"]:
        res = meta_test(clip, meta.reblur, meta.deblur, meta.critic, cfg.meta(),
                        derive_rng(cfg.seed, f"select/{clip.id}"))
        assert [e["loss"] for e in res.log].count("generator") == cfg.M
        stacks = torch.cat([to_tensor(p.stack.as_array()[None]) for p in res.support])
        real = to_tensor(np.stack(select_real_blurred(clip, cfg.M, cfg.patch_size, np.random.default_rng(1))))
        g0, l0 = _adversarial_state(meta.reblur, meta.critic, stacks, real)
        g1, l1 = _adversarial_state(res.state.reblur, res.state.critic, stacks, real)
        gap_before.append(g0), gap_after.append(g1), gen_before.append(l0), gen_after.append(l1)
    assert np.mean(gap_after) < np.mean(gap_before) or np.mean(gen_after) < np.mean(gen_before), (
        gap_before, gap_after, gen_before, gen_after)
