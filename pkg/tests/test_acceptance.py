"""The nine acceptance criteria, each at its stated tolerance.

Every test records a one-line PASS/FAIL verdict that is printed in the
"acceptance criteria" section at the end of the pytest run.
"""

import time

import numpy as np
import torch
from scipy.ndimage import gaussian_filter

from reblurmeta.deblurnet import build_deblur, deblur_forward
from reblurmeta.experiments import dumps_report, run_pipeline
from reblurmeta.imaging import crop_patch
from reblurmeta.losses import charbonnier
from reblurmeta.meta import AdaptedState, MetaConfig, adapt_deblur, build_support_set, deblur_frames, meta_test, meta_train
from reblurmeta.reblurnet import (CrossSelfAttention, ReblurConfig, build_discriminator, build_reblur,
                                  merge_windows, partition_windows, reblur_forward)
from reblurmeta.sharpness import select_pseudo_sharp, select_real_blurred, select_real_blurred_picks, self_shift_score
from reblurmeta.synthblur import FAMILY_A, SceneTemplate, make_dataset
from reblurmeta.torchutils import clone_module, states_equal, to_tensor

from conftest import clip_from_frames, loop_self_shift, record_verdict
from gradcheck import finite_difference, relative_errors, sample_entries


def test_criterion_1_self_shift_oracle():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    errors = [abs(self_shift_score(img) - loop_self_shift(img)) for img in rng.random((50, 32, 32, 3))]
    runtime = time.perf_counter() - start
    worst = max(errors)
    ok = worst <= 1e-6 and runtime < 10
    record_verdict(1, "self-shift score matches loop oracle", ok, f"max |diff| {worst:.2e} dB, {runtime:.1f} s")
    assert ok


def _retrieval_clip(rng):
    tex = gaussian_filter(rng.random((64, 64, 3)), sigma=(0.5, 0.5, 0))
    sharp_at = int(rng.integers(5))
    sigmas = rng.choice([1.0, 2.0, 3.0], size=5)
    frames = [tex if i == sharp_at else gaussian_filter(tex, sigma=(sigmas[i], sigmas[i], 0), mode="reflect")
              for i in range(5)]
    return clip_from_frames(frames), sharp_at


def test_criterion_2_sharp_frame_retrieval():
    start = time.perf_counter()
    sharp_hits = blurred_hits = 0
    for trial in range(100):
        clip, sharp_at = _retrieval_clip(np.random.default_rng(2000 + trial))
        sharp_hits += select_pseudo_sharp(clip, 1, 32, np.random.default_rng(trial))[0].frame_index == sharp_at
        pick = select_real_blurred_picks(clip, 1, 32, np.random.default_rng(trial))[0]
        patch = select_real_blurred(clip, 1, 32, np.random.default_rng(trial))[0]
        assert np.array_equal(patch, crop_patch(clip.blurred[pick.frame_index], pick.location))
        blurred_hits += pick.frame_index != sharp_at
    runtime = time.perf_counter() - start
    ok = sharp_hits >= 95 and blurred_hits >= 95 and runtime < 30
    record_verdict(2, "sharp-frame retrieval", ok,
                   f"pseudo-sharp {sharp_hits}/100, real-blurred {blurred_hits}/100, {runtime:.1f} s")
    assert ok


def _check_gradients(loss_fn, params, count, seed):
    grads = torch.autograd.grad(loss_fn(), params)
    entries = sample_entries(params, count, np.random.default_rng(seed))
    auto = np.array([grads[i].reshape(-1)[j].item() for i, j in entries])
    return relative_errors(auto, finite_difference(loss_fn, params, entries, h=1e-3), floor=1e-6).max()


def test_criterion_3_gradient_correctness():
    start = time.perf_counter()
    torch.manual_seed(3)
    cfg = ReblurConfig(T=5, C=4, r=2, n_blocks=1, heads=2, zero_init_residual=False)
    net = build_reblur(cfg, seed=3).double()
    stack = torch.rand(1, 5, 3, 8, 8, dtype=torch.float64)
    target = torch.rand(1, 3, 8, 8, dtype=torch.float64)
    reblur_err = _check_gradients(lambda: charbonnier(net(stack), target), list(net.parameters()), 40, 0)

    # one adapt_deblur step: the update equals -beta times the autodiff gradient ...
    deblur = build_deblur(8, 2, seed=4, zero_init_residual=False)
    mcfg = MetaConfig(beta=0.05, M=1, patch_size=8)
    clip = clip_from_frames(np.random.default_rng(5).random((5, 16, 16, 3)))
    support = build_support_set(clip, build_reblur(ReblurConfig(C=8, n_blocks=1, zero_init_residual=False), seed=6), mcfg,
                                np.random.default_rng(7))
    x, y = to_tensor(support[0].blurred[None]), to_tensor(support[0].sharp[None])
    ref = clone_module(deblur)
    grads = torch.autograd.grad(mcfg.loss(ref(x), y), list(ref.parameters()))
    state = adapt_deblur(support, AdaptedState.from_meta(net, build_discriminator(), deblur), mcfg)
    step_err = max(((new - old + mcfg.beta * g).abs().max() / (mcfg.beta * g).abs().max().clamp_min(1e-12)).item()
                   for new, old, g in zip(state.deblur.parameters(), deblur.parameters(), grads))
    # ... and that gradient matches central differences in float64
    net64 = clone_module(deblur).double()
    deblur_err = _check_gradients(lambda: mcfg.loss(net64(x.double()), y.double()), list(net64.parameters()), 20, 1)
    runtime = time.perf_counter() - start
    ok = reblur_err < 1e-2 and deblur_err < 1e-2 and step_err < 1e-3 and runtime < 120
    record_verdict(3, "autodiff matches finite differences", ok,
                   f"reblur max rel err {reblur_err:.1e}, deblur step {deblur_err:.1e}, {runtime:.1f} s")
    assert ok


def test_criterion_4_structural_invariants():
    torch.manual_seed(4)
    failures = []
    f = torch.randn(2, 5, 8, 8, 16)
    if not torch.equal(merge_windows(partition_windows(f, 2), 2, 8, 8), f):
        failures.append("window round trip")

    net = build_reblur(ReblurConfig(C=16, n_blocks=4, zero_init_residual=False), seed=4)
    for m in net.attention_modules():
        m.keep_probs = True
    net(torch.rand(2, 5, 3, 32, 32))
    worst_row = max((m.last_probs.sum(-1) - 1).abs().max().item() for m in net.attention_modules())
    if worst_row > 1e-5:
        failures.append(f"attention rows off by {worst_row:.1e}")

    csa = CrossSelfAttention(32)
    tokens = torch.randn(2, 5, 16, 32)
    out = csa(tokens, 2)
    if not all(torch.equal(out[:, t], tokens[:, t]) for t in (0, 1, 3, 4)):
        failures.append("CSA touched a non-centre frame")

    stack = np.random.default_rng(4).random((5, 32, 32, 3))
    if not np.array_equal(reblur_forward(stack, build_reblur(seed=5)), stack[2].astype(np.float32)):
        failures.append("zero-init reblur is not identity")
    frame = stack[0].astype(np.float32)
    if not np.array_equal(deblur_forward(frame, build_deblur(seed=5)), frame):
        failures.append("zero-init deblur is not identity")
    ok = not failures
    record_verdict(4, "structural invariants", ok,
                   "; ".join(failures) or f"max attention row error {worst_row:.1e}")
    assert ok, failures


def test_criterion_5_zero_rate_noop():
    template = SceneTemplate(height=32, width=32, frames=6, sprite_size_range=(8, 14), camera_margin=8)
    clips = make_dataset(FAMILY_A, 3, template, np.random.default_rng(50))
    reblur = build_reblur(ReblurConfig(C=8, n_blocks=1, zero_init_residual=False), seed=1)
    critic = build_discriminator(seed=2)
    deblur = build_deblur(8, 2, seed=3, zero_init_residual=False)
    before = [clone_module(m) for m in (reblur, critic, deblur)]
    cfg = MetaConfig(alpha=0.0, beta=0.0, M=3, patch_size=16, outer_frames=2, outer_patch=16)
    failures = []
    for epochs in (0, 1, 3):
        meta_reblur, meta_deblur, _ = meta_train(clips[:2], reblur, critic, deblur, cfg, epochs=epochs,
                                                 rng=np.random.default_rng(epochs))
        if not (states_equal(meta_reblur, reblur) and states_equal(meta_deblur, deblur)):
            failures.append(f"meta_train changed weights at {epochs} epochs")
        res = meta_test(clips[2], meta_reblur, meta_deblur, critic, cfg, np.random.default_rng(9))
        if not np.array_equal(res.frames, deblur_frames(deblur, clips[2].blurred)):
            failures.append(f"frames differ from baseline after {epochs} epochs")
        adapted = (res.state.reblur, res.state.critic, res.state.deblur)
        if not all(states_equal(a, b) for a, b in zip(adapted, before)):
            failures.append(f"adapted weights changed after {epochs} epochs")
    if not all(states_equal(a, b) for a, b in zip((reblur, critic, deblur), before)):
        failures.append("input weights changed")
    ok = not failures
    record_verdict(5, "zero-rate adaptation is a no-op", ok, "; ".join(failures) or "epochs 0, 1, 3")
    assert ok, failures


def test_criterion_6_adaptation_gain(desk_run):
    cfg, result = desk_run
    gain = result["gain"]["gain"]["meta"]["psnr"]
    runtime = result["runtime_seconds"]
    ok = gain > 0 and runtime < 30 * 60
    agg = result["gain"]["aggregate"]
    record_verdict(6, "meta-test gain over baseline on family B", ok,
                   f"baseline {agg['baseline']['psnr']:.4f} dB, meta {agg['meta']['psnr']:.4f} dB, "
                   f"gain {gain:+.4f} dB, full pipeline {runtime:.0f} s")
    assert ok


def test_criterion_7_meta_vs_fine_tune(desk_run):
    cfg, result = desk_run
    sweep = result["sweep"]
    curves, mean = sweep["curves"], sweep["mean_gain"]
    ok = (sweep["M"] == [1, 5, 10] and all(len(c) == 3 for c in curves.values())
          and mean["meta"] >= mean["fine_tune"] - 0.05 and result["runtime_seconds"] < 45 * 60)
    fmt = lambda c: "[" + ", ".join(f"{g:+.4f}" for g in c) + "]"  # noqa: E731
    record_verdict(7, "meta vs fine-tune over M", ok,
                   f"M={sweep['M']}, meta {fmt(curves['meta'])} mean {mean['meta']:+.4f}, "
                   f"fine-tune {fmt(curves['fine_tune'])} mean {mean['fine_tune']:+.4f} dB")
    assert ok


def test_criterion_8_loss_ablation(desk_run):
    cfg, result = desk_run
    table = result["ablation"]["gain"]
    ok = set(table) == {"gan", "cycle", "gan+cycle"} and all(np.isfinite(v["psnr"]) for v in table.values())
    record_verdict(8, "loss ablation table", ok,
                   ", ".join(f"{arm} {table[arm]['psnr']:+.4f} dB" for arm in ("gan", "cycle", "gan+cycle")))
    assert ok


def test_criterion_9_determinism(desk_run):
    cfg, first = desk_run
    second = run_pipeline(cfg)
    same = {key: dumps_report(first[key]) == dumps_report(second[key]) for key in ("gain", "sweep", "ablation")}
    ok = all(same.values())
    record_verdict(9, "byte-identical reports on rerun", ok, ", ".join(f"{k} {'same' if v else 'DIFFERS'}"
                                                                      for k, v in same.items()))
    assert ok
