import numpy as np
import pytest
import torch

from reblurmeta.deblurnet import (
    DeblurLossSpec,
    DeblurTrainConfig,
    build_deblur,
    deblur_forward,
    pretrain_deblur,
    sample_pair_batch,
)
from reblurmeta.synthblur import FAMILY_A, VideoClip, make_dataset
from reblurmeta.torchutils import states_equal


def test_zero_init_is_identity(rng):
    net = build_deblur()
    img = rng.random((24, 20, 3))
    np.testing.assert_array_equal(deblur_forward(img, net), img.astype(np.float32))


@pytest.mark.parametrize("shape", [(64, 64), (96, 64)])
def test_shape_preserved(shape, rng):
    net = build_deblur(zero_init_residual=False, seed=1)
    out = deblur_forward(rng.random(shape + (3,)), net)
    assert out.shape == shape + (3,) and out.min() >= 0 and out.max() <= 1
    batch = deblur_forward(rng.random((2,) + shape + (3,)), net)
    assert batch.shape == (2,) + shape + (3,)


def test_forward_deterministic(rng):
    net = build_deblur(zero_init_residual=False, seed=2)
    img = rng.random((16, 16, 3))
    np.testing.assert_array_equal(deblur_forward(img, net), deblur_forward(img, net))


def test_loss_spec():
    with pytest.raises(ValueError):
        DeblurLossSpec("l2")(torch.zeros(1), torch.zeros(1))
    assert DeblurLossSpec()(torch.zeros(4), torch.zeros(4)).item() == pytest.approx(1e-3)


def test_augmentation_keeps_pairs_aligned():
    clips = make_dataset(FAMILY_A, 1, rng=np.random.default_rng(0))
    rng = np.random.default_rng(0)
    b, s = sample_pair_batch(clips, 6, 16, rng, augment=True)
    assert b.shape == s.shape == (6, 3, 16, 16)


def test_zero_epochs_is_noop():
    clips = make_dataset(FAMILY_A, 1, rng=np.random.default_rng(0))
    init = build_deblur(seed=5)
    net, history = pretrain_deblur(clips, DeblurTrainConfig(epochs=0, seed=5))
    assert history == [] and states_equal(net, init)


def test_same_seed_same_weights():
    clips = make_dataset(FAMILY_A, 1, rng=np.random.default_rng(0))
    cfg = DeblurTrainConfig(epochs=1, steps_per_epoch=3, batch_size=2, patch_size=16, seed=9)
    a, _ = pretrain_deblur(clips, cfg, channels=8, n_blocks=1)
    b, _ = pretrain_deblur(clips, cfg, channels=8, n_blocks=1)
    assert states_equal(a, b)


def test_missing_gt_and_empty():
    with pytest.raises(ValueError):
        pretrain_deblur([VideoClip(np.zeros((2, 16, 16, 3)))], DeblurTrainConfig(epochs=1))
    with pytest.raises(ValueError):
        pretrain_deblur([], DeblurTrainConfig(epochs=1))
