import math
import time

import numpy as np
import pytest
import torch

from reblurmeta.synthblur import VideoClip


def loop_mse(a, b):
    """Brute-force mean squared error, one pixel and channel at a time."""
    total, count = 0.0, 0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            for c in range(a.shape[2]):
                d = float(a[i, j, c]) - float(b[i, j, c])
                total += d * d
                count += 1
    return total / count


def loop_psnr(a, b, cap=100.0):
    err = loop_mse(a, b)
    return cap if err == 0 else min(10.0 * math.log10(1.0 / err), cap)


def loop_shift_psnr(img, dx, dy):
    """PSNR between img and its (dx, dy) translate, pairing pixels explicitly on the overlap."""
    h, w = img.shape[:2]
    orig, moved = [], []
    for y in range(h):
        for x in range(w):
            sy, sx = y - dy, x - dx
            if 0 <= sy < h and 0 <= sx < w:
                orig.append(img[y, x])
                moved.append(img[sy, sx])
    return loop_psnr(np.array(orig)[:, None], np.array(moved)[:, None])


def loop_self_shift(img):
    return float(np.mean([loop_shift_psnr(img, dx, dy) for dx, dy in ((1, 0), (0, -1), (1, -1), (-1, -1))]))


def clip_from_frames(frames, sharp=None, clip_id="clip"):
    return VideoClip(np.asarray(frames, dtype=np.float64), None if sharp is None else np.asarray(sharp), id=clip_id)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


# a pipeline small enough to run end to end in seconds
TINY_CONFIG = dict(height=32, width=32, frames=6, n_train=2, n_test=2, reblur_channels=8, reblur_blocks=1,
                   deblur_channels=8, deblur_blocks=1, reblur_epochs=1, reblur_steps=2, deblur_epochs=1,
                   deblur_steps=2, batch_size=2, train_patch=16, meta_epochs=1, M=2, patch_size=16,
                   outer_frames=2, outer_patch=16, sweep_M=(1, 2))


# ---------------------------------------------------------------------------
# desk-scale pipeline shared by the acceptance and training checks

@pytest.fixture(scope="session")
def desk_run():
    from reblurmeta.experiments import ExperimentConfig, run_pipeline

    cfg = ExperimentConfig()
    start = time.perf_counter()
    result = run_pipeline(cfg)
    result["runtime_seconds"] = time.perf_counter() - start
    return cfg, result


# one line per acceptance criterion, printed at the end of the run
VERDICTS = {}


def record_verdict(number, name, passed, detail=""):
    VERDICTS[number] = f"criterion {number} {'PASS' if passed else 'FAIL'}: {name}" + (f" ({detail})" if detail else "")
    return passed


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[number])
