"""Central finite-difference oracle for sampled scalar parameters."""

import numpy as np
import torch


def sample_entries(params, count, rng):
    """``count`` (param index, flat index) pairs, spread over all parameter tensors."""
    sizes = np.array([p.numel() for p in params])
    flat = rng.choice(sizes.sum(), size=count, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    out = []
    for f in flat:
        i = int(np.searchsorted(offsets, f, side="right") - 1)
        out.append((i, int(f - offsets[i])))
    return out


def finite_difference(loss_fn, params, entries, h=1e-3):
    grads = []
    for i, j in entries:
        p = params[i].data.view(-1)
        orig = p[j].item()
        with torch.no_grad():
            p[j] = orig + h
            up = loss_fn().item()
            p[j] = orig - h
            down = loss_fn().item()
            p[j] = orig
        grads.append((up - down) / (2 * h))
    return np.array(grads)


def relative_errors(auto, numeric, floor=1e-8):
    return np.abs(auto - numeric) / np.maximum(np.maximum(np.abs(auto), np.abs(numeric)), floor)
