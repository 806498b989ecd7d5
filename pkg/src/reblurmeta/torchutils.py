"""Small torch helpers shared by the networks and the meta-learning loop."""

from __future__ import annotations

import copy
import hashlib
from contextlib import contextmanager

import numpy as np
import torch


def to_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """(..., H, W, 3) array -> (..., 3, H, W) tensor."""
    arr = np.asarray(images)
    t = torch.as_tensor(np.ascontiguousarray(arr), dtype=dtype)
    return t.movedim(-1, -3).contiguous()


def to_numpy(t: torch.Tensor) -> np.ndarray:
    """(..., 3, H, W) tensor -> (..., H, W, 3) float64 array."""
    return t.detach().movedim(-3, -1).to(torch.float64).cpu().numpy()


def seeded_init(factory, seed: int):
    """Build a module under its own seed without disturbing the global torch RNG."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return factory()


def clone_module(module: torch.nn.Module) -> torch.nn.Module:
    return copy.deepcopy(module)


@contextmanager
def frozen(*modules):
    """Temporarily stop gradients from reaching the parameters of ``modules``."""
    params = [p for m in modules for p in m.parameters()]
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad_(flag)


def sgd_step(params, grads, lr: float) -> None:
    """In-place ``p <- p - lr * g``; ``None`` gradients leave a parameter untouched."""
    with torch.no_grad():
        for p, g in zip(params, grads):
            if g is not None:
                p.sub_(g, alpha=lr)


def grads_of(loss: torch.Tensor, module: torch.nn.Module):
    params = [p for p in module.parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return params, grads


def state_digest(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().numpy().tobytes())
    return h.hexdigest()[:16]


def states_equal(a: torch.nn.Module, b: torch.nn.Module) -> bool:
    sa, sb = a.state_dict(), b.state_dict()
    return sa.keys() == sb.keys() and all(torch.equal(sa[k], sb[k]) for k in sa)


def torch_generator(rng: np.random.Generator) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(rng.integers(2 ** 62)))
    return g
