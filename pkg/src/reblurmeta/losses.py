"""Charbonnier reconstruction loss and WGAN-GP critic/generator losses."""

from __future__ import annotations

import torch

CHARBONNIER_EPS = 1e-3


def charbonnier(x, y, eps: float = CHARBONNIER_EPS) -> torch.Tensor:
    """Mean of ``sqrt((x - y)^2 + eps^2)`` over every element."""
    x = torch.as_tensor(x)
    y = torch.as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    return torch.sqrt((x - y) ** 2 + eps * eps).mean()


def gradient_penalty(critic, real: torch.Tensor, fake: torch.Tensor,
                     generator: torch.Generator | None = None) -> torch.Tensor:
    """Mean of ``(||grad critic(x_hat)||_2 - 1)^2`` on random real/fake interpolates.

    The graph is kept so the penalty can be differentiated w.r.t. the critic.
    """
    n = real.shape[0]
    eps = torch.rand((n,) + (1,) * (real.dim() - 1), generator=generator, dtype=real.dtype)
    x_hat = (eps * real + (1 - eps) * fake).detach().requires_grad_(True)
    scores = critic(x_hat)
    (grad,) = torch.autograd.grad(scores.sum(), x_hat, create_graph=True)
    norms = grad.flatten(1).norm(dim=1)
    return ((norms - 1.0) ** 2).mean()


def critic_loss(critic, real: torch.Tensor, fake: torch.Tensor, gp_weight: float = 10.0,
                generator: torch.Generator | None = None):
    """WGAN-GP critic objective ``mean(D(fake)) - mean(D(real)) + gp_weight * GP``; returns (loss, gp)."""
    if real.shape[0] == 0 or fake.shape[0] == 0:
        raise ValueError("adversarial losses need non-empty real and fake batches")
    if real.shape[1:] != fake.shape[1:]:
        raise ValueError(f"real {tuple(real.shape)} and fake {tuple(fake.shape)} patch shapes differ")
    fake = fake.detach()
    gp = gradient_penalty(critic, real, fake, generator) if gp_weight else real.new_zeros(())
    return critic(fake).mean() - critic(real).mean() + gp_weight * gp, gp


def generator_loss(critic, fake: torch.Tensor) -> torch.Tensor:
    return -critic(fake).mean()


def adversarial_losses(critic, real: torch.Tensor, fake: torch.Tensor, gp_weight: float = 10.0,
                       generator: torch.Generator | None = None):
    """Return ``(critic_loss, generator_loss, gp)``.

    The critic term sees ``fake`` detached; the generator term keeps the graph
    through ``fake`` so it can drive the generator.
    """
    c_loss, gp = critic_loss(critic, real, fake, gp_weight, generator)
    return c_loss, generator_loss(critic, fake), gp
