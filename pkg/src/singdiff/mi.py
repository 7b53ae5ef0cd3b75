"""Sample-based upper-bound estimator for speaker/style mutual information.

A diagonal-Gaussian variational network q(sty | spk) is fit by maximum
likelihood on embedding pairs; the contrastive log-ratio of matched vs
mismatched pairs then upper-bounds the mutual information. The estimate
is minimized through the embeddings while q's own parameters are updated
only by its likelihood objective, never by the estimate.
"""
from __future__ import annotations

import math

import torch
from torch import nn

LOGVAR_CLAMP = 10.0
_LOG_2PI = math.log(2.0 * math.pi)


class VariationalApprox(nn.Module):
    """q(sty | spk): mean and log-variance, each one affine map."""

    def __init__(self, dim: int = 32):
        super().__init__()
        self.dim = dim
        self.mean_map = nn.Linear(dim, dim)
        self.logvar_map = nn.Linear(dim, dim)

    def _params(self, spk: torch.Tensor):
        mean = self.mean_map(spk)
        logvar = self.logvar_map(spk).clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)
        return mean, logvar

    @staticmethod
    def _check_batch(spk: torch.Tensor, sty: torch.Tensor):
        if spk.ndim != 2 or sty.ndim != 2 or spk.shape != sty.shape:
            raise ValueError(
                f"expected matching [N x E] batches, got {tuple(spk.shape)} and {tuple(sty.shape)}"
            )
        if spk.shape[0] < 1:
            raise ValueError("empty batch")


def q_loglik(q: VariationalApprox, spk: torch.Tensor, sty: torch.Tensor) -> torch.Tensor:
    """(1/N) sum_i log q(sty_i | spk_i) under the diagonal Gaussian."""
    q._check_batch(spk, sty)
    mean, logvar = q._params(spk)
    ll = -0.5 * (((sty - mean) ** 2) / logvar.exp() + logvar + _LOG_2PI)
    return ll.sum(dim=1).mean()


def vclub_estimate(q: VariationalApprox, spk: torch.Tensor, sty: torch.Tensor) -> torch.Tensor:
    """(1/N^2) sum_ij [log q(sty_i|spk_i) - log q(sty_j|spk_i)].

    Gradients flow to the embeddings; q's parameters are frozen for the
    duration of the evaluation so no estimate gradient can ever reach them.
    """
    q._check_batch(spk, sty)
    frozen = [p for p in q.parameters() if p.requires_grad]
    for p in frozen:
        p.requires_grad_(False)
    try:
        mean, logvar = q._params(spk)                       # [N, E]
        diff = sty[None, :, :] - mean[:, None, :]           # [i, j, E]
        ll = -0.5 * (diff ** 2 / logvar.exp()[:, None, :]
                     + logvar[:, None, :] + _LOG_2PI)
        mat = ll.sum(dim=2)                                 # [i, j]: log q(sty_j | spk_i)
        estimate = mat.diagonal().mean() - mat.mean()
    finally:
        for p in frozen:
            p.requires_grad_(True)
    return estimate


def update_q(q: VariationalApprox, spk: torch.Tensor, sty: torch.Tensor,
             optimizer: torch.optim.Optimizer) -> float:
    """One likelihood-ascent step on q.

    Inputs are detached first so the main model cannot receive gradients
    from this phase. Returns the post-detach log-likelihood value."""
    spk = spk.detach()
    sty = sty.detach()
    optimizer.zero_grad()
    ll = q_loglik(q, spk, sty)
    (-ll).backward()
    optimizer.step()
    return float(ll.detach())
