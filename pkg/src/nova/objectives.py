"""Training losses: MSE alignment, its weighted combination with the
distributional regularizer, and the InfoNCE / SigLIP contrastive baselines.

All losses are plain differentiable functions of tensors; temperature and
bias are passed in by the caller (the trainer owns them as parameters).
Contrastive losses expect pre-normalized rows and check that precondition.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

_NORM_TOL = 1e-6


def alignment_mse(preds: torch.Tensor, anchors: torch.Tensor) -> torch.Tensor:
    """Element mean of (prediction - anchor)^2 with the anchor broadcast
    across the view axis.

    ``preds`` is (views, B, D) or (B, D); ``anchors`` is (B, D).
    """
    if preds.ndim == 2:
        preds = preds.unsqueeze(0)
    if preds.ndim != 3 or anchors.ndim != 2:
        raise ValueError(
            f"expected preds (views, B, D) and anchors (B, D), got {tuple(preds.shape)} and {tuple(anchors.shape)}"
        )
    if preds.shape[1:] != anchors.shape:
        raise ValueError(f"shape mismatch: preds {tuple(preds.shape)} vs anchors {tuple(anchors.shape)}")
    return (preds - anchors.unsqueeze(0)).square().mean()


def nova_loss(mse, sig, lam: float):
    """(1 - lam) * mse + lam * sig for lam in [0, 1]."""
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"loss weight must lie in [0, 1], got {lam}")
    return (1.0 - lam) * mse + lam * sig


def _check_normalized(x: torch.Tensor, name: str) -> None:
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty (B, D) matrix")
    norms = torch.linalg.vector_norm(x.detach(), dim=1)
    if not bool(torch.all((norms - 1.0).abs() <= _NORM_TOL)):
        raise ValueError(f"{name} rows must be l2-normalized within {_NORM_TOL}")


def _tau_value(tau) -> None:
    t = float(tau.detach() if isinstance(tau, torch.Tensor) else tau)
    if not t > 0:
        raise ValueError(f"temperature must be positive, got {t}")


def infonce_loss(v: torch.Tensor, t: torch.Tensor, tau) -> torch.Tensor:
    """Symmetric InfoNCE over a batch of matched pairs: mean of the
    image-to-text and text-to-image cross-entropy terms, each row's match
    being the same-index row on the other side."""
    _check_normalized(v, "v")
    _check_normalized(t, "t")
    if v.shape != t.shape:
        raise ValueError(f"shape mismatch: {tuple(v.shape)} vs {tuple(t.shape)}")
    _tau_value(tau)
    logits = (v @ t.T) / tau
    labels = torch.arange(v.shape[0], device=v.device)
    i2t = F.cross_entropy(logits, labels)
    t2i = F.cross_entropy(logits.T, labels)
    return 0.5 * (i2t + t2i)


def siglip_loss(v: torch.Tensor, t: torch.Tensor, tau, bias) -> torch.Tensor:
    """Pairwise sigmoid loss: every (i, j) pair is an independent binary
    problem, label +1 on the diagonal and -1 off it; mean over all B^2
    pairs of -log sigmoid(y * sim * tau + bias)."""
    _check_normalized(v, "v")
    _check_normalized(t, "t")
    if v.shape != t.shape:
        raise ValueError(f"shape mismatch: {tuple(v.shape)} vs {tuple(t.shape)}")
    _tau_value(tau)
    sims = v @ t.T
    y = 2.0 * torch.eye(v.shape[0], dtype=v.dtype, device=v.device) - 1.0
    return -F.logsigmoid(y * sims * tau + bias).mean()
