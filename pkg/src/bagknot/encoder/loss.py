"""InfoNCE over unit-norm point features."""
from __future__ import annotations

import numpy as np
import torch

from ..errors import InputError

UNIT_TOL = 1e-3


def _check_unit(x: torch.Tensor, name: str):
    dev = (x.detach().norm(dim=-1) - 1.0).abs()
    if dev.numel() and float(dev.max()) > UNIT_TOL:
        raise InputError(f"{name} rows must be unit-norm (max deviation {float(dev.max()):.2e})")


def infonce_terms(anchor, pos, neg, tau: float, check: bool = True) -> torch.Tensor:
    """Per-anchor losses for anchor/pos of shape (..., d) and neg of shape (..., m, d).

    The positive similarity appears in the denominator as well as the
    numerator, so every term is strictly positive.
    """
    if tau <= 0:
        raise InputError("temperature must be positive")
    if check:
        _check_unit(anchor, "anchor")
        _check_unit(pos, "positive")
        _check_unit(neg, "negative")
    s_pos = (anchor * pos).sum(-1, keepdim=True) / tau
    s_neg = torch.einsum("...d,...md->...m", anchor, neg) / tau
    logits = torch.cat([s_pos, s_neg], dim=-1)
    return torch.logsumexp(logits, dim=-1) - s_pos.squeeze(-1)


def infonce_loss(anchor_feat, pos_feat, neg_feats, tau: float = 0.07):
    """Scalar InfoNCE for one anchor.

    Accepts numpy arrays (evaluated in float64, returns a float) or torch
    tensors (returns a differentiable 0-d tensor).
    """
    as_numpy = not isinstance(anchor_feat, torch.Tensor)
    if as_numpy:
        anchor_feat, pos_feat, neg_feats = (
            torch.as_tensor(np.asarray(x, dtype=np.float64)) for x in (anchor_feat, pos_feat, neg_feats)
        )
    if neg_feats.dim() != 2 or neg_feats.shape[0] < 1:
        raise InputError("neg_feats must be an (m, d) array with m >= 1")
    if not (anchor_feat.shape == pos_feat.shape == neg_feats.shape[1:]):
        raise InputError("anchor, positive and negatives must share the feature dimension")
    out = infonce_terms(anchor_feat, pos_feat, neg_feats, tau)
    return float(out) if as_numpy else out
