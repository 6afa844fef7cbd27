"""Numpy fallback for the attention kernels.

Same signatures and semantics as the compiled module ``neuroalign._kernels``;
see :mod:`neuroalign.model.backend` for how one of the two is selected.
All arrays are float64; masks are uint8.
"""

from __future__ import annotations

import numpy as np

BCE_EPS = 1e-12


def mha_forward(q, k, v, key_mask):
    """Scaled dot-product attention for all heads of one layer.

    q, k, v: (H, P, dk). key_mask: (P,) uint8, 1 = attendable. Masked
    positions receive exactly zero attention; every row is softmax-normalized
    over the unmasked positions.

    Returns (probs, ctx) with shapes (H, P, P) and (H, P, dk).
    """
    dk = q.shape[2]
    scale = 1.0 / np.sqrt(dk)
    scores = np.matmul(q, np.swapaxes(k, 1, 2)) * scale
    masked = key_mask.astype(bool)
    scores = np.where(masked[None, None, :], scores, -np.inf)
    m = np.max(scores, axis=2, keepdims=True)
    e = np.exp(scores - m)
    e = np.where(masked[None, None, :], e, 0.0)
    probs = e / np.sum(e, axis=2, keepdims=True)
    ctx = np.matmul(probs, v)
    return probs, ctx


def mha_backward(q, k, v, probs, d_ctx, d_probs, key_mask):
    """Gradients of the attention core.

    ``d_ctx`` is the gradient arriving at the context output; ``d_probs``
    (optional, may be None) is an extra gradient applied directly to the
    attention probabilities (the guidance term enters here).

    Returns (dq, dk, dv), each (H, P, dk).
    """
    dk_dim = q.shape[2]
    scale = 1.0 / np.sqrt(dk_dim)
    dp = np.matmul(d_ctx, np.swapaxes(v, 1, 2))
    if d_probs is not None:
        dp = dp + d_probs
    row = np.sum(dp * probs, axis=2, keepdims=True)
    ds = probs * (dp - row)
    dq = np.matmul(ds, k) * scale
    dk = np.matmul(np.swapaxes(ds, 1, 2), q) * scale
    dv = np.matmul(np.swapaxes(probs, 1, 2), d_ctx)
    return dq, dk, dv


def guidance_bce(probs, adj, pair_mask):
    """Binary cross-entropy between attention maps and an adjacency target.

    probs: (Hs, P, P) attention probabilities of the supervised heads.
    adj: (P, P) float64 0/1 target. pair_mask: (P,) uint8; only ordered
    pairs (i, j) with both positions eligible and i != j enter the loss.

    Per head the BCE is averaged over eligible pairs; head means are then
    summed. Probabilities are clamped to [BCE_EPS, 1 - BCE_EPS] and the
    gradient is zero where the clamp binds.

    Returns (loss, d_probs) with d_probs of the same shape as probs.
    """
    m = pair_mask.astype(bool)
    pair = np.outer(m, m)
    np.fill_diagonal(pair, False)
    n_pairs = int(pair.sum())
    if n_pairs == 0:
        raise ValueError("no eligible pairs for the guidance loss")
    p = np.clip(probs, BCE_EPS, 1.0 - BCE_EPS)
    a = adj[None, :, :]
    per_pair = -(a * np.log(p) + (1.0 - a) * np.log1p(-p))
    loss = float(np.sum(per_pair * pair[None, :, :]) / n_pairs)
    inside = (probs > BCE_EPS) & (probs < 1.0 - BCE_EPS)
    grad = np.where(inside, (-a / p + (1.0 - a) / (1.0 - p)) / n_pairs, 0.0)
    d_probs = grad * pair[None, :, :]
    return loss, d_probs
