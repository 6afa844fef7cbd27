"""Transformer encoder with an MLM head and exact analytic gradients.

Post-layer-norm residual arrangement, GELU feed-forwards, learned absolute
position embeddings. The forward pass records everything the backward pass
needs, so ``backward`` returns exact gradients of

    total_loss = mlm_loss + alpha * guidance_loss

for every parameter. The multi-head attention core and the guidance BCE are
delegated to the selected kernel backend.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from ..wordpieces import CLS_ID, PAD_ID, SEP_ID
from . import backend
from .config import GuidanceSpec, ModelConfig

SQRT1_2 = 1.0 / np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass
class ForwardTrace:
    """Everything observable from one forward pass.

    ``hidden[l]`` is the output of layer ``l`` (P x d_model); ``attention[l]``
    holds that layer's post-softmax maps (H x P x P); ``logits`` are the MLM
    logits at every position (P x V).
    """

    piece_ids: np.ndarray
    pad_mask: np.ndarray
    hidden: list
    attention: list
    logits: np.ndarray
    cache: dict

    @property
    def n_pieces(self):
        return int(self.piece_ids.shape[0])

    @property
    def final_hidden(self):
        return self.hidden[-1]

    def pair_mask(self):
        """Positions eligible for guidance: non-pad and not [CLS]/[SEP]/[PAD]."""
        ids = self.piece_ids
        special = (ids == CLS_ID) | (ids == SEP_ID) | (ids == PAD_ID)
        return (self.pad_mask & ~special).astype(np.uint8)


def layernorm_fwd(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def layernorm_bwd(dy, g, cache):
    xhat, inv = cache
    dg = np.sum(dy * xhat, axis=0)
    db = np.sum(dy, axis=0)
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def gelu_fwd(x):
    phi = 0.5 * (1.0 + erf(x * SQRT1_2))
    return x * phi, phi


def gelu_bwd(dy, x, phi):
    pdf = np.exp(-0.5 * x * x) * INV_SQRT_2PI
    return dy * (phi + x * pdf)


def _split_heads(x, n_heads):
    P, d = x.shape
    return np.ascontiguousarray(x.reshape(P, n_heads, d // n_heads).transpose(1, 0, 2))


def _merge_heads(x):
    H, P, dk = x.shape
    return x.transpose(1, 0, 2).reshape(P, H * dk)


def forward(piece_ids, params, config: ModelConfig, pad_mask=None) -> ForwardTrace:
    """Run the encoder and MLM head over one sequence."""
    ids = np.asarray(piece_ids, dtype=np.int64)
    P = ids.shape[0]
    if P > config.max_len:
        raise ValueError(f"sequence length {P} exceeds max_len {config.max_len}")
    if P == 0:
        raise ValueError("empty sequence")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise ValueError("piece id out of vocabulary range")
    if pad_mask is None:
        pad_mask = np.ones(P, dtype=bool)
    else:
        pad_mask = np.asarray(pad_mask, dtype=bool)
        if pad_mask.shape != (P,):
            raise ValueError("pad_mask shape mismatch")
    key_mask = pad_mask.astype(np.uint8)
    eps = config.layer_norm_eps

    x0 = params["tok_emb"][ids] + params["pos_emb"][:P]
    x, emb_cache = layernorm_fwd(x0, params["emb_ln_g"], params["emb_ln_b"], eps)

    hidden = []
    attention = []
    layer_caches = []
    for l in range(config.n_layers):
        pre = f"layer{l}."
        x_in = x
        q = _split_heads(x_in @ params[pre + "wq"] + params[pre + "bq"], config.n_heads)
        k = _split_heads(x_in @ params[pre + "wk"] + params[pre + "bk"], config.n_heads)
        v = _split_heads(x_in @ params[pre + "wv"] + params[pre + "bv"], config.n_heads)
        probs, ctx = backend.mha_forward(q, k, v, key_mask)
        ctx2d = _merge_heads(ctx)
        attn_out = ctx2d @ params[pre + "wo"] + params[pre + "bo"]
        x1, ln1_cache = layernorm_fwd(
            x_in + attn_out, params[pre + "ln1_g"], params[pre + "ln1_b"], eps
        )
        hpre = x1 @ params[pre + "w1"] + params[pre + "b1"]
        hact, phi = gelu_fwd(hpre)
        ff_out = hact @ params[pre + "w2"] + params[pre + "b2"]
        x, ln2_cache = layernorm_fwd(
            x1 + ff_out, params[pre + "ln2_g"], params[pre + "ln2_b"], eps
        )
        hidden.append(x)
        attention.append(probs)
        layer_caches.append(
            {
                "x_in": x_in,
                "q": q,
                "k": k,
                "v": v,
                "probs": probs,
                "ctx2d": ctx2d,
                "ln1_cache": ln1_cache,
                "x1": x1,
                "hpre": hpre,
                "phi": phi,
                "hact": hact,
                "ln2_cache": ln2_cache,
            }
        )

    t_pre = x @ params["mlm_w"] + params["mlm_b"]
    t_act, head_phi = gelu_fwd(t_pre)
    t_ln, head_ln_cache = layernorm_fwd(
        t_act, params["mlm_ln_g"], params["mlm_ln_b"], eps
    )
    w_out = params["tok_emb"].T if config.tie_embeddings else params["out_w"]
    logits = t_ln @ w_out + params["out_b"]

    cache = {
        "emb_cache": emb_cache,
        "layers": layer_caches,
        "head": {
            "x_in": x,
            "t_pre": t_pre,
            "phi": head_phi,
            "t_ln": t_ln,
            "ln_cache": head_ln_cache,
        },
        "key_mask": key_mask,
    }
    return ForwardTrace(
        piece_ids=ids,
        pad_mask=pad_mask,
        hidden=hidden,
        attention=attention,
        logits=logits,
        cache=cache,
    )


def _target_arrays(trace, targets):
    if not targets:
        raise ValueError("empty MLM target set")
    positions = np.array(sorted(targets), dtype=np.int64)
    ids = np.array([targets[int(p)] for p in positions], dtype=np.int64)
    P, V = trace.logits.shape
    if positions.min() < 0 or positions.max() >= P:
        raise ValueError("target position out of range")
    if np.any(~trace.pad_mask[positions]):
        raise ValueError("target at a pad position")
    if ids.min() < 0 or ids.max() >= V:
        raise ValueError("target id out of vocabulary range")
    return positions, ids


def mlm_loss(trace: ForwardTrace, targets: dict) -> float:
    """Mean cross-entropy of the MLM logits at the target positions."""
    positions, ids = _target_arrays(trace, targets)
    rows = trace.logits[positions]
    m = rows.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(rows - m), axis=1))
    return float(np.mean(lse - rows[np.arange(len(ids)), ids]))


def guidance_loss(
    trace: ForwardTrace, adjacency, spec: GuidanceSpec, config: ModelConfig
) -> float:
    """Summed per-head mean BCE between supervised attention maps and the target."""
    A = np.asarray(adjacency.bits, dtype=np.float64)
    if A.shape != (trace.n_pieces, trace.n_pieces):
        raise ValueError(
            f"adjacency size {A.shape[0]} != sequence length {trace.n_pieces}"
        )
    layers = spec.supervised_layers(config)
    if not layers or not spec.head_indices:
        return 0.0
    pm = trace.pair_mask()
    idx = list(spec.head_indices)
    total = 0.0
    for l in layers:
        sel = np.ascontiguousarray(trace.attention[l][idx])
        loss, _ = backend.guidance_bce(sel, A, pm)
        total += loss
    return float(total)


def total_loss(trace, targets, adjacency, spec, config) -> float:
    loss = mlm_loss(trace, targets)
    if spec is not None and adjacency is not None:
        loss += spec.alpha * guidance_loss(trace, adjacency, spec, config)
    return loss


def backward(
    trace: ForwardTrace,
    params,
    config: ModelConfig,
    targets: dict,
    adjacency=None,
    spec: GuidanceSpec | None = None,
) -> dict[str, np.ndarray]:
    """Exact gradients of total_loss for every parameter."""
    grads = {name: np.zeros_like(arr) for name, arr in params.items()}
    cache = trace.cache
    P, V = trace.logits.shape

    # --- MLM head ---
    positions, ids = _target_arrays(trace, targets)
    rows = trace.logits[positions]
    m = rows.max(axis=1, keepdims=True)
    e = np.exp(rows - m)
    soft = e / e.sum(axis=1, keepdims=True)
    soft[np.arange(len(ids)), ids] -= 1.0
    soft /= len(ids)
    dlogits = np.zeros((P, V))
    dlogits[positions] = soft

    head = cache["head"]
    if config.tie_embeddings:
        d_t_ln = dlogits @ params["tok_emb"]
        grads["tok_emb"] += dlogits.T @ head["t_ln"]
    else:
        d_t_ln = dlogits @ params["out_w"].T
        grads["out_w"] += head["t_ln"].T @ dlogits
    grads["out_b"] += dlogits.sum(axis=0)

    d_t_act, dg, db = layernorm_bwd(d_t_ln, params["mlm_ln_g"], head["ln_cache"])
    grads["mlm_ln_g"] += dg
    grads["mlm_ln_b"] += db
    d_t_pre = gelu_bwd(d_t_act, head["t_pre"], head["phi"])
    dx = d_t_pre @ params["mlm_w"].T
    grads["mlm_w"] += head["x_in"].T @ d_t_pre
    grads["mlm_b"] += d_t_pre.sum(axis=0)

    # --- guidance gradients into the attention maps ---
    d_probs_by_layer = {}
    if (
        spec is not None
        and adjacency is not None
        and spec.alpha > 0
        and spec.n_layers > 0
        and spec.head_indices
    ):
        A = np.asarray(adjacency.bits, dtype=np.float64)
        pm = trace.pair_mask()
        idx = list(spec.head_indices)
        for l in spec.supervised_layers(config):
            sel = np.ascontiguousarray(trace.attention[l][idx])
            _, dp = backend.guidance_bce(sel, A, pm)
            full = np.zeros((config.n_heads, P, P))
            full[idx] = dp * spec.alpha
            d_probs_by_layer[l] = full

    # --- encoder stack, reversed ---
    key_mask = cache["key_mask"]
    for l in reversed(range(config.n_layers)):
        pre = f"layer{l}."
        lc = cache["layers"][l]

        d_r2, dg, db = layernorm_bwd(dx, params[pre + "ln2_g"], lc["ln2_cache"])
        grads[pre + "ln2_g"] += dg
        grads[pre + "ln2_b"] += db

        d_x1 = d_r2.copy()
        d_hact = d_r2 @ params[pre + "w2"].T
        grads[pre + "w2"] += lc["hact"].T @ d_r2
        grads[pre + "b2"] += d_r2.sum(axis=0)
        d_hpre = gelu_bwd(d_hact, lc["hpre"], lc["phi"])
        d_x1 += d_hpre @ params[pre + "w1"].T
        grads[pre + "w1"] += lc["x1"].T @ d_hpre
        grads[pre + "b1"] += d_hpre.sum(axis=0)

        d_r1, dg, db = layernorm_bwd(d_x1, params[pre + "ln1_g"], lc["ln1_cache"])
        grads[pre + "ln1_g"] += dg
        grads[pre + "ln1_b"] += db

        dx = d_r1.copy()
        d_ctx2d = d_r1 @ params[pre + "wo"].T
        grads[pre + "wo"] += lc["ctx2d"].T @ d_r1
        grads[pre + "bo"] += d_r1.sum(axis=0)

        d_ctx = _split_heads(d_ctx2d, config.n_heads)
        dq, dk, dv = backend.mha_backward(
            lc["q"], lc["k"], lc["v"], lc["probs"], d_ctx,
            d_probs_by_layer.get(l), key_mask,
        )
        dq2d, dk2d, dv2d = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
        x_in = lc["x_in"]
        dx += dq2d @ params[pre + "wq"].T
        dx += dk2d @ params[pre + "wk"].T
        dx += dv2d @ params[pre + "wv"].T
        grads[pre + "wq"] += x_in.T @ dq2d
        grads[pre + "wk"] += x_in.T @ dk2d
        grads[pre + "wv"] += x_in.T @ dv2d
        grads[pre + "bq"] += dq2d.sum(axis=0)
        grads[pre + "bk"] += dk2d.sum(axis=0)
        grads[pre + "bv"] += dv2d.sum(axis=0)

    d_x0, dg, db = layernorm_bwd(dx, params["emb_ln_g"], cache["emb_cache"])
    grads["emb_ln_g"] += dg
    grads["emb_ln_b"] += db
    np.add.at(grads["tok_emb"], trace.piece_ids, d_x0)
    grads["pos_emb"][:P] += d_x0
    return grads
