"""Parameter container, initialization, and the checkpoint format.

Parameters live in an insertion-ordered name -> float64 array dict; that
order is the checkpoint block order. Checkpoint layout: an 8-byte
little-endian header length, a UTF-8 JSON header (config, vocab hash, step
count, parameter names + shapes), then one little-endian float32 block per
parameter in header order.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .config import ModelConfig

MAGIC = b"NALNCKPT"
INIT_STD = 0.02


def init_params(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """BERT-style init: N(0, 0.02) weights, zero biases, unit layer norms."""
    rng = np.random.Generator(np.random.PCG64(seed))
    d, dff, V = config.d_model, config.d_ff, config.vocab_size

    def w(*shape):
        return rng.normal(0.0, INIT_STD, size=shape)

    p: dict[str, np.ndarray] = {}
    p["tok_emb"] = w(V, d)
    p["pos_emb"] = w(config.max_len, d)
    p["emb_ln_g"] = np.ones(d)
    p["emb_ln_b"] = np.zeros(d)
    for l in range(config.n_layers):
        pre = f"layer{l}."
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + name] = w(d, d)
        for name in ("bq", "bk", "bv", "bo"):
            p[pre + name] = np.zeros(d)
        p[pre + "ln1_g"] = np.ones(d)
        p[pre + "ln1_b"] = np.zeros(d)
        p[pre + "w1"] = w(d, dff)
        p[pre + "b1"] = np.zeros(dff)
        p[pre + "w2"] = w(dff, d)
        p[pre + "b2"] = np.zeros(d)
        p[pre + "ln2_g"] = np.ones(d)
        p[pre + "ln2_b"] = np.zeros(d)
    p["mlm_w"] = w(d, d)
    p["mlm_b"] = np.zeros(d)
    p["mlm_ln_g"] = np.ones(d)
    p["mlm_ln_b"] = np.zeros(d)
    if not config.tie_embeddings:
        p["out_w"] = w(d, V)
    p["out_b"] = np.zeros(V)
    return p


def n_params(params: dict[str, np.ndarray]) -> int:
    return sum(v.size for v in params.values())


def check_finite(params: dict[str, np.ndarray]):
    for name, arr in params.items():
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in parameter {name!r}")


def vocab_fingerprint(vocab) -> str:
    """sha256 over the id-ordered piece list."""
    joined = "\n".join(vocab.id_to_piece())
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


def save_checkpoint(path, params, config: ModelConfig, vocab_hash="", step=0):
    header = {
        "format": "neuroalign-checkpoint",
        "version": 1,
        "config": config.to_dict(),
        "vocab_hash": vocab_hash,
        "step": int(step),
        "params": [
            {"name": name, "shape": list(arr.shape)} for name, arr in params.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for arr in params.values():
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (params, config, header). Parameters come back as float64."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a neuroalign checkpoint")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        params = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            block = np.frombuffer(f.read(count * 4), dtype="<f4")
            if block.size != count:
                raise ValueError(f"{path}: truncated parameter block {entry['name']}")
            params[entry["name"]] = block.astype(np.float64).reshape(shape)
    return params, config, header
