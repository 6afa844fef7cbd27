"""Representation extraction, hubness-based model selection, pseudo-perplexity.

Sentence and word vectors are mean-pooled final-layer hidden states
([CLS]/[SEP] excluded). The Robin Hood Index of the k-occurrence
distribution ranks fine-tuned models without supervision: lower hubness
wins.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass

import numpy as np

from .model import forward
from .wordpieces import CLS_ID, MASK_ID, PAD_ID, SEP_ID, tokenize_sentence

__all__ = [
    "ReprMatrix",
    "sentence_repr",
    "word_repr",
    "extract_sentence_reprs",
    "extract_word_reprs",
    "robin_hood_index",
    "k_occurrences",
    "select_model",
    "pseudo_perplexity",
]

MATRIX_MAGIC = b"NALNMATX"


@dataclass
class ReprMatrix:
    """n x d float matrix with one unique label per row."""

    data: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.labels = tuple(str(x) for x in self.labels)
        if self.data.ndim != 2:
            raise ValueError("expected a 2-D matrix")
        if len(self.labels) != self.data.shape[0]:
            raise ValueError("label count != row count")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("row labels must be unique")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("non-finite entries")

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]

    def save(self, path):
        header = {
            "format": "neuroalign-matrix",
            "n": self.n,
            "dim": self.dim,
            "labels": list(self.labels),
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as f:
            f.write(MATRIX_MAGIC)
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            f.write(np.ascontiguousarray(self.data, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            if f.read(len(MATRIX_MAGIC)) != MATRIX_MAGIC:
                raise ValueError(f"{path}: not a neuroalign matrix file")
            (hlen,) = struct.unpack("<Q", f.read(8))
            header = json.loads(f.read(hlen).decode("utf-8"))
            n, dim = header["n"], header["dim"]
            block = np.frombuffer(f.read(n * dim * 4), dtype="<f4")
            if block.size != n * dim:
                raise ValueError(f"{path}: truncated data block")
            data = block.astype(np.float64).reshape(n, dim)
        return cls(data=data, labels=tuple(header["labels"]))

    def save_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["label"] + [f"v{i}" for i in range(self.dim)])
            for label, row in zip(self.labels, self.data):
                writer.writerow([label] + [repr(float(x)) for x in row])

    @classmethod
    def load_csv(cls, path):
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            head = next(reader)
            if not head or head[0] != "label":
                raise ValueError(f"{path}: expected a 'label' header column")
            labels, rows = [], []
            for rec in reader:
                if not rec:
                    continue
                labels.append(rec[0])
                rows.append([float(x) for x in rec[1:]])
        return cls(data=np.array(rows, dtype=np.float64), labels=tuple(labels))


def _content_positions(trace):
    ids = trace.piece_ids
    keep = trace.pad_mask & (ids != CLS_ID) & (ids != SEP_ID) & (ids != PAD_ID)
    return np.nonzero(keep)[0]


def sentence_repr(trace) -> np.ndarray:
    """Mean of final-layer hidden states over the sentence's wordpieces."""
    pos = _content_positions(trace)
    if pos.size == 0:
        raise ValueError("no content positions to pool")
    return trace.final_hidden[pos].mean(axis=0)


def word_repr(trace, alignment, word_index: int) -> np.ndarray:
    """Mean of final-layer hidden states over one word's piece span."""
    s, e = alignment.span(word_index)
    return trace.final_hidden[s:e].mean(axis=0)


def extract_sentence_reprs(graphs, params, config, vocab, labels=None) -> ReprMatrix:
    if labels is None:
        labels = [g.sent_id or f"s{i}" for i, g in enumerate(graphs)]
    rows = []
    for g in graphs:
        alignment = tokenize_sentence(g.forms(), vocab)
        trace = forward(np.array(alignment.piece_ids), params, config)
        rows.append(sentence_repr(trace))
    return ReprMatrix(data=np.array(rows), labels=tuple(labels))


def extract_word_reprs(graphs, params, config, vocab) -> ReprMatrix:
    """One row per word, labeled ``<sentence>:<index>:<form>``."""
    rows, labels = [], []
    for i, g in enumerate(graphs):
        sid = g.sent_id or f"s{i}"
        alignment = tokenize_sentence(g.forms(), vocab)
        trace = forward(np.array(alignment.piece_ids), params, config)
        for tok in g.tokens:
            rows.append(word_repr(trace, alignment, tok.index))
            labels.append(f"{sid}:{tok.index}:{tok.form}")
    return ReprMatrix(data=np.array(rows), labels=tuple(labels))


# ---------------------------------------------------------------------------
# Hubness
# ---------------------------------------------------------------------------

def _distance_matrix(X, metric):
    if metric == "euclidean":
        sq = np.sum(X * X, axis=1)
        d = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
        return np.maximum(d, 0.0)
    if metric == "cosine":
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero-norm row; cosine distance undefined")
        sim = (X @ X.T) / np.outer(norms, norms)
        return 1.0 - sim
    raise ValueError(f"unknown metric {metric!r}")


def k_occurrences(X, k: int, metric: str = "cosine") -> np.ndarray:
    """o_i = how often row i appears in other rows' k-nearest-neighbor lists.

    Self-neighbors are excluded; distance ties resolve to the lower index.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"need n > k >= 1, got n={n}, k={k}")
    d = _distance_matrix(X, metric)
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    knn = order[:, :k]
    return np.bincount(knn.ravel(), minlength=n)


def robin_hood_index(reps, k: int = 10, metric: str = "cosine") -> float:
    """Share of k-occurrence mass that would have to move to equalize it.

    0 for a perfectly uniform k-occurrence distribution; grows toward 1 as
    a few hub rows absorb everyone's neighbor lists.
    """
    X = reps.data if isinstance(reps, ReprMatrix) else reps
    occ = k_occurrences(X, k, metric)
    mean = float(k)  # total occurrences are exactly n*k
    return float(np.maximum(occ - mean, 0.0).sum() / occ.sum())


def select_model(candidates, k: int = 10, metric: str = "cosine"):
    """Pick the (manifest, reps) candidate with the lowest hubness.

    Ties break toward the earlier candidate. Returns (manifest, index,
    scores).
    """
    if not candidates:
        raise ValueError("no candidates")
    scores = [robin_hood_index(reps, k, metric) for _, reps in candidates]
    best = int(np.argmin(scores))
    return candidates[best][0], best, scores


# ---------------------------------------------------------------------------
# Pseudo-perplexity
# ---------------------------------------------------------------------------

def pseudo_perplexity(params, config, vocab, sentences) -> float:
    """Mean masked-word score over the corpus.

    Each word's pieces are masked jointly; the word scores
    exp(-mean log p(true piece)), i.e. the inverse geometric mean of the
    per-piece probabilities, so multi-piece words are not structurally
    penalized.
    """
    scores = []
    for sentence in sentences:
        words = sentence if isinstance(sentence, (list, tuple)) else sentence.split()
        alignment = tokenize_sentence(words, vocab)
        if alignment.n_pieces > config.max_len:
            continue
        base = np.array(alignment.piece_ids, dtype=np.int64)
        for w in sorted(alignment.word_spans):
            s, e = alignment.span(w)
            ids = base.copy()
            ids[s:e] = MASK_ID
            trace = forward(ids, params, config)
            rows = trace.logits[s:e]
            m = rows.max(axis=1, keepdims=True)
            lse = m[:, 0] + np.log(np.sum(np.exp(rows - m), axis=1))
            logp = rows[np.arange(e - s), base[s:e]] - lse
            scores.append(float(np.exp(-np.mean(logp))))
    if not scores:
        raise ValueError("no scorable words")
    return float(np.mean(scores))
