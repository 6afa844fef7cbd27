"""Probing engines: minimal-pair scoring and linear semantic-tag probes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import forward
from .wordpieces import MASK_ID, UNK_ID, tokenize_sentence

__all__ = [
    "MinimalPair",
    "PairScore",
    "LinearProbe",
    "ProbeEval",
    "score_minimal_pair",
    "score_pairs",
    "read_pairs_tsv",
    "write_pairs_tsv",
    "read_tags_tsv",
    "train_linear_probe",
    "probe_predict",
    "evaluate_probe",
]


@dataclass(frozen=True)
class MinimalPair:
    """Grammatical/ungrammatical targets in a shared context."""

    prefix: tuple[str, ...]
    good: str
    bad: str
    suffix: tuple[str, ...]
    category: str

    def __post_init__(self):
        if self.good == self.bad:
            raise ValueError("pair targets must differ")
        object.__setattr__(self, "prefix", tuple(self.prefix))
        object.__setattr__(self, "suffix", tuple(self.suffix))


@dataclass
class PairScore:
    correct: bool | None
    margin: float
    skipped: bool = False
    reason: str | None = None


def _target_pieces(word, vocab):
    alignment = tokenize_sentence([word], vocab)
    s, e = alignment.span(1)
    return list(alignment.piece_ids[s:e])


def score_minimal_pair(params, config, vocab, pair: MinimalPair) -> PairScore:
    """Mask the target slot and compare summed log-probabilities.

    Correct iff the grammatical target strictly beats the ungrammatical
    one; pairs whose targets tokenize to different piece counts (or to
    [UNK]) are skipped with a reason so category accuracies stay
    interpretable.
    """
    good_ids = _target_pieces(pair.good, vocab)
    bad_ids = _target_pieces(pair.bad, vocab)
    if UNK_ID in good_ids or UNK_ID in bad_ids:
        return PairScore(None, 0.0, skipped=True, reason="untokenizable target")
    if len(good_ids) != len(bad_ids):
        return PairScore(None, 0.0, skipped=True, reason="piece count mismatch")

    words = list(pair.prefix) + [pair.good] + list(pair.suffix)
    alignment = tokenize_sentence(words, vocab)
    if alignment.n_pieces > config.max_len:
        return PairScore(None, 0.0, skipped=True, reason="sequence too long")
    s, e = alignment.span(len(pair.prefix) + 1)
    ids = np.array(alignment.piece_ids, dtype=np.int64)
    ids[s:e] = MASK_ID
    trace = forward(ids, params, config)
    rows = trace.logits[s:e]
    m = rows.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(rows - m), axis=1))
    pos = np.arange(e - s)
    lp_good = float(np.sum(rows[pos, good_ids] - lse))
    lp_bad = float(np.sum(rows[pos, bad_ids] - lse))
    margin = lp_good - lp_bad
    return PairScore(correct=margin > 0, margin=margin)


def score_pairs(params, config, vocab, pairs):
    """Score many pairs; returns per-category accuracy plus skip counts."""
    by_cat: dict[str, dict] = {}
    results = []
    for pair in pairs:
        score = score_minimal_pair(params, config, vocab, pair)
        results.append(score)
        stats = by_cat.setdefault(
            pair.category, {"n": 0, "correct": 0, "skipped": 0}
        )
        if score.skipped:
            stats["skipped"] += 1
        else:
            stats["n"] += 1
            stats["correct"] += int(score.correct)
    for stats in by_cat.values():
        stats["accuracy"] = stats["correct"] / stats["n"] if stats["n"] else None
    scored = [r for r in results if not r.skipped]
    overall = (
        sum(int(r.correct) for r in scored) / len(scored) if scored else None
    )
    return {"overall_accuracy": overall, "by_category": by_cat, "scores": results}


def read_pairs_tsv(path):
    """TSV columns: category, prefix, good_target, bad_target, suffix."""
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 columns")
            category, prefix, good, bad, suffix = cols
            pairs.append(
                MinimalPair(
                    prefix=tuple(prefix.split()) if prefix else (),
                    good=good,
                    bad=bad,
                    suffix=tuple(suffix.split()) if suffix else (),
                    category=category,
                )
            )
    return pairs


def write_pairs_tsv(pairs, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p in pairs:
            f.write(
                "\t".join(
                    [p.category, " ".join(p.prefix), p.good, p.bad, " ".join(p.suffix)]
                )
                + "\n"
            )


def read_tags_tsv(path):
    """TSV columns: sentence_id, word_index, tag."""
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns")
            rows.append((cols[0], int(cols[1]), cols[2]))
    return rows


# ---------------------------------------------------------------------------
# Linear probe
# ---------------------------------------------------------------------------

@dataclass
class LinearProbe:
    weights: np.ndarray  # (C, d)
    bias: np.ndarray     # (C,)
    classes: tuple[str, ...]
    l2_strength: float
    n_iters: int
    converged: bool


def _probe_loss_grad(W, b, X, y_idx, l2):
    n = X.shape[0]
    scores = X @ W.T + b
    m = scores.max(axis=1, keepdims=True)
    e = np.exp(scores - m)
    probs = e / e.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(e.sum(axis=1))
    loss = float(np.mean(lse - scores[np.arange(n), y_idx]) + 0.5 * l2 * np.sum(W * W))
    delta = probs
    delta[np.arange(n), y_idx] -= 1.0
    delta /= n
    gW = delta.T @ X + l2 * W
    gb = delta.sum(axis=0)
    return loss, gW, gb


def train_linear_probe(
    features,
    labels,
    l2_strength: float = 1e-3,
    max_iters: int = 1000,
    grad_tol: float = 1e-5,
) -> LinearProbe:
    """Multinomial logistic regression by full-batch gradient descent.

    Deterministic: zero init, backtracking (Armijo) line search, stops when
    the gradient norm drops below grad_tol or at max_iters.
    """
    X = np.asarray(features, dtype=np.float64)
    labels = [str(x) for x in labels]
    if X.ndim != 2 or X.shape[0] != len(labels):
        raise ValueError("features/labels shape mismatch")
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise ValueError("need at least 2 classes")
    class_idx = {c: i for i, c in enumerate(classes)}
    y = np.array([class_idx[c] for c in labels], dtype=np.int64)

    W = np.zeros((len(classes), X.shape[1]))
    b = np.zeros(len(classes))
    loss, gW, gb = _probe_loss_grad(W, b, X, y, l2_strength)
    step = 1.0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        gnorm2 = float(np.sum(gW * gW) + np.sum(gb * gb))
        if np.sqrt(gnorm2) < grad_tol:
            converged = True
            break
        # backtracking from a slightly optimistic step
        step = min(step * 2.0, 1e4)
        while step > 1e-12:
            W2 = W - step * gW
            b2 = b - step * gb
            loss2, gW2, gb2 = _probe_loss_grad(W2, b2, X, y, l2_strength)
            if loss2 <= loss - 1e-4 * step * gnorm2:
                break
            step *= 0.5
        else:
            break  # no descent step found; numerically converged
        W, b, loss, gW, gb = W2, b2, loss2, gW2, gb2
    return LinearProbe(
        weights=W,
        bias=b,
        classes=classes,
        l2_strength=l2_strength,
        n_iters=it,
        converged=converged,
    )


def probe_predict(probe: LinearProbe, features):
    X = np.asarray(features, dtype=np.float64)
    scores = X @ probe.weights.T + probe.bias
    return [probe.classes[i] for i in np.argmax(scores, axis=1)]


@dataclass
class ProbeEval:
    per_class: dict
    macro_f1: float
    accuracy: float


def evaluate_probe(probe: LinearProbe, features, labels) -> ProbeEval:
    """Per-class precision/recall/F1 with supports; macro-F1 averages over
    classes present in the test set (absent classes report support 0)."""
    labels = [str(x) for x in labels]
    if len(labels) == 0:
        raise ValueError("empty test set")
    preds = probe_predict(probe, features)
    class_set = list(probe.classes)
    for c in labels:
        if c not in class_set:
            class_set.append(c)
    per_class = {}
    f1s = []
    for c in class_set:
        tp = sum(1 for p, t in zip(preds, labels) if p == c and t == c)
        fp = sum(1 for p, t in zip(preds, labels) if p == c and t != c)
        fn = sum(1 for p, t in zip(preds, labels) if p != c and t == c)
        support = tp + fn
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[c] = {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "support": support,
        }
        if support > 0:
            f1s.append(f1)
    accuracy = sum(1 for p, t in zip(preds, labels) if p == t) / len(labels)
    return ProbeEval(
        per_class=per_class,
        macro_f1=float(np.mean(f1s)) if f1s else 0.0,
        accuracy=accuracy,
    )
