"""Significance machinery: paired bootstrap, exact Wilcoxon, Bonferroni.

The bootstrap tests generalization over stimuli (one subject at a time);
the exact Wilcoxon signed-rank test covers generalization over subjects at
small m; Bonferroni adjusts for the number of model comparisons.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "PairedScores",
    "BootstrapResult",
    "paired_bootstrap",
    "wilcoxon_signed_rank",
    "bonferroni",
]


@dataclass(frozen=True)
class PairedScores:
    """Per-stimulus scores of two models, aligned by stimulus."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=np.float64))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=np.float64))
        if self.a.shape != self.b.shape or self.a.ndim != 1:
            raise ValueError("score arrays must be 1-D and equal length")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise ValueError("scores must be finite")

    @property
    def n(self):
        return self.a.shape[0]


@dataclass
class BootstrapResult:
    p_value: float
    iteration_means: np.ndarray  # (iters, 2): mean of A, mean of B per draw

    def to_json(self, **extra) -> str:
        doc = {"p_value": self.p_value, "iters": int(self.iteration_means.shape[0])}
        doc.update(extra)
        return json.dumps(doc, sort_keys=True, indent=2)


def paired_bootstrap(ps: PairedScores, iters: int = 5000, seed: int = 0) -> BootstrapResult:
    """One-sided paired bootstrap for "A scores higher than B".

    Each iteration resamples n stimulus indices with replacement and applies
    them to both arrays; p is the share of iterations where mean(A) <=
    mean(B), so ties count against A. Iteration i draws from its own
    counter-based stream keyed by (seed, i), which makes parallel and
    sequential execution identical.
    """
    if ps.n < 2:
        raise ValueError("need at least 2 paired scores")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    means = np.empty((iters, 2))
    for it in range(iters):
        rng = np.random.Generator(np.random.Philox(key=[seed, it]))
        idx = rng.integers(0, ps.n, size=ps.n)
        means[it, 0] = ps.a[idx].mean()
        means[it, 1] = ps.b[idx].mean()
    p = float(np.mean(means[:, 0] <= means[:, 1]))
    return BootstrapResult(p_value=p, iteration_means=means)


def wilcoxon_signed_rank(differences) -> float:
    """Exact two-sided signed-rank p for m <= 20 paired differences.

    Zeros are dropped before ranking; ties get mid-ranks. The null
    distribution of the positive rank sum is enumerated exactly over all
    2^m sign assignments (via a subset-sum recurrence over doubled ranks),
    and p = min(1, 2 * min(P(W <= w), P(W >= w))).
    """
    d = np.asarray(differences, dtype=np.float64)
    if d.ndim != 1 or not 1 <= d.size <= 20:
        raise ValueError("need between 1 and 20 differences")
    d = d[d != 0]
    if d.size == 0:
        raise ValueError("all differences are zero; no information")
    m = d.size
    ranks = rankdata(np.abs(d))
    w2 = int(np.rint(2.0 * ranks[d > 0].sum()))
    r2 = np.rint(2.0 * ranks).astype(np.int64)

    # counts[s] = number of sign assignments with doubled positive rank sum s
    counts = np.zeros(int(r2.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for r in r2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r]
        counts = counts + shifted

    total = float(2**m)
    p_le = counts[: w2 + 1].sum() / total
    p_ge = counts[w2:].sum() / total
    return float(min(1.0, 2.0 * min(p_le, p_ge)))


def bonferroni(p: float, comparisons: int = 3) -> float:
    """Family-wise correction: min(1, p * comparisons)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    if comparisons < 1:
        raise ValueError("comparisons must be >= 1")
    return min(1.0, p * comparisons)
