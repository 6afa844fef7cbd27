"""Brain decoding: PCA reduction, ridge regression, nested CV, metrics.

A ridge map G is trained to predict model representations D from recordings
B by minimizing ||B G - D||^2 + lambda ||G||^2. Nested cross-validation
(outer folds for evaluation, inner folds for lambda) guards against
leakage; per-stimulus Pearson correlation and cosine rank metrics score the
predictions.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .reprs import ReprMatrix

__all__ = [
    "BrainMatrix",
    "RidgeMap",
    "DecodeReport",
    "PCAResult",
    "DEFAULT_LAMBDA_GRID",
    "pca_fit_transform",
    "ridge_fit",
    "ridge_predict",
    "pearson_per_stimulus",
    "nested_cv_decode",
    "rank_metrics",
]

# Rows are stimuli either way; the alias keeps call sites readable.
BrainMatrix = ReprMatrix

DEFAULT_LAMBDA_GRID = tuple(np.logspace(-3.0, 3.0, 10))


@dataclass
class PCAResult:
    reduced: np.ndarray
    basis: np.ndarray           # (p, n_components) columns
    explained: np.ndarray       # per-component variance fractions
    mean: np.ndarray
    capped: bool = False        # max_dims bound before the threshold


def pca_fit_transform(X, variance_threshold: float = 0.95, max_dims=None) -> PCAResult:
    """Column-centered SVD keeping the fewest components that reach the
    variance threshold, capped at max_dims.

    Deterministic sign convention: each component's largest-magnitude
    loading is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least 2 rows")
    if not 0 < variance_threshold <= 1:
        raise ValueError("variance_threshold must be in (0, 1]")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    total = float(np.sum(s * s))
    if total == 0.0:
        raise ValueError("zero-variance input; PCA undefined")
    explained = (s * s) / total
    n_keep = int(np.searchsorted(np.cumsum(explained), variance_threshold) + 1)
    n_keep = min(n_keep, len(s))
    capped = False
    if max_dims is not None and n_keep > max_dims:
        n_keep = int(max_dims)
        capped = True
    Vt = Vt[:n_keep].copy()
    for j in range(n_keep):
        i = int(np.argmax(np.abs(Vt[j])))
        if Vt[j, i] < 0:
            Vt[j] = -Vt[j]
    basis = Vt.T
    return PCAResult(
        reduced=Xc @ basis,
        basis=basis,
        explained=explained[:n_keep],
        mean=mean,
        capped=capped,
    )


@dataclass
class RidgeMap:
    weights: np.ndarray  # (d_B, d_H)
    lam: float


def ridge_fit(B, D, lam: float) -> RidgeMap:
    """Closed-form ridge G = (B'B + lam I)^-1 B'D via a Cholesky solve."""
    B = np.asarray(B, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if B.shape[0] != D.shape[0]:
        raise ValueError("B and D must have the same number of rows")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    A = B.T @ B + lam * np.eye(B.shape[1])
    try:
        G = cho_solve(cho_factor(A), B.T @ D)
    except LinAlgError:
        if lam == 0:
            raise ValueError(
                "singular system at lambda=0; use lambda > 0"
            ) from None
        raise
    return RidgeMap(weights=G, lam=float(lam))


def ridge_predict(ridge: RidgeMap, B) -> np.ndarray:
    return np.asarray(B, dtype=np.float64) @ ridge.weights


def pearson_per_stimulus(pred, true) -> float:
    """Pearson correlation across the dimensions of one stimulus pair."""
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape or pred.ndim != 1 or pred.size < 2:
        raise ValueError("expected two equal-length vectors of length >= 2")
    pc = pred - pred.mean()
    tc = true - true.mean()
    denom = np.linalg.norm(pc) * np.linalg.norm(tc)
    if denom == 0:
        raise ValueError("constant vector; correlation undefined")
    return float(np.dot(pc, tc) / denom)


def _pearson_rows(preds, gold):
    """Per-row Pearson; constant rows come back as nan (and are counted)."""
    r = np.full(preds.shape[0], np.nan)
    n_excluded = 0
    for i in range(preds.shape[0]):
        try:
            r[i] = pearson_per_stimulus(preds[i], gold[i])
        except ValueError:
            n_excluded += 1
    return r, n_excluded


@dataclass
class DecodeReport:
    labels: tuple[str, ...]
    predictions: np.ndarray
    pearson: np.ndarray              # nan where excluded
    fold_id: np.ndarray
    lambda_by_fold: list[float]
    lambda_grid: list[float]
    n_excluded: int
    summary: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "summary": self.summary,
                "lambda_grid": [float(x) for x in self.lambda_grid],
                "lambda_by_fold": [float(x) for x in self.lambda_by_fold],
                "n_excluded": self.n_excluded,
            },
            sort_keys=True,
            indent=2,
        )

    def write_scores_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["label", "fold", "pearson"])
            for label, fold, r in zip(self.labels, self.fold_id, self.pearson):
                writer.writerow([label, int(fold), "" if np.isnan(r) else repr(float(r))])


def _contiguous_folds(indices, n_folds):
    return np.array_split(indices, n_folds)


def nested_cv_decode(
    brain: ReprMatrix,
    reps: ReprMatrix,
    lambda_grid=DEFAULT_LAMBDA_GRID,
    outer_folds: int = 12,
    inner_folds: int = 5,
    seed: int = 0,
) -> DecodeReport:
    """Ridge decoding with nested cross-validation.

    Stimuli are shuffled once by seed and split into contiguous outer folds.
    Within each outer-training set, inner folds pick the lambda with the
    best mean per-stimulus Pearson; the final map per outer fold trains on
    the whole outer-training set.
    """
    if brain.labels != reps.labels:
        raise ValueError("brain and representation labels are not aligned")
    lambda_grid = [float(x) for x in lambda_grid]
    if not lambda_grid:
        raise ValueError("empty lambda grid")
    B, D = brain.data, reps.data
    n = B.shape[0]
    if n < outer_folds:
        raise ValueError(f"n={n} stimuli < {outer_folds} outer folds")
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(n)
    outer = _contiguous_folds(perm, outer_folds)
    if any(len(f) == 0 for f in outer):
        raise ValueError("an outer fold would be empty")

    predictions = np.zeros_like(D)
    fold_id = np.zeros(n, dtype=np.int64)
    lambda_by_fold = []
    for f, test_idx in enumerate(outer):
        train_idx = np.concatenate([outer[j] for j in range(outer_folds) if j != f])
        if len(train_idx) < inner_folds:
            raise ValueError("outer-training set smaller than inner fold count")
        inner = _contiguous_folds(train_idx, inner_folds)
        mean_r = []
        for lam in lambda_grid:
            rs = []
            for g in range(inner_folds):
                val_idx = inner[g]
                fit_idx = np.concatenate(
                    [inner[j] for j in range(inner_folds) if j != g]
                )
                ridge = ridge_fit(B[fit_idx], D[fit_idx], lam)
                pred = ridge_predict(ridge, B[val_idx])
                r, _ = _pearson_rows(pred, D[val_idx])
                rs.extend(r[~np.isnan(r)])
            mean_r.append(np.mean(rs) if rs else -np.inf)
        best = int(np.argmax(mean_r))
        lam = lambda_grid[best]
        ridge = ridge_fit(B[train_idx], D[train_idx], lam)
        predictions[test_idx] = ridge_predict(ridge, B[test_idx])
        fold_id[test_idx] = f
        lambda_by_fold.append(lam)

    pearson, n_excluded = _pearson_rows(predictions, D)
    mean_rank, median_rank = rank_metrics(predictions, D)
    summary = {
        "mean_pearson": float(np.nanmean(pearson)),
        "mean_rank": mean_rank,
        "median_rank": median_rank,
        "n_stimuli": int(n),
        "n_excluded": int(n_excluded),
    }
    return DecodeReport(
        labels=brain.labels,
        predictions=predictions,
        pearson=pearson,
        fold_id=fold_id,
        lambda_by_fold=lambda_by_fold,
        lambda_grid=lambda_grid,
        n_excluded=n_excluded,
        summary=summary,
    )


def rank_metrics(preds, golds) -> tuple[float, float]:
    """Rank of each stimulus's own gold row among all golds, by increasing
    cosine distance from the prediction (ties resolve to the lower gold
    index). Returns (mean rank, median rank), 1-based.
    """
    P = np.asarray(preds, dtype=np.float64)
    G = np.asarray(golds, dtype=np.float64)
    if P.shape != G.shape or P.shape[0] < 2:
        raise ValueError("need matching matrices with >= 2 rows")
    pn = np.linalg.norm(P, axis=1)
    gn = np.linalg.norm(G, axis=1)
    if np.any(pn == 0) or np.any(gn == 0):
        raise ValueError("zero-norm vector; cosine distance undefined")
    d = 1.0 - (P / pn[:, None]) @ (G / gn[:, None]).T
    n = d.shape[0]
    ranks = np.empty(n, dtype=np.int64)
    for i in range(n):
        order = np.argsort(d[i], kind="stable")
        ranks[i] = int(np.nonzero(order == i)[0][0]) + 1
    return float(ranks.mean()), float(np.median(ranks))
