"""Task metrics and cluster-geometry diagnostics.

Accuracy and bucket-midpoint MAE score classifier outputs; invariant
distance and the Davies-Bouldin index describe how tight and how separated
the label clusters are in embedding space; PCA and exact t-SNE give seeded
2-D views of the same geometry. Everything returns coordinates or scalars,
never rendered images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DegenerateGeometryError,
    DimensionError,
    NumericError,
)
from .linalg import as_matrix

__all__ = [
    "ClusterReport",
    "accuracy",
    "age_mae",
    "invariant_distance",
    "davies_bouldin",
    "cluster_report",
    "pca_project",
    "tsne_project",
]


def accuracy(predictions, labels) -> float:
    """Fraction of exact matches."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise DataError(f"{predictions.shape[0]} predictions vs {labels.shape[0]} labels")
    if predictions.size == 0:
        raise DataError("cannot score an empty prediction set")
    return float(np.mean(predictions == labels))


def age_mae(predicted, labels, midpoints) -> float:
    """Mean |midpoint(pred) - midpoint(true)| over samples.

    midpoints maps every class index to a numeric bucket midpoint.
    """
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    if predicted.shape != labels.shape:
        raise DataError(f"{predicted.shape[0]} predictions vs {labels.shape[0]} labels")
    if predicted.size == 0:
        raise DataError("cannot score an empty prediction set")
    missing = sorted({int(c) for c in np.concatenate([predicted, labels])} - set(midpoints))
    if missing:
        raise ConfigError(f"no midpoint defined for classes {missing}")
    to_mid = np.vectorize(lambda c: float(midpoints[int(c)]))
    return float(np.mean(np.abs(to_mid(predicted) - to_mid(labels))))


def _labeled_set(embeddings, labels):
    embeddings = as_matrix(embeddings, "embeddings")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != embeddings.shape[0]:
        raise DimensionError(f"labels shape {labels.shape} does not match {embeddings.shape[0]} rows")
    if labels.min(initial=0) < 0:
        raise DataError("class indices must be non-negative")
    num_classes = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=num_classes)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DataError(f"classes {empty.tolist()} have no members")
    return embeddings, labels, num_classes


def _centroids_and_scatter(embeddings, labels, num_classes):
    centroids = np.vstack([embeddings[labels == c].mean(axis=0) for c in range(num_classes)])
    scatter = np.array(
        [
            float(np.linalg.norm(embeddings[labels == c] - centroids[c], axis=1).mean())
            for c in range(num_classes)
        ]
    )
    return centroids, scatter


def invariant_distance(embeddings, labels):
    """Per-class mean distance to the class centroid, plus the class mean.

    Distances are plain (unsquared) Euclidean; the overall value weights
    every class equally regardless of its size.
    """
    embeddings, labels, num_classes = _labeled_set(embeddings, labels)
    _, scatter = _centroids_and_scatter(embeddings, labels, num_classes)
    return scatter, float(scatter.mean())


def davies_bouldin(embeddings, labels) -> float:
    """Standard Davies-Bouldin index; lower is tighter and farther apart."""
    embeddings, labels, num_classes = _labeled_set(embeddings, labels)
    if num_classes < 2:
        raise DataError("davies_bouldin needs at least 2 classes")
    centroids, scatter = _centroids_and_scatter(embeddings, labels, num_classes)
    gaps = np.linalg.norm(centroids[:, None, :] - centroids[None, :, :], axis=2)
    pairs = [(c, d) for c in range(num_classes) for d in range(c + 1, num_classes) if gaps[c, d] == 0.0]
    if pairs:
        raise DegenerateGeometryError(f"coincident centroids for class pairs {pairs}")
    worst = np.empty(num_classes)
    for c in range(num_classes):
        ratios = [(scatter[c] + scatter[d]) / gaps[c, d] for d in range(num_classes) if d != c]
        worst[c] = max(ratios)
    return float(worst.mean())


@dataclass
class ClusterReport:
    centroids: np.ndarray  # K x D
    per_class_distance: np.ndarray  # K
    mean_distance: float
    davies_bouldin: float


def cluster_report(embeddings, labels) -> ClusterReport:
    """Centroids, invariant distances, and the DB index in one pass."""
    embeddings, labels, num_classes = _labeled_set(embeddings, labels)
    centroids, scatter = _centroids_and_scatter(embeddings, labels, num_classes)
    return ClusterReport(
        centroids=centroids,
        per_class_distance=scatter,
        mean_distance=float(scatter.mean()),
        davies_bouldin=davies_bouldin(embeddings, labels),
    )


def pca_project(embeddings, seed: int = 0, iterations: int = 200) -> np.ndarray:
    """Project onto the top-2 principal components.

    The components come from orthogonal iteration (repeated multiply + QR)
    on the covariance of the centered data, with a seeded start and a fixed
    iteration budget, so the output is deterministic. Each component is
    signed so its largest-magnitude coordinate is positive.
    """
    x = as_matrix(embeddings, "embeddings")
    n, dim = x.shape
    if n < 3:
        raise DataError(f"pca_project needs at least 3 points, got {n}")
    if dim < 2:
        raise DegenerateGeometryError(f"data dimension {dim} < 2, no 2-D projection exists")
    centered = x - x.mean(axis=0, keepdims=True)
    cov = (centered.T @ centered) / (n - 1)

    rng = np.random.Generator(np.random.PCG64(seed))
    basis, _ = np.linalg.qr(rng.standard_normal((dim, 2)))
    for _ in range(iterations):
        basis, _ = np.linalg.qr(cov @ basis)
    variances = np.array([float(b @ cov @ b) for b in basis.T])
    order = np.argsort(-variances)
    basis, variances = basis[:, order], variances[order]
    if variances[0] <= 0.0 or variances[1] <= variances[0] * 1e-12:
        raise DegenerateGeometryError(
            f"centered data has rank < 2 (component variances {variances.tolist()})"
        )
    for k in range(2):
        pivot = np.argmax(np.abs(basis[:, k]))
        if basis[pivot, k] < 0.0:
            basis[:, k] = -basis[:, k]
    return centered @ basis


def _conditional_probs(sq_dists_row, beta):
    """Gaussian affinities of one point at inverse bandwidth beta.

    Returns (entropy in nats, normalized probabilities). Distances are
    shifted by their minimum first; that cancels in the normalization and
    keeps the exponentials in range.
    """
    shifted = sq_dists_row - sq_dists_row.min()
    weights = np.exp(-shifted * beta)
    total = weights.sum()
    probs = weights / total
    entropy = np.log(total) + beta * float(shifted @ weights) / total
    return entropy, probs


def _affinities(x, perplexity):
    """Symmetrized t-SNE affinity matrix with bisection-matched bandwidths."""
    n = x.shape[0]
    sq_norms = (x * x).sum(axis=1)
    sq_dists = np.maximum(sq_norms[:, None] + sq_norms[None, :] - 2.0 * (x @ x.T), 0.0)
    target = np.log(perplexity)
    cond = np.zeros((n, n))
    mask = ~np.eye(n, dtype=bool)
    for i in range(n):
        row = sq_dists[i][mask[i]]
        beta, lo, hi = 1.0, -np.inf, np.inf
        entropy, probs = _conditional_probs(row, beta)
        for _ in range(200):
            if abs(entropy - target) <= 1e-5:
                break
            if entropy > target:  # too spread out: sharpen
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == -np.inf else (beta + lo) / 2.0
            entropy, probs = _conditional_probs(row, beta)
        else:
            raise NumericError(f"perplexity bisection did not converge for point {i}")
        cond[i][mask[i]] = probs
    joint = (cond + cond.T) / (2.0 * n)
    return np.maximum(joint, 1e-12)


def _tsne_with_trace(
    embeddings,
    perplexity: float = 30.0,
    iterations: int = 1000,
    seed: int = 0,
    learning_rate: float = 200.0,
    trace_at=(),
):
    """Exact t-SNE; also returns KL(P || Q) at the requested iterations."""
    x = as_matrix(embeddings, "embeddings")
    n = x.shape[0]
    if perplexity <= 1.0:
        raise ConfigError(f"perplexity must exceed 1, got {perplexity}")
    if n > 5000:
        raise ConfigError(f"exact t-SNE is capped at 5000 points, got {n}")
    if n < 3 * perplexity:
        raise ConfigError(f"perplexity {perplexity} too large for {n} points (need N >= 3*perplexity)")
    if iterations < 1:
        raise ConfigError(f"iterations must be >= 1, got {iterations}")

    exaggeration_until = 250
    joint = _affinities(x, perplexity)
    rng = np.random.Generator(np.random.PCG64(seed))
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    diag = np.eye(n, dtype=bool)
    kl_trace = {}
    for step in range(1, iterations + 1):
        sq = ((y[:, None, :] - y[None, :, :]) ** 2).sum(axis=2)
        kernel = 1.0 / (1.0 + sq)
        kernel[diag] = 0.0
        q = np.maximum(kernel / kernel.sum(), 1e-12)
        p_eff = joint * 12.0 if step <= exaggeration_until else joint
        w = (p_eff - q) * kernel
        grad = 4.0 * (w.sum(axis=1)[:, None] * y - w @ y)
        # per-coordinate gains damp the overdriven oscillation a fixed
        # step size causes at small N and accelerate coherent directions
        gains = np.where(np.sign(grad) == np.sign(velocity), gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        momentum = 0.5 if step <= exaggeration_until else 0.8
        velocity = momentum * velocity - learning_rate * gains * grad
        y = y + velocity
        y = y - y.mean(axis=0, keepdims=True)
        if step in trace_at:
            kl_trace[step] = float((joint * np.log(joint / q)).sum())
    if not np.all(np.isfinite(y)):
        raise NumericError("t-SNE diverged to non-finite coordinates")
    return y, kl_trace


def tsne_project(
    embeddings, perplexity: float = 30.0, iterations: int = 1000, seed: int = 0, learning_rate: float = 200.0
) -> np.ndarray:
    """Exact O(N^2) t-SNE to 2-D.

    Per-point Gaussian bandwidths are bisected until each row's entropy
    matches log(perplexity) within 1e-5; affinities are symmetrized and
    floored at 1e-12. Descent runs `iterations` steps of momentum (0.5,
    then 0.8 after iteration 250) with per-coordinate adaptive gains and
    early exaggeration (factor 12 through iteration 250) from a seeded
    N(0, 1e-4) start.
    """
    y, _ = _tsne_with_trace(embeddings, perplexity, iterations, seed, learning_rate)
    return y
