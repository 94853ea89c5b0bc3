"""Finetuning objectives with analytic gradients.

Three stage-1 objectives (triplet, redundancy-reduction over the batch
cross-correlation, and their weighted combination) plus the cross-entropy
used by the classifier stages. Each function validates shapes up front and
returns the loss together with gradients for every input batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import BatchSizeError, ConfigError, DataError, DimensionError
from .linalg import as_matrix

logger = logging.getLogger(__name__)

# Added to every norm product in the correlation denominator. Columns whose
# batch norm falls below this are treated as dead: their correlation entries
# are zeroed and they receive no gradient.
NORM_GUARD = 1e-12

__all__ = [
    "NORM_GUARD",
    "TripletLossResult",
    "BarlowTwinsResult",
    "CombinedLossResult",
    "CrossEntropyResult",
    "triplet_loss",
    "cross_correlation",
    "barlow_twins_loss",
    "combined_loss",
    "cross_entropy_loss",
]


@dataclass
class TripletLossResult:
    loss: float
    pos_distances: np.ndarray  # squared anchor-positive distance per row
    neg_distances: np.ndarray  # squared anchor-negative distance per row
    grad_anchor: np.ndarray
    grad_positive: np.ndarray
    grad_negative: np.ndarray


@dataclass
class BarlowTwinsResult:
    loss: float
    correlation: np.ndarray  # D x D cross-correlation actually used
    grad_anchor: np.ndarray
    grad_positive: np.ndarray


@dataclass
class CombinedLossResult:
    loss: float
    grad_anchor: np.ndarray
    grad_positive: np.ndarray
    grad_negative: np.ndarray
    triplet: TripletLossResult
    barlow: BarlowTwinsResult | None  # None when the weight is exactly 0


@dataclass
class CrossEntropyResult:
    loss: float
    grad_logits: np.ndarray
    probabilities: np.ndarray


def _embedding_batch(x, name: str) -> np.ndarray:
    arr = as_matrix(x, name)
    if arr.shape[0] < 1:
        raise BatchSizeError(f"{name} must contain at least one row")
    return arr


def _congruent(*named):
    shape = named[0][1].shape
    for name, arr in named[1:]:
        if arr.shape != shape:
            raise DimensionError(f"{name} shape {arr.shape} != {named[0][0]} shape {shape}")


def triplet_loss(anchor, positive, negative, margin: float) -> TripletLossResult:
    """Hinge over squared Euclidean distances, summed across the batch.

    A row contributes max(d_pos - d_neg + margin, 0). At the exact hinge
    boundary the active branch is differentiated, so a zero-slack row still
    produces gradients.
    """
    if margin < 0.0:
        raise ConfigError(f"margin must be >= 0, got {margin}")
    anchor = _embedding_batch(anchor, "anchor")
    positive = _embedding_batch(positive, "positive")
    negative = _embedding_batch(negative, "negative")
    _congruent(("anchor", anchor), ("positive", positive), ("negative", negative))

    diff_pos = anchor - positive
    diff_neg = anchor - negative
    pos_distances = (diff_pos * diff_pos).sum(axis=1)
    neg_distances = (diff_neg * diff_neg).sum(axis=1)
    slack = pos_distances - neg_distances + margin
    active = (slack >= 0.0)[:, None].astype(np.float64)
    loss = float(np.maximum(slack, 0.0).sum())

    grad_anchor = 2.0 * active * (negative - positive)
    grad_positive = -2.0 * active * diff_pos
    grad_negative = 2.0 * active * diff_neg
    return TripletLossResult(loss, pos_distances, neg_distances, grad_anchor, grad_positive, grad_negative)


def _correlation_parts(anchor, positive):
    """Cross-correlation matrix plus the pieces its gradient needs."""
    norms_a = np.sqrt((anchor * anchor).sum(axis=0))
    norms_p = np.sqrt((positive * positive).sum(axis=0))
    denom = np.outer(norms_a, norms_p) + NORM_GUARD
    corr = (anchor.T @ positive) / denom
    dead_a = norms_a < NORM_GUARD
    dead_p = norms_p < NORM_GUARD
    if dead_a.any() or dead_p.any():
        logger.warning(
            "cross_correlation: zeroing %d anchor and %d positive dimensions with vanishing batch norm",
            int(dead_a.sum()),
            int(dead_p.sum()),
        )
        corr[dead_a, :] = 0.0
        corr[:, dead_p] = 0.0
    return corr, denom, norms_a, norms_p, dead_a, dead_p


def _pair_batches(anchor, positive, center: bool):
    anchor = _embedding_batch(anchor, "anchor")
    positive = _embedding_batch(positive, "positive")
    _congruent(("anchor", anchor), ("positive", positive))
    if anchor.shape[0] < 2:
        raise BatchSizeError(f"batch statistics need at least 2 rows, got {anchor.shape[0]}")
    if center:
        anchor = anchor - anchor.mean(axis=0, keepdims=True)
        positive = positive - positive.mean(axis=0, keepdims=True)
    return anchor, positive


def cross_correlation(anchor, positive, center: bool = False) -> np.ndarray:
    """Dimension-by-dimension cosine between two batches.

    Entry (i, j) is the batch inner product of anchor column i with positive
    column j over the product of their batch norms. With center=True the
    column means are removed first, turning each entry into a Pearson
    correlation.
    """
    anchor, positive = _pair_batches(anchor, positive, center)
    corr, *_ = _correlation_parts(anchor, positive)
    return corr


def barlow_twins_loss(anchor, positive, lambd: float = 0.005, center: bool = False) -> BarlowTwinsResult:
    """Drive the cross-correlation toward identity.

    loss = sum_i (1 - C_ii)^2 + lambd * sum_{i != j} C_ij^2. The gradient
    is taken through the normalization, so both the inner products and the
    batch norms feed it.
    """
    if lambd < 0.0:
        raise ConfigError(f"off-diagonal weight must be >= 0, got {lambd}")
    centered_anchor, centered_positive = _pair_batches(anchor, positive, center)
    corr, denom, norms_a, norms_p, dead_a, dead_p = _correlation_parts(centered_anchor, centered_positive)

    dim = corr.shape[0]
    diag = np.diagonal(corr)
    off_mask = ~np.eye(dim, dtype=bool)
    loss = float(((1.0 - diag) ** 2).sum() + lambd * (corr[off_mask] ** 2).sum())

    # dL/dC, with dead rows/columns receiving no gradient.
    g_corr = np.where(off_mask, 2.0 * lambd * corr, 0.0)
    g_corr[np.arange(dim), np.arange(dim)] = -2.0 * (1.0 - diag)
    g_corr[dead_a, :] = 0.0
    g_corr[:, dead_p] = 0.0

    # Chain through C = S / (n m^T + guard): the inner-product term routes
    # through the other batch, the norm term pulls radially along each column.
    w = g_corr / denom
    safe_a = np.where(dead_a, 1.0, norms_a)
    safe_p = np.where(dead_p, 1.0, norms_p)
    radial_a = (g_corr * corr * (norms_p[None, :] / denom)).sum(axis=1) / safe_a
    radial_p = (g_corr * corr * (norms_a[:, None] / denom)).sum(axis=0) / safe_p
    grad_anchor = centered_positive @ w.T - centered_anchor * radial_a[None, :]
    grad_positive = centered_anchor @ w - centered_positive * radial_p[None, :]
    if center:
        # Centering is a linear map; its transpose removes the column mean.
        grad_anchor = grad_anchor - grad_anchor.mean(axis=0, keepdims=True)
        grad_positive = grad_positive - grad_positive.mean(axis=0, keepdims=True)
    return BarlowTwinsResult(loss, corr, grad_anchor, grad_positive)


def combined_loss(
    anchor,
    positive,
    negative,
    margin: float,
    lambd: float = 0.005,
    beta: float = 0.01,
    center: bool = False,
) -> CombinedLossResult:
    """Triplet plus beta times the redundancy-reduction term.

    With beta == 0 the correlation term is skipped entirely, so the result
    is bit-identical to triplet_loss on the same inputs. Batch preconditions
    of both constituents apply regardless of beta.
    """
    if beta < 0.0:
        raise ConfigError(f"combination weight must be >= 0, got {beta}")
    _pair_batches(anchor, positive, False)  # enforce the 2-row floor up front
    trip = triplet_loss(anchor, positive, negative, margin)
    if beta == 0.0:
        return CombinedLossResult(
            trip.loss, trip.grad_anchor, trip.grad_positive, trip.grad_negative, trip, None
        )
    barlow = barlow_twins_loss(anchor, positive, lambd, center)
    loss = trip.loss + beta * barlow.loss
    grad_anchor = trip.grad_anchor + beta * barlow.grad_anchor
    grad_positive = trip.grad_positive + beta * barlow.grad_positive
    return CombinedLossResult(loss, grad_anchor, grad_positive, trip.grad_negative, trip, barlow)


def cross_entropy_loss(logits, labels) -> CrossEntropyResult:
    """Mean cross-entropy over the batch, stabilized via log-sum-exp."""
    logits = _embedding_batch(logits, "logits")
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DimensionError(f"labels must be 1-D, got shape {labels.shape}")
    if labels.shape[0] != logits.shape[0]:
        raise DimensionError(f"{labels.shape[0]} labels for {logits.shape[0]} logit rows")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DataError(f"labels must be integers, got dtype {labels.dtype}")
    n, k = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise DataError(f"label {bad} outside [0, {k})")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean())
    probabilities = np.exp(log_probs)
    grad_logits = probabilities.copy()
    grad_logits[rows, labels] -= 1.0
    grad_logits /= n
    return CrossEntropyResult(loss, grad_logits, probabilities)
