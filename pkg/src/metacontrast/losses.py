"""Contrastive losses with hand-derived gradients.

Two granularities share one temperature:

* an image-level loss over the pooled unit vectors of a batch, where the
  positive set of an anchor is every other view with the same source image
  or the same value under the active meta label, and the denominator runs
  over all non-anchor views (positives included);
* a pixel-level loss over the unit pixel rows of an anchor/partner image
  pair, where each positive gets its own denominator of that positive plus
  the anchor's negative pixels.

Both return analytic gradients with respect to the representations they
consume; chaining into encoder parameters is `encoder.backward`'s job.
``anchor_gradient`` is an independently coded closed form of the pixel-loss
anchor component and is kept deliberately naive (raw exp sums, explicit
loops) so agreement between the two routes stays meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    ConfigError,
    ContractViolationError,
    DegenerateVectorError,
    DimensionError,
)


def build_positive_sets(
    source_ids: np.ndarray,
    meta_values: np.ndarray | None = None,
) -> list[np.ndarray]:
    """Positive indices per anchor: same source, or same meta value if given.

    With ``meta_values=None`` this degenerates to co-view-only positives
    (the vanilla contrastive positive set).
    """
    source_ids = np.asarray(source_ids)
    n = source_ids.shape[0]
    if n < 2:
        raise ContractViolationError("a batch needs at least two views")
    same = source_ids[:, None] == source_ids[None, :]
    if meta_values is not None:
        meta_values = np.asarray(meta_values)
        if meta_values.shape != source_ids.shape:
            raise DimensionError("meta values must align with source ids")
        same = same | (meta_values[:, None] == meta_values[None, :])
    np.fill_diagonal(same, False)
    return [np.flatnonzero(row) for row in same]


def image_softmax_weights(z: np.ndarray, tau: float) -> np.ndarray:
    """Row-stochastic weights over non-anchor views: softmax of z_i.z_a / tau."""
    z = np.asarray(z, dtype=np.float64)
    logits = (z @ z.T) / tau
    np.fill_diagonal(logits, -np.inf)
    row_max = logits.max(axis=1, keepdims=True)
    w = np.exp(logits - row_max)
    return w / w.sum(axis=1, keepdims=True)


def image_loss(
    z: np.ndarray,
    positive_sets: Sequence[np.ndarray],
    tau: float,
) -> tuple[float, np.ndarray]:
    """Mean image-level contrastive loss and its gradient w.r.t. every z row.

    For anchor i the loss is -(1/|P_i|) sum_{j in P_i} log softmax_j, with the
    softmax taken over all a != i. Rows of ``z`` must already be unit vectors;
    the gradient returned is with respect to those unit vectors (the
    normalization Jacobian lives in the encoder backward).
    """
    if tau <= 0.0:
        raise ConfigError("temperature must be positive")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise DimensionError("z must be (views, image_dim)")
    n = z.shape[0]
    if len(positive_sets) != n:
        raise DimensionError("one positive set per view is required")
    sizes = np.zeros(n)
    pos_mask = np.zeros((n, n))
    for i, pos in enumerate(positive_sets):
        pos = np.asarray(pos, dtype=int)
        if pos.size == 0:
            raise ContractViolationError(f"anchor {i} has an empty positive set")
        if np.any(pos == i) or np.any((pos < 0) | (pos >= n)):
            raise ContractViolationError(f"anchor {i} has an invalid positive set")
        sizes[i] = pos.size
        pos_mask[i, pos] = 1.0

    logits = (z @ z.T) / tau
    diag_free = logits.copy()
    np.fill_diagonal(diag_free, -np.inf)
    row_max = diag_free.max(axis=1, keepdims=True)
    expv = np.exp(diag_free - row_max)
    denom = expv.sum(axis=1, keepdims=True)
    lse = row_max[:, 0] + np.log(denom[:, 0])
    mean_pos_logit = (pos_mask * logits).sum(axis=1) / sizes
    loss = float(np.mean(lse - mean_pos_logit))

    weights = expv / denom
    # d loss / d logits[i, a], folded over the 1/n anchor average
    coeff = (weights - pos_mask / sizes[:, None]) / n
    dz = (coeff @ z + coeff.T @ z) / tau
    return loss, dz


def pixel_affinity(Z_i: np.ndarray, Z_j: np.ndarray) -> np.ndarray:
    """Cosine similarity between every pixel row of two image-space maps."""
    Z_i = np.asarray(Z_i, dtype=np.float64)
    Z_j = np.asarray(Z_j, dtype=np.float64)
    if Z_i.ndim != 2 or Z_j.ndim != 2 or Z_i.shape[1] != Z_j.shape[1]:
        raise DimensionError("pixel maps must be 2-d with a shared feature dim")
    ni = np.linalg.norm(Z_i, axis=1)
    nj = np.linalg.norm(Z_j, axis=1)
    if np.any(ni == 0.0) or np.any(nj == 0.0):
        raise DegenerateVectorError("affinity undefined for zero-norm pixel rows")
    aff = (Z_i @ Z_j.T) / np.outer(ni, nj)
    return np.clip(aff, -1.0, 1.0)


@dataclass
class PixelPairing:
    """One anchor pixel with its admitted positives and negatives (partner indices)."""

    anchor: int
    positives: np.ndarray
    negatives: np.ndarray


def pixel_loss(
    U_i: np.ndarray,
    U_j: np.ndarray,
    pairings: Sequence[PixelPairing],
    tau: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Pixel-level contrastive loss for one image pair, averaged over anchors.

    Each positive p of anchor u contributes -log of exp(u.p/tau) over
    (exp(u.p/tau) + sum over negatives of exp(u.n/tau)); a positive never
    appears in another positive's denominator. Returns the loss and the
    gradients with respect to the rows of ``U_i`` (anchor side) and ``U_j``
    (positive and negative side).
    """
    if tau <= 0.0:
        raise ConfigError("temperature must be positive")
    U_i = np.asarray(U_i, dtype=np.float64)
    U_j = np.asarray(U_j, dtype=np.float64)
    if U_i.ndim != 2 or U_j.ndim != 2 or U_i.shape[1] != U_j.shape[1]:
        raise DimensionError("pixel representations must share the feature dim")
    if len(pairings) == 0:
        raise ContractViolationError("at least one anchor pairing is required")

    total = 0.0
    dU_i = np.zeros_like(U_i)
    dU_j = np.zeros_like(U_j)
    weight = 1.0 / len(pairings)
    for pairing in pairings:
        u = U_i[pairing.anchor]
        pos = np.asarray(pairing.positives, dtype=int)
        neg = np.asarray(pairing.negatives, dtype=int)
        if pos.size == 0:
            raise ContractViolationError("each anchor needs at least one positive")
        if np.intersect1d(pos, neg).size:
            raise ContractViolationError("positives and negatives overlap")
        s_pos = (U_j[pos] @ u) / tau
        if neg.size:
            s_neg = (U_j[neg] @ u) / tau
            neg_max = s_neg.max()
            neg_soft = np.exp(s_neg - neg_max)
            neg_lse = neg_max + np.log(neg_soft.sum())
            neg_soft /= neg_soft.sum()
        else:
            neg_lse = -np.inf
            neg_soft = np.zeros(0)

        # per-positive denominator: own exp plus the shared negative mass
        base = np.maximum(s_pos, neg_lse)
        sigma_pos = np.exp(s_pos - base) / (
            np.exp(s_pos - base) + np.exp(neg_lse - base)
        )
        total += weight * float(np.mean(-np.log(sigma_pos)))

        k = pos.size
        rest = 1.0 - sigma_pos  # negative mass per positive
        if neg.size:
            mean_neg = neg_soft @ U_j[neg]
        else:
            mean_neg = np.zeros(U_j.shape[1])
        # d/d u, summed over this anchor's positives
        d_u = ((sigma_pos - 1.0) @ U_j[pos] + rest.sum() * mean_neg) / (tau * k)
        dU_i[pairing.anchor] += weight * d_u
        # d/d positive rows
        np.add.at(dU_j, pos, weight * ((sigma_pos - 1.0) / (tau * k))[:, None] * u)
        # d/d negative rows: each negative collects its softmax share of every
        # positive's leftover mass
        if neg.size:
            scale = weight * rest.sum() / (tau * k)
            np.add.at(dU_j, neg, scale * neg_soft[:, None] * u)
    return total, dU_i, dU_j


def anchor_gradient(
    u: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray,
    tau: float,
) -> np.ndarray:
    """Closed-form gradient of the per-anchor pixel loss w.r.t. the anchor row.

    Written as the direct double sum over positives and negatives with raw
    exponentials, as an independent check of ``pixel_loss``'s anchor
    component. With no negatives every log term is zero, so the gradient is
    exactly zero.
    """
    if tau <= 0.0:
        raise ConfigError("temperature must be positive")
    u = np.asarray(u, dtype=np.float64)
    positives = np.atleast_2d(np.asarray(positives, dtype=np.float64))
    negatives = np.asarray(negatives, dtype=np.float64).reshape(-1, u.shape[0])
    if positives.shape[0] == 0:
        raise ContractViolationError("at least one positive is required")
    total = np.zeros_like(u)
    for p in positives:
        denom = np.exp(u @ p / tau)
        inner = np.zeros_like(u)
        for nvec in negatives:
            e = np.exp(u @ nvec / tau)
            denom += e
            inner += e * (p - nvec)
        total += inner / denom
    return -total / (tau * positives.shape[0])


def joint_loss(
    image_losses: Sequence[float],
    pixel_losses: Sequence[float],
) -> tuple[float, list[float]]:
    """Total objective: sum over meta labels of image plus pixel terms."""
    if len(image_losses) != len(pixel_losses) or len(image_losses) == 0:
        raise DimensionError("need matching, non-empty per-label loss lists")
    per_label = [float(a) + float(b) for a, b in zip(image_losses, pixel_losses)]
    return float(sum(per_label)), per_label
