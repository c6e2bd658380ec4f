"""Self-paced screening of candidate positive pixels.

Candidates for an anchor pixel are the partner image's top pool_fraction
pixels by affinity. Each candidate is scored by the gradient magnitude its
single-positive loss term would induce on the deepest shared encoder layer
(low score = the model is already confident about the match), and a pace
schedule that opens logarithmically with training progress admits the
lowest-scoring candidates first. Pool members that are not admitted take no
part in the loss at all: they are neither positives nor negatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderParams, ForwardTrace
from .errors import ConfigError, ContractViolationError, DimensionError

SCORE_SCOPES = ("encoder_last", "with_pixel_head")


@dataclass(frozen=True)
class PaceConfig:
    total_steps: int
    pool_fraction: float = 0.3

    def validate(self) -> None:
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if not 0.0 < self.pool_fraction <= 1.0:
            raise ConfigError("pool_fraction must lie in (0, 1]")


def build_pool(affinity_row: np.ndarray, pool_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Split partner pixels into (pool, negatives) by affinity.

    The pool holds the ceil(pool_fraction * n) highest-affinity indices, ties
    broken toward the lower index; everything else is a negative.
    """
    if not 0.0 < pool_fraction <= 1.0:
        raise ConfigError("pool_fraction must lie in (0, 1]")
    aff = np.asarray(affinity_row, dtype=np.float64)
    if aff.ndim != 1 or aff.size == 0:
        raise DimensionError("affinity row must be a non-empty vector")
    n = aff.size
    k = math.ceil(pool_fraction * n)
    order = np.lexsort((np.arange(n), -aff))
    pool = order[:k]
    negatives = np.sort(order[k:])
    return pool, negatives


def pace_raw(t: int, total_steps: int, pool_size: int) -> float:
    """Unclamped pace value: (1 + ln(t/T + e^-4)/4) * pool_size."""
    if total_steps < 1:
        raise ConfigError("total_steps must be >= 1")
    if not 0 <= t <= total_steps:
        raise ContractViolationError("step must lie in [0, total_steps]")
    if pool_size < 1:
        raise ContractViolationError("pool_size must be >= 1")
    return (1.0 + 0.25 * math.log(t / total_steps + math.exp(-4.0))) * pool_size


def pace_size(t: int, total_steps: int, pool_size: int) -> int:
    """Admitted-positive count at step t, rounded and clamped into [1, pool_size]."""
    return int(min(max(round(pace_raw(t, total_steps, pool_size)), 1), pool_size))


@dataclass
class ScoredPool:
    """Pool candidates sorted by descending affinity, with their scores."""

    candidates: np.ndarray
    affinities: np.ndarray
    scores: np.ndarray
    admitted: np.ndarray | None = None


def screen(pool: ScoredPool, t: int, total_steps: int) -> np.ndarray:
    """Admit the pace_size(t) lowest-scoring candidates.

    Ties go to the higher-affinity candidate, then to the lower pixel index.
    Because the sort order is fixed, the admitted set at an earlier step is
    always a subset of the admitted set at a later step of the same pool.
    Sets ``pool.admitted`` (a boolean mask over candidates) and returns the
    admitted pixel indices in admission order.
    """
    cands = np.asarray(pool.candidates)
    if cands.size == 0:
        raise ContractViolationError("cannot screen an empty pool")
    if not (cands.shape == pool.affinities.shape == pool.scores.shape):
        raise DimensionError("pool arrays must align")
    keep = pace_size(t, total_steps, cands.size)
    order = np.lexsort((cands, -pool.affinities, pool.scores))
    chosen = order[:keep]
    mask = np.zeros(cands.size, dtype=bool)
    mask[chosen] = True
    pool.admitted = mask
    return cands[chosen]


def score_candidates(
    params: EncoderParams,
    trace: ForwardTrace,
    pixel: int,
    candidate_rows: np.ndarray,
    negative_rows: np.ndarray,
    tau: float,
    scope: str = "encoder_last",
) -> np.ndarray:
    """Gradient-magnitude score of each candidate positive for one anchor pixel.

    The score is the Frobenius norm of the gradient of that candidate's
    single-positive loss term with respect to the second trunk weight matrix,
    taken along the anchor pixel's own forward chain (the candidate and the
    negatives are treated as constants). ``scope="with_pixel_head"`` also
    accumulates the pixel-head weight matrices, for ablation.

    Each per-pixel weight gradient is a rank-one outer product, so its norm
    factors into (chained upstream row norm) * (cached activation row norm).
    """
    if scope not in SCORE_SCOPES:
        raise ConfigError(f"unknown score scope {scope!r}")
    if tau <= 0.0:
        raise ConfigError("temperature must be positive")
    if trace is None:
        raise ContractViolationError("scoring needs a forward trace")
    n_pix = trace.U.shape[0]
    if not 0 <= pixel < n_pix:
        raise ContractViolationError("anchor pixel outside the traced image")
    cand = np.asarray(candidate_rows, dtype=np.float64)
    neg = np.asarray(negative_rows, dtype=np.float64).reshape(-1, trace.U.shape[1])
    if cand.ndim != 2 or cand.shape[1] != trace.U.shape[1]:
        raise DimensionError("candidate rows must match the pixel feature dim")

    u = trace.U[pixel]
    s_c = (cand @ u) / tau
    if neg.shape[0]:
        s_n = (neg @ u) / tau
        n_max = s_n.max()
        soft = np.exp(s_n - n_max)
        neg_lse = n_max + np.log(soft.sum())
        soft /= soft.sum()
        mean_neg = soft @ neg
    else:
        neg_lse = -np.inf
        mean_neg = np.zeros_like(u)
    base = np.maximum(s_c, neg_lse)
    sigma = np.exp(s_c - base) / (np.exp(s_c - base) + np.exp(neg_lse - base))
    d_u = ((sigma - 1.0)[:, None] * cand + (1.0 - sigma)[:, None] * mean_neg) / tau

    # chain through the row normalization and the pixel head, anchor row only
    r = trace.U_norms[pixel]
    d_upre = (d_u - (d_u @ u)[:, None] * u) / r
    d_p1 = d_upre @ params.wp2
    d_p1_pre = d_p1 * (trace.p1_pre[pixel] > 0.0)
    d_f = d_p1_pre @ params.wp1
    score_sq = np.einsum("ij,ij->i", d_f, d_f) * float(trace.h1[pixel] @ trace.h1[pixel])
    if scope == "with_pixel_head":
        score_sq = score_sq + (
            np.einsum("ij,ij->i", d_upre, d_upre)
            * float(trace.p1[pixel] @ trace.p1[pixel])
        )
        score_sq = score_sq + (
            np.einsum("ij,ij->i", d_p1_pre, d_p1_pre)
            * float(trace.F[pixel] @ trace.F[pixel])
        )
    return np.sqrt(score_sq)


def score_positive(
    params: EncoderParams,
    trace: ForwardTrace,
    pixel: int,
    positive_row: np.ndarray,
    negative_rows: np.ndarray,
    tau: float,
    scope: str = "encoder_last",
) -> float:
    """Score a single candidate positive; see ``score_candidates``."""
    row = np.asarray(positive_row, dtype=np.float64).reshape(1, -1)
    return float(score_candidates(params, trace, pixel, row, negative_rows, tau, scope)[0])
