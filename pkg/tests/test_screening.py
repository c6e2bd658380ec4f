"""Positive-pool construction, the pace schedule, and gradient scoring."""

import math

import numpy as np
import pytest

from metacontrast import encoder, numcore, screening
from metacontrast.errors import ConfigError, ContractViolationError, DimensionError

DIMS = encoder.EncoderDims(feature_dim=3, hidden_dim=12, image_dim=5, pixel_dim=4)
TAU = 0.1


def test_build_pool_sizes_and_order():
    aff = np.array([0.1, 0.9, 0.5, 0.7, 0.3])
    pool, negs = screening.build_pool(aff, 0.3)
    assert pool.tolist() == [1, 3]  # ceil(0.3 * 5) = 2 highest
    assert negs.tolist() == [0, 2, 4]
    pool, negs = screening.build_pool(aff, 1.0)
    assert sorted(pool.tolist()) == [0, 1, 2, 3, 4]
    assert negs.size == 0


def test_build_pool_ties_prefer_lower_index():
    aff = np.array([0.5, 0.9, 0.5, 0.9, 0.5])
    pool, _ = screening.build_pool(aff, 0.6)  # ceil(3) of 5
    assert pool.tolist() == [1, 3, 0]


def test_build_pool_validation():
    with pytest.raises(ConfigError):
        screening.build_pool(np.array([1.0]), 0.0)
    with pytest.raises(DimensionError):
        screening.build_pool(np.zeros((2, 2)), 0.3)


def test_pace_frozen_values():
    # t = 0: raw collapses to exactly (1 - 1) * pool, clamped up to one.
    assert abs(screening.pace_raw(0, 100, 20)) < 1e-12
    assert screening.pace_size(0, 100, 20) == 1
    # Midpoint: (1 + ln(0.5 + e^-4)/4) * 20 = 16.7141..., rounds to 17.
    assert screening.pace_raw(50, 100, 20) == pytest.approx(16.71414559594124, abs=1e-10)
    assert screening.pace_size(50, 100, 20) == 17
    # End of training admits the whole pool (raw overshoots, clamp holds).
    assert screening.pace_size(100, 100, 20) == 20


def test_pace_monotone_nondecreasing_sweep():
    rng = np.random.default_rng(0)
    for _ in range(20):
        total = int(rng.integers(1, 500))
        pool = int(rng.integers(1, 64))
        sizes = [screening.pace_size(t, total, pool) for t in range(total + 1)]
        assert sizes[0] >= 1 and sizes[-1] == pool
        assert all(a <= b for a, b in zip(sizes, sizes[1:]))
        assert all(1 <= s <= pool for s in sizes)


def test_pace_validation():
    with pytest.raises(ConfigError):
        screening.pace_raw(0, 0, 4)
    with pytest.raises(ContractViolationError):
        screening.pace_raw(5, 4, 4)
    with pytest.raises(ContractViolationError):
        screening.pace_raw(0, 4, 0)


def _full_sort_reference(candidates, affinities, scores, keep):
    """Ranking oracle: stable sort on (score asc, affinity desc, index asc)."""
    rows = sorted(
        range(len(candidates)),
        key=lambda k: (scores[k], -affinities[k], candidates[k]),
    )
    return [candidates[k] for k in rows[:keep]]


def test_screen_matches_full_sort_oracle_with_ties():
    rng = np.random.default_rng(1)
    for _ in range(300):
        n = int(rng.integers(1, 24))
        cands = rng.choice(200, size=n, replace=False)
        # Coarse grids force plenty of score and affinity ties.
        scores = rng.integers(0, 4, size=n).astype(float) / 4.0
        affs = rng.integers(0, 4, size=n).astype(float) / 4.0
        t = int(rng.integers(0, 101))
        pool = screening.ScoredPool(
            candidates=cands, affinities=affs, scores=scores
        )
        got = screening.screen(pool, t, 100)
        keep = screening.pace_size(t, 100, n)
        assert got.tolist() == _full_sort_reference(cands, affs, scores, keep)
        assert pool.admitted.sum() == keep
        assert sorted(cands[pool.admitted].tolist()) == sorted(got.tolist())


def test_screen_admitted_sets_are_nested_over_time():
    rng = np.random.default_rng(2)
    cands = np.arange(30)
    affs = rng.normal(size=30)
    scores = rng.normal(size=30)
    previous = set()
    for t in [0, 10, 40, 70, 100]:
        pool = screening.ScoredPool(
            candidates=cands, affinities=affs, scores=scores
        )
        admitted = set(screening.screen(pool, t, 100).tolist())
        assert previous <= admitted
        previous = admitted


def test_screen_empty_pool_rejected():
    pool = screening.ScoredPool(
        candidates=np.array([], dtype=int),
        affinities=np.array([]),
        scores=np.array([]),
    )
    with pytest.raises(ContractViolationError):
        screening.screen(pool, 0, 10)


def _term_through_weights(params, trace, pixel, cand_row, neg_rows, matrices):
    """Single-positive loss term as a function of selected weight matrices.

    Recomputes the anchor pixel's chain from the cached trunk activation so
    finite differences can probe w2 / wp1 / wp2 while the candidate and the
    negatives stay constant.
    """
    h1 = trace.h1[pixel]
    F = matrices["w2"] @ h1 + params.b2
    p1 = np.maximum(matrices["wp1"] @ F + params.bp1, 0.0)
    u_pre = matrices["wp2"] @ p1 + params.bp2
    u = u_pre / np.linalg.norm(u_pre)
    e_pos = math.exp(float(u @ cand_row) / TAU)
    e_negs = sum(math.exp(float(u @ n) / TAU) for n in neg_rows)
    return -math.log(e_pos / (e_pos + e_negs))


@pytest.mark.parametrize("scope", ["encoder_last", "with_pixel_head"])
def test_score_matches_finite_differences(scope):
    rng = np.random.default_rng(3)
    params = encoder.init_params(5, DIMS)
    image = rng.normal(size=(6, 3))
    _, trace = encoder.forward(params, image, want_trace=True)
    cand = rng.normal(size=(3, DIMS.pixel_dim))
    cand /= np.linalg.norm(cand, axis=1, keepdims=True)
    neg = rng.normal(size=(4, DIMS.pixel_dim))
    neg /= np.linalg.norm(neg, axis=1, keepdims=True)
    pixel = 2

    got = screening.score_candidates(params, trace, pixel, cand, neg, TAU, scope)
    probed = ["w2"] if scope == "encoder_last" else ["w2", "wp1", "wp2"]
    for c in range(cand.shape[0]):
        total_sq = 0.0
        for name in probed:
            base = getattr(params, name)

            def f(flat, name=name, c=c):
                mats = {
                    "w2": params.w2,
                    "wp1": params.wp1,
                    "wp2": params.wp2,
                }
                mats[name] = flat.reshape(base.shape)
                return _term_through_weights(
                    params, trace, pixel, cand[c], neg, mats
                )

            grad = numcore.finite_diff_grad(f, base.ravel())
            total_sq += float(grad @ grad)
        assert got[c] == pytest.approx(math.sqrt(total_sq), rel=1e-5)


def test_score_positive_matches_batch_scorer():
    rng = np.random.default_rng(4)
    params = encoder.init_params(6, DIMS)
    image = rng.normal(size=(5, 3))
    _, trace = encoder.forward(params, image, want_trace=True)
    cand = rng.normal(size=(4, DIMS.pixel_dim))
    neg = rng.normal(size=(3, DIMS.pixel_dim))
    batch = screening.score_candidates(params, trace, 1, cand, neg, TAU)
    for k in range(4):
        single = screening.score_positive(params, trace, 1, cand[k], neg, TAU)
        assert single == pytest.approx(batch[k], abs=1e-12)


def test_score_confident_match_scores_lower():
    # A candidate aligned with the anchor (easy positive) must produce a
    # smaller gradient than a strongly opposed one, all else equal.
    rng = np.random.default_rng(5)
    params = encoder.init_params(7, DIMS)
    image = rng.normal(size=(4, 3))
    _, trace = encoder.forward(params, image, want_trace=True)
    u = trace.U[0]
    spread = rng.normal(size=DIMS.pixel_dim)
    spread -= (spread @ u) * u
    spread /= np.linalg.norm(spread)
    cand = np.stack([u, spread])  # aligned vs orthogonal
    neg = rng.normal(size=(6, DIMS.pixel_dim))
    neg /= np.linalg.norm(neg, axis=1, keepdims=True)
    scores = screening.score_candidates(params, trace, 0, cand, neg, TAU)
    assert scores[0] < scores[1]


def test_score_validation():
    params = encoder.init_params(8, DIMS)
    rng = np.random.default_rng(6)
    image = rng.normal(size=(4, 3))
    _, trace = encoder.forward(params, image, want_trace=True)
    cand = np.ones((1, DIMS.pixel_dim))
    neg = np.ones((1, DIMS.pixel_dim))
    with pytest.raises(ConfigError):
        screening.score_candidates(params, trace, 0, cand, neg, TAU, "nope")
    with pytest.raises(ConfigError):
        screening.score_candidates(params, trace, 0, cand, neg, 0.0)
    with pytest.raises(ContractViolationError):
        screening.score_candidates(params, None, 0, cand, neg, TAU)
    with pytest.raises(ContractViolationError):
        screening.score_candidates(params, trace, 9, cand, neg, TAU)
    with pytest.raises(DimensionError):
        screening.score_candidates(params, trace, 0, np.ones((1, 3)), neg, TAU)


def test_pace_config_validation():
    screening.PaceConfig(total_steps=10).validate()
    with pytest.raises(ConfigError):
        screening.PaceConfig(total_steps=0).validate()
    with pytest.raises(ConfigError):
        screening.PaceConfig(total_steps=5, pool_fraction=1.5).validate()
