"""Contrastive losses checked against naive double-loop recomputations.

The oracles below use plain ``math`` loops on purpose: they share no code
with the vectorized implementations they audit.
"""

import math

import numpy as np
import pytest

from metacontrast import losses, numcore
from metacontrast.errors import (
    ConfigError,
    ContractViolationError,
    DegenerateVectorError,
    DimensionError,
)

TAU = 0.1


def _unit_rows(rng, n, d):
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _brute_image_loss(z, positive_sets, tau):
    n = len(z)
    total = 0.0
    for i in range(n):
        logits = [float(z[i] @ z[a]) / tau for a in range(n) if a != i]
        m = max(logits)
        lse = m + math.log(sum(math.exp(v - m) for v in logits))
        pos = positive_sets[i]
        inner = 0.0
        for j in pos:
            inner += float(z[i] @ z[j]) / tau - lse
        total += -inner / len(pos)
    return total / n


def _brute_pixel_loss(U_i, U_j, pairings, tau):
    total = 0.0
    for pairing in pairings:
        u = U_i[pairing.anchor]
        neg_exp = sum(math.exp(float(u @ U_j[a]) / tau) for a in pairing.negatives)
        inner = 0.0
        for p in pairing.positives:
            e = math.exp(float(u @ U_j[p]) / tau)
            inner += -math.log(e / (e + neg_exp))
        total += inner / len(pairing.positives)
    return total / len(pairings)


def test_build_positive_sets_co_view_only():
    sets = losses.build_positive_sets(np.array([7, 7, 3, 3]))
    assert [list(s) for s in sets] == [[1], [0], [3], [2]]


def test_build_positive_sets_meta_union():
    sources = np.array([0, 0, 1, 1])
    meta = np.array([5, 5, 5, 9])
    sets = losses.build_positive_sets(sources, meta)
    # View 3 shares a source with 2 only; views 0..2 share meta value 5.
    assert [list(s) for s in sets] == [[1, 2], [0, 2], [0, 1, 3], [2]]


def test_build_positive_sets_never_contains_self():
    rng = np.random.default_rng(0)
    for _ in range(50):
        src = rng.integers(0, 4, size=10)
        meta = rng.integers(0, 3, size=10)
        for i, s in enumerate(losses.build_positive_sets(src, meta)):
            assert i not in s


def test_build_positive_sets_shape_errors():
    with pytest.raises(ContractViolationError):
        losses.build_positive_sets(np.array([1]))
    with pytest.raises(DimensionError):
        losses.build_positive_sets(np.array([1, 2]), np.array([1, 2, 3]))


def test_image_softmax_weights_rows_sum_to_one():
    rng = np.random.default_rng(1)
    z = _unit_rows(rng, 6, 5)
    w = losses.image_softmax_weights(z, TAU)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.diag(w) == 0.0)


def test_image_loss_frozen_instance():
    # Four views, two sources, fixed rows; value frozen from the loop oracle.
    z = np.array(
        [
            [1.0, 0.0],
            [0.8, 0.6],
            [0.0, 1.0],
            [-0.6, 0.8],
        ]
    )
    sets = losses.build_positive_sets(np.array([0, 0, 1, 1]))
    want = _brute_image_loss(z, sets, 0.5)
    got, _ = losses.image_loss(z, sets, 0.5)
    assert got == pytest.approx(want, abs=1e-12)
    assert got == pytest.approx(0.43019027713671143, abs=1e-12)


def test_image_loss_matches_brute_force_sweep():
    rng = np.random.default_rng(2)
    for _ in range(60):
        n = int(rng.integers(2, 9))
        z = _unit_rows(rng, n, int(rng.integers(2, 6)))
        src = rng.integers(0, max(1, n // 2), size=n)
        meta = rng.integers(0, 3, size=n)
        # Retry until every anchor has a positive (brute oracle needs that too).
        sets = losses.build_positive_sets(src, meta)
        if any(s.size == 0 for s in sets):
            continue
        got, _ = losses.image_loss(z, sets, TAU)
        assert got == pytest.approx(_brute_image_loss(z, sets, TAU), abs=1e-10)


def test_image_loss_two_views_is_zero():
    # With one other view the softmax is a single term; the log ratio is 0.
    rng = np.random.default_rng(3)
    z = _unit_rows(rng, 2, 4)
    loss, dz = losses.image_loss(z, losses.build_positive_sets(np.array([0, 0])), TAU)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(dz, 0.0, atol=1e-12)


def test_image_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(10):
        n = int(rng.integers(3, 7))
        d = int(rng.integers(2, 5))
        z = _unit_rows(rng, n, d)
        src = np.repeat(np.arange((n + 1) // 2), 2)[:n]
        sets = losses.build_positive_sets(src)
        if any(s.size == 0 for s in sets):
            continue
        _, dz = losses.image_loss(z, sets, TAU)
        numeric = numcore.finite_diff_grad(
            lambda flat: losses.image_loss(flat.reshape(n, d), sets, TAU)[0],
            z.ravel(),
        ).reshape(n, d)
        assert np.linalg.norm(dz - numeric) / np.linalg.norm(numeric) < 1e-6


def test_image_loss_validation():
    z = np.eye(3)
    with pytest.raises(ConfigError):
        losses.image_loss(z, [np.array([1])] * 3, 0.0)
    with pytest.raises(DimensionError):
        losses.image_loss(z, [np.array([1])], TAU)
    with pytest.raises(ContractViolationError):
        losses.image_loss(z, [np.array([]), np.array([0]), np.array([0])], TAU)
    with pytest.raises(ContractViolationError):
        losses.image_loss(z, [np.array([0]), np.array([0]), np.array([0])], TAU)


def test_pixel_affinity_matches_cosine_and_clips():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(4, 3)) * 3.0
    B = rng.normal(size=(5, 3))
    aff = losses.pixel_affinity(A, B)
    for i in range(4):
        for j in range(5):
            assert aff[i, j] == pytest.approx(numcore.cosine(A[i], B[j]), abs=1e-12)
    assert np.all(aff <= 1.0) and np.all(aff >= -1.0)
    with pytest.raises(DegenerateVectorError):
        losses.pixel_affinity(np.zeros((2, 3)), B)


def _random_pairings(rng, n_i, n_j):
    pairings = []
    n_anchors = int(rng.integers(1, min(4, n_i + 1)))
    for anchor in rng.choice(n_i, size=n_anchors, replace=False):
        perm = rng.permutation(n_j)
        k = int(rng.integers(1, max(2, n_j // 2)))
        m = int(rng.integers(0, n_j - k + 1))
        pairings.append(
            losses.PixelPairing(
                anchor=int(anchor),
                positives=perm[:k],
                negatives=perm[k : k + m],
            )
        )
    return pairings


def test_pixel_loss_matches_brute_force_sweep():
    rng = np.random.default_rng(6)
    for _ in range(80):
        n_i, n_j = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        U_i = _unit_rows(rng, n_i, 4)
        U_j = _unit_rows(rng, n_j, 4)
        pairings = _random_pairings(rng, n_i, n_j)
        got, _, _ = losses.pixel_loss(U_i, U_j, pairings, TAU)
        assert got == pytest.approx(_brute_pixel_loss(U_i, U_j, pairings, TAU), abs=1e-10)


def test_pixel_loss_positives_do_not_share_denominators():
    # Two positives with disjoint single-positive terms: the loss must equal
    # the sum of the two one-positive losses (no cross contamination).
    rng = np.random.default_rng(7)
    U_i = _unit_rows(rng, 1, 4)
    U_j = _unit_rows(rng, 5, 4)
    both = [losses.PixelPairing(0, np.array([0, 1]), np.array([2, 3, 4]))]
    only0 = [losses.PixelPairing(0, np.array([0]), np.array([2, 3, 4]))]
    only1 = [losses.PixelPairing(0, np.array([1]), np.array([2, 3, 4]))]
    l_both = losses.pixel_loss(U_i, U_j, both, TAU)[0]
    l_0 = losses.pixel_loss(U_i, U_j, only0, TAU)[0]
    l_1 = losses.pixel_loss(U_i, U_j, only1, TAU)[0]
    assert l_both == pytest.approx((l_0 + l_1) / 2.0, abs=1e-12)


def test_pixel_loss_no_negatives_is_zero():
    rng = np.random.default_rng(8)
    U_i = _unit_rows(rng, 2, 4)
    U_j = _unit_rows(rng, 3, 4)
    pairings = [losses.PixelPairing(0, np.array([0, 2]), np.array([], dtype=int))]
    loss, dU_i, dU_j = losses.pixel_loss(U_i, U_j, pairings, TAU)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(dU_i, 0.0) and np.allclose(dU_j, 0.0)


def test_pixel_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(9)
    for _ in range(8):
        n_i, n_j = 3, 5
        U_i = _unit_rows(rng, n_i, 4)
        U_j = _unit_rows(rng, n_j, 4)
        pairings = _random_pairings(rng, n_i, n_j)
        _, dU_i, dU_j = losses.pixel_loss(U_i, U_j, pairings, TAU)

        num_i = numcore.finite_diff_grad(
            lambda f: losses.pixel_loss(f.reshape(n_i, 4), U_j, pairings, TAU)[0],
            U_i.ravel(),
        ).reshape(n_i, 4)
        num_j = numcore.finite_diff_grad(
            lambda f: losses.pixel_loss(U_i, f.reshape(n_j, 4), pairings, TAU)[0],
            U_j.ravel(),
        ).reshape(n_j, 4)
        scale = max(np.linalg.norm(num_i), np.linalg.norm(num_j), 1e-12)
        assert np.linalg.norm(dU_i - num_i) / scale < 1e-6
        assert np.linalg.norm(dU_j - num_j) / scale < 1e-6


def test_pixel_loss_validation():
    U = np.eye(3)
    with pytest.raises(ContractViolationError):
        losses.pixel_loss(U, U, [], TAU)
    bad = [losses.PixelPairing(0, np.array([], dtype=int), np.array([1]))]
    with pytest.raises(ContractViolationError):
        losses.pixel_loss(U, U, bad, TAU)
    overlap = [losses.PixelPairing(0, np.array([1]), np.array([1, 2]))]
    with pytest.raises(ContractViolationError):
        losses.pixel_loss(U, U, overlap, TAU)


def test_anchor_gradient_equals_pixel_loss_anchor_row():
    rng = np.random.default_rng(10)
    for _ in range(40):
        n_j = int(rng.integers(3, 8))
        U_i = _unit_rows(rng, 1, 4)
        U_j = _unit_rows(rng, n_j, 4)
        perm = rng.permutation(n_j)
        k = int(rng.integers(1, n_j))
        pos, neg = perm[:k], perm[k:]
        direct = losses.anchor_gradient(U_i[0], U_j[pos], U_j[neg], TAU)
        pairing = [losses.PixelPairing(0, pos, neg)]
        _, dU_i, _ = losses.pixel_loss(U_i, U_j, pairing, TAU)
        assert np.allclose(direct, dU_i[0], atol=1e-10)


def test_anchor_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    u = rng.normal(size=4)
    u /= np.linalg.norm(u)
    pos = _unit_rows(rng, 2, 4)
    neg = _unit_rows(rng, 3, 4)
    got = losses.anchor_gradient(u, pos, neg, TAU)

    def f(v):
        total = 0.0
        for p in pos:
            e = math.exp(float(v @ p) / TAU)
            d = e + sum(math.exp(float(v @ nrow) / TAU) for nrow in neg)
            total += -math.log(e / d)
        return total / len(pos)

    numeric = numcore.finite_diff_grad(f, u)
    assert np.allclose(got, numeric, rtol=1e-6, atol=1e-9)


def test_anchor_gradient_no_negatives_is_zero():
    rng = np.random.default_rng(12)
    u = rng.normal(size=4)
    pos = _unit_rows(rng, 3, 4)
    grad = losses.anchor_gradient(u, pos, np.zeros((0, 4)), TAU)
    assert np.allclose(grad, 0.0, atol=1e-15)


def test_joint_loss_sums_per_label():
    total, per = losses.joint_loss([1.0, 2.0], [0.5, 0.25])
    assert per == [1.5, 2.25]
    assert total == pytest.approx(3.75)
    with pytest.raises(DimensionError):
        losses.joint_loss([1.0], [])
