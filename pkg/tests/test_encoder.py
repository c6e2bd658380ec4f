"""Encoder forward/backward, parameter layout, and checkpoint format."""

import numpy as np
import pytest

from metacontrast import encoder, numcore
from metacontrast.errors import DegenerateVectorError, DimensionError

# Hidden width 16 keeps finite differencing cheap while making an all-dead
# ReLU pixel row (zero norm, a contract violation) vanishingly unlikely.
DIMS = encoder.EncoderDims(feature_dim=3, hidden_dim=16, image_dim=4, pixel_dim=4)


def _random_image(rng, n_pix=6, dim=3):
    return rng.normal(size=(n_pix, dim))


def test_param_shapes_and_count():
    shapes = dict(encoder.param_shapes(DIMS))
    assert shapes["w1"] == (16, 3)
    assert shapes["b1"] == (16,)
    assert shapes["wi2"] == (4, 16)
    assert shapes["wp2"] == (4, 16)
    total = sum(int(np.prod(s)) for s in shapes.values())
    assert encoder.param_count(DIMS) == total


def test_layer_slices_cover_flat_vector():
    slices = encoder.layer_slices(DIMS)
    assert slices[0][1] == 0
    assert slices[-1][2] == encoder.param_count(DIMS)
    for (_, a, b), (_, c, _d) in zip(slices, slices[1:]):
        assert b == c  # contiguous, no gaps


def test_init_is_deterministic_and_xavier_bounded():
    p1 = encoder.init_params(11, DIMS)
    p2 = encoder.init_params(11, DIMS)
    assert np.array_equal(encoder.flatten_params(p1), encoder.flatten_params(p2))
    p3 = encoder.init_params(12, DIMS)
    assert not np.array_equal(encoder.flatten_params(p1), encoder.flatten_params(p3))
    # Zero biases, and every weight inside the uniform Xavier bound.
    for name, _, _ in encoder.layer_slices(DIMS):
        arr = getattr(p1, name)
        if name.startswith("b"):
            assert np.all(arr == 0.0)
        else:
            fan_out, fan_in = arr.shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            assert np.all(np.abs(arr) <= bound)


def test_flatten_unflatten_round_trip():
    rng = np.random.default_rng(4)
    params = encoder.init_params(0, DIMS)
    flat = encoder.flatten_params(params)
    flat = flat + rng.normal(size=flat.shape) * 0.01
    back = encoder.unflatten_params(flat, DIMS)
    assert np.array_equal(encoder.flatten_params(back), flat)


def test_forward_normalization_invariants():
    rng = np.random.default_rng(5)
    params = encoder.init_params(1, DIMS)
    for _ in range(20):
        reps, trace = encoder.forward(params, _random_image(rng), want_trace=True)
        assert np.linalg.norm(reps.z) == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(np.linalg.norm(reps.U, axis=1), 1.0, atol=1e-12)
        assert reps.Z.shape == (6, DIMS.image_dim)
        assert trace.F.shape == (6, DIMS.hidden_dim)


def test_forward_rejects_bad_shapes():
    params = encoder.init_params(1, DIMS)
    with pytest.raises(DimensionError):
        encoder.forward(params, np.zeros((4, 2)))
    with pytest.raises(DimensionError):
        encoder.forward(params, np.zeros((0, 3)))


def test_forward_zero_pixel_row_is_degenerate():
    # Zero biases mean an all-zero pixel row maps to the zero vector in the
    # pixel head, which has no unit direction.
    params = encoder.init_params(1, DIMS)
    img = np.zeros((3, 3))
    img[0] = [1.0, -0.5, 2.0]
    with pytest.raises(DegenerateVectorError):
        encoder.forward(params, img)


def _loss_through(params_flat, image, dims, which):
    """Scalar probes used to finite-difference each backward path."""
    params = encoder.unflatten_params(params_flat, dims)
    reps, _ = encoder.forward(params, image)
    if which == "z":
        w = np.arange(1.0, dims.image_dim + 1.0)
        return float(reps.z @ w)
    if which == "Z":
        w = np.sin(np.arange(reps.Z.size)).reshape(reps.Z.shape)
        return float((reps.Z * w).sum())
    w = np.cos(np.arange(reps.U.size)).reshape(reps.U.shape)
    return float((reps.U * w).sum())


@pytest.mark.parametrize("which", ["z", "Z", "U"])
def test_backward_matches_finite_differences(which):
    rng = np.random.default_rng(6)
    params = encoder.init_params(2, DIMS)
    image = _random_image(rng)
    reps, trace = encoder.forward(params, image, want_trace=True)

    d_z = d_Z = d_U = None
    if which == "z":
        d_z = np.arange(1.0, DIMS.image_dim + 1.0)
    elif which == "Z":
        d_Z = np.sin(np.arange(reps.Z.size)).reshape(reps.Z.shape)
    else:
        d_U = np.cos(np.arange(reps.U.size)).reshape(reps.U.shape)

    analytic = encoder.backward(params, trace, d_z=d_z, d_Z=d_Z, d_U=d_U)
    flat = encoder.flatten_params(params)
    numeric = numcore.finite_diff_grad(
        lambda f: _loss_through(f, image, DIMS, which), flat
    )
    denom = max(np.linalg.norm(numeric), 1e-12)
    assert np.linalg.norm(analytic - numeric) / denom < 1e-6


def test_backward_combined_is_sum_of_parts():
    rng = np.random.default_rng(7)
    params = encoder.init_params(3, DIMS)
    _, trace = encoder.forward(params, _random_image(rng), want_trace=True)
    d_z = rng.normal(size=DIMS.image_dim)
    d_U = rng.normal(size=(6, DIMS.pixel_dim))
    combined = encoder.backward(params, trace, d_z=d_z, d_U=d_U)
    parts = encoder.backward(params, trace, d_z=d_z) + encoder.backward(
        params, trace, d_U=d_U
    )
    assert np.allclose(combined, parts, atol=1e-12)


def test_checkpoint_round_trip(tmp_path):
    params = encoder.init_params(9, DIMS)
    encoder.save_checkpoint(tmp_path / "ck", params, extra={"step": 3})
    loaded, manifest = encoder.load_checkpoint(tmp_path / "ck")
    assert np.array_equal(
        encoder.flatten_params(loaded), encoder.flatten_params(params)
    )
    assert manifest["step"] == 3
    assert manifest["param_count"] == encoder.param_count(DIMS)
    assert [name for name, _, _ in encoder.layer_slices(DIMS)] == manifest[
        "layer_order"
    ]


def test_checkpoint_bytes_are_stable(tmp_path):
    params = encoder.init_params(9, DIMS)
    encoder.save_checkpoint(tmp_path / "a", params)
    encoder.save_checkpoint(tmp_path / "b", params)
    assert (tmp_path / "a" / "params.bin").read_bytes() == (
        tmp_path / "b" / "params.bin"
    ).read_bytes()
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (
        tmp_path / "b" / "manifest.json"
    ).read_bytes()
