"""Per-pixel MLP encoder with image-level and pixel-level projection heads.

An input image is a (pixels, feature_dim) grid of feature vectors. A shared
two-layer MLP maps every pixel to a hidden row; two affine-ReLU-affine heads
then project the hidden rows into an image-wise space (mean-pooled over
pixels and normalized to one unit vector per image) and a pixel-wise space
(row-normalized, one unit vector per pixel). Because every map is per-pixel,
the pooled vector is invariant to pixel permutations.

All gradients are derived by hand; ``backward`` consumes upstream gradients
with respect to the three outputs and returns one flat parameter gradient.
The flat layout is fixed and documented next to ``_PARAM_ORDER`` — checkpoint
files and the conflict mitigation code both rely on it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractViolationError, DegenerateVectorError, DimensionError


@dataclass(frozen=True)
class EncoderDims:
    feature_dim: int = 4
    hidden_dim: int = 32
    image_dim: int = 16
    pixel_dim: int = 16

    def validate(self) -> None:
        for name in ("feature_dim", "hidden_dim", "image_dim", "pixel_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


# Flat parameter layout, row-major within each array:
#   trunk:      w1 (H, D), b1 (H,), w2 (H, H), b2 (H,)
#   image head: wi1 (H, H), bi1 (H,), wi2 (P_img, H), bi2 (P_img,)
#   pixel head: wp1 (H, H), bp1 (H,), wp2 (P_pix, H), bp2 (P_pix,)
_PARAM_ORDER = (
    "w1", "b1", "w2", "b2",
    "wi1", "bi1", "wi2", "bi2",
    "wp1", "bp1", "wp2", "bp2",
)


@dataclass
class EncoderParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    wi1: np.ndarray
    bi1: np.ndarray
    wi2: np.ndarray
    bi2: np.ndarray
    wp1: np.ndarray
    bp1: np.ndarray
    wp2: np.ndarray
    bp2: np.ndarray

    @property
    def dims(self) -> EncoderDims:
        return EncoderDims(
            feature_dim=self.w1.shape[1],
            hidden_dim=self.w1.shape[0],
            image_dim=self.wi2.shape[0],
            pixel_dim=self.wp2.shape[0],
        )

    def copy(self) -> "EncoderParams":
        return EncoderParams(**{name: getattr(self, name).copy() for name in _PARAM_ORDER})


@dataclass
class RepresentationSet:
    """Per-image encoder outputs.

    F: (pixels, H) hidden rows; Z: (pixels, P_img) unnormalized image-space
    rows; z: (P_img,) pooled unit vector; U: (pixels, P_pix) unit rows.
    """

    F: np.ndarray
    Z: np.ndarray
    z: np.ndarray
    U: np.ndarray


@dataclass
class ForwardTrace:
    """Cached activations needed to run the backward pass."""

    x: np.ndarray
    h1_pre: np.ndarray
    h1: np.ndarray
    F: np.ndarray
    i1_pre: np.ndarray
    i1: np.ndarray
    Z: np.ndarray
    pool_mean: np.ndarray
    pool_norm: float
    z: np.ndarray
    p1_pre: np.ndarray
    p1: np.ndarray
    U_pre: np.ndarray
    U_norms: np.ndarray
    U: np.ndarray


def param_shapes(dims: EncoderDims) -> list[tuple[str, tuple[int, ...]]]:
    d, h, pi, pp = dims.feature_dim, dims.hidden_dim, dims.image_dim, dims.pixel_dim
    return [
        ("w1", (h, d)), ("b1", (h,)), ("w2", (h, h)), ("b2", (h,)),
        ("wi1", (h, h)), ("bi1", (h,)), ("wi2", (pi, h)), ("bi2", (pi,)),
        ("wp1", (h, h)), ("bp1", (h,)), ("wp2", (pp, h)), ("bp2", (pp,)),
    ]


def param_count(dims: EncoderDims) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_shapes(dims))


def layer_slices(dims: EncoderDims) -> list[tuple[str, int, int]]:
    """(name, start, stop) of every parameter array inside the flat vector."""
    out = []
    offset = 0
    for name, shape in param_shapes(dims):
        size = int(np.prod(shape))
        out.append((name, offset, offset + size))
        offset += size
    return out


def init_params(seed: int, dims: EncoderDims = EncoderDims()) -> EncoderParams:
    """Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    dims.validate()
    rng = np.random.default_rng(int(seed))
    arrays = {}
    for name, shape in param_shapes(dims):
        if len(shape) == 2:
            fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        else:
            arrays[name] = np.zeros(shape)
    return EncoderParams(**arrays)


def flatten_params(params: EncoderParams) -> np.ndarray:
    return np.concatenate([getattr(params, name).ravel() for name in _PARAM_ORDER])


def unflatten_params(flat: np.ndarray, dims: EncoderDims) -> EncoderParams:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.ndim != 1 or flat.size != param_count(dims):
        raise DimensionError(
            f"flat vector has size {flat.size}, expected {param_count(dims)}"
        )
    arrays = {}
    offset = 0
    for name, shape in param_shapes(dims):
        size = int(np.prod(shape))
        arrays[name] = flat[offset:offset + size].reshape(shape).copy()
        offset += size
    return EncoderParams(**arrays)


def forward(
    params: EncoderParams,
    pixels: np.ndarray,
    want_trace: bool = False,
) -> tuple[RepresentationSet, ForwardTrace | None]:
    """Encode one image given as a (pixels, feature_dim) array.

    Raises DegenerateVectorError if the pooled image vector or any pixel row
    has zero norm; unit normalization has no defined direction there.
    """
    x = np.asarray(pixels, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.w1.shape[1]:
        raise DimensionError(
            f"image must be (pixels, {params.w1.shape[1]}), got {x.shape}"
        )
    if x.shape[0] < 1:
        raise DimensionError("image needs at least one pixel")

    h1_pre = x @ params.w1.T + params.b1
    h1 = np.maximum(h1_pre, 0.0)
    F = h1 @ params.w2.T + params.b2

    i1_pre = F @ params.wi1.T + params.bi1
    i1 = np.maximum(i1_pre, 0.0)
    Z = i1 @ params.wi2.T + params.bi2
    pool_mean = Z.mean(axis=0)
    pool_norm = float(np.linalg.norm(pool_mean))
    if pool_norm == 0.0:
        raise DegenerateVectorError("pooled image representation has zero norm")
    z = pool_mean / pool_norm

    p1_pre = F @ params.wp1.T + params.bp1
    p1 = np.maximum(p1_pre, 0.0)
    U_pre = p1 @ params.wp2.T + params.bp2
    U_norms = np.linalg.norm(U_pre, axis=1)
    if np.any(U_norms == 0.0):
        bad = int(np.argmin(U_norms))
        raise DegenerateVectorError(f"pixel representation row {bad} has zero norm")
    U = U_pre / U_norms[:, None]

    reps = RepresentationSet(F=F, Z=Z, z=z, U=U)
    if not want_trace:
        return reps, None
    trace = ForwardTrace(
        x=x, h1_pre=h1_pre, h1=h1, F=F,
        i1_pre=i1_pre, i1=i1, Z=Z,
        pool_mean=pool_mean, pool_norm=pool_norm, z=z,
        p1_pre=p1_pre, p1=p1, U_pre=U_pre, U_norms=U_norms, U=U,
    )
    return reps, trace


def backward(
    params: EncoderParams,
    trace: ForwardTrace,
    d_z: np.ndarray | None = None,
    d_Z: np.ndarray | None = None,
    d_U: np.ndarray | None = None,
) -> np.ndarray:
    """Flat parameter gradient from upstream gradients on (z, Z, U).

    The pooled-vector and pixel-row normalizations are differentiated through
    the sphere: for y = v/|v| the pullback of g is (g - y (y.g)) / |v|.
    """
    if trace is None:
        raise ContractViolationError("backward needs the trace from forward(want_trace=True)")
    n_pix = trace.x.shape[0]
    dims = params.dims
    if d_z is None:
        d_z = np.zeros(dims.image_dim)
    if d_Z is None:
        d_Z = np.zeros((n_pix, dims.image_dim))
    if d_U is None:
        d_U = np.zeros((n_pix, dims.pixel_dim))
    d_z = np.asarray(d_z, dtype=np.float64)
    d_Z = np.asarray(d_Z, dtype=np.float64)
    d_U = np.asarray(d_U, dtype=np.float64)
    if d_z.shape != (dims.image_dim,):
        raise DimensionError(f"d_z must have shape ({dims.image_dim},)")
    if d_Z.shape != (n_pix, dims.image_dim):
        raise DimensionError(f"d_Z must have shape ({n_pix}, {dims.image_dim})")
    if d_U.shape != (n_pix, dims.pixel_dim):
        raise DimensionError(f"d_U must have shape ({n_pix}, {dims.pixel_dim})")

    # image head, through pooling + normalization
    d_pool = (d_z - trace.z * float(trace.z @ d_z)) / trace.pool_norm
    dZ_total = d_Z + d_pool[None, :] / n_pix
    d_wi2 = dZ_total.T @ trace.i1
    d_bi2 = dZ_total.sum(axis=0)
    d_i1 = dZ_total @ params.wi2
    d_i1_pre = d_i1 * (trace.i1_pre > 0.0)
    d_wi1 = d_i1_pre.T @ trace.F
    d_bi1 = d_i1_pre.sum(axis=0)
    dF_img = d_i1_pre @ params.wi1

    # pixel head, through row normalization
    row_dots = np.einsum("ij,ij->i", trace.U, d_U)
    d_U_pre = (d_U - trace.U * row_dots[:, None]) / trace.U_norms[:, None]
    d_wp2 = d_U_pre.T @ trace.p1
    d_bp2 = d_U_pre.sum(axis=0)
    d_p1 = d_U_pre @ params.wp2
    d_p1_pre = d_p1 * (trace.p1_pre > 0.0)
    d_wp1 = d_p1_pre.T @ trace.F
    d_bp1 = d_p1_pre.sum(axis=0)
    dF_pix = d_p1_pre @ params.wp1

    # shared trunk
    dF = dF_img + dF_pix
    d_w2 = dF.T @ trace.h1
    d_b2 = dF.sum(axis=0)
    d_h1 = dF @ params.w2
    d_h1_pre = d_h1 * (trace.h1_pre > 0.0)
    d_w1 = d_h1_pre.T @ trace.x
    d_b1 = d_h1_pre.sum(axis=0)

    grads = {
        "w1": d_w1, "b1": d_b1, "w2": d_w2, "b2": d_b2,
        "wi1": d_wi1, "bi1": d_bi1, "wi2": d_wi2, "bi2": d_bi2,
        "wp1": d_wp1, "bp1": d_bp1, "wp2": d_wp2, "bp2": d_bp2,
    }
    return np.concatenate([grads[name].ravel() for name in _PARAM_ORDER])


def save_checkpoint(directory, params: EncoderParams, extra: dict | None = None) -> None:
    """Write params.bin (flat little-endian float64) plus manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    flat = flatten_params(params)
    (directory / "params.bin").write_bytes(flat.astype("<f8").tobytes())
    dims = params.dims
    manifest = {
        "format": "metacontrast-checkpoint-v1",
        "dims": {
            "feature_dim": dims.feature_dim,
            "hidden_dim": dims.hidden_dim,
            "image_dim": dims.image_dim,
            "pixel_dim": dims.pixel_dim,
        },
        "layer_order": list(_PARAM_ORDER),
        "param_count": int(flat.size),
    }
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_checkpoint(directory) -> tuple[EncoderParams, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("layer_order") != list(_PARAM_ORDER):
        raise ContractViolationError("checkpoint layer order does not match this build")
    dims = EncoderDims(**manifest["dims"])
    flat = np.frombuffer((directory / "params.bin").read_bytes(), dtype="<f8").astype(np.float64)
    if flat.size != manifest["param_count"]:
        raise ContractViolationError("checkpoint payload size disagrees with manifest")
    return unflatten_params(flat, dims), manifest
