"""Seeded synthetic pixel-grid datasets with multiple meta labels.

Each image is a noisy grid of feature vectors: a background plus one
rectangular foreground region. Two independent latent factors drive the
content. Factor A picks the foreground pixel class (which Gaussian mean the
foreground pixels draw from); factor B picks the rectangle size, so both
factors survive mean pooling. Meta labels are derived views of the factors:

* ``factor_a`` / ``factor_b``: the factor itself;
* ``corrupt_a``: a copy of factor A with a seeded fraction of images
  relabeled into class 0, calibrated so that the measured pairwise
  contradiction rate against the factor A label hits a requested target.

The per-pixel class map is ground truth for probing only; training code
never reads it.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractViolationError, DimensionError
from .seeding import (
    STREAM_ASSIGN,
    STREAM_CORRUPT,
    STREAM_IMAGE,
    STREAM_MEANS,
    substream,
)

LABEL_SOURCES = ("factor_a", "factor_b", "corrupt_a")

_CONTRADICTION_TOL = 0.05


@dataclass(frozen=True)
class DataConfig:
    height: int = 8
    width: int = 8
    feature_dim: int = 4
    n_factor_a: int = 4
    n_factor_b: int = 3
    label_sources: tuple[str, ...] = ("factor_a", "factor_b", "corrupt_a")
    contradiction_target: float = 0.4
    # Defaults picked so the benchmark is non-saturated: linear probes must
    # not hit 1.0 for every training mode or preset comparisons are vacuous.
    noise_sigma: float = 1.1
    mean_scale: float = 1.0
    mean_min_dist: float = 1.2

    def validate(self) -> None:
        if self.height < 2 or self.width < 2:
            raise ConfigError("grid must be at least 2x2")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        if self.n_factor_a < 2 or self.n_factor_b < 1:
            raise ConfigError("need >= 2 foreground classes and >= 1 size level")
        if len(self.label_sources) < 1:
            raise ConfigError("need at least one meta label source")
        for src in self.label_sources:
            if src not in LABEL_SOURCES:
                raise ConfigError(f"unknown label source {src!r}")
        if not 0.0 <= self.contradiction_target <= 1.0:
            raise ConfigError("contradiction_target must lie in [0, 1]")
        if self.noise_sigma < 0.0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.mean_scale <= 0.0 or self.mean_min_dist <= 0.0:
            raise ConfigError("mean_scale and mean_min_dist must be positive")

    @property
    def n_pixel_classes(self) -> int:
        return self.n_factor_a + 1  # background plus one class per factor A level


@dataclass
class SyntheticImage:
    pixels: np.ndarray                # (pixels, feature_dim)
    meta: np.ndarray                  # (n_labels,) int
    id: int
    latent: np.ndarray | None = None  # (pixels,) int class map, evaluation only
    factor_a: int | None = None
    factor_b: int | None = None


@dataclass
class SyntheticDataset:
    images: list[SyntheticImage]
    height: int
    width: int
    n_meta_labels: int
    seed: int | None = None
    config: DataConfig | None = None
    class_means: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.images)

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    @property
    def feature_dim(self) -> int:
        return self.images[0].pixels.shape[1]

    def meta_matrix(self) -> np.ndarray:
        return np.stack([img.meta for img in self.images])

    def latent_classes(self) -> np.ndarray:
        """Per-image ground-truth class: the joint factor combination.

        Both factors enter, so no single meta label determines the class by
        itself. Evaluation only.
        """
        if any(img.factor_a is None or img.factor_b is None for img in self.images):
            raise ContractViolationError("dataset has no latent factor annotations")
        n_b = max(img.factor_b for img in self.images) + 1
        return np.array(
            [img.factor_a * n_b + img.factor_b for img in self.images], dtype=int
        )

    @classmethod
    def from_arrays(
        cls,
        features: np.ndarray,
        meta: np.ndarray | None,
        height: int,
        width: int,
    ) -> "SyntheticDataset":
        """Wrap externally supplied images (no latent annotations)."""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 4:
            n, h, w, d = features.shape
            if (h, w) != (height, width):
                raise DimensionError("grid shape disagrees with height/width")
            features = features.reshape(n, h * w, d)
        if features.ndim != 3 or features.shape[1] != height * width:
            raise DimensionError("features must be (n, pixels, feature_dim)")
        if meta is None:
            meta = np.zeros((features.shape[0], 1), dtype=int)
        meta = np.asarray(meta, dtype=int)
        if meta.ndim == 1:
            meta = meta[:, None]
        if meta.shape[0] != features.shape[0]:
            raise DimensionError("meta rows must match image count")
        images = [
            SyntheticImage(pixels=features[i].copy(), meta=meta[i].copy(), id=i)
            for i in range(features.shape[0])
        ]
        return cls(
            images=images, height=height, width=width,
            n_meta_labels=meta.shape[1],
        )


def _rect_shape(config: DataConfig, level: int) -> tuple[int, int]:
    # foreground area fractions spread over [0.1, 0.45] so pooling sees them
    if config.n_factor_b == 1:
        frac = 0.25
    else:
        frac = 0.1 + 0.35 * level / (config.n_factor_b - 1)
    side = np.sqrt(frac)
    rh = min(config.height, max(1, round(side * config.height)))
    rw = min(config.width, max(1, round(side * config.width)))
    return rh, rw


def _pairwise_contradiction(a: np.ndarray, b: np.ndarray) -> float:
    eq_a = a[:, None] == a[None, :]
    eq_b = b[:, None] == b[None, :]
    differs = np.triu(eq_a ^ eq_b, k=1)
    n = a.size
    return float(differs.sum() / (n * (n - 1) / 2))


def _calibrate_corruption(
    factor_a: np.ndarray,
    target: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Relabel a prefix of a seeded image order into class 0 to hit the target."""
    if target == 0.0:
        return factor_a.copy()
    order = rng.permutation(factor_a.size)
    best_labels = None
    best_err = np.inf
    labels = factor_a.copy()
    for k in range(factor_a.size + 1):
        if k > 0:
            labels = factor_a.copy()
            labels[order[:k]] = 0
        err = abs(_pairwise_contradiction(factor_a, labels) - target)
        if err < best_err:
            best_err = err
            best_labels = labels.copy()
    if best_err > _CONTRADICTION_TOL:
        raise ConfigError(
            f"contradiction_target {target} unreachable "
            f"(best achievable error {best_err:.3f})"
        )
    return best_labels


def _draw_class_means(config: DataConfig, rng: np.random.Generator) -> np.ndarray:
    # rejection sampling keeps every pair of class means separated
    for _ in range(1000):
        means = rng.normal(0.0, config.mean_scale,
                           size=(config.n_pixel_classes, config.feature_dim))
        dists = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
        np.fill_diagonal(dists, np.inf)
        if dists.min() >= config.mean_min_dist:
            return means
    raise ConfigError("could not separate class means; lower mean_min_dist")


def generate(config: DataConfig, count: int, seed: int) -> SyntheticDataset:
    """Generate ``count`` images; same arguments always give identical bytes."""
    config.validate()
    if count < 2:
        raise ConfigError("need at least two images")

    means = _draw_class_means(config, substream(seed, STREAM_MEANS))

    combos = [(a, b) for a in range(config.n_factor_a) for b in range(config.n_factor_b)]
    factors = np.array([combos[i % len(combos)] for i in range(count)], dtype=int)
    factors = factors[substream(seed, STREAM_ASSIGN).permutation(count)]
    factor_a = factors[:, 0]
    factor_b = factors[:, 1]

    labels = {}
    if "corrupt_a" in config.label_sources:
        labels["corrupt_a"] = _calibrate_corruption(
            factor_a, config.contradiction_target, substream(seed, STREAM_CORRUPT)
        )
    labels["factor_a"] = factor_a
    labels["factor_b"] = factor_b
    meta = np.stack([labels[src] for src in config.label_sources], axis=1)

    images = []
    for i in range(count):
        rng = substream(seed, STREAM_IMAGE, i)
        latent = np.zeros((config.height, config.width), dtype=int)
        rh, rw = _rect_shape(config, int(factor_b[i]))
        r0 = int(rng.integers(0, config.height - rh + 1))
        c0 = int(rng.integers(0, config.width - rw + 1))
        latent[r0:r0 + rh, c0:c0 + rw] = 1 + factor_a[i]
        flat = latent.reshape(-1)
        pixels = means[flat] + config.noise_sigma * rng.normal(
            size=(flat.size, config.feature_dim)
        )
        images.append(SyntheticImage(
            pixels=pixels, meta=meta[i].copy(), id=i, latent=flat,
            factor_a=int(factor_a[i]), factor_b=int(factor_b[i]),
        ))
    return SyntheticDataset(
        images=images, height=config.height, width=config.width,
        n_meta_labels=meta.shape[1], seed=int(seed), config=config,
        class_means=means,
    )


def contradiction_rate(dataset: SyntheticDataset, m1: int, m2: int) -> float:
    """Fraction of unordered image pairs whose equality flips between two labels."""
    meta = dataset.meta_matrix()
    if not (0 <= m1 < meta.shape[1] and 0 <= m2 < meta.shape[1]):
        raise DimensionError("meta label index out of range")
    return _pairwise_contradiction(meta[:, m1], meta[:, m2])


def mask_bounds(
    rng: np.random.Generator, height: int, width: int
) -> tuple[int, int, int, int]:
    """Rectangle (r0, r1, c0, c1) covering at most a quarter of the grid."""
    rh = int(rng.integers(1, max(1, height // 2) + 1))
    rw = int(rng.integers(1, max(1, width // 2) + 1))
    r0 = int(rng.integers(0, height - rh + 1))
    c0 = int(rng.integers(0, width - rw + 1))
    return r0, r0 + rh, c0, c0 + rw


def augment(
    image: SyntheticImage,
    seed: int,
    height: int,
    width: int,
    sigma: float = 0.25,
    mask: bool = True,
) -> tuple[SyntheticImage, SyntheticImage]:
    """Two stochastic views of one image; labels and id carry over unchanged.

    Each view zeroes a random rectangle covering at most 25% of the pixels
    and then adds Gaussian feature noise. Masking before the noise keeps
    masked rows off exact zero, which the pixel-row normalization cannot
    represent. With sigma=0 and mask=False both views equal the input.
    """
    if sigma < 0.0:
        raise ConfigError("sigma must be >= 0")
    if image.pixels.shape[0] != height * width:
        raise DimensionError("image does not match the stated grid shape")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    views = []
    for _ in range(2):
        pixels = image.pixels.copy()
        if mask:
            r0, r1, c0, c1 = mask_bounds(rng, height, width)
            grid = pixels.reshape(height, width, -1)
            grid[r0:r1, c0:c1, :] = 0.0
            pixels = grid.reshape(height * width, -1)
        if sigma > 0.0:
            pixels = pixels + sigma * rng.normal(size=pixels.shape)
        views.append(replace(image, pixels=pixels))
    return views[0], views[1]


def save_dataset(directory, dataset: SyntheticDataset) -> None:
    """Write data.bin (float64), manifest.json, and labels.csv."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    features = np.stack([img.pixels for img in dataset.images])
    (directory / "data.bin").write_bytes(features.astype("<f8").tobytes())
    manifest = {
        "format": "metacontrast-dataset-v1",
        "count": len(dataset),
        "height": dataset.height,
        "width": dataset.width,
        "feature_dim": dataset.feature_dim,
        "n_meta_labels": dataset.n_meta_labels,
        "seed": dataset.seed,
        "config": None if dataset.config is None else dataset.config.__dict__ | {
            "label_sources": list(dataset.config.label_sources)
        },
        "meta": dataset.meta_matrix().tolist(),
        "latent": [
            None if img.latent is None else img.latent.tolist()
            for img in dataset.images
        ],
        "factor_a": [img.factor_a for img in dataset.images],
        "factor_b": [img.factor_b for img in dataset.images],
        "class_means": (
            None if dataset.class_means is None else dataset.class_means.tolist()
        ),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    with (directory / "labels.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["id", "factor_a", "factor_b"]
            + [f"meta_{k}" for k in range(dataset.n_meta_labels)]
        )
        for img in dataset.images:
            writer.writerow([img.id, img.factor_a, img.factor_b, *img.meta.tolist()])


def load_dataset(directory) -> SyntheticDataset:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    count = manifest["count"]
    shape = (count, manifest["height"] * manifest["width"], manifest["feature_dim"])
    features = np.frombuffer((directory / "data.bin").read_bytes(), dtype="<f8")
    features = features.astype(np.float64).reshape(shape)
    meta = np.asarray(manifest["meta"], dtype=int)
    config = None
    if manifest.get("config"):
        cfg = dict(manifest["config"])
        cfg["label_sources"] = tuple(cfg["label_sources"])
        config = DataConfig(**cfg)
    images = []
    for i in range(count):
        latent = manifest["latent"][i]
        images.append(SyntheticImage(
            pixels=features[i].copy(),
            meta=meta[i].copy(),
            id=i,
            latent=None if latent is None else np.asarray(latent, dtype=int),
            factor_a=manifest["factor_a"][i],
            factor_b=manifest["factor_b"][i],
        ))
    means = manifest.get("class_means")
    return SyntheticDataset(
        images=images,
        height=manifest["height"],
        width=manifest["width"],
        n_meta_labels=manifest["n_meta_labels"],
        seed=manifest.get("seed"),
        config=config,
        class_means=None if means is None else np.asarray(means),
    )
