"""scikit-learn style front end for the pre-training loop.

``ContrastiveEncoder`` is a transformer: ``fit`` pre-trains the encoder on a
stack of images with optional meta labels, ``transform`` returns the pooled
unit embeddings, ``transform_pixels`` the per-pixel embeddings. Constructor
arguments mirror ``TrainConfig`` one to one so ``get_params``/``set_params``
and ``clone`` behave as usual.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import encoder, synthdata, trainer


class ContrastiveEncoder(BaseEstimator, TransformerMixin):
    """Meta-label guided contrastive representation learner.

    Parameters
    ----------
    grid_height, grid_width : int
        Pixel grid shape; X rows are images of shape
        (grid_height * grid_width, n_features) or flattened.
    steps, sources_per_batch, learning_rate, temperature, ema_weight,
    pool_fraction, momentum, hidden_dim, image_dim, pixel_dim,
    use_mitigator, use_pixel_loss, use_filter, meta_subset,
    anchors_per_pair, partner_cap, augment_sigma, augment_mask : see TrainConfig.
    random_state : int
        Root seed for every stochastic choice during fit.
    """

    def __init__(
        self,
        grid_height: int = 8,
        grid_width: int = 8,
        steps: int = 200,
        sources_per_batch: int = 8,
        learning_rate: float = 0.05,
        temperature: float = 0.1,
        ema_weight: float = 0.01,
        pool_fraction: float = 0.3,
        momentum: float = 0.0,
        hidden_dim: int = 32,
        image_dim: int = 16,
        pixel_dim: int = 16,
        use_mitigator: bool = True,
        use_pixel_loss: bool = False,
        use_filter: bool = False,
        meta_subset: tuple[int, ...] | None = None,
        anchors_per_pair: int = 16,
        partner_cap: int = 2,
        augment_sigma: float = 0.25,
        augment_mask: bool = True,
        random_state: int = 0,
    ):
        self.grid_height = grid_height
        self.grid_width = grid_width
        self.steps = steps
        self.sources_per_batch = sources_per_batch
        self.learning_rate = learning_rate
        self.temperature = temperature
        self.ema_weight = ema_weight
        self.pool_fraction = pool_fraction
        self.momentum = momentum
        self.hidden_dim = hidden_dim
        self.image_dim = image_dim
        self.pixel_dim = pixel_dim
        self.use_mitigator = use_mitigator
        self.use_pixel_loss = use_pixel_loss
        self.use_filter = use_filter
        self.meta_subset = meta_subset
        self.anchors_per_pair = anchors_per_pair
        self.partner_cap = partner_cap
        self.augment_sigma = augment_sigma
        self.augment_mask = augment_mask
        self.random_state = random_state

    def _as_images(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float64, allow_nd=True)
        n_pixels = self.grid_height * self.grid_width
        if X.ndim == 2:
            if X.shape[1] % n_pixels != 0:
                raise ValueError(
                    f"flat images must have a multiple of {n_pixels} columns"
                )
            X = X.reshape(X.shape[0], n_pixels, X.shape[1] // n_pixels)
        elif X.ndim == 3:
            if X.shape[1] != n_pixels:
                raise ValueError(f"expected {n_pixels} pixels per image")
        elif X.ndim == 4:
            if X.shape[1:3] != (self.grid_height, self.grid_width):
                raise ValueError("grid shape mismatch")
            X = X.reshape(X.shape[0], n_pixels, X.shape[3])
        else:
            raise ValueError("X must be 2-d, 3-d, or 4-d")
        return X

    def _config(self, feature_dim: int) -> trainer.TrainConfig:
        meta_subset = self.meta_subset
        if meta_subset is not None:
            meta_subset = tuple(int(m) for m in meta_subset)
        return trainer.TrainConfig(
            steps=self.steps,
            sources_per_batch=self.sources_per_batch,
            learning_rate=self.learning_rate,
            temperature=self.temperature,
            ema_weight=self.ema_weight,
            pool_fraction=self.pool_fraction,
            momentum=self.momentum,
            feature_dim=feature_dim,
            hidden_dim=self.hidden_dim,
            image_dim=self.image_dim,
            pixel_dim=self.pixel_dim,
            use_mitigator=self.use_mitigator,
            use_pixel_loss=self.use_pixel_loss,
            use_filter=self.use_filter,
            meta_subset=meta_subset,
            anchors_per_pair=self.anchors_per_pair,
            partner_cap=self.partner_cap,
            augment_sigma=self.augment_sigma,
            augment_mask=self.augment_mask,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        """Pre-train on images X with optional per-image meta labels y.

        y may be (n,) for a single meta label or (n, M) for several; with
        y=None only co-views count as positives.
        """
        X = self._as_images(X)
        if y is not None:
            y = np.asarray(y, dtype=int)
            if y.ndim == 1:
                y = y[:, None]
            if y.shape[0] != X.shape[0]:
                raise ValueError("y must have one row per image")
        config = self._config(feature_dim=X.shape[2])
        if y is None and config.meta_subset is None:
            config = replace(config, meta_subset=())
        dataset = synthdata.SyntheticDataset.from_arrays(
            X, y, self.grid_height, self.grid_width
        )
        result = trainer.train(config, dataset)
        self.params_ = result.params
        self.mitigator_state_ = result.state
        self.history_ = result.history
        self.n_features_in_ = X.shape[1] * X.shape[2]
        return self

    def transform(self, X) -> np.ndarray:
        """Pooled unit embedding of every image, shape (n, image_dim)."""
        check_is_fitted(self, "params_")
        X = self._as_images(X)
        return np.stack([
            encoder.forward(self.params_, img)[0].z for img in X
        ])

    def transform_pixels(self, X) -> np.ndarray:
        """Per-pixel unit embeddings, shape (n, pixels, pixel_dim)."""
        check_is_fitted(self, "params_")
        X = self._as_images(X)
        return np.stack([
            encoder.forward(self.params_, img)[0].U for img in X
        ])
