"""Deterministic substream derivation from a single root seed.

Every random decision in the package draws from a generator derived as
``SeedSequence(root_seed, spawn_key=(stream, *path))``. Streams never depend
on draw history, so a run can be resumed at any step and replay identically.
The stream ids below are part of the on-disk reproducibility contract and
must not be renumbered.
"""

from __future__ import annotations

import numpy as np

STREAM_INIT = 0      # encoder parameter init
STREAM_MEANS =  1    # pixel-class mean draws
STREAM_ASSIGN = 2    # latent factor assignment order
STREAM_CORRUPT = 3   # which images get a corrupted third label
STREAM_IMAGE = 4     # per-image pixel noise / geometry, path=(image index,)
STREAM_BATCH = 5     # batch composition, path=(step,)
STREAM_AUGMENT = 6   # view augmentation, path=(step, source slot)
STREAM_PARTNERS = 7  # partner-image choice, path=(step, meta slot, anchor view)
STREAM_ANCHORS = 8   # anchor pixel subsampling, path=(step, meta slot, anchor view, partner view)
STREAM_PROBE = 9     # probe fold shuffling / k-means init


def substream(root_seed: int, *path: int) -> np.random.Generator:
    """Generator for the substream addressed by ``path`` under ``root_seed``."""
    key = tuple(int(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(int(root_seed), spawn_key=key))


def substream_seed(root_seed: int, *path: int) -> int:
    """A 32-bit integer seed derived from the same substream address."""
    key = tuple(int(p) for p in path)
    seq = np.random.SeedSequence(int(root_seed), spawn_key=key)
    return int(seq.generate_state(1, np.uint32)[0])
