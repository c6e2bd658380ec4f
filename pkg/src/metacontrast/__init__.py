"""Meta-label guided contrastive pre-training on pixel grids.

Core pieces: a per-pixel MLP encoder with image- and pixel-level heads
(`encoder`), contrastive losses with hand-derived gradients (`losses`),
soft gradient-conflict mitigation across meta labels (`mitigator`),
self-paced screening of candidate positive pixels (`screening`), a seeded
synthetic benchmark (`synthdata`), the training loop and probes
(`trainer`), a scikit-learn style facade (`estimator`), and an experiment
CLI (`cli`).
"""

from .encoder import (
    EncoderDims,
    EncoderParams,
    RepresentationSet,
    backward,
    forward,
    init_params,
)
from .estimator import ContrastiveEncoder
from .losses import (
    PixelPairing,
    anchor_gradient,
    build_positive_sets,
    image_loss,
    joint_loss,
    pixel_affinity,
    pixel_loss,
)
from .mitigator import ConflictReport, MitigatorState, classify, inject, mitigate
from .screening import (
    PaceConfig,
    ScoredPool,
    build_pool,
    pace_size,
    score_positive,
    screen,
)
from .synthdata import (
    DataConfig,
    SyntheticDataset,
    SyntheticImage,
    augment,
    contradiction_rate,
    generate,
)
from .trainer import TrainConfig, ProbeScores, probe, train

__version__ = "0.1.0"

__all__ = [
    "ContrastiveEncoder",
    "ConflictReport",
    "DataConfig",
    "EncoderDims",
    "EncoderParams",
    "MitigatorState",
    "PaceConfig",
    "PixelPairing",
    "ProbeScores",
    "RepresentationSet",
    "ScoredPool",
    "SyntheticDataset",
    "SyntheticImage",
    "TrainConfig",
    "anchor_gradient",
    "augment",
    "backward",
    "build_pool",
    "build_positive_sets",
    "classify",
    "contradiction_rate",
    "forward",
    "generate",
    "image_loss",
    "init_params",
    "inject",
    "joint_loss",
    "mitigate",
    "pace_size",
    "pixel_affinity",
    "pixel_loss",
    "probe",
    "score_positive",
    "screen",
    "train",
]
