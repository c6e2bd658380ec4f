"""Training loop: per-label gradients, mitigation, screening, probes.

One step works on a batch of N source images, each augmented into two
views. For every active meta label the step computes an image-level loss
over pooled representations plus (optionally) a pixel-level loss over
anchor/partner pixel pairs, backpropagates both into one flat gradient,
and hands the per-label bundle to the conflict mitigator (or a plain
average). Updates are plain SGD with a cosine-decayed learning rate.

The discrete choices of a step (batch composition, partner images, anchor
pixels, affinity pools, admitted positives) are collected into a
``StepPlan`` before any gradient is taken. Given a fixed plan the loss is
a smooth function of the parameters, which is what makes the end-to-end
finite-difference checks in the test suite meaningful.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.cluster import KMeans
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import normalized_mutual_info_score
from sklearn.model_selection import StratifiedKFold

from . import encoder, losses, mitigator, screening, synthdata
from .errors import ConfigError, ContractViolationError, TrainingDiverged
from .seeding import (
    STREAM_ANCHORS,
    STREAM_AUGMENT,
    STREAM_BATCH,
    STREAM_INIT,
    STREAM_PARTNERS,
    STREAM_PROBE,
    substream,
    substream_seed,
)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    sources_per_batch: int = 8
    learning_rate: float = 0.05
    temperature: float = 0.1
    ema_weight: float = 0.01       # moving-average weight in the mitigator
    pool_fraction: float = 0.3
    momentum: float = 0.0
    feature_dim: int = 4
    hidden_dim: int = 32
    image_dim: int = 16
    pixel_dim: int = 16
    use_mitigator: bool = True
    use_pixel_loss: bool = True
    use_filter: bool = True
    mitigate_per_layer: bool = False
    # None = all labels in the dataset; () = no labels (co-view positives only)
    meta_subset: tuple[int, ...] | None = None
    anchors_per_pair: int = 16
    partner_cap: int = 2
    score_scope: str = "encoder_last"
    augment_sigma: float = 0.25
    augment_mask: bool = True
    seed: int = 0
    checkpoint_every: int = 0      # 0 = final checkpoint only

    def validate(self) -> None:
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.sources_per_batch < 2:
            raise ConfigError("need at least two sources per batch")
        if self.learning_rate < 0.0:
            raise ConfigError("learning_rate must be >= 0")
        if self.temperature <= 0.0:
            raise ConfigError("temperature must be positive")
        if not 0.0 < self.ema_weight <= 1.0:
            raise ConfigError("ema_weight must lie in (0, 1]")
        if not 0.0 < self.pool_fraction <= 1.0:
            raise ConfigError("pool_fraction must lie in (0, 1]")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.anchors_per_pair < 1:
            raise ConfigError("anchors_per_pair must be >= 1")
        if self.partner_cap < 1:
            raise ConfigError("partner_cap must be >= 1")
        if self.score_scope not in screening.SCORE_SCOPES:
            raise ConfigError(f"unknown score scope {self.score_scope!r}")
        if self.augment_sigma < 0.0:
            raise ConfigError("augment_sigma must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")

    def encoder_dims(self) -> encoder.EncoderDims:
        return encoder.EncoderDims(
            feature_dim=self.feature_dim,
            hidden_dim=self.hidden_dim,
            image_dim=self.image_dim,
            pixel_dim=self.pixel_dim,
        )


@dataclass
class Batch:
    """2N augmented views in source order: [s0_v0, s0_v1, s1_v0, ...]."""

    views: list[synthdata.SyntheticImage]
    source_ids: np.ndarray
    meta: np.ndarray  # (2N, n_meta_labels)


@dataclass
class PairPlan:
    anchor_view: int
    partner_view: int
    anchor_pixels: np.ndarray
    pools: list[np.ndarray]
    negatives: list[np.ndarray]
    admitted: list[np.ndarray]
    scores: list[np.ndarray]


@dataclass
class MetaPlan:
    label: int | None  # dataset meta column, or None for co-view-only positives
    positive_sets: list[np.ndarray]
    pixel_pairs: list[PairPlan] = field(default_factory=list)


@dataclass
class StepPlan:
    metas: list[MetaPlan]

    def pool_stats(self) -> dict:
        anchors = pools = admitted = 0
        smin, smax = math.inf, -math.inf
        for meta in self.metas:
            for pair in meta.pixel_pairs:
                anchors += pair.anchor_pixels.size
                pools += sum(p.size for p in pair.pools)
                admitted += sum(a.size for a in pair.admitted)
                for s in pair.scores:
                    if s.size:
                        smin = min(smin, float(s.min()))
                        smax = max(smax, float(s.max()))
        return {
            "anchors": anchors,
            "pool": pools,
            "admitted": admitted,
            "score_min": None if anchors == 0 or math.isinf(smin) else smin,
            "score_max": None if anchors == 0 or math.isinf(smax) else smax,
        }


@dataclass
class EvalResult:
    bundle: list[np.ndarray]
    image_losses: list[float]
    pixel_losses: list[float]
    total_loss: float


@dataclass
class MetricsRecord:
    step: int
    lr: float
    image_losses: list[float]
    pixel_losses: list[float]
    total_loss: float
    conflicts: int
    fired: int
    anchors: int
    pool: int
    admitted: int

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "lr": self.lr,
            "image_losses": self.image_losses,
            "pixel_losses": self.pixel_losses,
            "total_loss": self.total_loss,
            "conflicts": self.conflicts,
            "fired": self.fired,
            "anchors": self.anchors,
            "pool": self.pool,
            "admitted": self.admitted,
        }


@dataclass
class ProbeScores:
    linear_accuracy: float | None
    pixel_accuracy: float | None
    clustering_nmi: float | None
    failed_folds: int = 0

    def to_json(self) -> dict:
        return {
            "linear_accuracy": self.linear_accuracy,
            "pixel_accuracy": self.pixel_accuracy,
            "clustering_nmi": self.clustering_nmi,
            "failed_folds": self.failed_folds,
        }


@dataclass
class TrainResult:
    params: encoder.EncoderParams
    state: mitigator.MitigatorState | None
    history: list[MetricsRecord]
    config: TrainConfig


def effective_meta_labels(
    config: TrainConfig, n_meta_labels: int
) -> list[int | None]:
    """Meta columns the trainer optimizes; [None] means vanilla positives."""
    if config.meta_subset is None:
        return list(range(n_meta_labels))
    if len(config.meta_subset) == 0:
        return [None]
    subset = []
    for m in config.meta_subset:
        if not 0 <= m < n_meta_labels:
            raise ConfigError(f"meta label {m} outside dataset range")
        subset.append(int(m))
    return subset


def cosine_lr(base: float, t: int, total_steps: int) -> float:
    return base * 0.5 * (1.0 + math.cos(math.pi * t / total_steps))


def sample_batch(
    dataset: synthdata.SyntheticDataset, config: TrainConfig, step: int
) -> Batch:
    """Stratified draw over the first meta label, then two views per source."""
    rng = substream(config.seed, STREAM_BATCH, step)
    labels = dataset.meta_matrix()[:, 0]
    order = []
    groups = []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        groups.append(list(rng.permutation(members)))
    gi = 0
    while len(order) < config.sources_per_batch and any(groups):
        if groups[gi % len(groups)]:
            order.append(int(groups[gi % len(groups)].pop()))
        gi += 1
    if len(order) < config.sources_per_batch:
        raise ConfigError("dataset smaller than one batch")

    views: list[synthdata.SyntheticImage] = []
    source_ids = []
    for slot, idx in enumerate(order):
        image = dataset.images[idx]
        seed = substream_seed(config.seed, STREAM_AUGMENT, step, slot)
        v0, v1 = synthdata.augment(
            image, seed, dataset.height, dataset.width,
            sigma=config.augment_sigma, mask=config.augment_mask,
        )
        views.extend([v0, v1])
        source_ids.extend([image.id, image.id])
    return Batch(
        views=views,
        source_ids=np.asarray(source_ids),
        meta=np.stack([v.meta for v in views]),
    )


def _forward_all(
    params: encoder.EncoderParams, batch: Batch, want_trace: bool
) -> tuple[list[encoder.RepresentationSet], list[encoder.ForwardTrace | None]]:
    reps, traces = [], []
    for view in batch.views:
        r, tr = encoder.forward(params, view.pixels, want_trace=want_trace)
        reps.append(r)
        traces.append(tr)
    return reps, traces


def build_step_plan(
    params: encoder.EncoderParams,
    batch: Batch,
    config: TrainConfig,
    step: int,
) -> StepPlan:
    """Freeze every discrete choice of this step at the current parameters."""
    reps, traces = _forward_all(params, batch, want_trace=config.use_filter)
    meta_labels = effective_meta_labels(config, batch.meta.shape[1])
    n_views = len(batch.views)
    plan = StepPlan(metas=[])
    for slot, label in enumerate(meta_labels):
        column = None if label is None else batch.meta[:, label]
        positive_sets = losses.build_positive_sets(batch.source_ids, column)
        meta_plan = MetaPlan(label=label, positive_sets=positive_sets)
        if config.use_pixel_loss:
            for anchor_view in range(n_views):
                partners = positive_sets[anchor_view]
                if partners.size > config.partner_cap:
                    rng = substream(
                        config.seed, STREAM_PARTNERS, step, slot, anchor_view
                    )
                    partners = np.sort(rng.choice(
                        partners, size=config.partner_cap, replace=False
                    ))
                for partner_view in partners:
                    meta_plan.pixel_pairs.append(_plan_pair(
                        params, config, step, slot,
                        anchor_view, int(partner_view),
                        reps, traces,
                    ))
        plan.metas.append(meta_plan)
    return plan


def _plan_pair(
    params: encoder.EncoderParams,
    config: TrainConfig,
    step: int,
    meta_slot: int,
    anchor_view: int,
    partner_view: int,
    reps: list[encoder.RepresentationSet],
    traces: list[encoder.ForwardTrace | None],
) -> PairPlan:
    affinity = losses.pixel_affinity(reps[anchor_view].Z, reps[partner_view].Z)
    n_pixels = affinity.shape[0]
    rng = substream(
        config.seed, STREAM_ANCHORS, step, meta_slot, anchor_view, partner_view
    )
    k = min(config.anchors_per_pair, n_pixels)
    anchor_pixels = np.sort(rng.choice(n_pixels, size=k, replace=False))
    pools, negatives, admitted, scores = [], [], [], []
    for px in anchor_pixels:
        pool, neg = screening.build_pool(affinity[px], config.pool_fraction)
        if config.use_filter:
            cand_scores = screening.score_candidates(
                params, traces[anchor_view], int(px),
                reps[partner_view].U[pool], reps[partner_view].U[neg],
                config.temperature, config.score_scope,
            )
            scored = screening.ScoredPool(
                candidates=pool, affinities=affinity[px][pool], scores=cand_scores,
            )
            adm = screening.screen(scored, step, config.steps)
            scores.append(cand_scores)
        else:
            adm = pool
            scores.append(np.zeros(0))
        pools.append(pool)
        negatives.append(neg)
        admitted.append(adm)
    return PairPlan(
        anchor_view=anchor_view, partner_view=partner_view,
        anchor_pixels=anchor_pixels, pools=pools,
        negatives=negatives, admitted=admitted, scores=scores,
    )


def evaluate_plan(
    params: encoder.EncoderParams,
    batch: Batch,
    plan: StepPlan,
    config: TrainConfig,
) -> EvalResult:
    """Losses and per-label flat gradients with the plan's choices held fixed."""
    reps, traces = _forward_all(params, batch, want_trace=True)
    n_views = len(batch.views)
    z_stack = np.stack([r.z for r in reps])
    bundle, image_losses, pixel_losses = [], [], []
    for meta_plan in plan.metas:
        img_loss, dz = losses.image_loss(
            z_stack, meta_plan.positive_sets, config.temperature
        )
        d_U = [np.zeros_like(r.U) for r in reps]
        pix_loss = 0.0
        n_instances = sum(
            pair.anchor_pixels.size for pair in meta_plan.pixel_pairs
        )
        for pair in meta_plan.pixel_pairs:
            pairings = [
                losses.PixelPairing(anchor=int(px), positives=adm, negatives=neg)
                for px, adm, neg in zip(
                    pair.anchor_pixels, pair.admitted, pair.negatives
                )
            ]
            pair_loss, dU_a, dU_p = losses.pixel_loss(
                reps[pair.anchor_view].U, reps[pair.partner_view].U,
                pairings, config.temperature,
            )
            # pixel_loss averages over its own pairings; fold into the global
            # mean over all anchor instances of this meta label
            w = len(pairings) / n_instances
            pix_loss += w * pair_loss
            d_U[pair.anchor_view] += w * dU_a
            d_U[pair.partner_view] += w * dU_p

        grad = np.zeros(encoder.param_count(params.dims))
        for k in range(n_views):
            has_pixel = np.any(d_U[k])
            grad += encoder.backward(
                params, traces[k],
                d_z=dz[k],
                d_U=d_U[k] if has_pixel else None,
            )
        bundle.append(grad)
        image_losses.append(float(img_loss))
        pixel_losses.append(float(pix_loss))
    total, _ = losses.joint_loss(image_losses, pixel_losses)
    return EvalResult(
        bundle=bundle, image_losses=image_losses,
        pixel_losses=pixel_losses, total_loss=total,
    )


def plan_loss(
    params: encoder.EncoderParams,
    batch: Batch,
    plan: StepPlan,
    config: TrainConfig,
    meta_slot: int,
) -> float:
    """Scalar loss of one meta slot under a fixed plan (finite-difference hook)."""
    reps, _ = _forward_all(params, batch, want_trace=False)
    meta_plan = plan.metas[meta_slot]
    z_stack = np.stack([r.z for r in reps])
    img_loss, _ = losses.image_loss(
        z_stack, meta_plan.positive_sets, config.temperature
    )
    pix_loss = 0.0
    n_instances = sum(pair.anchor_pixels.size for pair in meta_plan.pixel_pairs)
    for pair in meta_plan.pixel_pairs:
        pairings = [
            losses.PixelPairing(anchor=int(px), positives=adm, negatives=neg)
            for px, adm, neg in zip(pair.anchor_pixels, pair.admitted, pair.negatives)
        ]
        pair_loss, _, _ = losses.pixel_loss(
            reps[pair.anchor_view].U, reps[pair.partner_view].U,
            pairings, config.temperature,
        )
        pix_loss += (len(pairings) / n_instances) * pair_loss
    return float(img_loss) + float(pix_loss)


def compute_meta_gradients(
    params: encoder.EncoderParams,
    batch: Batch,
    config: TrainConfig,
    step: int,
) -> tuple[EvalResult, StepPlan]:
    plan = build_step_plan(params, batch, config, step)
    return evaluate_plan(params, batch, plan, config), plan


def _segment_bounds(config: TrainConfig) -> tuple[tuple[int, int], ...] | None:
    if not config.mitigate_per_layer:
        return None
    return tuple(
        (start, stop) for _, start, stop in encoder.layer_slices(config.encoder_dims())
    )


def train_step(
    params: encoder.EncoderParams,
    state: mitigator.MitigatorState | None,
    velocity: np.ndarray | None,
    batch: Batch,
    step: int,
    config: TrainConfig,
) -> tuple[
    encoder.EncoderParams,
    mitigator.MitigatorState | None,
    np.ndarray | None,
    MetricsRecord,
    mitigator.ConflictReport | None,
    StepPlan,
]:
    result, plan = compute_meta_gradients(params, batch, config, step)
    if not math.isfinite(result.total_loss):
        raise TrainingDiverged(f"non-finite loss at step {step}")

    report = None
    if config.use_mitigator:
        grad, state, report = mitigator.mitigate(result.bundle, state)
    else:
        grad = mitigator.average_bundle(result.bundle)

    lr = cosine_lr(config.learning_rate, step, config.steps)
    if config.momentum > 0.0:
        velocity = config.momentum * velocity + grad
        update = velocity
    else:
        update = grad
    flat = encoder.flatten_params(params) - lr * update
    params = encoder.unflatten_params(flat, params.dims)

    stats = plan.pool_stats()
    record = MetricsRecord(
        step=step,
        lr=lr,
        image_losses=result.image_losses,
        pixel_losses=result.pixel_losses,
        total_loss=result.total_loss,
        conflicts=report.conflict_count if report else 0,
        fired=report.fired_count if report else 0,
        anchors=stats["anchors"],
        pool=stats["pool"],
        admitted=stats["admitted"],
    )
    return params, state, velocity, record, report, plan


def save_run_checkpoint(
    directory,
    params: encoder.EncoderParams,
    state: mitigator.MitigatorState | None,
    step: int,
    config: TrainConfig,
    velocity: np.ndarray | None = None,
    data_manifest: dict | None = None,
) -> None:
    directory = Path(directory)
    extra = {
        "step": step,
        "seed": config.seed,
        "train_config": config_to_dict(config),
        "velocity": None if velocity is None else velocity.tolist(),
    }
    if data_manifest is not None:
        extra["data"] = data_manifest
    encoder.save_checkpoint(directory, params, extra=extra)
    if state is not None:
        mitigator.save_state(directory / "mitigator.json", state)


def load_run_checkpoint(directory) -> tuple[
    encoder.EncoderParams, mitigator.MitigatorState | None, dict
]:
    directory = Path(directory)
    params, manifest = encoder.load_checkpoint(directory)
    state = None
    state_path = directory / "mitigator.json"
    if state_path.exists():
        state = mitigator.load_state(state_path)
    return params, state, manifest


def config_to_dict(config: TrainConfig) -> dict:
    payload = dict(config.__dict__)
    if payload["meta_subset"] is not None:
        payload["meta_subset"] = list(payload["meta_subset"])
    return payload


def config_from_dict(payload: dict) -> TrainConfig:
    payload = dict(payload)
    if payload.get("meta_subset") is not None:
        payload["meta_subset"] = tuple(payload["meta_subset"])
    return TrainConfig(**payload)


def train(
    config: TrainConfig,
    dataset: synthdata.SyntheticDataset,
    out_dir=None,
    resume_from=None,
) -> TrainResult:
    """Run the full loop; byte-identical outputs for identical inputs.

    ``resume_from`` points at a checkpoint directory written by this function
    (or ``save_run_checkpoint``); training continues from the recorded step
    and reproduces the uninterrupted run exactly, because every random draw
    is keyed by (seed, stream, step) rather than generator history.
    """
    config.validate()
    if dataset.feature_dim != config.feature_dim:
        raise ConfigError(
            f"dataset feature_dim {dataset.feature_dim} != config {config.feature_dim}"
        )
    meta_labels = effective_meta_labels(config, dataset.n_meta_labels)

    out_path = None
    metrics_fh = conflicts_fh = pools_fh = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)

    start = 0
    velocity = None
    state = None
    if resume_from is not None:
        params, state, manifest = load_run_checkpoint(resume_from)
        start = int(manifest["step"])
        if manifest.get("velocity") is not None:
            velocity = np.asarray(manifest["velocity"], dtype=np.float64)
    else:
        params = encoder.init_params(
            substream_seed(config.seed, STREAM_INIT), config.encoder_dims()
        )
    if config.use_mitigator and state is None:
        state = mitigator.MitigatorState.fresh(
            len(meta_labels), config.ema_weight, _segment_bounds(config)
        )
    if config.momentum > 0.0 and velocity is None:
        velocity = np.zeros(encoder.param_count(config.encoder_dims()))

    mode = "a" if resume_from is not None else "w"
    if out_path is not None:
        metrics_fh = (out_path / "metrics.jsonl").open(mode)
        conflicts_fh = (out_path / "conflicts.jsonl").open(mode)
        pools_fh = (out_path / "pool_stats.jsonl").open(mode)

    history: list[MetricsRecord] = []
    try:
        for step in range(start, config.steps):
            batch = sample_batch(dataset, config, step)
            params, state, velocity, record, report, plan = train_step(
                params, state, velocity, batch, step, config
            )
            history.append(record)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(record.to_json()) + "\n")
                if report is not None:
                    for rec in report.records:
                        conflicts_fh.write(
                            json.dumps({"step": step} | rec.to_json()) + "\n"
                        )
                pools_fh.write(
                    json.dumps({"step": step} | plan.pool_stats()) + "\n"
                )
            if (
                out_path is not None
                and config.checkpoint_every
                and (step + 1) % config.checkpoint_every == 0
                and step + 1 < config.steps
            ):
                save_run_checkpoint(
                    out_path / f"checkpoint-{step + 1:06d}", params, state,
                    step + 1, config, velocity,
                )
    finally:
        for fh in (metrics_fh, conflicts_fh, pools_fh):
            if fh is not None:
                fh.close()

    if out_path is not None:
        save_run_checkpoint(
            out_path / "checkpoint", params, state, config.steps, config, velocity,
        )
    return TrainResult(params=params, state=state, history=history, config=config)


def encode_dataset(
    params: encoder.EncoderParams, dataset: synthdata.SyntheticDataset
) -> tuple[np.ndarray, np.ndarray]:
    """Pooled and pixel representations of every clean (unaugmented) image."""
    zs, us = [], []
    for image in dataset.images:
        reps, _ = encoder.forward(params, image.pixels)
        zs.append(reps.z)
        us.append(reps.U)
    return np.stack(zs), np.stack(us)


def linear_probe_accuracy(
    features: np.ndarray, labels: np.ndarray, seed: int, folds: int = 5
) -> tuple[float | None, int]:
    """Mean k-fold accuracy of a multinomial logistic probe; frozen features."""
    skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    try:
        splits = list(skf.split(features, labels))
    except ValueError:
        return None, folds  # fold design impossible for this label layout
    scores = []
    failed = 0
    for train_idx, test_idx in splits:
        try:
            clf = LogisticRegression(max_iter=1000)
            clf.fit(features[train_idx], labels[train_idx])
            scores.append(clf.score(features[test_idx], labels[test_idx]))
        except ValueError:
            failed += 1
    return (float(np.mean(scores)) if scores else None), failed


def pixel_probe_accuracy(
    pixel_features: np.ndarray,
    pixel_labels: np.ndarray,
    seed: int,
    folds: int = 5,
) -> tuple[float | None, int]:
    """Nearest-centroid accuracy over pixels, split by image into folds."""
    n_images = pixel_features.shape[0]
    rng = substream(seed, STREAM_PROBE)
    order = rng.permutation(n_images)
    scores = []
    failed = 0
    for f in range(folds):
        test = order[f::folds]
        train = np.setdiff1d(order, test)
        tr_x = pixel_features[train].reshape(-1, pixel_features.shape[-1])
        tr_y = pixel_labels[train].reshape(-1)
        te_x = pixel_features[test].reshape(-1, pixel_features.shape[-1])
        te_y = pixel_labels[test].reshape(-1)
        classes = np.unique(tr_y)
        if np.setdiff1d(np.unique(te_y), classes).size:
            failed += 1
            continue
        centroids = np.stack([tr_x[tr_y == c].mean(axis=0) for c in classes])
        dists = np.linalg.norm(te_x[:, None, :] - centroids[None, :, :], axis=-1)
        pred = classes[np.argmin(dists, axis=1)]
        scores.append(float(np.mean(pred == te_y)))
    return (float(np.mean(scores)) if scores else None), failed


def kmeans_nmi(features: np.ndarray, labels: np.ndarray, seed: int) -> float:
    km = KMeans(
        n_clusters=int(np.unique(labels).size), n_init=10, random_state=seed
    )
    assignment = km.fit_predict(features)
    return float(normalized_mutual_info_score(labels, assignment))


def probe(
    params: encoder.EncoderParams,
    dataset: synthdata.SyntheticDataset,
    seed: int = 0,
    folds: int = 5,
) -> ProbeScores:
    """Linear, pixel, and clustering probes against the latent annotations."""
    z, u = encode_dataset(params, dataset)
    labels = dataset.latent_classes()
    latents = [img.latent for img in dataset.images]
    if any(lat is None for lat in latents):
        raise ContractViolationError("pixel probe needs latent class maps")
    pixel_labels = np.stack(latents)
    linear, failed_lin = linear_probe_accuracy(z, labels, seed, folds)
    pixel, failed_pix = pixel_probe_accuracy(u, pixel_labels, seed, folds)
    nmi = kmeans_nmi(z, labels, seed)
    return ProbeScores(
        linear_accuracy=linear,
        pixel_accuracy=pixel,
        clustering_nmi=nmi,
        failed_folds=failed_lin + failed_pix,
    )


def dump_embeddings(
    params: encoder.EncoderParams, dataset: synthdata.SyntheticDataset, path
) -> None:
    """CSV with one row per image: id, meta labels, latent class, z columns."""
    z, _ = encode_dataset(params, dataset)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dataset.meta_matrix()
    try:
        latent = dataset.latent_classes()
    except ContractViolationError:
        latent = None
    with path.open("w", newline="") as fh:
        header = (
            ["id"]
            + [f"meta_{k}" for k in range(dataset.n_meta_labels)]
            + ["latent_class"]
            + [f"z_{k}" for k in range(z.shape[1])]
        )
        fh.write(",".join(header) + "\n")
        for i, image in enumerate(dataset.images):
            cells = [str(image.id)]
            cells += [str(v) for v in meta[i].tolist()]
            cells.append("" if latent is None else str(latent[i]))
            cells += [repr(v) for v in z[i].tolist()]
            fh.write(",".join(cells) + "\n")
