"""Soft mitigation of gradient conflicts across meta-label objectives.

Each meta label contributes one flat gradient over the shared parameters.
For every ordered pair the cosine between the (partially mitigated) gradient
of label i and the original gradient of label j is tracked by an
exponential moving average; whenever the fresh cosine drops below that
average, a multiple of g_j is added to g'_i sized so that the pair's cosine
lands exactly on the average. The mitigated per-label gradients are then
averaged into the final update direction.

The injection coefficient comes from the law of sines in the plane spanned
by the two gradients:

    mu = |g_i| (target sqrt(1-omega^2) - omega sqrt(1-target^2))
         / (|g_j| sqrt(1-target^2))

and is exact for any current cosine strictly inside (-1, 1). At exactly
+/-1 the two gradients are colinear and no multiple of g_j can produce an
intermediate angle; the formula is still evaluated literally (an exactly
antiparallel pair collapses to the zero vector).

By default the whole flat vector is treated as one segment; a per-layer
ablation mode runs the same procedure independently per parameter array
with its own moving-average table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore
from .errors import (
    ConfigError,
    ContractViolationError,
    DimensionError,
    TargetDegenerateError,
)

NON_CONFLICTING = "non-conflicting"
SLIGHTLY_CONFLICTING = "slightly-conflicting"
CONFLICTING = "conflicting"

_PARALLEL_TOL = 1e-12
_TARGET_TOL = 1e-9


def classify(omega: float) -> str:
    """Relationship class of a cosine: 1 is aligned, [0,1) mild, <0 conflict."""
    if not -1.0 - 1e-9 <= omega <= 1.0 + 1e-9:
        raise ContractViolationError("cosine must lie in [-1, 1]")
    if omega >= 1.0 - _PARALLEL_TOL:
        return NON_CONFLICTING
    if omega >= 0.0:
        return SLIGHTLY_CONFLICTING
    return CONFLICTING


def inject(
    g_i: np.ndarray,
    g_j: np.ndarray,
    omega: float,
    omega_hat: float,
) -> np.ndarray:
    """Add the g_j multiple that moves cosine(g_i, g_j) onto omega_hat."""
    g_i = numcore.as_vector(g_i)
    g_j = numcore.as_vector(g_j)
    if g_i.shape != g_j.shape:
        raise DimensionError("gradients must have equal length")
    ni = np.linalg.norm(g_i)
    nj = np.linalg.norm(g_j)
    if ni == 0.0 or nj == 0.0:
        raise ContractViolationError("injection needs non-zero gradients")
    if abs(omega_hat) >= 1.0 - _TARGET_TOL:
        raise TargetDegenerateError("target cosine too close to +/-1")
    if not -1.0 <= omega <= 1.0:
        raise ContractViolationError("cosine must lie in [-1, 1]")
    root_cur = np.sqrt(max(1.0 - omega * omega, 0.0))
    root_tgt = np.sqrt(1.0 - omega_hat * omega_hat)
    mu = ni * (omega_hat * root_cur - omega * root_tgt) / (nj * root_tgt)
    return g_i + mu * g_j


@dataclass
class MitigatorState:
    """Moving-average cosine table, one (labels x labels) slab per segment."""

    omega_hat: np.ndarray
    beta: float
    t: int = 0
    segment_bounds: tuple[tuple[int, int], ...] | None = None

    @classmethod
    def fresh(
        cls,
        n_labels: int,
        beta: float,
        segment_bounds: Sequence[tuple[int, int]] | None = None,
    ) -> "MitigatorState":
        if n_labels < 1:
            raise ConfigError("need at least one meta label")
        if not 0.0 < beta <= 1.0:
            raise ConfigError("beta must lie in (0, 1]")
        n_seg = 1 if segment_bounds is None else len(segment_bounds)
        bounds = None if segment_bounds is None else tuple(
            (int(a), int(b)) for a, b in segment_bounds
        )
        return cls(
            omega_hat=np.zeros((n_seg, n_labels, n_labels)),
            beta=float(beta),
            t=0,
            segment_bounds=bounds,
        )

    @property
    def n_labels(self) -> int:
        return self.omega_hat.shape[1]

    def copy(self) -> "MitigatorState":
        return MitigatorState(
            omega_hat=self.omega_hat.copy(),
            beta=self.beta,
            t=self.t,
            segment_bounds=self.segment_bounds,
        )

    def to_json(self) -> dict:
        return {
            "omega_hat": self.omega_hat.tolist(),
            "beta": self.beta,
            "t": self.t,
            "segment_bounds": (
                None if self.segment_bounds is None
                else [list(b) for b in self.segment_bounds]
            ),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "MitigatorState":
        bounds = payload.get("segment_bounds")
        return cls(
            omega_hat=np.asarray(payload["omega_hat"], dtype=np.float64),
            beta=float(payload["beta"]),
            t=int(payload["t"]),
            segment_bounds=None if bounds is None else tuple(
                (int(a), int(b)) for a, b in bounds
            ),
        )


@dataclass
class PairRecord:
    """Outcome of one ordered pair inside one mitigate call."""

    segment: int
    i: int
    j: int
    omega: float | None
    omega_hat: float | None
    relationship: str | None
    fired: bool
    cosine_after: float | None = None
    skipped: str | None = None

    def to_json(self) -> dict:
        return {
            "segment": self.segment,
            "pair": [self.i, self.j],
            "omega": self.omega,
            "omega_hat": self.omega_hat,
            "class": self.relationship,
            "fired": self.fired,
            "cosine_after": self.cosine_after,
            "skipped": self.skipped,
        }


@dataclass
class ConflictReport:
    """All pair outcomes of one mitigate call plus summary counts."""

    records: list[PairRecord] = field(default_factory=list)
    mitigated: list[np.ndarray] = field(default_factory=list)

    @property
    def conflict_count(self) -> int:
        return sum(1 for r in self.records if r.relationship == CONFLICTING)

    @property
    def fired_count(self) -> int:
        return sum(1 for r in self.records if r.fired)


def average_bundle(bundle: Sequence[np.ndarray]) -> np.ndarray:
    """Plain average of per-label gradients; the unmitigated combination."""
    if len(bundle) == 0:
        raise ContractViolationError("empty gradient bundle")
    stack = np.stack([numcore.as_vector(g) for g in bundle])
    return stack.mean(axis=0)


def mitigate(
    bundle: Sequence[np.ndarray],
    state: MitigatorState,
) -> tuple[np.ndarray, MitigatorState, ConflictReport]:
    """One mitigation pass over a per-label gradient bundle.

    Pair order is i ascending, then j ascending. The moving average is
    updated for every evaluated pair, before the trigger comparison, whether
    or not the injection fires; injections use the current g'_i but always
    the original g_j. Pairs with a zero-norm operand, or whose updated
    target lies within 1e-9 of +/-1, are skipped and recorded as such.
    Returns the averaged mitigated gradient, the advanced state, and the
    pair-by-pair report.
    """
    grads = [numcore.as_vector(g) for g in bundle]
    m = len(grads)
    if m < 1:
        raise ContractViolationError("empty gradient bundle")
    if m != state.n_labels:
        raise DimensionError(
            f"bundle has {m} gradients, state tracks {state.n_labels} labels"
        )
    length = grads[0].size
    if any(g.size != length for g in grads):
        raise DimensionError("all gradients in a bundle must have equal length")
    if state.segment_bounds is None:
        segments: list[tuple[int, int]] = [(0, length)]
    else:
        segments = list(state.segment_bounds)
        if segments[-1][1] != length or segments[0][0] != 0:
            raise DimensionError("segment bounds do not cover the gradient vector")

    new_state = state.copy()
    report = ConflictReport()
    mitigated = [g.copy() for g in grads]

    for s, (start, stop) in enumerate(segments):
        for i in range(m):
            gi = mitigated[i][start:stop]
            for j in range(m):
                if j == i:
                    continue
                gj = grads[j][start:stop]
                ni = np.linalg.norm(gi)
                nj = np.linalg.norm(gj)
                if ni == 0.0 or nj == 0.0:
                    report.records.append(PairRecord(
                        segment=s, i=i, j=j, omega=None, omega_hat=None,
                        relationship=None, fired=False, skipped="zero-norm",
                    ))
                    continue
                omega = float(np.clip((gi @ gj) / (ni * nj), -1.0, 1.0))
                target = (1.0 - state.beta) * new_state.omega_hat[s, i, j] \
                    + state.beta * omega
                new_state.omega_hat[s, i, j] = target
                relationship = classify(omega)
                if omega >= target:
                    report.records.append(PairRecord(
                        segment=s, i=i, j=j, omega=omega, omega_hat=target,
                        relationship=relationship, fired=False,
                    ))
                    continue
                if abs(target) >= 1.0 - _TARGET_TOL:
                    report.records.append(PairRecord(
                        segment=s, i=i, j=j, omega=omega, omega_hat=target,
                        relationship=relationship, fired=False,
                        skipped="target-degenerate",
                    ))
                    continue
                gi[:] = inject(gi, gj, omega, target)
                after_norm = np.linalg.norm(gi)
                cosine_after = (
                    float((gi @ gj) / (after_norm * nj)) if after_norm > 0.0 else None
                )
                report.records.append(PairRecord(
                    segment=s, i=i, j=j, omega=omega, omega_hat=target,
                    relationship=relationship, fired=True,
                    cosine_after=cosine_after,
                ))

    new_state.t = state.t + 1
    report.mitigated = mitigated
    g_prime = average_bundle(mitigated)
    return g_prime, new_state, report


def save_state(path, state: MitigatorState) -> None:
    Path(path).write_text(json.dumps(state.to_json()) + "\n")


def load_state(path) -> MitigatorState:
    return MitigatorState.from_json(json.loads(Path(path).read_text()))
