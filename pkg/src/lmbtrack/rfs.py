"""Labelled random-finite-set data model.

Labels, Gaussian-mixture spatial densities, the multi-Bernoulli and
hypothesis-mixture densities built from them, trajectory window bookkeeping
and MAP state extraction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ContractViolationError, EmptyTrajectoryError
from .gaussian import GaussianState

__all__ = [
    "EXISTENCE_CAP",
    "Label",
    "GaussianMixture",
    "LmbTrack",
    "LmbDensity",
    "AssociationMap",
    "GlmbHypothesis",
    "GlmbDensity",
    "AssociationHistory",
    "label_window_bounds",
    "lmb_cardinality_distribution",
    "map_cardinality",
    "extract_map_states",
    "condense_mixture",
]

# Existence probabilities are capped below 1 so the r/(1-r) weight factor
# stays finite.
EXISTENCE_CAP = 1.0 - 1e-6


class Label(NamedTuple):
    """Track identity: birth time step plus a birth-slot index."""

    birth_time: int
    birth_index: int

    def __str__(self) -> str:
        return f"{self.birth_time}.{self.birth_index}"


@dataclass(frozen=True)
class GaussianMixture:
    """Normalized mixture of Gaussian states."""

    components: tuple

    def __post_init__(self):
        comps = tuple((float(w), g) for w, g in self.components)
        if not comps:
            raise ContractViolationError("mixture needs at least one component")
        total = sum(w for w, _ in comps)
        if abs(total - 1.0) > 1e-9:
            raise ContractViolationError(f"mixture weights sum to {total}, not 1")
        if any(w < 0 for w, _ in comps):
            raise ContractViolationError("mixture weights must be nonnegative")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_components(cls, weights, states) -> "GaussianMixture":
        """Build a mixture from raw weights (normalized here)."""
        weights = np.asarray(weights, dtype=float)
        total = weights.sum()
        if total <= 0:
            raise ContractViolationError("mixture weights must have positive mass")
        return cls(tuple(zip(weights / total, states)))

    @classmethod
    def single(cls, state: GaussianState) -> "GaussianMixture":
        return cls(((1.0, state),))

    @property
    def size(self) -> int:
        return len(self.components)

    def mean(self) -> np.ndarray:
        """First moment of the mixture."""
        return sum(w * g.mean for w, g in self.components)

    def moment_match(self) -> GaussianState:
        """Collapse to a single Gaussian with the same mean and covariance."""
        mean = self.mean()
        cov = np.zeros((mean.size, mean.size))
        for w, g in self.components:
            d = g.mean - mean
            cov += w * (g.cov + np.outer(d, d))
        return GaussianState(mean, cov)


def condense_mixture(
    mixture: GaussianMixture,
    prune_threshold: float = 1e-5,
    merge_threshold: float = 4.0,
    max_components: int = 10,
) -> GaussianMixture:
    """Mixture hygiene: prune tiny weights, merge near components, cap count.

    Merging is the usual greedy scheme: repeatedly take the heaviest
    remaining component and absorb every component within the squared
    Mahalanobis ``merge_threshold`` of it (measured in the heaviest
    component's covariance), moment-matching the group.
    """
    comps = [(w, g) for w, g in mixture.components if w >= prune_threshold]
    if not comps:
        comps = [max(mixture.components, key=lambda c: c[0])]

    merged: list[tuple[float, GaussianState]] = []
    remaining = sorted(comps, key=lambda c: -c[0])
    while remaining:
        w0, g0 = remaining[0]
        L = np.linalg.cholesky(g0.cov)
        group, rest = [], []
        for w, g in remaining:
            d = np.linalg.solve(L, g.mean - g0.mean)
            (group if d @ d <= merge_threshold else rest).append((w, g))
        w_tot = sum(w for w, _ in group)
        sub = GaussianMixture.from_components(
            [w for w, _ in group], [g for _, g in group]
        )
        merged.append((w_tot, sub.moment_match()))
        remaining = rest

    merged.sort(key=lambda c: -c[0])
    merged = merged[:max_components]
    return GaussianMixture.from_components(
        [w for w, _ in merged], [g for _, g in merged]
    )


@dataclass(frozen=True)
class LmbTrack:
    """Existence probability plus spatial density for one label."""

    r: float
    pdf: GaussianMixture

    def __post_init__(self):
        if not 0.0 <= self.r <= EXISTENCE_CAP + 1e-15:
            raise ContractViolationError(
                f"existence probability {self.r} outside [0, {EXISTENCE_CAP}]"
            )


@dataclass(frozen=True)
class LmbDensity:
    """Multi-Bernoulli density: independent (r, pdf) per label."""

    tracks: Mapping[Label, LmbTrack]

    def __post_init__(self):
        object.__setattr__(self, "tracks", dict(self.tracks))

    @classmethod
    def empty(cls) -> "LmbDensity":
        return cls({})

    @property
    def labels(self) -> list[Label]:
        return sorted(self.tracks)

    def __len__(self) -> int:
        return len(self.tracks)


@dataclass(frozen=True)
class AssociationMap:
    """Positive 1-1 map from labels to measurement indices (0 = misdetected)."""

    assignment: Mapping[Label, int]

    def __post_init__(self):
        assignment = dict(self.assignment)
        positive = [j for j in assignment.values() if j > 0]
        if any(j < 0 for j in assignment.values()):
            raise ContractViolationError("association indices must be >= 0")
        if len(positive) != len(set(positive)):
            raise ContractViolationError(
                "two labels claim the same measurement index"
            )
        object.__setattr__(self, "assignment", assignment)

    def __getitem__(self, label: Label) -> int:
        return self.assignment[label]

    def canonical_key(self) -> tuple:
        return tuple(sorted(self.assignment.items()))


@dataclass(frozen=True)
class GlmbHypothesis:
    """One (label set, association map) hypothesis with its weight."""

    labels: frozenset
    theta: AssociationMap
    weight: float
    pdfs: Mapping[Label, GaussianMixture]

    def __post_init__(self):
        object.__setattr__(self, "labels", frozenset(self.labels))
        object.__setattr__(self, "pdfs", dict(self.pdfs))
        if set(self.theta.assignment) != set(self.labels):
            raise ContractViolationError("theta domain must equal the label set")
        if not np.isfinite(self.weight) or self.weight < 0:
            raise ContractViolationError("hypothesis weight must be finite and >= 0")


@dataclass(frozen=True)
class GlmbDensity:
    """Weighted mixture of hypotheses, normalized on construction."""

    hypotheses: tuple

    def __post_init__(self):
        hyps = tuple(self.hypotheses)
        keys = [h.theta.canonical_key() for h in hyps]
        if len(set(keys)) != len(keys):
            raise ContractViolationError("duplicate (labels, theta) hypothesis")
        total = sum(h.weight for h in hyps)
        if hyps and abs(total - 1.0) > 1e-9:
            raise ContractViolationError(f"hypothesis weights sum to {total}, not 1")
        object.__setattr__(self, "hypotheses", hyps)

    @property
    def label_universe(self) -> set:
        out: set = set()
        for h in self.hypotheses:
            out |= h.labels
        return out


@dataclass(frozen=True)
class AssociationHistory:
    """Best-association record for one label, one entry per lived step."""

    label: Label
    start_time: int
    indices: tuple

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(j) for j in self.indices))

    @property
    def end_time(self) -> int:
        return self.start_time + len(self.indices) - 1

    def entries(self) -> list[tuple[int, int]]:
        return [(self.start_time + i, j) for i, j in enumerate(self.indices)]

    def index_at(self, time: int) -> int:
        if not self.start_time <= time <= self.end_time:
            raise ContractViolationError(
                f"history for {self.label} has no entry at step {time}"
            )
        return self.indices[time - self.start_time]


def label_window_bounds(
    label: Label,
    window_start: int,
    window_end: int,
    presence: Mapping[int, Iterable[Label]],
) -> tuple[int, int]:
    """Start and end times of ``label`` within a window of time steps.

    The start is the label's birth time clamped to the window start. The end
    advances by one for every step after the start at which the label is
    present, so a label with a presence gap still advances past the gap
    (the count, not the last presence time, defines the end).
    """
    if window_start > window_end:
        raise ContractViolationError("window start must not exceed window end")
    if not any(label in presence.get(i, ()) for i in range(window_start, window_end + 1)):
        raise EmptyTrajectoryError(
            f"label {label} absent from every step in {window_start}..{window_end}"
        )
    s = max(window_start, label.birth_time)
    t = s + sum(
        1 for i in range(s + 1, window_end + 1) if label in presence.get(i, ())
    )
    return s, t


def lmb_cardinality_distribution(lmb: LmbDensity) -> np.ndarray:
    """Distribution of the number of existing objects.

    Poisson-binomial of the existence probabilities, computed by iterated
    convolution with each (1-r, r) Bernoulli pmf.
    """
    pmf = np.array([1.0])
    for track in lmb.tracks.values():
        pmf = np.convolve(pmf, [1.0 - track.r, track.r])
    return pmf / pmf.sum()


def map_cardinality(pmf: Sequence[float]) -> int:
    """MAP cardinality; ties break toward the smaller count."""
    pmf = np.asarray(pmf, dtype=float)
    if pmf.size == 0 or abs(pmf.sum() - 1.0) > 1e-6:
        raise ContractViolationError("cardinality pmf must be normalized")
    return int(np.argmax(pmf))


def extract_map_states(lmb: LmbDensity, n_hat: int) -> dict[Label, np.ndarray]:
    """The ``n_hat`` highest-existence labels with their mixture means.

    Ties in existence probability break by label order (birth time, then
    birth index) so extraction is reproducible.
    """
    if n_hat > len(lmb.tracks):
        raise ContractViolationError(
            f"requested {n_hat} states from {len(lmb.tracks)} tracks"
        )
    ranked = sorted(lmb.tracks.items(), key=lambda kv: (-kv[1].r, kv[0]))
    return {label: track.pdf.mean() for label, track in ranked[:n_hat]}
