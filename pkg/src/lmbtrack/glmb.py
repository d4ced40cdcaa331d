"""Joint multi-object prediction and update.

Builds per-label predicted densities and association weights, explores the
association space exactly (small instances) or by Gibbs sampling, and emits
a truncated hypothesis mixture. The prior's existence probabilities are
folded into the per-row weights, so a row's "die" weight is 1 - r*P_S_bar
and its survive-with-j weight is r*P_S_bar*psi_bar(j); birth rows use the
birth probability the same way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import chi2

from . import _kernels
from .errors import ContractViolationError, NumericalError
from .gaussian import (
    GaussianState,
    LinearModel,
    NonlinearModel,
    kf_predict,
    measurement_moments,
    ukf_predict,
    wrap_angle,
    _cholesky_checked,
)
from .rfs import (
    AssociationMap,
    GaussianMixture,
    GlmbDensity,
    GlmbHypothesis,
    Label,
    LmbDensity,
)

__all__ = [
    "BirthComponent",
    "BirthModel",
    "MultiObjectModel",
    "TruncationParams",
    "AssociationCostTable",
    "predict_track",
    "psi_value",
    "build_cost_table",
    "enumerate_hypotheses_exact",
    "gibbs_sample_hypotheses",
    "joint_predict_update",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class BirthComponent:
    """One birth slot: its index, birth probability and spatial density."""

    slot: int
    r: float
    pdf: GaussianMixture

    def __post_init__(self):
        if not 0.0 < self.r < 1.0:
            raise ContractViolationError(f"birth probability {self.r} outside (0, 1)")


@dataclass(frozen=True)
class BirthModel:
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        slots = [c.slot for c in comps]
        if len(set(slots)) != len(slots):
            raise ContractViolationError("birth slots must be distinct")
        object.__setattr__(self, "components", comps)

    def labels_at(self, time: int) -> list[Label]:
        return [Label(time, c.slot) for c in self.components]


@dataclass(frozen=True)
class MultiObjectModel:
    """Survival/detection/clutter parameters around a single-object model."""

    survival_probability: float
    detection_probability: float
    clutter_intensity: Callable[[np.ndarray], float]
    single_object: LinearModel | NonlinearModel
    birth: BirthModel

    def __post_init__(self):
        if not 0.0 < self.survival_probability <= 1.0:
            raise ContractViolationError("survival probability must be in (0, 1]")
        if not 0.0 < self.detection_probability <= 1.0:
            raise ContractViolationError("detection probability must be in (0, 1]")

    @property
    def is_linear(self) -> bool:
        return isinstance(self.single_object, LinearModel)


@dataclass(frozen=True)
class TruncationParams:
    """Runtime knobs for the association stage."""

    max_hypotheses: int = 1000
    gibbs_iterations: int = 1000
    use_exact_when_small: bool = True
    exact_guard: int = 6
    gating: bool = True
    gate_probability: float = 0.999

    def gate_threshold(self, meas_dim: int) -> float:
        return float(chi2.ppf(self.gate_probability, meas_dim))


# Column layout of the cost table: 0 = die/not-born, 1 = misdetected,
# 2 + j = detected by measurement j (0-based j).
COL_DIE = 0
COL_MISS = 1


@dataclass(frozen=True)
class AssociationCostTable:
    """Per-row association weights plus the matching posterior mixtures."""

    labels: tuple
    kinds: tuple  # "survive" | "birth"
    existences: np.ndarray
    predicted: tuple  # GaussianMixture per row
    log_eta: np.ndarray  # (n_rows, n_meas + 2)
    posteriors: tuple  # per row: dict {j (1-based) -> GaussianMixture}
    measurements: tuple

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    @property
    def n_meas(self) -> int:
        return len(self.measurements)

    def posterior(self, row: int, j: int) -> GaussianMixture:
        return self.predicted[row] if j == 0 else self.posteriors[row][j]

    def log_weight(self, columns: Sequence[int]) -> float:
        return float(sum(self.log_eta[i, c] for i, c in enumerate(columns)))


def predict_track(
    pdf: GaussianMixture, label: Label, model: MultiObjectModel
) -> tuple[GaussianMixture, float]:
    """Predict a track's mixture one step; weights are preserved.

    Returns the predicted mixture and the survival probability averaged over
    the pdf (a constant here, since survival is state independent).
    """
    single = model.single_object
    if isinstance(single, LinearModel):
        comps = [(w, kf_predict(g, single)) for w, g in pdf.components]
    else:
        comps = [(w, ukf_predict(g, single)) for w, g in pdf.components]
    return GaussianMixture(tuple(comps)), model.survival_probability


class _ComponentUpdate:
    """Measurement-update operator for one Gaussian component.

    Precomputes the innovation factorization and gain once, then evaluates
    log likelihoods, gate distances and posterior means for a whole scan of
    measurements in one vectorized sweep.
    """

    def __init__(self, state: GaussianState, single: LinearModel | NonlinearModel):
        self.angle_dims: tuple = ()
        if isinstance(single, LinearModel):
            self.z_pred = single.H @ state.mean
            S = single.H @ state.cov @ single.H.T + single.R
            self.L = _cholesky_checked(0.5 * (S + S.T), "innovation covariance")
            K = np.linalg.solve(self.L.T, np.linalg.solve(self.L, single.H @ state.cov)).T
            IKH = np.eye(state.dim) - K @ single.H
            cov = IKH @ state.cov @ IKH.T + K @ single.R @ K.T
            self.cov_post = 0.5 * (cov + cov.T)
        else:
            self.angle_dims = tuple(single.angle_dims)
            z_pred, S, C = measurement_moments(state, single)
            self.z_pred = z_pred
            self.L = _cholesky_checked(S, "innovation covariance")
            K = np.linalg.solve(self.L.T, np.linalg.solve(self.L, C.T)).T
            cov = state.cov - K @ S @ K.T
            self.cov_post = 0.5 * (cov + cov.T)
        self.K = K
        self.mean = state.mean
        self._log_norm = -np.log(np.diag(self.L)).sum() - 0.5 * self.z_pred.size * _LOG_2PI

    def innovations(self, Z: np.ndarray) -> np.ndarray:
        innov = Z - self.z_pred
        if self.angle_dims:
            dims = list(self.angle_dims)
            innov[:, dims] = wrap_angle(innov[:, dims])
        return innov

    def mahalanobis_sq(self, innov: np.ndarray) -> np.ndarray:
        alpha = np.linalg.solve(self.L, innov.T)
        return np.einsum("ij,ij->j", alpha, alpha)

    def log_likelihoods(self, mah_sq: np.ndarray) -> np.ndarray:
        return -0.5 * mah_sq + self._log_norm

    def posterior_means(self, innov: np.ndarray) -> np.ndarray:
        return self.mean + innov @ self.K.T


def _scan_update(pdf_pred: GaussianMixture, Z: np.ndarray, single):
    """Per-component stats for every measurement in a scan.

    Returns:
        (log_q, min_mah_sq, parts) where log_q[j] is the mixture likelihood
        of measurement j, min_mah_sq[j] the smallest per-component gate
        distance and parts the per-component pieces needed to build
        posterior mixtures.
    """
    m = Z.shape[0]
    weights = np.array([w for w, _ in pdf_pred.components])
    log_w = np.log(weights)
    comp_logq = np.empty((pdf_pred.size, m))
    mah = np.empty((pdf_pred.size, m))
    parts = []
    for c, (_, g) in enumerate(pdf_pred.components):
        op = _ComponentUpdate(g, single)
        innov = op.innovations(Z)
        mah[c] = op.mahalanobis_sq(innov)
        comp_logq[c] = op.log_likelihoods(mah[c])
        parts.append((op, innov))
    log_q = _logsumexp(log_w[:, None] + comp_logq, axis=0)
    return log_q, mah.min(axis=0), (log_w, comp_logq, parts)


def _posterior_mixture(j: int, pieces) -> GaussianMixture:
    """Posterior mixture for measurement j (0-based) from scan pieces."""
    log_w, comp_logq, parts = pieces
    raw = log_w + comp_logq[:, j]
    raw = np.exp(raw - raw.max())
    states = [
        GaussianState(op.posterior_means(innov[j : j + 1])[0], op.cov_post)
        for op, innov in parts
    ]
    return GaussianMixture.from_components(raw, states)


def _logsumexp(arr: np.ndarray, axis=None):
    hi = np.max(arr, axis=axis, keepdims=True)
    hi = np.where(np.isfinite(hi), hi, 0.0)
    out = np.log(np.sum(np.exp(arr - hi), axis=axis)) + np.squeeze(hi, axis=axis)
    return out


def psi_value(
    pdf_pred: GaussianMixture,
    j: int,
    Z: Sequence[np.ndarray],
    model: MultiObjectModel,
) -> tuple[float, GaussianMixture]:
    """Association weight and posterior for assigning measurement j.

    j = 0 is misdetection: weight 1 - P_D and an unchanged density. For
    j > 0 the weight is P_D * <pdf, g(z_j | .)> / kappa(z_j) and the
    posterior is the measurement-updated, renormalized mixture.
    """
    if j < 0 or j > len(Z):
        raise ContractViolationError(f"association index {j} outside 0..{len(Z)}")
    if j == 0:
        return 1.0 - model.detection_probability, pdf_pred
    z = np.asarray(Z[j - 1], dtype=float)
    kappa = float(model.clutter_intensity(z))
    if kappa <= 0.0:
        raise NumericalError(f"clutter intensity is {kappa} at measurement {j}")
    log_q, _, pieces = _scan_update(pdf_pred, z[None, :], model.single_object)
    psi_bar = model.detection_probability * math.exp(log_q[0]) / kappa
    return psi_bar, _posterior_mixture(0, pieces)


def build_cost_table(
    lmb_prior: LmbDensity,
    Z: Sequence[np.ndarray],
    model: MultiObjectModel,
    time: int,
    trunc: TruncationParams = TruncationParams(),
) -> AssociationCostTable:
    """Assemble per-row association log weights for one scan.

    Rows are the prior labels (sorted) followed by the birth slots for
    ``time``. Survivor rows carry the predicted existence r * P_S_bar; birth
    rows carry the birth probability. With gating enabled, detect entries
    whose squared Mahalanobis distance exceeds the gate for every mixture
    component are excluded (-inf).
    """
    single = model.single_object
    Zarr = (
        np.asarray([np.asarray(z, dtype=float) for z in Z])
        if len(Z)
        else np.empty((0, getattr(single, "meas_dim")))
    )
    m = Zarr.shape[0]
    log_kappa = np.empty(m)
    for j in range(m):
        kappa = float(model.clutter_intensity(Zarr[j]))
        if kappa <= 0.0:
            raise NumericalError(f"clutter intensity is {kappa} at measurement {j + 1}")
        log_kappa[j] = math.log(kappa)
    gate = trunc.gate_threshold(Zarr.shape[1]) if (trunc.gating and m) else np.inf

    labels: list[Label] = []
    kinds: list[str] = []
    existences: list[float] = []
    predicted: list[GaussianMixture] = []
    for label in lmb_prior.labels:
        track = lmb_prior.tracks[label]
        pdf_pred, ps_bar = predict_track(track.pdf, label, model)
        labels.append(label)
        kinds.append("survive")
        existences.append(track.r * ps_bar)
        predicted.append(pdf_pred)
    for comp in model.birth.components:
        labels.append(Label(time, comp.slot))
        kinds.append("birth")
        existences.append(comp.r)
        predicted.append(comp.pdf)

    n = len(labels)
    log_pd = math.log(model.detection_probability)
    one_minus_pd = 1.0 - model.detection_probability
    log_eta = np.full((n, m + 2), -np.inf)
    posteriors: list[dict] = []
    for i in range(n):
        e = existences[i]
        log_e = math.log(e) if e > 0 else -np.inf
        log_eta[i, COL_DIE] = math.log1p(-e)
        if one_minus_pd > 0:
            log_eta[i, COL_MISS] = log_e + math.log(one_minus_pd)
        row_posts: dict[int, GaussianMixture] = {}
        if m:
            log_q, min_mah, pieces = _scan_update(predicted[i], Zarr, single)
            inside = np.flatnonzero(min_mah <= gate)
            for j in inside:
                log_eta[i, 2 + j] = log_e + log_pd + log_q[j] - log_kappa[j]
                row_posts[j + 1] = _posterior_mixture(j, pieces)
        posteriors.append(row_posts)

    return AssociationCostTable(
        labels=tuple(labels),
        kinds=tuple(kinds),
        existences=np.asarray(existences),
        predicted=tuple(predicted),
        log_eta=log_eta,
        posteriors=tuple(posteriors),
        measurements=tuple(np.asarray(z, dtype=float) for z in Z),
    )


def _columns_to_map(table: AssociationCostTable, columns: Sequence[int]) -> AssociationMap:
    """Column-index vector -> association map over the alive labels."""
    assignment = {}
    for i, c in enumerate(columns):
        if c == COL_DIE:
            continue
        assignment[table.labels[i]] = 0 if c == COL_MISS else c - 1
    return AssociationMap(assignment)


def enumerate_hypotheses_exact(
    table: AssociationCostTable,
) -> list[tuple[AssociationMap, float]]:
    """All valid association outcomes with exactly normalized weights.

    Guarded to small instances; this is the oracle the sampler is checked
    against and the default path for desk-scale scans.
    """
    if table.n_rows > 6 or table.n_meas > 6:
        raise ContractViolationError(
            f"exact enumeration refused for {table.n_rows} rows x {table.n_meas} measurements"
        )
    results: list[tuple[tuple, float]] = []
    columns = [0] * table.n_rows

    def recurse(i: int, used: frozenset, logw: float):
        if i == table.n_rows:
            results.append((tuple(columns), logw))
            return
        for c in range(table.log_eta.shape[1]):
            if c >= 2 and (c in used):
                continue
            step = table.log_eta[i, c]
            if step == -np.inf:
                continue
            columns[i] = c
            recurse(i + 1, used | {c} if c >= 2 else used, logw + step)

    recurse(0, frozenset(), 0.0)
    if not results:
        raise NumericalError("no association outcome has positive weight")
    logws = np.array([lw for _, lw in results])
    weights = np.exp(logws - _logsumexp(logws))
    out = [
        (_columns_to_map(table, cols), float(w))
        for (cols, _), w in zip(results, weights)
    ]
    out.sort(key=lambda mw: (-mw[1], mw[0].canonical_key()))
    return out


def _greedy_columns(table: AssociationCostTable) -> np.ndarray:
    """Row-by-row best column subject to the 1-1 constraint."""
    cols = np.zeros(table.n_rows, dtype=np.int64)
    used: set[int] = set()
    for i in range(table.n_rows):
        order = np.argsort(-table.log_eta[i])
        for c in order:
            if c >= 2 and c in used:
                continue
            if table.log_eta[i, c] == -np.inf:
                continue
            cols[i] = c
            if c >= 2:
                used.add(int(c))
            break
    return cols


def gibbs_sample_hypotheses(
    table: AssociationCostTable,
    n_iterations: int,
    rng_seed: int,
) -> list[tuple[AssociationMap, float]]:
    """Distinct association outcomes discovered by a Gibbs chain.

    The chain starts from the greedy best assignment; each sweep resamples
    every row conditional on the others. Weights of the distinct outcomes
    are computed exactly from the table (sampling only controls which
    outcomes are found) and normalized over the returned list. Fixed seed,
    fixed output.
    """
    if n_iterations < 1:
        raise ContractViolationError("need at least one Gibbs iteration")
    init = _greedy_columns(table)
    if table.n_rows == 0:
        return [(AssociationMap({}), 1.0)]
    rng = np.random.default_rng(rng_seed)
    uniforms = rng.random((n_iterations, table.n_rows))
    visited = _kernels.gibbs_sweeps(table.log_eta, init, uniforms)
    distinct: dict[tuple, float] = {}
    key = tuple(init)
    distinct[key] = table.log_weight(init)
    for row in visited:
        key = tuple(int(c) for c in row)
        if key not in distinct:
            distinct[key] = table.log_weight(key)
    logws = np.array(list(distinct.values()))
    weights = np.exp(logws - _logsumexp(logws))
    out = [
        (_columns_to_map(table, cols), float(w))
        for cols, w in zip(distinct.keys(), weights)
    ]
    out.sort(key=lambda mw: (-mw[1], mw[0].canonical_key()))
    return out


def joint_predict_update(
    lmb_prior: LmbDensity,
    Z: Sequence[np.ndarray],
    model: MultiObjectModel,
    time: int,
    trunc: TruncationParams = TruncationParams(),
    rng_seed: int = 0,
) -> GlmbDensity:
    """One joint prediction-update: prior multi-Bernoulli to hypothesis mix.

    Small instances are enumerated exactly (when allowed); otherwise the
    Gibbs sampler explores the association space. The result is truncated
    to ``trunc.max_hypotheses`` and renormalized.
    """
    table = build_cost_table(lmb_prior, Z, model, time, trunc)
    small = table.n_rows <= trunc.exact_guard and table.n_meas <= trunc.exact_guard
    if trunc.use_exact_when_small and small:
        pairs = enumerate_hypotheses_exact(table)
    else:
        pairs = gibbs_sample_hypotheses(table, trunc.gibbs_iterations, rng_seed)
    pairs = pairs[: trunc.max_hypotheses]
    total = sum(w for _, w in pairs)
    row_of = {label: i for i, label in enumerate(table.labels)}
    hypotheses = []
    for amap, w in pairs:
        pdfs = {
            label: table.posterior(row_of[label], j)
            for label, j in amap.assignment.items()
        }
        hypotheses.append(
            GlmbHypothesis(
                labels=frozenset(amap.assignment),
                theta=amap,
                weight=w / total,
                pdfs=pdfs,
            )
        )
    return GlmbDensity(tuple(hypotheses))
