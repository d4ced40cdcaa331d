"""Single-object Bayesian filtering and smoothing primitives.

Kalman filter, unscented Kalman filter and their Rauch-Tung-Striebel
smoothers. These are the building blocks used by the multi-object update
(per-track predictions and measurement likelihoods) and by the trajectory
estimator (per-label forward filtering and backward smoothing).

All covariances are kept symmetric by construction: every operation
re-symmetrizes its output, which guards against drift over long runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolationError, NumericalError

__all__ = [
    "GaussianState",
    "LinearModel",
    "NonlinearModel",
    "kf_predict",
    "kf_update",
    "rts_smooth",
    "ukf_predict",
    "ukf_update",
    "urts_smooth",
    "wrap_angle",
]

_SINGULAR_PIVOT_RATIO = 1e-12


def _symmetrize(cov: np.ndarray) -> np.ndarray:
    return 0.5 * (cov + cov.T)


def wrap_angle(theta):
    """Wrap angles into (-pi, pi]."""
    wrapped = np.mod(-np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi)
    return np.pi - wrapped


def _cholesky_checked(mat: np.ndarray, what: str, check_singular: bool = True) -> np.ndarray:
    """Cholesky factor with an optional near-singularity check.

    ``check_singular`` guards factors that are about to be inverted; plain
    square roots (sigma points) only need the factorization to succeed.
    """
    try:
        L = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{what} is not positive definite") from exc
    if check_singular:
        pivots = np.diag(L) ** 2
        if pivots.min() < _SINGULAR_PIVOT_RATIO * max(np.trace(mat), 1e-300):
            raise NumericalError(f"{what} is numerically singular")
    return L


def _cho_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A x = b given the lower Cholesky factor L of A."""
    y = np.linalg.solve(L, b)
    return np.linalg.solve(L.T, y)


@dataclass(frozen=True)
class GaussianState:
    """Gaussian belief over a single object's kinematic state.

    The covariance is symmetrized on construction; use ``validate()`` for
    the full (more expensive) positive-semidefiniteness check at module
    boundaries.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = _symmetrize(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ContractViolationError(
                f"covariance shape {cov.shape} does not match state dim {mean.size}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def validate(self) -> "GaussianState":
        """Check symmetry and positive semi-definiteness, return self."""
        asym = np.abs(self.cov - self.cov.T).max() if self.dim else 0.0
        if asym > 1e-9:
            raise ContractViolationError(f"covariance asymmetry {asym:.3e} exceeds 1e-9")
        eigvals = np.linalg.eigvalsh(self.cov)
        floor = -1e-9 * max(np.trace(self.cov), 1.0)
        if eigvals.min() < floor:
            raise ContractViolationError(
                f"covariance has eigenvalue {eigvals.min():.3e} below PSD tolerance"
            )
        return self


@dataclass(frozen=True)
class LinearModel:
    """Linear-Gaussian transition and observation model.

    x+ ~ N(F x, Q),  z ~ N(H x, R)
    """

    F: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        Q = _symmetrize(np.atleast_2d(np.asarray(self.Q, dtype=float)))
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        R = _symmetrize(np.atleast_2d(np.asarray(self.R, dtype=float)))
        n = F.shape[0]
        if F.shape != (n, n) or Q.shape != (n, n):
            raise ContractViolationError("F and Q must be square and same size")
        if H.shape[1] != n or R.shape != (H.shape[0], H.shape[0]):
            raise ContractViolationError("H/R dimensions inconsistent with F")
        for name, mat in (("Q", Q), ("R", R)):
            if np.linalg.eigvalsh(mat).min() < -1e-9 * max(np.trace(mat), 1.0):
                raise ContractViolationError(f"{name} must be positive semi-definite")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)

    @property
    def state_dim(self) -> int:
        return self.F.shape[0]

    @property
    def meas_dim(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class NonlinearModel:
    """Nonlinear model handled through the unscented transform.

    ``transition`` and ``measurement`` must be vectorized: they take an
    (n_points, dim) array of states and return (n_points, out_dim).
    ``angle_dims`` lists measurement components that live on the circle;
    residuals in those components are wrapped into (-pi, pi].

    ``transition_kind``/``measurement_kind`` are optional tags ("ct",
    "range-bearing") that let hot paths pick a compiled kernel for the
    built-in models; they change nothing about the numbers.
    """

    transition: Callable[[np.ndarray], np.ndarray]
    Q: np.ndarray
    measurement: Callable[[np.ndarray], np.ndarray]
    R: np.ndarray
    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0
    angle_dims: tuple = ()
    transition_kind: str | None = None
    measurement_kind: str | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        Q = _symmetrize(np.atleast_2d(np.asarray(self.Q, dtype=float)))
        R = _symmetrize(np.atleast_2d(np.asarray(self.R, dtype=float)))
        for name, mat in (("Q", Q), ("R", R)):
            if np.linalg.eigvalsh(mat).min() < -1e-9 * max(np.trace(mat), 1.0):
                raise ContractViolationError(f"{name} must be positive semi-definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        n = Q.shape[0]
        wm, _ = sigma_weights(n, self.alpha, self.beta, self.kappa)
        if abs(wm.sum() - 1.0) > 1e-12:
            raise ContractViolationError("sigma-point mean weights must sum to 1")

    @property
    def state_dim(self) -> int:
        return self.Q.shape[0]

    @property
    def meas_dim(self) -> int:
        return self.R.shape[0]


def sigma_weights(n: int, alpha: float, beta: float, kappa: float):
    """Mean and covariance weights for 2n+1 scaled sigma points."""
    lam = alpha * alpha * (n + kappa) - n
    if n + lam <= 0:
        raise ContractViolationError("alpha/kappa give a non-positive sigma spread")
    wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = lam / (n + lam) + (1.0 - alpha * alpha + beta)
    return wm, wc


def sigma_points(state: GaussianState, alpha: float, kappa: float) -> np.ndarray:
    """(2n+1, n) matrix of scaled sigma points around ``state``."""
    n = state.dim
    lam = alpha * alpha * (n + kappa) - n
    L = _cholesky_checked((n + lam) * state.cov, "sigma-point covariance", check_singular=False)
    pts = np.empty((2 * n + 1, n))
    pts[0] = state.mean
    pts[1 : n + 1] = state.mean + L.T
    pts[n + 1 :] = state.mean - L.T
    return pts


def kf_predict(state: GaussianState, model: LinearModel) -> GaussianState:
    """Linear prediction: mean -> F mean, cov -> F cov F' + Q."""
    if state.dim != model.state_dim:
        raise ContractViolationError(
            f"state dim {state.dim} does not match model dim {model.state_dim}"
        )
    mean = model.F @ state.mean
    cov = model.F @ state.cov @ model.F.T + model.Q
    return GaussianState(mean, cov)


def kf_update(state: GaussianState, z: np.ndarray, model: LinearModel):
    """Linear measurement update with Joseph-form covariance.

    Returns:
        (posterior, likelihood) where likelihood = N(z; H mean, H P H' + R).
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != model.meas_dim:
        raise ContractViolationError(
            f"measurement dim {z.size} does not match model dim {model.meas_dim}"
        )
    if state.dim != model.state_dim:
        raise ContractViolationError("state dim does not match model")
    H, R = model.H, model.R
    S = _symmetrize(H @ state.cov @ H.T + R)
    L = _cholesky_checked(S, "innovation covariance")
    innov = z - H @ state.mean
    K = _cho_solve(L, H @ state.cov).T
    mean = state.mean + K @ innov
    I_KH = np.eye(state.dim) - K @ H
    cov = I_KH @ state.cov @ I_KH.T + K @ R @ K.T
    alpha = np.linalg.solve(L, innov)
    log_lik = -0.5 * (alpha @ alpha) - np.log(np.diag(L)).sum() - 0.5 * z.size * np.log(2.0 * np.pi)
    return GaussianState(mean, cov), float(np.exp(log_lik))


def rts_smooth(
    filtered: Sequence[tuple[GaussianState, GaussianState]], model: LinearModel
) -> list[GaussianState]:
    """Rauch-Tung-Striebel smoother over a filtered forward pass.

    Args:
        filtered: per-step (predicted, updated) pairs; predicted[i] must be
            the one-step prediction from updated[i-1].

    Returns:
        Smoothed states; the last one equals the last updated state.
    """
    if not filtered:
        raise ContractViolationError("filtered sequence must be nonempty")
    n = len(filtered)
    smoothed = [filtered[-1][1]]
    for i in range(n - 2, -1, -1):
        _, upd = filtered[i]
        pred_next, _ = filtered[i + 1]
        L = _cholesky_checked(pred_next.cov, "predicted covariance")
        G = _cho_solve(L, model.F @ upd.cov).T
        mean = upd.mean + G @ (smoothed[0].mean - pred_next.mean)
        cov = upd.cov + G @ (smoothed[0].cov - pred_next.cov) @ G.T
        smoothed.insert(0, GaussianState(mean, cov))
    return smoothed


def _unscented_moments(points: np.ndarray, wm: np.ndarray, wc: np.ndarray):
    mean = wm @ points
    diff = points - mean
    cov = (wc[:, None] * diff).T @ diff
    return mean, _symmetrize(cov)


def ukf_predict(state: GaussianState, model: NonlinearModel) -> GaussianState:
    """Unscented prediction through ``model.transition``."""
    if state.dim != model.state_dim:
        raise ContractViolationError("state dim does not match model")
    pts = sigma_points(state, model.alpha, model.kappa)
    wm, wc = sigma_weights(state.dim, model.alpha, model.beta, model.kappa)
    prop = np.asarray(model.transition(pts), dtype=float)
    mean, cov = _unscented_moments(prop, wm, wc)
    return GaussianState(mean, cov + model.Q)


def _wrap_residual(res: np.ndarray, angle_dims: tuple) -> np.ndarray:
    if angle_dims:
        res = np.array(res, copy=True)
        res[..., list(angle_dims)] = wrap_angle(res[..., list(angle_dims)])
    return res


def measurement_moments(state: GaussianState, model: NonlinearModel):
    """Unscented predicted-measurement moments for ``state``.

    Returns:
        (z_pred, S, C): predicted measurement, innovation covariance and
        state-measurement cross covariance. Angular components are averaged
        relative to the central sigma point so means near +-pi stay sane.
    """
    pts = sigma_points(state, model.alpha, model.kappa)
    wm, wc = sigma_weights(state.dim, model.alpha, model.beta, model.kappa)
    zs = np.asarray(model.measurement(pts), dtype=float)
    rel = _wrap_residual(zs - zs[0], model.angle_dims)
    z_pred = zs[0] + wm @ rel
    dz = _wrap_residual(zs - z_pred, model.angle_dims)
    dx = pts - state.mean
    S = _symmetrize((wc[:, None] * dz).T @ dz + model.R)
    C = (wc[:, None] * dx).T @ dz
    if model.angle_dims:
        z_pred = _wrap_residual(z_pred[None, :], model.angle_dims)[0]
    return z_pred, S, C


def ukf_update(state: GaussianState, z: np.ndarray, model: NonlinearModel):
    """Unscented measurement update; returns (posterior, likelihood)."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != model.meas_dim:
        raise ContractViolationError("measurement dim does not match model")
    z_pred, S, C = measurement_moments(state, model)
    L = _cholesky_checked(S, "innovation covariance")
    innov = _wrap_residual(z - z_pred, model.angle_dims)
    K = _cho_solve(L, C.T).T
    mean = state.mean + K @ innov
    cov = state.cov - K @ S @ K.T
    alpha = np.linalg.solve(L, innov)
    log_lik = -0.5 * (alpha @ alpha) - np.log(np.diag(L)).sum() - 0.5 * z.size * np.log(2.0 * np.pi)
    return GaussianState(mean, cov), float(np.exp(log_lik))


def urts_smooth(
    filtered: Sequence[tuple[GaussianState, GaussianState]], model: NonlinearModel
) -> list[GaussianState]:
    """Unscented RTS smoother; cross covariances come from sigma points."""
    if not filtered:
        raise ContractViolationError("filtered sequence must be nonempty")
    n = len(filtered)
    wm, wc = sigma_weights(model.state_dim, model.alpha, model.beta, model.kappa)
    smoothed = [filtered[-1][1]]
    for i in range(n - 2, -1, -1):
        _, upd = filtered[i]
        pts = sigma_points(upd, model.alpha, model.kappa)
        prop = np.asarray(model.transition(pts), dtype=float)
        pred_mean, pred_cov = _unscented_moments(prop, wm, wc)
        pred_cov = pred_cov + model.Q
        cross = (wc[:, None] * (pts - upd.mean)).T @ (prop - pred_mean)
        L = _cholesky_checked(pred_cov, "predicted covariance")
        G = _cho_solve(L, cross.T).T
        mean = upd.mean + G @ (smoothed[0].mean - pred_mean)
        cov = upd.cov + G @ (smoothed[0].cov - pred_cov) @ G.T
        smoothed.insert(0, GaussianState(mean, cov))
    return smoothed
