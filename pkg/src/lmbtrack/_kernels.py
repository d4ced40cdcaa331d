"""Compiled hot loops.

Numba kernels for the association Gibbs sweeps and for per-label filter and
smoother chains. Randomness is always passed in as pre-drawn uniforms from a
seeded numpy generator, so results do not depend on the compilation backend.
Pure-python fallbacks with identical arithmetic are used when numba is
unavailable.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


@njit(cache=True)
def gibbs_sweeps(log_eta, init, uniforms):
    """Run systematic-scan Gibbs sweeps over association vectors.

    Args:
        log_eta: (n_rows, n_meas + 2) log weights; column 0 is die/not-born,
            column 1 is misdetection, column 2+j is measurement j+1.
            Excluded options carry -inf.
        init: (n_rows,) initial column indices (a valid 1-1 assignment).
        uniforms: (n_sweeps, n_rows) uniform variates driving the draws.

    Returns:
        (n_sweeps, n_rows) visited column-index vectors, one per sweep.
    """
    n_rows, n_cols = log_eta.shape
    n_meas = n_cols - 2
    a = init.copy()
    taken = np.zeros(n_meas, dtype=np.int64)
    for i in range(n_rows):
        if a[i] >= 2:
            taken[a[i] - 2] += 1
    n_sweeps = uniforms.shape[0]
    out = np.empty((n_sweeps, n_rows), dtype=np.int64)
    probs = np.empty(n_cols)
    for it in range(n_sweeps):
        for i in range(n_rows):
            cur = a[i]
            if cur >= 2:
                taken[cur - 2] -= 1
            hi = -np.inf
            for c in range(n_cols):
                v = log_eta[i, c]
                if c >= 2 and taken[c - 2] > 0:
                    v = -np.inf
                probs[c] = v
                if v > hi:
                    hi = v
            total = 0.0
            for c in range(n_cols):
                if probs[c] == -np.inf:
                    probs[c] = 0.0
                else:
                    probs[c] = np.exp(probs[c] - hi)
                total += probs[c]
            u = uniforms[it, i] * total
            acc = 0.0
            choice = 0
            for c in range(n_cols):
                if probs[c] > 0.0:
                    acc += probs[c]
                    choice = c
                    if u <= acc:
                        break
            a[i] = choice
            if choice >= 2:
                taken[choice - 2] += 1
        out[it] = a
    return out


@njit(cache=True)
def kf_forward_chain(F, Q, H, R, m0, P0, zs, has_meas):
    """Kalman-filter a single track: birth state, then predict/update chain.

    Step 0 starts from (m0, P0) without prediction; later steps predict from
    the previous posterior. When ``has_meas[i]`` the step is updated with
    ``zs[i]`` using the Joseph-form covariance.

    Returns:
        (pred_means, pred_covs, filt_means, filt_covs)
    """
    T = zs.shape[0]
    dx = m0.shape[0]
    pred_m = np.empty((T, dx))
    pred_P = np.empty((T, dx, dx))
    filt_m = np.empty((T, dx))
    filt_P = np.empty((T, dx, dx))
    eye = np.eye(dx)
    m = m0.copy()
    P = P0.copy()
    for i in range(T):
        if i > 0:
            m = F @ m
            P = F @ P @ F.T + Q
            P = 0.5 * (P + P.T)
        pred_m[i] = m
        pred_P[i] = P
        if has_meas[i]:
            S = H @ P @ H.T + R
            S = 0.5 * (S + S.T)
            K = np.linalg.solve(S, H @ P).T
            innov = zs[i] - H @ m
            m = m + K @ innov
            IKH = eye - K @ H
            P = IKH @ P @ IKH.T + K @ R @ K.T
            P = 0.5 * (P + P.T)
        filt_m[i] = m
        filt_P[i] = P
    return pred_m, pred_P, filt_m, filt_P


@njit(cache=True)
def rts_backward_chain(F, pred_m, pred_P, filt_m, filt_P):
    """RTS smoothing over a forward chain; returns smoothed means and covs."""
    T = pred_m.shape[0]
    sm = filt_m.copy()
    sP = filt_P.copy()
    for i in range(T - 2, -1, -1):
        G = np.linalg.solve(pred_P[i + 1], F @ filt_P[i]).T
        sm[i] = filt_m[i] + G @ (sm[i + 1] - pred_m[i + 1])
        sP[i] = filt_P[i] + G @ (sP[i + 1] - pred_P[i + 1]) @ G.T
        sP[i] = 0.5 * (sP[i] + sP[i].T)
    return sm, sP


@njit(cache=True)
def _ct_point(x, dt):
    """Coordinated-turn propagation of one [px, vx, py, vy, omega] state."""
    out = np.empty(5)
    om = x[4]
    if np.abs(om) < 1e-10:
        a = dt
        b = 0.5 * dt * dt * om
        s = om * dt
        c = 1.0 - 0.5 * (om * dt) ** 2
    else:
        ang = om * dt
        s = np.sin(ang)
        c = np.cos(ang)
        a = s / om
        b = (1.0 - c) / om
    out[0] = x[0] + a * x[1] - b * x[3]
    out[1] = c * x[1] - s * x[3]
    out[2] = b * x[1] + x[2] + a * x[3]
    out[3] = s * x[1] + c * x[3]
    out[4] = om
    return out


@njit(cache=True)
def _wrap(theta):
    return np.pi - np.mod(np.pi - theta, 2.0 * np.pi)


@njit(cache=True)
def _sigma_points_5(m, P, scale):
    """11 scaled sigma points for a 5-dim state; scale = n + lambda."""
    L = np.linalg.cholesky(scale * P)
    pts = np.empty((11, 5))
    pts[0] = m
    for k in range(5):
        pts[1 + k] = m + L[:, k]
        pts[6 + k] = m - L[:, k]
    return pts


@njit(cache=True)
def ukf_ct_rb_forward_chain(dt, Q, R, wm, wc, scale, m0, P0, zs, has_meas):
    """Unscented filter chain for the coordinated-turn / range-bearing model.

    Mirrors ``kf_forward_chain`` with sigma-point prediction through the
    turn model and a range-bearing update with wrapped bearing residuals.
    """
    T = zs.shape[0]
    pred_m = np.empty((T, 5))
    pred_P = np.empty((T, 5, 5))
    filt_m = np.empty((T, 5))
    filt_P = np.empty((T, 5, 5))
    m = m0.copy()
    P = P0.copy()
    prop = np.empty((11, 5))
    zsig = np.empty((11, 2))
    for i in range(T):
        if i > 0:
            pts = _sigma_points_5(m, P, scale)
            for k in range(11):
                prop[k] = _ct_point(pts[k], dt)
            mnew = np.zeros(5)
            for k in range(11):
                mnew += wm[k] * prop[k]
            Pnew = Q.copy()
            for k in range(11):
                d = prop[k] - mnew
                Pnew += wc[k] * np.outer(d, d)
            m = mnew
            P = 0.5 * (Pnew + Pnew.T)
        pred_m[i] = m
        pred_P[i] = P
        if has_meas[i]:
            pts = _sigma_points_5(m, P, scale)
            for k in range(11):
                zsig[k, 0] = np.hypot(pts[k, 0], pts[k, 2])
                zsig[k, 1] = np.arctan2(pts[k, 2], pts[k, 0])
            zbar = np.zeros(2)
            for k in range(11):
                zbar[0] += wm[k] * zsig[k, 0]
                zbar[1] += wm[k] * (zsig[0, 1] + _wrap(zsig[k, 1] - zsig[0, 1]))
            zbar[1] = _wrap(zbar[1])
            S = R.copy()
            C = np.zeros((5, 2))
            for k in range(11):
                dz0 = zsig[k, 0] - zbar[0]
                dz1 = _wrap(zsig[k, 1] - zbar[1])
                S[0, 0] += wc[k] * dz0 * dz0
                S[0, 1] += wc[k] * dz0 * dz1
                S[1, 0] += wc[k] * dz1 * dz0
                S[1, 1] += wc[k] * dz1 * dz1
                dx = pts[k] - m
                C[:, 0] += wc[k] * dx * dz0
                C[:, 1] += wc[k] * dx * dz1
            S = 0.5 * (S + S.T)
            K = np.linalg.solve(S, C.T).T
            innov = np.empty(2)
            innov[0] = zs[i, 0] - zbar[0]
            innov[1] = _wrap(zs[i, 1] - zbar[1])
            m = m + K @ innov
            P = P - K @ S @ K.T
            P = 0.5 * (P + P.T)
        filt_m[i] = m
        filt_P[i] = P
    return pred_m, pred_P, filt_m, filt_P


@njit(cache=True)
def urts_ct_backward_chain(dt, Q, wm, wc, scale, pred_m, pred_P, filt_m, filt_P):
    """Unscented RTS smoothing for the coordinated-turn model."""
    T = pred_m.shape[0]
    sm = filt_m.copy()
    sP = filt_P.copy()
    prop = np.empty((11, 5))
    for i in range(T - 2, -1, -1):
        pts = _sigma_points_5(filt_m[i], filt_P[i], scale)
        for k in range(11):
            prop[k] = _ct_point(pts[k], dt)
        mpred = np.zeros(5)
        for k in range(11):
            mpred += wm[k] * prop[k]
        Ppred = Q.copy()
        C = np.zeros((5, 5))
        for k in range(11):
            d = prop[k] - mpred
            Ppred += wc[k] * np.outer(d, d)
            C += wc[k] * np.outer(pts[k] - filt_m[i], d)
        Ppred = 0.5 * (Ppred + Ppred.T)
        G = np.linalg.solve(Ppred, C.T).T
        sm[i] = filt_m[i] + G @ (sm[i + 1] - mpred)
        sP[i] = filt_P[i] + G @ (sP[i + 1] - Ppred) @ G.T
        sP[i] = 0.5 * (sP[i] + sP[i].T)
    return sm, sP


def warmup():
    """Trigger JIT compilation of every kernel (cached across processes)."""
    log_eta = np.log(np.array([[0.2, 0.3, 0.5], [0.5, 0.4, 0.1]]))
    gibbs_sweeps(log_eta, np.zeros(2, dtype=np.int64), np.full((2, 2), 0.5))
    F = np.eye(4)
    H = np.eye(2, 4)
    zs = np.zeros((2, 2))
    flags = np.array([True, False])
    chain = kf_forward_chain(F, np.eye(4), H, np.eye(2), np.zeros(4), np.eye(4), zs, flags)
    rts_backward_chain(F, *chain)
    wm = np.full(11, 1.0 / 10.0)
    wm[0] = 0.0
    wc = wm.copy()
    wc[0] = 2.0
    chain5 = ukf_ct_rb_forward_chain(
        1.0, np.eye(5), np.eye(2), wm, wc, 5.0,
        np.array([100.0, 1.0, 100.0, 1.0, 0.01]), np.eye(5), zs, flags,
    )
    urts_ct_backward_chain(1.0, np.eye(5), wm, wc, 5.0, *chain5)
