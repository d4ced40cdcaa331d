"""Tests for the single-object filtering and smoothing primitives."""

import math

import numpy as np
import pytest

from lmbtrack.errors import ContractViolationError, NumericalError
from lmbtrack.gaussian import (
    GaussianState,
    LinearModel,
    NonlinearModel,
    kf_predict,
    kf_update,
    rts_smooth,
    sigma_points,
    sigma_weights,
    ukf_predict,
    ukf_update,
    urts_smooth,
    wrap_angle,
)


def cv_matrices(dt=1.0, sigma=5.0):
    # State layout [px, vx, py, vy]; written out longhand so these tests do
    # not depend on the scenario module.
    F = np.kron(np.eye(2), np.array([[1.0, dt], [0.0, 1.0]]))
    Q = sigma**2 * np.kron(
        np.eye(2), np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])
    )
    H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    R = 100.0 * np.eye(2)
    return LinearModel(F, Q, H, R)


def scalar_model(q=1.0, r=1.0):
    return LinearModel([[1.0]], [[q]], [[1.0]], [[r]])


def ct_propagate(states, dt=1.0):
    """Coordinated-turn transition, vectorized over (n, 5) states."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    px, vx, py, vy, om = states.T
    omega = np.where(np.abs(om) < 1e-10, 1e-10, om)
    ang = omega * dt
    s, c = np.sin(ang), np.cos(ang)
    a = s / omega
    b = (1.0 - c) / omega
    out = np.empty_like(states)
    out[:, 0] = px + a * vx - b * vy
    out[:, 1] = c * vx - s * vy
    out[:, 2] = b * vx + py + a * vy
    out[:, 3] = s * vx + c * vy
    out[:, 4] = om
    return out


class TestKfPredict:
    def test_identity_no_noise_is_noop(self):
        model = LinearModel(np.eye(4), np.zeros((4, 4)), np.eye(4)[:2], np.eye(2))
        state = GaussianState([1.0, 2.0, 3.0, 4.0], np.diag([1.0, 2.0, 3.0, 4.0]))
        out = kf_predict(state, model)
        np.testing.assert_allclose(out.mean, state.mean)
        np.testing.assert_allclose(out.cov, state.cov)

    def test_cv_moves_position_by_velocity(self):
        out = kf_predict(GaussianState([0.0, 1.0, 0.0, 0.0], np.eye(4)), cv_matrices())
        np.testing.assert_allclose(out.mean, [1.0, 1.0, 0.0, 0.0])

    def test_two_predicts_match_matrix_oracle(self):
        model = cv_matrices(dt=1.0, sigma=5.0)
        F, Q = model.F, model.Q
        state = GaussianState(np.zeros(4), np.eye(4))
        out = kf_predict(kf_predict(state, model), model)
        F2 = F @ F
        expected = F2 @ np.eye(4) @ F2.T + F @ Q @ F.T + Q
        np.testing.assert_allclose(out.cov, expected, atol=1e-12)

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ContractViolationError):
            kf_predict(GaussianState([0.0, 0.0], np.eye(2)), cv_matrices())


class TestKfUpdate:
    def test_zero_innovation_keeps_mean_and_shrinks_cov(self):
        model = cv_matrices()
        state = GaussianState([10.0, 1.0, -5.0, 2.0], np.diag([50.0, 10.0, 50.0, 10.0]))
        post, _ = kf_update(state, model.H @ state.mean, model)
        np.testing.assert_allclose(post.mean, state.mean, atol=1e-9)
        gap = np.linalg.eigvalsh(state.cov - post.cov)
        assert gap.min() >= -1e-9

    def test_uninformative_measurement_keeps_prior(self):
        model = LinearModel(np.eye(2), np.zeros((2, 2)), np.eye(2), 1e12 * np.eye(2))
        state = GaussianState([3.0, -4.0], np.diag([2.0, 5.0]))
        post, _ = kf_update(state, [100.0, 100.0], model)
        np.testing.assert_allclose(post.mean, state.mean, rtol=1e-3, atol=1e-3)
        np.testing.assert_allclose(post.cov, state.cov, rtol=1e-3)

    def test_scalar_conjugate_posterior(self):
        post, lik = kf_update(GaussianState([0.0], [[1.0]]), [2.0], scalar_model())
        np.testing.assert_allclose(post.mean, [1.0], atol=1e-12)
        np.testing.assert_allclose(post.cov, [[0.5]], atol=1e-12)
        expected = math.exp(-1.0) / math.sqrt(4.0 * math.pi)
        assert lik == pytest.approx(expected, rel=1e-12)

    def test_likelihood_integrates_to_one(self):
        state = GaussianState([0.3], [[2.0]])
        model = scalar_model(q=0.5, r=1.5)
        zs = np.linspace(-40.0, 40.0, 20001)
        liks = np.array([kf_update(state, [z], model)[1] for z in zs])
        assert np.trapezoid(liks, zs) == pytest.approx(1.0, abs=1e-6)

    def test_singular_innovation_raises(self):
        model = LinearModel([[1.0]], [[0.0]], [[1.0]], [[0.0]])
        state = GaussianState([0.0], [[0.0]])
        with pytest.raises(NumericalError):
            kf_update(state, [1.0], model)


class TestRtsSmooth:
    def test_length_one_unchanged(self):
        state = GaussianState([1.0], [[2.0]])
        out = rts_smooth([(state, state)], scalar_model())
        assert len(out) == 1
        np.testing.assert_allclose(out[0].mean, state.mean)

    def test_deterministic_chain_is_fixed_point(self):
        model = LinearModel(cv_matrices().F, np.zeros((4, 4)), cv_matrices().H, np.eye(2))
        state = GaussianState([0.0, 1.0, 0.0, -1.0], np.eye(4))
        filtered = [(state, state)]
        for _ in range(6):
            pred = kf_predict(filtered[-1][1], model)
            filtered.append((pred, pred))  # exact data: update changes nothing
        smoothed = rts_smooth(filtered, model)
        for sm, (_, f) in zip(smoothed, filtered):
            np.testing.assert_allclose(sm.mean, f.mean, atol=1e-9)

    def test_random_walk_smoother_beats_filter(self):
        model = scalar_model(q=1.0, r=1.0)
        rng = np.random.default_rng(1234)
        mse_f, mse_s = 0.0, 0.0
        for _ in range(1000):
            x = np.cumsum(rng.normal(0.0, 1.0, 20))
            zs = x + rng.normal(0.0, 1.0, 20)
            state = GaussianState([0.0], [[10.0]])
            filtered = []
            for i, z in enumerate(zs):
                pred = kf_predict(state, model) if i else state
                state, _ = kf_update(pred, [z], model)
                filtered.append((pred, state))
            smoothed = rts_smooth(filtered, model)
            mse_f += np.mean([(f.mean[0] - xt) ** 2 for (_, f), xt in zip(filtered, x)])
            mse_s += np.mean([(s.mean[0] - xt) ** 2 for s, xt in zip(smoothed, x)])
        assert mse_s <= mse_f

    def test_last_state_anchored(self):
        model = scalar_model()
        rng = np.random.default_rng(7)
        state = GaussianState([0.0], [[5.0]])
        filtered = []
        for i in range(8):
            pred = kf_predict(state, model) if i else state
            state, _ = kf_update(pred, [rng.normal()], model)
            filtered.append((pred, state))
        smoothed = rts_smooth(filtered, model)
        np.testing.assert_allclose(smoothed[-1].mean, filtered[-1][1].mean)
        np.testing.assert_allclose(smoothed[-1].cov, filtered[-1][1].cov)


def linear_nonlinear_pair(model: LinearModel) -> NonlinearModel:
    return NonlinearModel(
        transition=lambda x: x @ model.F.T,
        Q=model.Q,
        measurement=lambda x: x @ model.H.T,
        R=model.R,
    )


class TestUnscented:
    def test_identity_transition_is_noop(self):
        model = NonlinearModel(
            transition=lambda x: x,
            Q=np.zeros((3, 3)),
            measurement=lambda x: x[:, :1],
            R=np.eye(1),
        )
        state = GaussianState([1.0, -2.0, 0.5], np.diag([1.0, 4.0, 0.25]))
        out = ukf_predict(state, model)
        np.testing.assert_allclose(out.mean, state.mean, atol=1e-9)
        np.testing.assert_allclose(out.cov, state.cov, atol=1e-9)

    def test_linear_transition_matches_kf(self):
        lin = cv_matrices()
        state = GaussianState([5.0, 1.0, -3.0, 2.0], np.diag([9.0, 1.0, 9.0, 1.0]))
        via_kf = kf_predict(state, lin)
        via_ukf = ukf_predict(state, linear_nonlinear_pair(lin))
        np.testing.assert_allclose(via_ukf.mean, via_kf.mean, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(via_ukf.cov, via_kf.cov, rtol=1e-6, atol=1e-9)

    def test_ct_small_turn_rate_matches_cv(self):
        lin = cv_matrices(sigma=5.0)
        mean4 = np.array([100.0, 10.0, -50.0, 5.0])
        cov5 = np.diag([25.0, 4.0, 25.0, 4.0, 1e-18])
        model = NonlinearModel(
            transition=ct_propagate,
            Q=np.zeros((5, 5)),
            measurement=lambda x: x[:, (0, 2)],
            R=np.eye(2),
        )
        state5 = GaussianState(np.append(mean4, 1e-9), cov5)
        out = ukf_predict(state5, model)
        lin0 = LinearModel(lin.F, np.zeros((4, 4)), lin.H, lin.R)
        expected = kf_predict(GaussianState(mean4, cov5[:4, :4]), lin0)
        np.testing.assert_allclose(out.mean[:4], expected.mean, atol=1e-4)
        np.testing.assert_allclose(out.cov[:4, :4], expected.cov, atol=1e-4)

    def test_linear_update_matches_kf(self):
        lin = cv_matrices()
        state = GaussianState([5.0, 1.0, -3.0, 2.0], np.diag([9.0, 1.0, 9.0, 1.0]))
        z = np.array([7.0, -1.0])
        post_kf, lik_kf = kf_update(state, z, lin)
        post_ukf, lik_ukf = ukf_update(state, z, linear_nonlinear_pair(lin))
        np.testing.assert_allclose(post_ukf.mean, post_kf.mean, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(post_ukf.cov, post_kf.cov, rtol=1e-6, atol=1e-8)
        assert lik_ukf == pytest.approx(lik_kf, rel=1e-6)

    def test_zero_innovation_keeps_mean(self):
        # Tight prior so the unscented measurement prediction sits at h(mean)
        # (the curvature correction scales with the prior covariance).
        model = self._range_bearing_model()
        state = GaussianState([300.0, 0.0, 400.0, 0.0], 1e-4 * np.eye(4))
        z = np.array([500.0, math.atan2(400.0, 300.0)])
        post, _ = ukf_update(state, z, model)
        np.testing.assert_allclose(post.mean, state.mean, atol=1e-6)

    @staticmethod
    def _range_bearing_model():
        def h(x):
            return np.stack(
                [np.hypot(x[:, 0], x[:, 2]), np.arctan2(x[:, 2], x[:, 0])], axis=1
            )

        return NonlinearModel(
            transition=lambda x: x,
            Q=np.zeros((4, 4)),
            measurement=h,
            R=np.diag([1.0, 1e-4]),
            angle_dims=(1,),
        )

    def test_bearing_wrap_across_seam(self):
        # Same geometry rotated so one copy straddles the +-pi seam; the
        # posterior must be rotation-equivariant, i.e. the innovation is
        # 0.02 rad, never ~2*pi.
        model = self._range_bearing_model()
        r0 = 1000.0

        def posterior(prior_bearing, z_bearing):
            mean = [r0 * math.cos(prior_bearing), 0.0, r0 * math.sin(prior_bearing), 0.0]
            state = GaussianState(mean, np.diag([50.0, 1.0, 50.0, 1.0]))
            return ukf_update(state, np.array([r0, z_bearing]), model)

        post_seam, lik_seam = posterior(math.pi - 0.01, -math.pi + 0.01)
        post_safe, lik_safe = posterior(-0.01, 0.01)
        assert lik_seam == pytest.approx(lik_safe, rel=1e-6)
        b_seam = math.atan2(post_seam.mean[2], post_seam.mean[0])
        b_safe = math.atan2(post_safe.mean[2], post_safe.mean[0])
        assert abs(wrap_angle(b_seam - math.pi)) == pytest.approx(abs(b_safe), abs=1e-9)

    def test_wrap_angle_values(self):
        assert wrap_angle(-2.0 * math.pi + 0.02) == pytest.approx(0.02)
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)
        assert wrap_angle(3.5 * math.pi) == pytest.approx(-0.5 * math.pi)

    def test_affine_exactness(self):
        rng = np.random.default_rng(99)
        A = rng.normal(size=(3, 3))
        b = rng.normal(size=3)
        cov = np.diag([2.0, 0.5, 1.5])
        state = GaussianState(rng.normal(size=3), cov)
        model = NonlinearModel(
            transition=lambda x: x @ A.T + b,
            Q=np.zeros((3, 3)),
            measurement=lambda x: x,
            R=np.eye(3),
        )
        out = ukf_predict(state, model)
        np.testing.assert_allclose(out.mean, A @ state.mean + b, atol=1e-8)
        np.testing.assert_allclose(out.cov, A @ cov @ A.T, atol=1e-8)


class TestUrtsSmooth:
    def _ct_model(self):
        G = np.array([[0.5, 0.0], [1.0, 0.0], [0.0, 0.5], [0.0, 1.0]])
        Q = np.zeros((5, 5))
        Q[:4, :4] = 25.0 * (G @ G.T)
        Q[4, 4] = (math.pi / 180.0) ** 2

        def h(x):
            return np.stack(
                [np.hypot(x[:, 0], x[:, 2]), np.arctan2(x[:, 2], x[:, 0])], axis=1
            )

        return NonlinearModel(
            transition=ct_propagate,
            Q=Q,
            measurement=h,
            R=np.diag([100.0, (2.0 * math.pi / 180.0) ** 2]),
            angle_dims=(1,),
        )

    def test_length_one_unchanged(self):
        model = self._ct_model()
        state = GaussianState([100.0, 1.0, 100.0, 1.0, 0.0], np.eye(5))
        out = urts_smooth([(state, state)], model)
        np.testing.assert_allclose(out[0].mean, state.mean)

    def test_linear_matches_rts(self):
        lin = cv_matrices()
        nonlin = linear_nonlinear_pair(lin)
        rng = np.random.default_rng(5)
        state = GaussianState([0.0, 1.0, 0.0, -1.0], 10.0 * np.eye(4))
        filtered = []
        for i in range(10):
            pred = kf_predict(state, lin) if i else state
            state, _ = kf_update(pred, rng.normal(0.0, 30.0, 2), lin)
            filtered.append((pred, state))
        sm_lin = rts_smooth(filtered, lin)
        sm_ut = urts_smooth(filtered, nonlin)
        for a, b in zip(sm_lin, sm_ut):
            np.testing.assert_allclose(b.mean, a.mean, rtol=1e-6, atol=1e-6)
            np.testing.assert_allclose(b.cov, a.cov, rtol=1e-6, atol=1e-6)

    def test_ct_smoother_beats_filter(self):
        model = self._ct_model()
        rng = np.random.default_rng(2024)
        chol_q = np.linalg.cholesky(model.Q + 1e-12 * np.eye(5))
        chol_r = np.linalg.cholesky(model.R)
        mse_f, mse_s = 0.0, 0.0
        for _ in range(500):
            x = np.array([800.0, -8.0, 600.0, 4.0, math.pi / 90.0])
            state = GaussianState(
                x + rng.normal(0.0, 1.0, 5) * [20, 2, 20, 2, 0.01],
                np.diag([400.0, 4.0, 400.0, 4.0, 1e-4]),
            )
            filtered, truth = [], []
            for i in range(20):
                if i:
                    x = ct_propagate(x[None, :])[0] + chol_q @ rng.normal(size=5)
                truth.append(x.copy())
                pred = ukf_predict(state, model) if i else state
                z = np.array([math.hypot(x[0], x[2]), math.atan2(x[2], x[0])])
                z = z + chol_r @ rng.normal(size=2)
                state, _ = ukf_update(pred, z, model)
                filtered.append((pred, state))
            smoothed = urts_smooth(filtered, model)
            pos = [0, 2]
            mse_f += np.mean(
                [np.sum((f.mean[pos] - xt[pos]) ** 2) for (_, f), xt in zip(filtered, truth)]
            )
            mse_s += np.mean(
                [np.sum((s.mean[pos] - xt[pos]) ** 2) for s, xt in zip(smoothed, truth)]
            )
        assert mse_s <= mse_f


class TestInvariants:
    def test_outputs_stay_symmetric_psd(self):
        rng = np.random.default_rng(42)
        model = cv_matrices()
        state = GaussianState(rng.normal(size=4), np.diag([100.0, 25.0, 100.0, 25.0]))
        for _ in range(100):
            state = kf_predict(state, model)
            z = model.H @ state.mean + rng.normal(0.0, 10.0, 2)
            state, _ = kf_update(state, z, model)
            assert np.abs(state.cov - state.cov.T).max() <= 1e-9
            state.validate()

    def test_sigma_weights_mean_sums_to_one(self):
        for n in (2, 4, 5):
            wm, _ = sigma_weights(n, alpha=1.0, beta=2.0, kappa=0.0)
            assert wm.sum() == pytest.approx(1.0, abs=1e-12)

    def test_sigma_points_reproduce_moments(self):
        state = GaussianState([1.0, 2.0], np.array([[2.0, 0.3], [0.3, 1.0]]))
        pts = sigma_points(state, alpha=1.0, kappa=0.0)
        wm, wc = sigma_weights(2, 1.0, 2.0, 0.0)
        np.testing.assert_allclose(wm @ pts, state.mean, atol=1e-12)
        diff = pts - state.mean
        np.testing.assert_allclose((wc[:, None] * diff).T @ diff, state.cov, atol=1e-12)
