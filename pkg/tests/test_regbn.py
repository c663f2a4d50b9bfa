import numpy as np
import pytest

from diamond.errors import DimensionError, NumericError
from diamond.regbn import RegBNState, regbn_apply, regbn_fit_step, regbn_objective
from diamond.tensor import Tensor, tsum


def fit(state, z_m, z_p, steps):
    for _ in range(steps):
        state = regbn_fit_step(state, z_m, z_p)
    return state


class TestFitStep:
    def test_initial_state_is_noop(self):
        s = RegBNState.initial(4)
        assert not s.fitted and np.all(s.omega == 0)
        z = np.random.default_rng(0).normal(size=(3, 4))
        np.testing.assert_array_equal(regbn_apply(s, Tensor(z), Tensor(z * 2)).data, z)

    def test_single_step_arithmetic(self):
        rng = np.random.default_rng(1)
        z_m, z_p = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        omega = rng.normal(size=(3, 3))
        s = RegBNState(omega, True, ema_decay=0.9, update_lr=0.05)
        grad = -2.0 / 5 * (z_m - z_p @ omega.T).T @ z_p
        expect = 0.9 * omega + 0.1 * (omega - 0.05 * grad)
        np.testing.assert_allclose(regbn_fit_step(s, z_m, z_p).omega, expect, rtol=1e-13)

    def test_gradient_matches_objective(self):
        rng = np.random.default_rng(2)
        z_m, z_p, omega = rng.normal(size=(6, 3)), rng.normal(size=(6, 3)), rng.normal(size=(3, 3))
        s = RegBNState(omega, True, ema_decay=0.0, update_lr=1.0)
        analytic = omega - regbn_fit_step(s, z_m, z_p).omega
        numeric = np.zeros_like(omega)
        for idx in np.ndindex(omega.shape):
            e = np.zeros_like(omega)
            e[idx] = 1e-6
            numeric[idx] = (regbn_objective(omega + e, z_m, z_p) - regbn_objective(omega - e, z_m, z_p)) / 2e-6
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6)

    def test_recovers_scaled_copy(self):
        rng = np.random.default_rng(3)
        z_p = rng.normal(size=(32, 8))
        z_m = 2.0 * z_p
        s = fit(RegBNState.initial(8, ema_decay=0.0, update_lr=0.05), z_m, z_p, 3000)
        assert np.max(np.abs(s.omega - 2.0 * np.eye(8))) <= 1e-3
        resid = regbn_apply(s, Tensor(z_m), Tensor(z_p)).data
        assert np.linalg.norm(resid) <= 1e-3 * np.linalg.norm(z_m)

    def test_orthogonal_columns_give_zero(self):
        rng = np.random.default_rng(4)
        q, _ = np.linalg.qr(rng.normal(size=(12, 6)))
        z_p, z_m = q[:, :3] * 3.0, q[:, 3:] * 2.0
        # closed-form normal-equations optimum
        closed = z_m.T @ z_p @ np.linalg.inv(z_p.T @ z_p)
        np.testing.assert_allclose(closed, 0.0, atol=1e-12)
        s = fit(RegBNState(rng.normal(size=(3, 3)), True, ema_decay=0.0, update_lr=0.2), z_m, z_p, 2000)
        assert np.max(np.abs(s.omega - closed)) <= 1e-8
        np.testing.assert_allclose(regbn_apply(s, Tensor(z_m), Tensor(z_p)).data, z_m, atol=1e-8)

    def test_scalar_regression(self):
        s = fit(RegBNState.initial(1, ema_decay=0.5, update_lr=0.05), np.array([[3.0]]), np.array([[2.0]]), 2000)
        assert s.omega[0, 0] == pytest.approx(1.5, abs=1e-9)

    def test_default_schedule_converges(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(4, 4)) / 2
        s = RegBNState.initial(4)
        for _ in range(60000):
            z_p = rng.normal(size=(16, 4))
            s = regbn_fit_step(s, z_p @ a.T, z_p)
        assert np.max(np.abs(s.omega - a)) <= 1e-3

    def test_errors(self):
        s = RegBNState.initial(3)
        with pytest.raises(DimensionError):
            regbn_fit_step(s, np.zeros((2, 3)), np.zeros((2, 4)))
        with pytest.raises(DimensionError):
            regbn_fit_step(s, np.zeros((0, 3)), np.zeros((0, 3)))
        with pytest.raises(NumericError):
            regbn_fit_step(s, np.full((2, 3), np.inf), np.zeros((2, 3)))


class TestApply:
    def test_identity_omega_cancels_copy(self):
        z = np.random.default_rng(6).normal(size=(4, 3))
        s = RegBNState(np.eye(3), True)
        np.testing.assert_array_equal(regbn_apply(s, Tensor(z), Tensor(z)).data, 0.0)

    def test_arithmetic_oracle(self):
        rng = np.random.default_rng(7)
        z_m, z_p, omega = rng.normal(size=(5, 4)), rng.normal(size=(5, 4)), rng.normal(size=(4, 4))
        out = regbn_apply(RegBNState(omega, True), Tensor(z_m), Tensor(z_p)).data
        np.testing.assert_array_equal(out, z_m - z_p @ omega.T)

    def test_omega_is_constant_in_graph(self):
        rng = np.random.default_rng(8)
        omega = rng.normal(size=(3, 3))
        z_m = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        z_p = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        tsum(regbn_apply(RegBNState(omega, True), z_m, z_p)).backward()
        np.testing.assert_array_equal(z_m.grad, 1.0)
        np.testing.assert_allclose(z_p.grad, -np.ones((2, 3)) @ omega, atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            regbn_apply(RegBNState.initial(3), Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3))))
