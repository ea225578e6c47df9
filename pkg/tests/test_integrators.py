"""Adaptive Runge-Kutta integrator checks against closed-form flows."""

import numpy as np
import pytest

from cavkin.errors import NumericalError
from cavkin.integrators import integrate_adaptive


class TestAccuracy:
    def test_complex_exponential_decay(self):
        z = -0.31 + 2.7j
        y0 = np.array([1.0 + 0.5j])
        y, info = integrate_adaptive(lambda t, y: z * y, 0.0, y0, 3.0, rtol=1e-10, atol=1e-14)
        assert abs(y[0] - y0[0] * np.exp(z * 3.0)) < 1e-9
        assert info.steps > 0 and info.rhs_evaluations >= 6 * info.steps

    def test_harmonic_oscillator_matrix_state(self):
        # y'' = -w^2 y recast on a (2, 3) array of independent oscillators
        w = np.array([[1.0, 2.0, 0.5], [3.0, 0.25, 1.5]])
        y0 = np.ones((2, 3), dtype=np.complex128)

        def rhs(t, state):
            return 1j * w * state

        y, _ = integrate_adaptive(rhs, 0.0, y0, 2.0, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(y, np.exp(2.0j * w), rtol=1e-8)

    def test_tolerance_ordering(self):
        z = -1.0 + 5.0j
        y0 = np.array([1.0 + 0j])
        exact = np.exp(z * 2.0)
        errs = []
        for rtol in (1e-4, 1e-7, 1e-10):
            y, _ = integrate_adaptive(lambda t, y: z * y, 0.0, y0, 2.0, rtol=rtol, atol=1e-14)
            errs.append(abs(y[0] - exact))
        assert errs[0] > errs[1] > errs[2]

    def test_time_dependent_rhs(self):
        # y' = 2t y  ->  y = exp(t^2)
        y0 = np.array([1.0 + 0j])
        y, _ = integrate_adaptive(lambda t, y: 2.0 * t * y, 0.0, y0, 1.5, rtol=1e-10, atol=1e-14)
        assert abs(y[0] - np.exp(2.25)) < 1e-8

    def test_repeatability_is_bitwise(self):
        rng = np.random.default_rng(7)
        mat = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        y0 = rng.normal(size=6) + 1j * rng.normal(size=6)

        def rhs(t, y):
            return mat @ y

        a, _ = integrate_adaptive(rhs, 0.0, y0, 0.8)
        b, _ = integrate_adaptive(rhs, 0.0, y0, 0.8)
        assert np.array_equal(a, b)


class TestFailureModes:
    def test_singular_dynamics_underflow(self):
        # finite-time blow-up: y' = y^2 with y0 = 1 diverges at t = 1
        y0 = np.array([1.0 + 0j])
        with pytest.raises(NumericalError, match="underflow|non-finite|steps"):
            integrate_adaptive(lambda t, y: y * y, 0.0, y0, 2.0, max_steps=100_000)

    def test_nonpositive_span_rejected(self):
        y0 = np.array([1.0 + 0j])
        with pytest.raises(NumericalError, match="span"):
            integrate_adaptive(lambda t, y: y, 1.0, y0, 1.0)

    def test_step_cap(self):
        y0 = np.array([1.0 + 0j])
        with pytest.raises(NumericalError, match="steps"):
            integrate_adaptive(lambda t, y: 1j * 50.0 * y, 0.0, y0, 100.0, max_steps=10)

    def test_nonfinite_rhs_detected(self):
        y0 = np.array([1.0 + 0j])

        def rhs(t, y):
            return y * (np.nan if t > 0.5 else 1.0)

        with pytest.raises(NumericalError, match="non-finite"):
            integrate_adaptive(rhs, 0.0, y0, 1.0)
