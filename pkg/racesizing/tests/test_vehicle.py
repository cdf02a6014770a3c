import math

import numpy as np
from django.test import SimpleTestCase

from ..exceptions import ConfigurationError, DomainError
from ..transcription import rk4_state_step
from ..vehicle import (
    LongitudinalState,
    VehicleParams,
    ellipse_cone_terms,
    friction_ellipse_residual,
    kinetic_derivative,
    max_cornering_speed,
    speed_derivative,
)
from .oracles import ORACLES, coast_distance, exact_coast

M = 718.18


class VehicleParamsTests(SimpleTestCase):
    def test_defaults_and_resistance(self):
        params = VehicleParams()
        self.assertAlmostEqual(params.resistance, 0.3927 + 0.015 * 0.9526, places=12)
        self.assertAlmostEqual(params.total_mass(292.18), M, places=9)

    def test_invalid_parameters(self):
        with self.assertRaises(ConfigurationError):
            VehicleParams(M_v=0)
        with self.assertRaises(ConfigurationError):
            VehicleParams(mu_x=3.5)
        with self.assertRaises(ConfigurationError):
            VehicleParams(v0=0.5, v_floor=1.0)
        with self.assertRaises(ConfigurationError):
            VehicleParams(C_drag=-0.1)

    def test_longitudinal_state_from_speed(self):
        state = LongitudinalState.from_speed(40.0, M)
        self.assertAlmostEqual(state.E_kin, 0.5 * M * 1600.0)
        self.assertAlmostEqual(state.dtds, 0.025)


class DynamicsTests(SimpleTestCase):
    def setUp(self):
        self.params = VehicleParams()

    def test_speed_derivative_by_hand(self):
        # Coasting on the flat at 50 m/s: drag 981.75 N, downforce rolling 35.7225 N, rolling 105.680187 N
        expected = -(981.75 + 35.7225 + 0.015 * M * 9.81) / (M * 50.0)
        self.assertAlmostEqual(0.015 * M * 9.81, 105.680187, places=6)
        got = speed_derivative(50.0, 0.0, 0.0, M, self.params)
        self.assertLessEqual(abs(got - expected), ORACLES["speed-derivative-hand"].tolerance)

    def test_speed_and_kinetic_forms_agree(self):
        v, T_w, theta = 35.0, 1200.0, 0.03
        dv = speed_derivative(v, T_w, theta, M, self.params)
        dE = kinetic_derivative(0.5 * M * v**2, T_w, theta, M, self.params)
        self.assertAlmostEqual(dE, M * v * dv, places=6)

    def test_speed_below_floor_is_a_domain_error(self):
        with self.assertRaises(DomainError):
            speed_derivative(0.5, 0.0, 0.0, M, self.params)
        with self.assertRaises(DomainError):
            speed_derivative(np.array([10.0, 0.9]), 0.0, 0.0, M, self.params)

    def test_fine_rk4_matches_the_exact_coast(self):
        v0, length, h = 40.0, 500.0, 0.01
        steps = int(round(length / h))
        v = v0
        for k in range(steps):
            v = rk4_state_step(lambda x, u, s: speed_derivative(x, 0.0, 0.0, M, self.params), v, 0.0, k * h, h)
        exact = exact_coast(v0, self.params, M, length)
        self.assertLessEqual(abs(v - exact), ORACLES["coast-fine-rk4"].tolerance)

    def test_coast_distance_inverts_the_coast(self):
        d = coast_distance(30.0, 10.0, self.params, M)
        self.assertAlmostEqual(exact_coast(30.0, self.params, M, d), 10.0, places=9)

    def test_friction_ellipse_residual_sign(self):
        # Straight, flat: the ellipse admits exactly |T_w| <= mu_x R_w (M g + C_down v^2)
        v = 30.0
        limit = self.params.mu_x * self.params.R_w * (M * 9.81 + self.params.C_down * v**2)
        self.assertAlmostEqual(friction_ellipse_residual(limit, v, 0.0, 0.0, M, self.params) / limit**2, 0.0, places=9)
        self.assertLess(friction_ellipse_residual(0.99 * limit, v, 0.0, 0.0, M, self.params), 0.0)
        self.assertGreater(friction_ellipse_residual(1.01 * limit, v, 0.0, 0.0, M, self.params), 0.0)

    def test_cone_form_matches_the_residual(self):
        v, T_w, rho, theta = 25.0, 900.0, 0.02, 0.05
        t, (u1, u2) = ellipse_cone_terms(T_w, 0.5 * M * v**2, rho, theta, M, self.params)
        residual = friction_ellipse_residual(T_w, v, rho, theta, M, self.params)
        self.assertAlmostEqual((u1**2 + u2**2 - t**2) / t**2, residual / t**2, places=12)

    def test_max_cornering_speed_against_bisection(self):
        rho, theta = 1 / 40.0, 0.0
        closed = max_cornering_speed(rho, theta, M, self.params)
        lo, hi = 1.0, 99.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if friction_ellipse_residual(0.0, mid, rho, theta, M, self.params) <= 0:
                lo = mid
            else:
                hi = mid
        self.assertLessEqual(abs(closed - lo), ORACLES["cornering-bisection"].tolerance)

    def test_max_cornering_speed_on_straights_is_the_cap(self):
        speeds = max_cornering_speed(np.array([0.0, 0.05]), np.zeros(2), M, self.params)
        self.assertEqual(speeds[0], self.params.v_cap)
        self.assertTrue(math.isfinite(speeds[1]) and speeds[1] < self.params.v_cap)
