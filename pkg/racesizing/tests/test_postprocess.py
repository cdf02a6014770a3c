import math

import numpy as np
from django.test import SimpleTestCase, tag

from ..battery import BatteryModelKind, ocv_pack
from ..postprocess import (
    brake_recovery,
    electrical_series,
    envelopes,
    equivalent_efficiency,
    equivalent_resistance,
    lap_profile,
    quantiles,
    resimulate,
    speed_difference,
    tightness,
)
from ..powertrain import PowertrainParams
from ..solution import Formulation, SolveStatus
from ..solver import solve_conic, solve_nlp
from ..track import tile_laps
from ..transcription import simulate_controls
from ..vehicle import VehicleParams
from .fixtures import corner_track, problem, reference_pack, straight
from .oracles import ORACLES, exact_coast

# A few hundred kJ: far less than the corner track wants at full power
SCARCE_SOC = 0.004
# Share of traction nodes whose equivalent efficiency must sit at eta
TRACTION_SHARE = 0.99
FEASIBILITY_BLOCKS = (
    "friction_ellipse",
    "battery_voltage_low",
    "battery_voltage_high",
    "battery_power_low",
    "battery_power_high",
)


class QuantileTests(SimpleTestCase):
    def test_percentiles_skip_non_finite_values(self):
        q = quantiles([1.0, 2.0, 3.0, 4.0, 5.0, np.nan, np.inf])
        self.assertEqual(q["p50"], 3.0)
        self.assertAlmostEqual(q["p5"], 1.2)
        self.assertEqual(list(q), ["p5", "p25", "p50", "p75", "p95"])

    def test_empty_input(self):
        self.assertTrue(all(math.isnan(v) for v in quantiles([np.nan]).values()))


class ConvexDiagnosticsTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.pack = reference_pack(24)
        cls.scarce_problem = problem(Formulation.CONVEX, pack=cls.pack, initial_soc=SCARCE_SOC)
        cls.scarce, report = solve_conic(cls.scarce_problem)
        assert report.status is SolveStatus.OPTIMAL, report.message
        cls.ample_problem = problem(Formulation.CONVEX, pack=cls.pack)
        cls.ample, report = solve_conic(cls.ample_problem)
        assert report.status is SolveStatus.OPTIMAL, report.message

    def test_energy_runs_out_when_scarce(self):
        self.assertLess(self.scarce.E_b[-1] / self.pack.E_b_max, 1e-5)
        self.assertGreater(self.scarce.race_time, self.ample.race_time)

    def test_relaxations_are_tight_when_energy_binds(self):
        report = tightness(self.scarce, self.scarce_problem)
        tol = ORACLES["relaxation-tightness"].tolerance
        self.assertLessEqual(report["lethargy"].max, tol)
        self.assertLessEqual(report["kinetic_energy"].max, tol)
        self.assertGreaterEqual(report["lethargy"].min, -tol)
        self.assertEqual(set(report.summary()), {"lethargy", "kinetic_energy", "battery_cone", "coupling"})

    def test_equivalent_resistance_of_a_scarce_pack_is_the_pack_resistance(self):
        series = equivalent_resistance(self.scarce, self.pack)
        self.assertEqual(len(series.s), self.scarce.n_nodes - 1)
        summary = series.summary()
        self.assertGreater(summary["included_nodes"], 0)
        self.assertLessEqual(abs(summary["ratio_quantiles"]["p50"] - 1.0), ORACLES["resistance-undersized"].tolerance)

    def test_an_ample_pack_leaves_slack_in_the_battery_cone(self):
        report = tightness(self.ample, self.ample_problem)
        self.assertGreater(report["battery_cone"].positive_fraction(), 0.0)
        summary = equivalent_resistance(self.ample, self.pack).summary()
        self.assertGreaterEqual(summary["ratio_quantiles"]["p50"], 1.0 - ORACLES["resistance-lower-bound"].tolerance)
        self.assertGreaterEqual(summary["slack_fraction"], ORACLES["resistance-oversized-slack"].tolerance)

    def test_equivalent_resistance_never_drops_below_the_pack_resistance(self):
        tol = ORACLES["resistance-lower-bound"].tolerance
        for solution in (self.scarce, self.ample):
            floor = 0.1 * float(np.abs(solution.F_oc).max())
            summary = equivalent_resistance(solution, self.pack, floor=floor).summary()
            self.assertGreater(summary["included_nodes"], 0)
            self.assertGreaterEqual(summary["min_ratio"], 1.0 - tol)

    def test_near_zero_battery_force_is_excluded(self):
        series = equivalent_resistance(self.scarce, self.pack, floor=1e12)
        self.assertFalse(series.included.any())
        self.assertTrue(np.isnan(series.summary()["min_ratio"]))

    def test_traction_efficiency_sits_at_eta(self):
        eta = PowertrainParams().eta
        series = equivalent_efficiency(self.scarce, VehicleParams(v0=20.0))
        traction = series.included & series.traction
        self.assertGreater(traction.sum(), 0)
        deviation = np.abs(series.eta_star[traction] - eta)
        self.assertGreaterEqual(np.mean(deviation <= ORACLES["efficiency-traction"].tolerance), TRACTION_SHARE)
        self.assertGreaterEqual(series.summary(eta)["traction_within_1e-3"], TRACTION_SHARE)
        self.assertTrue(np.all(series.eta_star[traction] <= eta + ORACLES["efficiency-traction"].tolerance))

    def test_braking_never_returns_more_than_eta_allows(self):
        eta = PowertrainParams().eta
        # Arriving at 40 m/s the car must brake for the corner, and scarce energy makes it regenerate
        fast, report = solve_conic(problem(Formulation.CONVEX, pack=self.pack, v0=40.0, initial_soc=SCARCE_SOC))
        self.assertIs(report.status, SolveStatus.OPTIMAL, report.message)
        for solution, v0 in ((fast, 40.0), (self.scarce, 20.0), (self.ample, 20.0)):
            series = equivalent_efficiency(solution, VehicleParams(v0=v0))
            braking = series.included & ~series.traction
            tol = ORACLES["efficiency-braking"].tolerance * float(np.abs(series.P_b).max())
            self.assertTrue(np.all(series.P_wheel[braking] <= series.P_b[braking] / eta + tol))
            if solution is fast:
                self.assertGreater(braking.sum(), 0)

    def test_recovered_brake_torque_never_drives(self):
        for solution in (self.scarce, self.ample):
            T_br = brake_recovery(solution, PowertrainParams(), VehicleParams(v0=20.0))
            limit = ORACLES["brake-recovery-random"].tolerance * float(np.abs(solution.T_w).max())
            self.assertTrue(np.all(T_br <= limit), float(T_br.max()))

    def test_returned_optima_respect_the_ellipse_and_battery_boxes(self):
        tol = ORACLES["solved-feasibility"].tolerance
        for solution, p in ((self.scarce, self.scarce_problem), (self.ample, self.ample_problem)):
            violations = p.violations(p.pack_solution(solution))
            for name in FEASIBILITY_BLOCKS:
                self.assertLessEqual(float(violations[name].max()), tol, name)

    def test_convex_electrical_series_uses_nominal_voltage(self):
        series = electrical_series(self.ample, self.pack)
        np.testing.assert_allclose(series.V_oc, self.pack.V_n)
        np.testing.assert_allclose(series.V_b, self.pack.V_n - self.pack.R0 * series.I_b)
        self.assertAlmostEqual(series.zeta[0], 1.0)

    def test_resimulated_optimum_stays_close(self):
        report = resimulate(self.ample, self.ample_problem.context)
        self.assertTrue(report.completed, report.message)
        self.assertLessEqual(report.speed_rms_relative, ORACLES["resim-speed"].tolerance)
        self.assertLessEqual(report.terminal_soc_deviation, ORACLES["resim-soc"].tolerance)
        self.assertEqual(set(report.summary()) - {"message"}, {
            "refinement", "completed", "speed_rms_mps", "speed_rms_relative", "soc_rms",
            "terminal_speed_deviation_mps", "terminal_soc_deviation",
        })

    def test_speed_difference(self):
        np.testing.assert_array_equal(speed_difference(self.scarce, self.scarce), 0.0)
        self.assertGreater(speed_difference(self.scarce, self.ample).max(), 0.0)
        with self.assertRaises(ValueError):
            speed_difference(self.scarce, solve_conic(problem(Formulation.CONVEX, ds=30.0))[0])


class LapTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.pack = reference_pack(24)
        cls.track = tile_laps(corner_track(15.0), 2)
        cls.solution, report = solve_conic(problem(Formulation.CONVEX, track=cls.track, pack=cls.pack))
        assert report.status is SolveStatus.OPTIMAL, report.message

    def test_one_envelope_per_lap(self):
        laps = envelopes(self.solution, self.track, self.pack)
        self.assertEqual([e.lap for e in laps], [1, 2])
        self.assertEqual(laps[0].soc_end, laps[1].soc_start)
        self.assertAlmostEqual(sum(e.lap_time for e in laps), self.solution.race_time, places=9)
        for e in laps:
            self.assertLessEqual(e.I_max, self.pack.I_max_pack * (1 + 1e-3))
            self.assertGreaterEqual(e.V_min, self.pack.V_min_pack * (1 - 1e-3))
            self.assertGreater(e.energy_used, 0.0)
        # The second lap starts at speed, so it is quicker
        self.assertLess(laps[1].lap_time, laps[0].lap_time)

    def test_lap_profile(self):
        profile = lap_profile(self.solution, self.track, self.pack, 2)
        self.assertAlmostEqual(profile.s[0], 0.0)
        self.assertAlmostEqual(profile.s[-1], 300.0)
        self.assertEqual(len(profile.v), 21)
        np.testing.assert_array_equal(profile.v, self.solution.v[20:])
        with self.assertRaises(ValueError):
            lap_profile(self.solution, self.track, self.pack, 0)
        with self.assertRaises(ValueError):
            lap_profile(self.solution, self.track, self.pack, 3)


class ResimulationTests(SimpleTestCase):
    def test_zero_torque_coast_matches_the_exact_coast(self):
        p = problem(Formulation.NONCONVEX, BatteryModelKind.VN_R, track=straight(300.0, 15.0))
        n = p.layout.n_nodes
        z = simulate_controls(p, {"T_w": np.zeros(n), "I_b": np.zeros(n)})
        solution = p.unpack(z, SolveStatus.OPTIMAL)
        report = resimulate(solution, p.context)
        self.assertTrue(report.completed)
        exact = exact_coast(20.0, VehicleParams(v0=20.0), solution.M, solution.s)
        np.testing.assert_allclose(report.v_sim, exact, rtol=0, atol=ORACLES["resim-coast"].tolerance)
        np.testing.assert_allclose(report.zeta_sim, 1.0)
        self.assertEqual(tightness(solution, p).families, {})

    def test_refinement_must_be_positive(self):
        p = problem(Formulation.NONCONVEX, track=straight(30.0, 15.0))
        solution = p.unpack(p.initial_guess(), SolveStatus.OPTIMAL)
        with self.assertRaises(ValueError):
            resimulate(solution, p.context, refinement=0)


@tag("slow")
class VsocEnvelopeTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.pack = reference_pack(24)
        cls.track = tile_laps(corner_track(15.0), 2)
        cls.problem = problem(Formulation.NONCONVEX, BatteryModelKind.VSOC_R, track=cls.track, pack=cls.pack)
        cls.solution, report = solve_nlp(cls.problem)
        assert report.status is SolveStatus.OPTIMAL, report.message

    def test_charging_current_respects_the_voltage_headroom(self):
        # Near full charge the open-circuit voltage sits at the cap, leaving little room to regenerate
        pack = self.pack
        for envelope in envelopes(self.solution, self.track, pack):
            zeta_min = float(lap_profile(self.solution, self.track, pack, envelope.lap).zeta.min())
            headroom = (float(ocv_pack(pack.ocv, zeta_min, pack.N_s)) - pack.V_max_pack) / pack.R0
            self.assertGreaterEqual(envelope.I_min, max(pack.I_min_pack, headroom) - 1e-2)
            self.assertLessEqual(envelope.V_max, pack.V_max_pack + 1e-2)

    def test_first_lap_regenerates_less_than_the_last(self):
        laps = envelopes(self.solution, self.track, self.pack)
        self.assertEqual(len(laps), 2)
        self.assertLess(laps[0].soc_end, laps[0].soc_start)
        # I_min is the strongest charging current, so a smaller magnitude is a larger value
        self.assertGreater(laps[0].I_min, laps[-1].I_min)

    def test_returned_optimum_respects_the_ellipse_and_battery_boxes(self):
        violations = self.problem.violations(self.problem.pack_solution(self.solution))
        for name in FEASIBILITY_BLOCKS:
            self.assertLessEqual(float(violations[name].max()), ORACLES["solved-feasibility"].tolerance, name)

    def test_resimulation(self):
        report = resimulate(self.solution, self.problem.context)
        self.assertTrue(report.completed, report.message)
        self.assertLessEqual(report.speed_rms_relative, ORACLES["resim-speed"].tolerance)
        self.assertLessEqual(report.terminal_soc_deviation, ORACLES["resim-soc"].tolerance)
